#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Base of every error the library throws. `kind()` is a short stable tag
// used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index", w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error("contract", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};
struct PartitionError : Error {
  explicit PartitionError(const std::string& w) : Error("partition", w) {}
};
struct ConfigError : Error {
  ConfigError(std::string key, const std::string& w)
      : Error("config", key + ": " + w), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

// Wraps an error raised inside a module with the module name and round index.
struct RunError : Error {
  RunError(std::string module, long round, const std::string& inner)
      : Error("run", "[" + module + " round " + std::to_string(round) + "] " + inner),
        module_(std::move(module)),
        round_(round) {}
  const std::string& module() const noexcept { return module_; }
  long round() const noexcept { return round_; }

 private:
  std::string module_;
  long round_;
};

}  // namespace fedsim
