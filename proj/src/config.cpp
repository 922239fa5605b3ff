#include "fedsim/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key, "expected an unsigned 64-bit integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(const std::string& key, std::string_view v) {
  // from_chars for double is not available in every libstdc++ we target.
  std::istringstream is{std::string(v)};
  is.imbue(std::locale::classic());
  double out = 0.0;
  is >> out;
  if (!is || !is.eof() || !std::isfinite(out))
    throw ConfigError(key, "expected a real number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + std::string(v) + "'");
}

template <typename E>
E parse_enum(const std::string& key, std::string_view v, std::initializer_list<std::pair<std::string_view, E>> names) {
  std::string allowed;
  for (const auto& [n, e] : names) {
    if (n == v) return e;
    allowed += allowed.empty() ? std::string(n) : "|" + std::string(n);
  }
  throw ConfigError(key, "expected one of " + allowed + ", got '" + std::string(v) + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> m;
    auto size_field = [](std::size_t ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, std::string_view v) { c.*f = parse_size(k, v); };
    };
    auto real_field = [](double ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, std::string_view v) { c.*f = parse_real(k, v); };
    };
    auto model_field = [](std::size_t ModelConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, std::string_view v) { c.model.*f = parse_size(k, v); };
    };
    auto plan_field = [](std::size_t StagePlan::*f) {
      return [f](ExperimentConfig& c, const std::string& k, std::string_view v) { c.plan.*f = parse_size(k, v); };
    };

    m["dataset"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.dataset.kind = parse_enum<DatasetKind>(k, v, {{"synth", DatasetKind::Synth}, {"idx", DatasetKind::Idx}});
    };
    m["dataset.num_classes"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      const auto n = parse_size(k, v);
      if (n > 1000) throw ConfigError(k, "must be at most 1000");
      c.dataset.num_classes = static_cast<int>(n);
    };
    m["dataset.per_class"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.dataset.per_class = parse_size(k, v);
    };
    m["dataset.images"] = [](ExperimentConfig& c, const std::string&, std::string_view v) { c.dataset.images = v; };
    m["dataset.labels"] = [](ExperimentConfig& c, const std::string&, std::string_view v) { c.dataset.labels = v; };
    m["resolution"] = size_field(&ExperimentConfig::resolution);
    m["num_clients"] = size_field(&ExperimentConfig::num_clients);
    m["alpha"] = real_field(&ExperimentConfig::alpha);
    m["seed"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) { c.seed = parse_u64(k, v); };
    m["strategy"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.strategy = parse_enum<Strategy>(k, v,
                                        {{"fedavg", Strategy::FedAvg},
                                         {"fedprox", Strategy::FedProx},
                                         {"f2u", Strategy::F2U},
                                         {"fedmgd", Strategy::FedMGD}});
    };
    m["fedprox.mu"] = real_field(&ExperimentConfig::prox_mu);
    m["rounds"] = size_field(&ExperimentConfig::rounds);
    m["client_fraction"] = real_field(&ExperimentConfig::client_fraction);
    m["local_epochs"] = size_field(&ExperimentConfig::local_epochs);
    m["batch_size"] = size_field(&ExperimentConfig::batch_size);
    m["lr"] = real_field(&ExperimentConfig::lr);
    m["fedmgd.mode"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.plan.mode = parse_enum<StageMode>(k, v, {{"two_stage", StageMode::TwoStage}, {"one_stage", StageMode::OneStage}});
    };
    m["fedmgd.gan_rounds"] = plan_field(&StagePlan::gan_rounds);
    m["fedmgd.enhance_rounds"] = plan_field(&StagePlan::enhance_rounds);
    m["fedmgd.gan_batch"] = plan_field(&StagePlan::gan_batch);
    m["fedmgd.refine_batch"] = plan_field(&StagePlan::refine_batch);
    m["fedmgd.sampler"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.sampler = parse_enum<SamplerMode>(
          k, v, {{"server", SamplerMode::ServerUniform}, {"client", SamplerMode::ClientProportional}});
    };
    m["fedmgd.gan_lr"] = real_field(&ExperimentConfig::gan_lr);
    m["model.classifier_conv1"] = model_field(&ModelConfig::classifier_conv1);
    m["model.classifier_conv2"] = model_field(&ModelConfig::classifier_conv2);
    m["model.disc_width"] = model_field(&ModelConfig::disc_width);
    m["model.noise_dim"] = model_field(&ModelConfig::noise_dim);
    m["model.generator_hidden"] = model_field(&ModelConfig::generator_hidden);
    m["eval.client_every"] = size_field(&ExperimentConfig::client_eval_every);
    m["eval.proxy_every"] = size_field(&ExperimentConfig::proxy_every);
    m["eval.proxy_batch"] = size_field(&ExperimentConfig::proxy_batch);
    m["output.dir"] = [](ExperimentConfig& c, const std::string&, std::string_view v) { c.output_dir = v; };
    m["output.timing"] = [](ExperimentConfig& c, const std::string& k, std::string_view v) {
      c.timing = parse_bool(k, v);
    };
    m["threads"] = size_field(&ExperimentConfig::threads);
    return m;
  }();
  return table;
}

}  // namespace

void validate_config(const ExperimentConfig& c) {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  need(c.alpha > 0.0, "alpha", "must be > 0");
  need(c.num_clients >= 1, "num_clients", "must be >= 1");
  need(c.resolution >= 2 && c.resolution <= 64, "resolution", "must be in [2, 64]");
  need(c.client_fraction > 0.0 && c.client_fraction <= 1.0, "client_fraction", "must be in (0, 1]");
  need(c.batch_size >= 1, "batch_size", "must be >= 1");
  need(c.lr > 0.0, "lr", "must be > 0");
  need(c.prox_mu >= 0.0, "fedprox.mu", "must be >= 0");
  need(c.gan_lr > 0.0, "fedmgd.gan_lr", "must be > 0");
  need(c.plan.gan_batch >= 1, "fedmgd.gan_batch", "must be >= 1");
  need(c.dataset.num_classes >= 2, "dataset.num_classes", "must be >= 2");
  need(c.dataset.kind != DatasetKind::Synth || c.dataset.per_class >= 1, "dataset.per_class", "must be >= 1");
  need(c.dataset.kind != DatasetKind::Idx || !c.dataset.images.empty(), "dataset.images",
       "required when dataset = idx");
  need(c.dataset.kind != DatasetKind::Idx || !c.dataset.labels.empty(), "dataset.labels",
       "required when dataset = idx");
  need(c.model.classifier_conv1 >= 1, "model.classifier_conv1", "must be >= 1");
  need(c.model.classifier_conv2 >= 1, "model.classifier_conv2", "must be >= 1");
  need(c.model.disc_width >= 1, "model.disc_width", "must be >= 1");
  need(c.model.noise_dim >= 1, "model.noise_dim", "must be >= 1");
  need(c.model.generator_hidden >= 1, "model.generator_hidden", "must be >= 1");
  need(c.proxy_batch >= static_cast<std::size_t>(c.dataset.num_classes), "eval.proxy_batch",
       "must be >= dataset.num_classes");
  need(c.threads >= 1, "threads", "must be >= 1");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(line), "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key, "unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    if (value.empty()) throw ConfigError(key, "missing value");
    it->second(cfg, key, value);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::FedAvg: return "fedavg";
    case Strategy::FedProx: return "fedprox";
    case Strategy::F2U: return "f2u";
    case Strategy::FedMGD: return "fedmgd";
  }
  return "fedavg";
}

std::string to_string(StageMode m) { return m == StageMode::TwoStage ? "two_stage" : "one_stage"; }

std::string to_string(SamplerMode m) { return m == SamplerMode::ServerUniform ? "server" : "client"; }

}  // namespace fedsim
