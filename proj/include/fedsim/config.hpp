#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace fedsim {

enum class StageMode { TwoStage, OneStage };
enum class SamplerMode { ServerUniform, ClientProportional };
enum class Strategy { FedAvg, FedProx, F2U, FedMGD };
enum class DatasetKind { Synth, Idx };

struct StagePlan {
  StageMode mode = StageMode::TwoStage;
  std::size_t gan_rounds = 200;
  std::size_t enhance_rounds = 30;
  std::size_t gan_batch = 64;
  std::size_t refine_batch = 2048;
};

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Synth;
  int num_classes = 4;
  std::size_t per_class = 100;
  std::filesystem::path images;
  std::filesystem::path labels;
};

// Model sizes. Defaults are the desk-scale networks.
struct ModelConfig {
  std::size_t classifier_conv1 = 4;
  std::size_t classifier_conv2 = 8;
  std::size_t disc_width = 16;
  std::size_t noise_dim = 16;
  std::size_t generator_hidden = 64;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::size_t resolution = 8;
  std::size_t num_clients = 5;
  double alpha = 0.1;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::FedAvg;
  double prox_mu = 0.01;

  // Communication rounds of the baselines; ignored by fedmgd/f2u, which use `plan`.
  std::size_t rounds = 30;
  double client_fraction = 1.0;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 32;
  double lr = 2e-4;

  StagePlan plan;
  SamplerMode sampler = SamplerMode::ServerUniform;
  // Adam learning rate of the generator and discriminators.
  double gan_lr = 5e-3;
  ModelConfig model;

  // Per-client accuracy every N rounds (and always on the final round).
  std::size_t client_eval_every = 5;
  // Quality proxy cadence during the generative stage, and its sample count.
  std::size_t proxy_every = 10;
  std::size_t proxy_batch = 256;

  std::filesystem::path output_dir = "out";
  // Record wall-clock time in wall_ms; off keeps output byte-reproducible.
  bool timing = false;
  std::size_t threads = 1;
};

// Parses the flat `key = value` format (one assignment per line, `#`
// comments, dotted keys for nested fields). Unknown keys, malformed values
// and out-of-range values raise ConfigError naming the key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Range checks shared by the parser and programmatic callers.
void validate_config(const ExperimentConfig& cfg);

std::string to_string(Strategy s);
std::string to_string(StageMode m);
std::string to_string(SamplerMode m);

}  // namespace fedsim
