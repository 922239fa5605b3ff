#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/models.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

struct ClientState {
  int id = 0;
  std::shared_ptr<const LabeledDataset> data;
  std::vector<std::size_t> shard;       // training indices into *data
  std::vector<std::size_t> local_test;  // seeded 10% holdout of the client's shard
  Classifier classifier;
  Discriminator discriminator;
  std::uint64_t rng_seed = 0;

  std::size_t n_samples() const noexcept { return shard.size(); }
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 2e-4;
  // FedProx proximal weight; 0 gives plain FedAvg local training.
  double prox_mu = 0.0;
};

struct RoundPlan {
  long round_index = 0;
  std::vector<int> selected_clients;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 32;
};

// ceil(fraction * K) distinct ids drawn uniformly without replacement,
// returned in ascending order.
std::vector<int> sample_clients(std::size_t num_clients, double fraction, std::uint64_t round_seed);

// Mini-batch Adam on cross-entropy over `indices` for `epochs` epochs,
// starting from the classifier's current parameters. With prox_mu > 0 the
// loss gains (mu/2)|w - anchor|^2. Fresh optimizer state per call.
void train_classifier(Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices,
                      const TrainOptions& opts, std::uint64_t seed, const ParamVector* anchor = nullptr);
// Same, continuing from caller-owned optimizer state (opts.lr is ignored).
void train_classifier(Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices,
                      const TrainOptions& opts, std::uint64_t seed, AdamState& opt,
                      const ParamVector* anchor = nullptr);

// Loads `global_params` into the client's classifier, trains E epochs on
// the client's shard and returns the updated parameters.
ParamVector local_train(ClientState& client, const ParamVector& global_params, const TrainOptions& opts,
                        std::uint64_t seed);

// Seed of a client's local-training stream in a given round.
std::uint64_t local_seed(const ClientState& client, long round) noexcept;

// Mean cross-entropy of the classifier over `indices`.
double mean_loss(const Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices);

struct Upload {
  int client_id = 0;
  ParamVector params;
  std::size_t n_samples = 0;
};

// Sample-count weighted mean, reduced in ascending client-id order.
ParamVector aggregate(std::vector<Upload> uploads);

// Runs fn(i) for i in [0, n) on up to `threads` threads. Results must be
// written to disjoint per-index slots.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

// Dataset, partition and client states of one experiment.
struct Federation {
  std::shared_ptr<const LabeledDataset> data;
  Partition partition;
  LabeledDataset test_set;
  std::vector<ClientState> clients;
  Classifier global;

  // Training-pool reference (union of client shards) for the quality proxy.
  LabeledDataset training_pool() const;
};

LabeledDataset make_dataset(const ExperimentConfig& cfg);
Federation build_federation(const ExperimentConfig& cfg);
Federation build_federation(const ExperimentConfig& cfg, LabeledDataset ds);

// Evaluation record for the current global classifier. Per-client accuracy
// is filled when `with_clients` is set.
MetricsRecord evaluate(const Federation& fed, const Classifier& global, long round, Stage stage, bool with_clients);

struct RunResult {
  std::vector<MetricsRecord> records;
  ParamVector global_params;
  std::optional<ParamVector> generator_params;
};

// FedAvg (prox_mu = 0) or FedProx.
RunResult run_fedavg(const ExperimentConfig& cfg, const RecordSink& sink = {});
RunResult run_fedavg(const ExperimentConfig& cfg, Federation fed, const RecordSink& sink = {});

}  // namespace fedsim
