#include "fedsim/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "fedsim/autograd.hpp"
#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {
// Seed-derivation tags; changing any of them changes every run.
constexpr std::uint64_t kTagPartition = 0x9a27;
constexpr std::uint64_t kTagHoldout = 0x401d;
constexpr std::uint64_t kTagClient = 0xc11e;
constexpr std::uint64_t kTagClassifierInit = 0xc1a5;
constexpr std::uint64_t kTagDiscInit = 0xd15c;
constexpr std::uint64_t kTagSample = 0x5a3e;
constexpr std::uint64_t kTagLocal = 0x10c1;
}  // namespace

std::vector<int> sample_clients(std::size_t num_clients, double fraction, std::uint64_t round_seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("sample_clients: fraction must be in (0, 1]");
  if (num_clients == 0) throw ContractError("sample_clients: no clients");
  // The epsilon absorbs representation error, e.g. 0.4 * 5.
  auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(num_clients) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, num_clients);
  std::vector<int> ids(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) ids[i] = static_cast<int>(i);
  Rng rng(round_seed);
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + rng.uniform_index(num_clients - i)]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void train_classifier(Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices,
                      const TrainOptions& opts, std::uint64_t seed, const ParamVector* anchor) {
  AdamState opt(opts.lr);
  train_classifier(classifier, ds, indices, opts, seed, opt, anchor);
}

void train_classifier(Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices,
                      const TrainOptions& opts, std::uint64_t seed, AdamState& opt, const ParamVector* anchor) {
  if (opts.epochs == 0 || indices.empty()) return;
  if (opts.batch_size == 0) throw ContractError("train_classifier: batch_size must be positive");
  ParamVector& params = classifier.params();
  if (anchor) params.require_compatible(*anchor, "local_train (proximal anchor)");
  params.set_requires_grad(true);
  Rng rng(seed);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      std::span<const std::size_t> batch(order.data() + start, std::min(opts.batch_size, order.size() - start));
      const auto labels = gather_labels(ds, batch);
      Tape tape;
      Var logits = classifier.forward(tape, tape.constant(gather_images(ds, batch)));
      Var loss = tape.cross_entropy(logits, labels);
      params.zero_grad();
      tape.backward(loss);
      if (anchor && opts.prox_mu > 0.0) {
        // d/dw (mu/2)|w - anchor|^2
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& g = *params.at(i).grad;
          const auto& w = params.at(i).data;
          const auto& a = anchor->at(i).data;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += opts.prox_mu * (w[k] - a[k]);
        }
      }
      adam_step(params, opt);
    }
  }
}

std::uint64_t local_seed(const ClientState& client, long round) noexcept {
  return derive_seed(client.rng_seed, kTagLocal, static_cast<std::uint64_t>(round));
}

ParamVector local_train(ClientState& client, const ParamVector& global_params, const TrainOptions& opts,
                        std::uint64_t seed) {
  client.classifier.params().require_compatible(global_params, "local_train");
  client.classifier.params().assign_values(global_params);
  const ParamVector* anchor = opts.prox_mu > 0.0 ? &global_params : nullptr;
  train_classifier(client.classifier, *client.data, client.shard, opts, seed, anchor);
  return client.classifier.params();
}

double mean_loss(const Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("mean_loss: empty index list");
  Tape tape;
  const auto labels = gather_labels(ds, indices);
  Var logits = tape.constant(classifier.classify(gather_images(ds, indices)));
  return tape.scalar(tape.cross_entropy(logits, labels));
}

ParamVector aggregate(std::vector<Upload> uploads) {
  if (uploads.empty()) throw ContractError("aggregate: no uploads");
  std::sort(uploads.begin(), uploads.end(), [](const Upload& a, const Upload& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 0; i < uploads.size(); ++i) {
    if (uploads[i].n_samples == 0) throw ContractError("aggregate: upload with zero samples");
    if (i > 0 && uploads[i].client_id == uploads[i - 1].client_id)
      throw ContractError("aggregate: duplicate client id " + std::to_string(uploads[i].client_id));
    uploads[i].params.require_compatible(uploads[0].params, "aggregate");
  }
  // Running weighted mean: m += (n_i / S_i) (x_i - m). Identical uploads
  // give exact zero increments, so the average of copies is the copy.
  ParamVector out = uploads[0].params;
  for (std::size_t e = 0; e < out.size(); ++e) {
    auto& dst = out.at(e);
    dst.grad.reset();
    std::size_t seen = uploads[0].n_samples;
    for (std::size_t i = 1; i < uploads.size(); ++i) {
      seen += uploads[i].n_samples;
      const double w = static_cast<double>(uploads[i].n_samples) / static_cast<double>(seen);
      const auto& src = uploads[i].params.at(e).data;
      for (std::size_t k = 0; k < src.size(); ++k) dst.data[k] += w * (src[k] - dst.data[k]);
    }
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

LabeledDataset Federation::training_pool() const {
  std::vector<std::size_t> all;
  for (const auto& c : clients) all.insert(all.end(), c.shard.begin(), c.shard.end());
  std::sort(all.begin(), all.end());
  return subset(*data, all);
}

LabeledDataset make_dataset(const ExperimentConfig& cfg) {
  LabeledDataset ds;
  if (cfg.dataset.kind == DatasetKind::Synth)
    ds = synth_dataset(cfg.dataset.num_classes, cfg.dataset.per_class, cfg.resolution, cfg.seed);
  else
    ds = load_idx(cfg.dataset.images, cfg.dataset.labels, cfg.resolution);
  ds.validate();
  return ds;
}

Federation build_federation(const ExperimentConfig& cfg) { return build_federation(cfg, make_dataset(cfg)); }

Federation build_federation(const ExperimentConfig& cfg, LabeledDataset ds) {
  validate_config(cfg);
  Federation fed;
  fed.partition = dirichlet_partition(ds, {cfg.alpha, cfg.num_clients, derive_seed(cfg.seed, kTagPartition)});
  fed.test_set = subset(ds, fed.partition.test_indices);
  fed.data = std::make_shared<const LabeledDataset>(std::move(ds));

  const ImageShape shape{fed.data->channels(), fed.data->resolution()};
  const ClassifierWidths widths{cfg.model.classifier_conv1, cfg.model.classifier_conv2};
  // Every classifier starts from the same initialization.
  const std::uint64_t init_seed = derive_seed(cfg.seed, kTagClassifierInit);
  fed.global = Classifier(shape, fed.data->num_classes, init_seed, widths);
  for (std::size_t k = 0; k < cfg.num_clients; ++k) {
    const auto split = split_local_holdout(fed.partition.shards[k], derive_seed(cfg.seed, kTagHoldout, k));
    ClientState c;
    c.id = static_cast<int>(k);
    c.data = fed.data;
    c.shard = split.train;
    c.local_test = split.test;
    c.rng_seed = derive_seed(cfg.seed, kTagClient, k);
    c.classifier = fed.global;
    c.discriminator = Discriminator(shape, derive_seed(c.rng_seed, kTagDiscInit), cfg.model.disc_width);
    fed.clients.push_back(std::move(c));
  }
  return fed;
}

MetricsRecord evaluate(const Federation& fed, const Classifier& global, long round, Stage stage, bool with_clients) {
  MetricsRecord r;
  r.round = round;
  r.stage = stage;
  r.global_acc = global_accuracy(global, fed.test_set);
  if (with_clients) {
    std::vector<double> acc;
    for (const auto& c : fed.clients)
      if (!c.local_test.empty()) acc.push_back(accuracy_on(global, *fed.data, c.local_test));
    if (!acc.empty()) {
      r.fairness_std = fairness_std(acc);
      r.per_client_acc = std::move(acc);
    }
  }
  return r;
}

RunResult run_fedavg(const ExperimentConfig& cfg) { return run_fedavg(cfg, build_federation(cfg), {}); }

RunResult run_fedavg(const ExperimentConfig& cfg, const RecordSink& sink) {
  return run_fedavg(cfg, build_federation(cfg), sink);
}

RunResult run_fedavg(const ExperimentConfig& cfg, Federation fed, const RecordSink& sink) {
  const auto start = std::chrono::steady_clock::now();
  const bool prox = cfg.strategy == Strategy::FedProx;
  const TrainOptions opts{cfg.local_epochs, cfg.batch_size, cfg.lr, prox ? cfg.prox_mu : 0.0};
  RunResult result;
  auto push = [&](MetricsRecord r) {
    if (cfg.timing)
      r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    if (sink) sink(r);
    result.records.push_back(std::move(r));
  };

  push(evaluate(fed, fed.global, 0, Stage::Baseline, true));
  const long T = static_cast<long>(cfg.rounds);
  for (long t = 1; t <= T; ++t) {
    try {
      const auto selected = sample_clients(fed.clients.size(), cfg.client_fraction,
                                           derive_seed(cfg.seed, kTagSample, static_cast<std::uint64_t>(t)));
      std::vector<Upload> uploads(selected.size());
      parallel_for(selected.size(), cfg.threads, [&](std::size_t i) {
        ClientState& c = fed.clients[static_cast<std::size_t>(selected[i])];
        uploads[i] = Upload{c.id, local_train(c, fed.global.params(), opts, local_seed(c, t)), c.n_samples()};
      });
      fed.global.params().assign_values(aggregate(std::move(uploads)));
      const bool with_clients = t == T || (cfg.client_eval_every > 0 && t % static_cast<long>(cfg.client_eval_every) == 0);
      push(evaluate(fed, fed.global, t, Stage::Baseline, with_clients));
    } catch (const RunError&) {
      throw;
    } catch (const Error& e) {
      throw RunError("fl-engine", t, e.what());
    }
  }
  result.global_params = fed.global.params();
  return result;
}

}  // namespace fedsim
