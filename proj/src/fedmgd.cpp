#include "fedsim/fedmgd.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "fedsim/autograd.hpp"
#include "fedsim/error.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {
constexpr std::uint64_t kTagLabels = 0x1abe;
constexpr std::uint64_t kTagNoise = 0x2015e;
constexpr std::uint64_t kTagDiscPass = 0xd0a1;
constexpr std::uint64_t kTagClsPass = 0xc0a1;
constexpr std::uint64_t kTagEnhance = 0xe4a2;
constexpr std::uint64_t kTagRefine = 0x4ef1;
constexpr std::uint64_t kTagGenInit = 0x6e41;
constexpr std::uint64_t kTagRoundSel = 0x5e1c;
constexpr std::uint64_t kTagRound = 0x40d;
constexpr std::uint64_t kTagProxy = 0x9a0c;
constexpr double kGanBeta1 = 0.5;
}  // namespace

LabelSampler LabelSampler::server_uniform(int num_classes) {
  if (num_classes < 1) throw ContractError("LabelSampler: num_classes must be positive");
  LabelSampler s;
  s.mode_ = SamplerMode::ServerUniform;
  s.num_classes_ = num_classes;
  return s;
}

LabelSampler LabelSampler::client_proportional(int num_classes, const std::vector<std::vector<std::size_t>>& histograms,
                                               std::span<const std::size_t> n_samples) {
  if (num_classes < 1) throw ContractError("LabelSampler: num_classes must be positive");
  if (histograms.size() != n_samples.size())
    throw ContractError("LabelSampler: histogram rows do not match the client count");
  std::vector<std::size_t> pooled(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t k = 0; k < histograms.size(); ++k) {
    if (histograms[k].size() != pooled.size())
      throw DimensionError("LabelSampler: histogram row " + std::to_string(k) + " has the wrong class count");
    const auto row = std::accumulate(histograms[k].begin(), histograms[k].end(), std::size_t{0});
    if (row != n_samples[k])
      throw ContractError("LabelSampler: histogram row " + std::to_string(k) + " sums to " + std::to_string(row) +
                          ", expected " + std::to_string(n_samples[k]));
    for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] += histograms[k][c];
  }
  LabelSampler s;
  s.mode_ = SamplerMode::ClientProportional;
  s.num_classes_ = num_classes;
  s.cumulative_.resize(pooled.size());
  std::partial_sum(pooled.begin(), pooled.end(), s.cumulative_.begin());
  if (s.cumulative_.back() == 0) throw ContractError("LabelSampler: empty client histogram");
  return s;
}

std::vector<int> LabelSampler::sample(std::size_t count, std::uint64_t seed) const {
  if (count == 0) throw ContractError("sample_labels: batch must be >= 1");
  Rng rng(seed);
  std::vector<int> out(count);
  if (mode_ == SamplerMode::ServerUniform) {
    for (auto& y : out) y = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(num_classes_)));
    return out;
  }
  if (cumulative_.empty() || cumulative_.back() == 0) throw ContractError("sample_labels: empty client histogram");
  for (auto& y : out) {
    const std::size_t u = rng.uniform_index(cumulative_.back());
    y = static_cast<int>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
  }
  return out;
}

RealisticScore realistic_score(int client_id, const Classifier& classifier, const Discriminator& discriminator,
                               const SynthBatch& synth) {
  if (synth.size() == 0) throw ContractError("realistic_score: empty synthetic batch");
  if (synth.images.rank() == 0 || synth.images.dim(0) != synth.size())
    throw DimensionError("realistic_score: image count does not match label count");
  RealisticScore s;
  s.client_id = client_id;
  const auto probs = discriminator.discriminate(synth.images);
  s.disc_term = std::accumulate(probs.begin(), probs.end(), 0.0) / static_cast<double>(probs.size());
  Tape tape;
  s.xen_term = tape.scalar(tape.cross_entropy(tape.constant(classifier.classify(synth.images)), synth.labels));
  s.value = s.disc_term - s.xen_term;
  return s;
}

RealisticScore realistic_score(const ClientState& client, const SynthBatch& synth) {
  return realistic_score(client.id, client.classifier, client.discriminator, synth);
}

namespace {
template <typename Range, typename Key>
int argmax_id(const Range& items, Key key, const char* who) {
  if (items.empty()) throw ContractError(std::string(who) + ": empty score list");
  int best_id = 0;
  double best = 0.0;
  bool first = true;
  for (const auto& it : items) {
    const auto [id, v] = key(it);
    if (first || v > best || (v == best && id < best_id)) {
      best_id = id;
      best = v;
      first = false;
    }
  }
  return best_id;
}
}  // namespace

int select_winner(std::span<const RealisticScore> scores) {
  return argmax_id(scores, [](const RealisticScore& s) { return std::pair{s.client_id, s.value}; }, "select_winner");
}

int f2u_select(std::span<const std::pair<int, double>> disc_scores) {
  return argmax_id(disc_scores, [](const std::pair<int, double>& s) { return s; }, "f2u_select");
}

int pick_winner(std::span<const RealisticScore> scores, SelectionRule rule) {
  if (rule == SelectionRule::RealisticScore) return select_winner(scores);
  std::vector<std::pair<int, double>> d;
  for (const auto& s : scores) d.emplace_back(s.client_id, s.disc_term);
  return f2u_select(d);
}

SynthBatch consistency_filter(const Classifier& classifier, const SynthBatch& synth) {
  if (synth.size() == 0) throw ContractError("consistency_filter: empty synthetic batch");
  const auto pred = argmax_rows(classifier.classify(synth.images));
  const std::size_t M = synth.images.numel() / synth.size();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == synth.labels[i]) keep.push_back(i);
  SynthBatch out;
  if (keep.empty()) return out;
  Shape shape = synth.images.shape;
  shape[0] = keep.size();
  out.images = Tensor(shape);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    std::copy_n(synth.images.data.begin() + static_cast<std::ptrdiff_t>(keep[j] * M), M,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(j * M));
    out.labels.push_back(synth.labels[keep[j]]);
  }
  return out;
}

GanState::GanState(std::size_t num_clients, double gan_lr, double lr)
    : generator(gan_lr), discriminators(num_clients, AdamState(gan_lr)), classifiers(num_clients, AdamState(lr)) {
  generator.beta1 = kGanBeta1;
  for (auto& d : discriminators) d.beta1 = kGanBeta1;
}

namespace {

// One pass over the synthetic batch, each chunk paired with as many real
// samples from the client's shuffled shard.
void train_discriminator(ClientState& client, AdamState& opt, const SynthBatch& synth, std::size_t batch_size,
                         std::uint64_t seed) {
  if (client.shard.empty()) return;
  Rng rng(seed);
  std::vector<std::size_t> order = client.shard;
  rng.shuffle(order);
  std::size_t cursor = 0;
  ParamVector& params = client.discriminator.params();
  params.set_requires_grad(true);
  const std::size_t M = synth.images.numel() / synth.size();
  for (std::size_t start = 0; start < synth.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, synth.size() - start);
    Tensor fake(Shape{n, synth.images.dim(1), synth.images.dim(2), synth.images.dim(3)});
    std::copy_n(synth.images.data.begin() + static_cast<std::ptrdiff_t>(start * M), n * M, fake.data.begin());
    // Real partners cycle through the shuffled shard.
    std::vector<std::size_t> real(n);
    for (auto& r : real) {
      if (cursor == order.size()) cursor = 0;
      r = order[cursor++];
    }
    Tape tape;
    Var p_real = client.discriminator.forward(tape, tape.constant(gather_images(*client.data, real)));
    Var p_fake = client.discriminator.forward(tape, tape.constant(std::move(fake)));
    Var loss = tape.add(tape.binary_cross_entropy(p_real, 1.0), tape.binary_cross_entropy(p_fake, 0.0));
    params.zero_grad();
    tape.backward(loss);
    adam_step(params, opt);
  }
}

}  // namespace

GanRoundResult gan_round(CondGenerator& generator, std::vector<ClientState>& clients, GanState& state,
                         const LabelSampler& sampler, const GanRoundOptions& opts, std::span<const int> selected,
                         std::uint64_t round_seed) {
  if (selected.empty()) throw ContractError("gan_round: no clients selected");
  if (state.discriminators.size() != clients.size() || state.classifiers.size() != clients.size())
    throw ContractError("gan_round: optimizer state does not match the client count");
  const auto labels = sampler.sample(opts.gan_batch, derive_seed(round_seed, kTagLabels));
  const std::uint64_t noise_seed = derive_seed(round_seed, kTagNoise);
  const SynthBatch synth = generator.generate(labels, noise_seed);

  GanRoundResult result;
  result.scores.resize(selected.size());
  parallel_for(selected.size(), opts.threads, [&](std::size_t i) {
    const auto k = static_cast<std::size_t>(selected[i]);
    ClientState& c = clients.at(k);
    train_discriminator(c, state.discriminators[k], synth, opts.batch_size,
                        derive_seed(c.rng_seed, kTagDiscPass, round_seed));
    train_classifier(c.classifier, *c.data, c.shard, TrainOptions{1, opts.batch_size, 0.0, 0.0},
                     derive_seed(c.rng_seed, kTagClsPass, round_seed), state.classifiers[k]);
    result.scores[i] = realistic_score(c, synth);
  });
  std::sort(result.scores.begin(), result.scores.end(),
            [](const RealisticScore& a, const RealisticScore& b) { return a.client_id < b.client_id; });
  result.winner = pick_winner(result.scores, opts.rule);

  ClientState& w = clients.at(static_cast<std::size_t>(result.winner));
  Tape tape;
  Var images = generator.forward(tape, tape.constant(generator.make_input(labels, noise_seed)));
  // Non-saturating adversarial term, plus label agreement under the
  // winner's classifier for the score-based rule.
  Var loss = tape.binary_cross_entropy(w.discriminator.forward(tape, images, false), 1.0);
  if (opts.rule == SelectionRule::RealisticScore)
    loss = tape.add(loss, tape.cross_entropy(w.classifier.forward(tape, images, false), labels));
  result.generator_loss = tape.scalar(loss);
  generator.params().set_requires_grad(true);
  generator.params().zero_grad();
  tape.backward(loss);
  adam_step(generator.params(), state.generator);
  return result;
}

void refine_on(Classifier& global, const SynthBatch& synth, const TrainOptions& opts, std::uint64_t seed) {
  if (synth.size() == 0) return;
  LabeledDataset ds{synth.images, synth.labels, global.num_classes()};
  std::vector<std::size_t> all(synth.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  TrainOptions one = opts;
  one.epochs = 1;
  one.prox_mu = 0.0;
  train_classifier(global, ds, all, one, seed);
}

EnhanceResult enhance_round(Classifier& global, std::vector<ClientState>& clients, const CondGenerator& generator,
                            const LabelSampler& sampler, const EnhanceOptions& opts, std::span<const int> selected,
                            std::uint64_t round_seed) {
  if (selected.empty()) throw ContractError("enhance_round: no clients selected");
  std::vector<Upload> uploads(selected.size());
  TrainOptions local = opts.local;
  local.prox_mu = 0.0;
  parallel_for(selected.size(), opts.threads, [&](std::size_t i) {
    ClientState& c = clients.at(static_cast<std::size_t>(selected[i]));
    train_classifier(c.classifier, *c.data, c.shard, local, derive_seed(c.rng_seed, kTagEnhance, round_seed));
    uploads[i] = Upload{c.id, c.classifier.params(), c.n_samples()};
  });
  global.params().assign_values(aggregate(std::move(uploads)));

  EnhanceResult result;
  if (opts.refine_batch > 0) {
    const auto labels = sampler.sample(opts.refine_batch, derive_seed(round_seed, kTagLabels));
    const SynthBatch kept = consistency_filter(global, generator.generate(labels, derive_seed(round_seed, kTagNoise)));
    result.survivors = kept.size();
    result.survivors_per_class = class_histogram(kept.labels, global.num_classes());
    refine_on(global, kept, opts.local, derive_seed(round_seed, kTagRefine));
  }
  for (auto& c : clients) c.classifier.params().assign_values(global.params());
  return result;
}

LabelSampler make_sampler(const ExperimentConfig& cfg, const Federation& fed) {
  const int C = fed.data->num_classes;
  if (cfg.sampler == SamplerMode::ServerUniform) return LabelSampler::server_uniform(C);
  std::vector<std::vector<std::size_t>> hist;
  std::vector<std::size_t> n;
  for (const auto& c : fed.clients) {
    hist.push_back(class_histogram(*fed.data, c.shard));
    n.push_back(c.n_samples());
  }
  return LabelSampler::client_proportional(C, hist, n);
}

CondGenerator make_generator(const ExperimentConfig& cfg, const Federation& fed) {
  return CondGenerator({fed.data->channels(), fed.data->resolution()}, fed.data->num_classes,
                       derive_seed(cfg.seed, kTagGenInit), cfg.model.noise_dim, cfg.model.generator_hidden);
}

RunResult run_fedmgd(const ExperimentConfig& cfg, const FedmgdHooks& hooks) {
  return run_fedmgd(cfg, build_federation(cfg), hooks);
}

RunResult run_fedmgd(const ExperimentConfig& cfg, Federation fed, const FedmgdHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  CondGenerator generator = make_generator(cfg, fed);
  const LabelSampler sampler = make_sampler(cfg, fed);
  const LabeledDataset reference = fed.training_pool();
  GanState state(fed.clients.size(), cfg.gan_lr, cfg.lr);

  const GanRoundOptions gan_opts{cfg.plan.gan_batch, cfg.batch_size,
                                 cfg.strategy == Strategy::F2U ? SelectionRule::LargestDiscriminator
                                                               : SelectionRule::RealisticScore,
                                 cfg.threads};
  const EnhanceOptions enh_opts{TrainOptions{cfg.local_epochs, cfg.batch_size, cfg.lr, 0.0}, cfg.plan.refine_batch,
                                cfg.threads};

  const long T1 = static_cast<long>(cfg.plan.gan_rounds);
  const long T2 = static_cast<long>(cfg.plan.enhance_rounds);
  const long last = T1 + T2;
  const bool one_stage = cfg.plan.mode == StageMode::OneStage;

  RunResult result;
  auto push = [&](MetricsRecord r) {
    if (cfg.timing)
      r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    if (hooks.records) hooks.records(r);
    result.records.push_back(std::move(r));
  };
  auto proxy = [&] {
    return quality_proxy(generator, reference, cfg.proxy_batch, derive_seed(cfg.seed, kTagProxy));
  };
  auto client_eval = [&](long t) {
    return t == last || (cfg.client_eval_every > 0 && t % static_cast<long>(cfg.client_eval_every) == 0);
  };
  auto proxy_due = [&](long t, long stage_end) {
    return t == stage_end || (cfg.proxy_every > 0 && t % static_cast<long>(cfg.proxy_every) == 0);
  };
  auto select = [&](long t) {
    return sample_clients(fed.clients.size(), cfg.client_fraction,
                          derive_seed(cfg.seed, kTagRoundSel, static_cast<std::uint64_t>(t)));
  };
  auto round_seed = [&](long t) { return derive_seed(cfg.seed, kTagRound, static_cast<std::uint64_t>(t)); };

  {
    MetricsRecord r0 = evaluate(fed, fed.global, 0, one_stage && T1 == 0 ? Stage::Enhance : Stage::Gan, true);
    r0.quality_proxy = proxy();
    push(std::move(r0));
  }

  long t = 0;
  try {
    if (one_stage) {
      for (t = 1; t <= last; ++t) {
        const auto sel = select(t);
        const auto gan = gan_round(generator, fed.clients, state, sampler, gan_opts, sel, round_seed(t));
        if (hooks.scores) hooks.scores(t, gan);
        const auto enh = enhance_round(fed.global, fed.clients, generator, sampler, enh_opts, sel, round_seed(t));
        if (hooks.enhance) hooks.enhance(t, enh);
        MetricsRecord r = evaluate(fed, fed.global, t, Stage::Enhance, client_eval(t));
        r.winner_id = gan.winner;
        if (proxy_due(t, last)) r.quality_proxy = proxy();
        push(std::move(r));
      }
    } else {
      Classifier monitor = fed.global;
      for (t = 1; t <= T1; ++t) {
        const auto gan = gan_round(generator, fed.clients, state, sampler, gan_opts, select(t), round_seed(t));
        if (hooks.scores) hooks.scores(t, gan);
        // Stage-1 accuracy is a monitor only: the sample-weighted mean of
        // the client classifiers, never sent back.
        std::vector<Upload> all;
        for (const auto& c : fed.clients) all.push_back(Upload{c.id, c.classifier.params(), c.n_samples()});
        monitor.params().assign_values(aggregate(std::move(all)));
        MetricsRecord r = evaluate(fed, monitor, t, Stage::Gan, client_eval(t));
        r.winner_id = gan.winner;
        if (proxy_due(t, T1)) r.quality_proxy = proxy();
        push(std::move(r));
      }
      if (hooks.handoff) hooks.handoff(fed);
      for (t = T1 + 1; t <= last; ++t) {
        const auto enh = enhance_round(fed.global, fed.clients, generator, sampler, enh_opts, select(t), round_seed(t));
        if (hooks.enhance) hooks.enhance(t, enh);
        push(evaluate(fed, fed.global, t, Stage::Enhance, client_eval(t)));
      }
    }
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    throw RunError("fedmgd", t, e.what());
  }
  result.global_params = fed.global.params();
  result.generator_params = generator.params();
  return result;
}

}  // namespace fedsim
