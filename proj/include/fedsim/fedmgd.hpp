#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/models.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

// Draws the preset labels fed to the generator.
class LabelSampler {
 public:
  static LabelSampler server_uniform(int num_classes);
  // Pooled label distribution of the clients. Row k of `histograms` must sum
  // to n_samples[k].
  static LabelSampler client_proportional(int num_classes, const std::vector<std::vector<std::size_t>>& histograms,
                                          std::span<const std::size_t> n_samples);

  std::vector<int> sample(std::size_t count, std::uint64_t seed) const;

  SamplerMode mode() const noexcept { return mode_; }
  int num_classes() const noexcept { return num_classes_; }

 private:
  SamplerMode mode_ = SamplerMode::ServerUniform;
  int num_classes_ = 0;
  std::vector<std::size_t> cumulative_;  // pooled counts, ClientProportional only
};

struct RealisticScore {
  int client_id = 0;
  double disc_term = 0.0;  // mean discriminator probability on the batch
  double xen_term = 0.0;   // mean cross-entropy against the preset labels
  double value = 0.0;      // disc_term - xen_term
};

RealisticScore realistic_score(int client_id, const Classifier& classifier, const Discriminator& discriminator,
                               const SynthBatch& synth);
RealisticScore realistic_score(const ClientState& client, const SynthBatch& synth);

// Arg max of value; ties go to the smallest client id.
int select_winner(std::span<const RealisticScore> scores);
// Arg max of the discriminator term alone, same tie rule.
int f2u_select(std::span<const std::pair<int, double>> disc_scores);

enum class SelectionRule { RealisticScore, LargestDiscriminator };
int pick_winner(std::span<const RealisticScore> scores, SelectionRule rule);

// Samples whose global-classifier argmax equals the preset label, in input order.
SynthBatch consistency_filter(const Classifier& classifier, const SynthBatch& synth);

// Optimizer state carried across generative rounds.
struct GanState {
  AdamState generator;
  std::vector<AdamState> discriminators;
  std::vector<AdamState> classifiers;

  GanState() = default;
  GanState(std::size_t num_clients, double gan_lr, double lr);
};

struct GanRoundOptions {
  std::size_t gan_batch = 64;
  std::size_t batch_size = 32;
  SelectionRule rule = SelectionRule::RealisticScore;
  std::size_t threads = 1;
};

struct GanRoundResult {
  int winner = 0;
  std::vector<RealisticScore> scores;  // ascending client id
  double generator_loss = 0.0;
};

// One generative round: synthesize a batch, train each selected client's
// discriminator (real vs synthetic) and classifier (local data) for one
// pass, score, pick the winner and take one generator step against it.
GanRoundResult gan_round(CondGenerator& generator, std::vector<ClientState>& clients, GanState& state,
                         const LabelSampler& sampler, const GanRoundOptions& opts, std::span<const int> selected,
                         std::uint64_t round_seed);

struct EnhanceOptions {
  TrainOptions local;
  std::size_t refine_batch = 2048;
  std::size_t threads = 1;
};

struct EnhanceResult {
  std::size_t survivors = 0;
  std::vector<std::size_t> survivors_per_class;
};

// One enhancement round: selected clients train from their current
// classifiers, the server aggregates, refines on filtered synthetic data
// and broadcasts the result to every client.
EnhanceResult enhance_round(Classifier& global, std::vector<ClientState>& clients, const CondGenerator& generator,
                            const LabelSampler& sampler, const EnhanceOptions& opts, std::span<const int> selected,
                            std::uint64_t round_seed);

// Refines `global` for one epoch on `synth` (no-op when empty).
void refine_on(Classifier& global, const SynthBatch& synth, const TrainOptions& opts, std::uint64_t seed);

using ScoreSink = std::function<void(long round, const GanRoundResult&)>;

struct FedmgdHooks {
  RecordSink records;
  ScoreSink scores;
  // Called once between the stages with the stage-1 federation state.
  std::function<void(const Federation&)> handoff;
  std::function<void(long round, const EnhanceResult&)> enhance;
};

LabelSampler make_sampler(const ExperimentConfig& cfg, const Federation& fed);
CondGenerator make_generator(const ExperimentConfig& cfg, const Federation& fed);

// Two-stage or one-stage FedMGD; with strategy f2u the winner is chosen by
// discriminator output and the generator loss is adversarial only.
RunResult run_fedmgd(const ExperimentConfig& cfg, const FedmgdHooks& hooks = {});
RunResult run_fedmgd(const ExperimentConfig& cfg, Federation fed, const FedmgdHooks& hooks = {});

}  // namespace fedsim
