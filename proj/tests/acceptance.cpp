// Acceptance suite: one PASS/FAIL line per criterion. Thresholds and
// tolerances are fixed below; pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/error.hpp"
#include "fedsim/fedmgd.hpp"
#include "fedsim/gradcheck.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/runner.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradMaxParams = 200;
constexpr double kGradBudgetSeconds = 10.0;
constexpr int kAggInstances = 1000;
constexpr double kAggTolerance = 1e-12;
constexpr int kPartitionSeeds = 100;
constexpr int kScoreVectors = 10000;
constexpr int kUnseenSeeds = 10;
constexpr int kUnseenRequired = 9;
constexpr double kUnseenBudgetSeconds = 120.0;
constexpr int kPairedSeeds = 10;
constexpr int kFedmgdRequired = 8;
constexpr double kTableOneBudgetSeconds = 20 * 60.0;
constexpr int kTwoStageRequired = 8;
constexpr int kFairnessRequired = 7;
constexpr int kSamplingRequired = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentConfig desk(std::uint64_t seed, Strategy s, std::size_t clients = 2) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.strategy = s;
  cfg.num_clients = clients;
  cfg.alpha = 0.01;
  cfg.dataset.num_classes = 4;
  cfg.resolution = 8;
  cfg.plan.gan_rounds = 200;
  cfg.plan.enhance_rounds = 30;
  cfg.rounds = 30;
  return cfg;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3f", x);
  return s;
}

// ---------------------------------------------------------------- 1
Outcome gradient_suite() {
  const auto start = Clock::now();
  GradCheckOptions opts;
  opts.tolerance = kGradTolerance;
  const auto results = run_gradient_suite(1, opts);
  const double secs = seconds_since(start);
  bool ok = !results.empty();
  double worst = 0;
  std::size_t largest = 0;
  std::string failed;
  for (const auto& r : results) {
    ok = ok && r.passed && r.checked <= kGradMaxParams;
    worst = std::max(worst, r.max_rel_error);
    largest = std::max(largest, r.checked);
    if (!r.passed) failed += " " + r.name;
  }
  ok = ok && secs < kGradBudgetSeconds;
  return {ok, fmt("%zu checks, worst rel err %.2e, largest instance %zu params, %.2f s%s", results.size(), worst,
                  largest, secs, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// ---------------------------------------------------------------- 2
Outcome aggregation_oracle() {
  Rng rng(2024);
  double worst = 0;
  bool idempotent = true;
  for (int inst = 0; inst < kAggInstances; ++inst) {
    const std::size_t K = 1 + rng.uniform_index(6);
    const std::size_t entries = 1 + rng.uniform_index(3);
    std::vector<Shape> shapes;
    for (std::size_t e = 0; e < entries; ++e) {
      Shape s;
      for (std::size_t d = 0, r = 1 + rng.uniform_index(3); d < r; ++d) s.push_back(1 + rng.uniform_index(4));
      shapes.push_back(s);
    }
    std::vector<Upload> ups;
    std::vector<int> ids(K);
    for (std::size_t k = 0; k < K; ++k) ids[k] = static_cast<int>(k * 3 + rng.uniform_index(3));
    rng.shuffle(ids);
    for (std::size_t k = 0; k < K; ++k) {
      ParamVector p;
      for (std::size_t e = 0; e < entries; ++e) {
        Tensor t(shapes[e]);
        for (double& v : t.data) v = rng.uniform(-10, 10);
        p.add("p" + std::to_string(e), std::move(t));
      }
      ups.push_back({ids[k], std::move(p), 1 + rng.uniform_index(1000)});
    }
    const ParamVector got = aggregate(ups);
    // scalar oracle in extended precision, one element at a time
    long double N = 0;
    for (const auto& u : ups) N += static_cast<long double>(u.n_samples);
    for (std::size_t e = 0; e < entries; ++e) {
      for (std::size_t j = 0; j < got.at(e).numel(); ++j) {
        long double acc = 0;
        for (const auto& u : ups) acc += static_cast<long double>(u.n_samples) * u.params.at(e).data[j];
        worst = std::max(worst, static_cast<double>(std::fabs(acc / N - got.at(e).data[j])));
      }
    }
    // identical uploads come back to within one ulp
    std::vector<Upload> same;
    for (std::size_t k = 0; k < K; ++k) same.push_back({static_cast<int>(k), ups[0].params, ups[k].n_samples});
    const ParamVector idem = aggregate(same);
    for (std::size_t e = 0; e < entries; ++e)
      for (std::size_t j = 0; j < idem.at(e).numel(); ++j) {
        const double want = ups[0].params.at(e).data[j];
        const double have = idem.at(e).data[j];
        if (have != want && have != std::nextafter(want, INFINITY) && have != std::nextafter(want, -INFINITY))
          idempotent = false;
      }
  }
  return {worst <= kAggTolerance && idempotent,
          fmt("%d instances, max |err| %.2e (tol %.0e), idempotence within 1 ulp: %s", kAggInstances, worst,
              kAggTolerance, idempotent ? "yes" : "no")};
}

// ---------------------------------------------------------------- 3
Outcome partition_invariants() {
  std::vector<std::size_t> counts{120, 80, 100, 60, 90};
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) ds.labels.insert(ds.labels.end(), counts[c], static_cast<int>(c));
  ds.images = Tensor({ds.labels.size(), 1, 2, 2}, 0.0);
  const auto per_class = class_histogram(ds.labels, ds.num_classes);

  bool invariants = true;
  std::vector<double> mean_l1;
  for (double alpha : {0.01, 0.1, 1.0, 1e6}) {
    double sum = 0;
    for (int seed = 0; seed < kPartitionSeeds; ++seed) {
      const auto p = dirichlet_partition(ds, {alpha, 4, static_cast<std::uint64_t>(seed)});
      std::vector<int> seen(ds.size(), 0);
      std::vector<std::size_t> totals(counts.size(), 0);
      for (const auto& shard : p.shards) {
        invariants = invariants && !shard.empty();
        for (auto i : shard) {
          ++seen[i];
          ++totals[static_cast<std::size_t>(ds.labels[i])];
        }
      }
      for (auto i : p.test_indices) {
        ++seen[i];
        ++totals[static_cast<std::size_t>(ds.labels[i])];
      }
      invariants = invariants && std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; });
      invariants = invariants && totals == per_class;
      sum += mean_pairwise_label_l1(ds, p);
    }
    mean_l1.push_back(sum / kPartitionSeeds);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < mean_l1.size(); ++i) decreasing = decreasing && mean_l1[i] < mean_l1[i - 1];
  return {invariants && decreasing,
          fmt("%d seeds x 4 alphas, invariants %s, mean L1 by alpha [0.01 0.1 1 1e6] = [%s]", kPartitionSeeds,
              invariants ? "hold" : "BROKEN", join(mean_l1).c_str())};
}

// ---------------------------------------------------------------- 4
Classifier rigged_classifier(std::vector<double> bias) {
  Classifier c({1, 8}, static_cast<int>(bias.size()), 1);
  auto& w = c.params()["fc.weight"];
  w.data.assign(w.numel(), 0.0);
  c.params()["fc.bias"].data = std::move(bias);
  return c;
}

Discriminator rigged_discriminator(double p) {
  Discriminator d({1, 8}, 1, 4);
  auto& w = d.params()["head.weight"];
  w.data.assign(w.numel(), 0.0);
  d.params()["head.bias"].data = {std::log(p / (1 - p))};
  return d;
}

Outcome score_divergence() {
  // Client 0 has the more confident discriminator, but its classifier
  // contradicts the preset labels.
  Rng rng(4);
  SynthBatch batch;
  batch.labels.assign(16, 1);
  batch.images = Tensor({16, 1, 8, 8});
  for (double& v : batch.images.data) v = rng.uniform(-1, 1);
  const auto s0 = realistic_score(0, rigged_classifier({3.0, 0.0}), rigged_discriminator(0.8), batch);
  const auto s1 = realistic_score(1, rigged_classifier({0.0, 3.0}), rigged_discriminator(0.6), batch);
  const std::vector<RealisticScore> scores{s0, s1};
  const std::vector<std::pair<int, double>> disc{{0, s0.disc_term}, {1, s1.disc_term}};
  const int f2u = f2u_select(disc);
  const int mgd = select_winner(scores);
  const bool fixture = f2u == 0 && mgd == 1;

  int tie_fail = 0, transform_fail = 0;
  const std::vector<std::function<double(double)>> monotone{
      [](double v) { return 3.0 * v + 7.0; }, [](double v) { return std::exp(v); },
      [](double v) { return std::atan(v); }, [](double v) { return v * v * v; }};
  for (int n = 0; n < kScoreVectors; ++n) {
    const std::size_t K = 1 + rng.uniform_index(8);
    std::vector<RealisticScore> v(K);
    std::vector<int> ids(K);
    for (std::size_t k = 0; k < K; ++k) ids[k] = static_cast<int>(k);
    rng.shuffle(ids);
    for (std::size_t k = 0; k < K; ++k) {
      const double d = rng.uniform(0.01, 0.99), x = rng.uniform(0, 3);
      v[k] = {ids[k], d, x, d - x};
    }
    // force ties at the maximum on a third of the vectors
    if (n % 3 == 0 && K > 1) v[rng.uniform_index(K)].value = std::max_element(v.begin(), v.end(), [](auto& a, auto& b) {
                                                                 return a.value < b.value;
                                                               })->value;
    double best = -INFINITY;
    for (const auto& s : v) best = std::max(best, s.value);
    int expect = INT32_MAX;
    for (const auto& s : v)
      if (s.value == best) expect = std::min(expect, s.client_id);
    const int w = select_winner(v);
    tie_fail += w != expect;
    for (const auto& f : monotone) {
      auto t = v;
      for (auto& s : t) s.value = f(s.value);
      // a transform may merge two distinct maxima only through rounding; skip those
      std::set<double> before, after;
      for (const auto& s : v) before.insert(s.value);
      for (const auto& s : t) after.insert(s.value);
      if (before.size() != after.size()) continue;
      transform_fail += select_winner(t) != w;
    }
  }
  return {fixture && tie_fail == 0 && transform_fail == 0,
          fmt("fixture: f2u picks %d (D %.2f vs %.2f), realistic score picks %d (value %.3f vs %.3f); "
              "%d vectors: tie-rule misses %d, transform misses %d",
              f2u, s0.disc_term, s1.disc_term, mgd, s0.value, s1.value, kScoreVectors, tie_fail, transform_fail)};
}

// ---------------------------------------------------------------- 5
Outcome unseen_class() {
  const auto start = Clock::now();
  int wins = 0;
  std::vector<double> gaps;
  for (int seed = 1; seed <= kUnseenSeeds; ++seed) {
    // A generator that covers every class: one client holding all the data.
    ExperimentConfig cfg = desk(static_cast<std::uint64_t>(seed), Strategy::FedMGD, 1);
    cfg.alpha = 1e6;
    cfg.plan.gan_rounds = 100;
    cfg.plan.enhance_rounds = 0;
    cfg.proxy_every = 0;
    const auto gan = run_fedmgd(cfg);
    Federation fed = build_federation(cfg);
    CondGenerator gen = make_generator(cfg, fed);
    gen.params().assign_values(*gan.generator_params);

    // The client only ever sees class 0.
    ClientState client = fed.clients[0];
    std::erase_if(client.shard, [&](std::size_t i) { return client.data->labels[i] != 0; });
    client.classifier = fed.global;
    train_classifier(client.classifier, *client.data, client.shard, TrainOptions{10, 32, cfg.lr, 0.0},
                     derive_seed(cfg.seed, 0xc0));
    std::vector<ClientState> clients{client};
    GanState state(1, cfg.gan_lr, cfg.lr);
    const auto sampler = LabelSampler::server_uniform(4);
    CondGenerator frozen = gen;
    for (std::uint64_t r = 0; r < 30; ++r) {
      // discriminator and classifier passes as in a generative round; the
      // generator copy absorbs the update and is discarded
      frozen = gen;
      gan_round(frozen, clients, state, sampler, GanRoundOptions{}, std::vector<int>{0}, derive_seed(cfg.seed, 0xd0, r));
    }
    const std::uint64_t noise = derive_seed(cfg.seed, 0x5c);
    const auto s0 = realistic_score(clients[0], gen.generate(std::vector<int>(64, 0), noise));
    const auto s1 = realistic_score(clients[0], gen.generate(std::vector<int>(64, 1), noise));
    wins += s0.value > s1.value;
    gaps.push_back(s0.value - s1.value);
  }
  const double secs = seconds_since(start);
  return {wins >= kUnseenRequired && secs < kUnseenBudgetSeconds,
          fmt("class-0 batch scored higher in %d/%d seeds (need %d), score gaps [%s], %.1f s", wins, kUnseenSeeds,
              kUnseenRequired, join(gaps).c_str(), secs)};
}

// ---------------------------------------------------------------- 6-9
struct Paired {
  std::vector<double> fedavg, fedmgd, one_stage, fedavg_fair, fedmgd_fair;
  double table_one_seconds = 0;
};

double final_acc(const RunResult& r) { return r.records.back().global_acc; }
double final_fair(const RunResult& r) { return r.records.back().fairness_std.value_or(NAN); }

Paired& table_one_runs() {
  static Paired p;
  static bool done = false;
  if (done) return p;
  done = true;
  const auto start = Clock::now();
  for (int seed = 1; seed <= kPairedSeeds; ++seed) {
    const auto avg = run_fedavg(desk(static_cast<std::uint64_t>(seed), Strategy::FedAvg));
    const auto mgd = run_fedmgd(desk(static_cast<std::uint64_t>(seed), Strategy::FedMGD));
    p.fedavg.push_back(final_acc(avg));
    p.fedmgd.push_back(final_acc(mgd));
    p.fedavg_fair.push_back(final_fair(avg));
    p.fedmgd_fair.push_back(final_fair(mgd));
  }
  p.table_one_seconds = seconds_since(start);
  return p;
}

Outcome table_one() {
  const auto& p = table_one_runs();
  int wins = 0;
  for (int i = 0; i < kPairedSeeds; ++i) wins += p.fedmgd[static_cast<std::size_t>(i)] > p.fedavg[static_cast<std::size_t>(i)];
  return {wins >= kFedmgdRequired && p.table_one_seconds < kTableOneBudgetSeconds,
          fmt("FedMGD > FedAvg in %d/%d seeds (need %d); FedMGD [%s] FedAvg [%s]; %.0f s", wins, kPairedSeeds,
              kFedmgdRequired, join(p.fedmgd).c_str(), join(p.fedavg).c_str(), p.table_one_seconds)};
}

Outcome two_stage() {
  auto& p = table_one_runs();
  const auto start = Clock::now();
  int ok = 0;
  for (int seed = 1; seed <= kPairedSeeds; ++seed) {
    auto cfg = desk(static_cast<std::uint64_t>(seed), Strategy::FedMGD);
    cfg.plan.mode = StageMode::OneStage;
    p.one_stage.push_back(final_acc(run_fedmgd(cfg)));
    ok += p.fedmgd[static_cast<std::size_t>(seed - 1)] >= p.one_stage.back();
  }
  return {ok >= kTwoStageRequired, fmt("TwoStage >= OneStage in %d/%d seeds (need %d); TwoStage [%s] OneStage [%s]; %.0f s",
                                       ok, kPairedSeeds, kTwoStageRequired, join(p.fedmgd).c_str(),
                                       join(p.one_stage).c_str(), seconds_since(start))};
}

Outcome fairness() {
  const auto& p = table_one_runs();
  int ok = 0;
  for (std::size_t i = 0; i < p.fedmgd_fair.size(); ++i) ok += p.fedmgd_fair[i] <= p.fedavg_fair[i];
  return {ok >= kFairnessRequired, fmt("FedMGD std <= FedAvg std in %d/%d seeds (need %d); FedMGD [%s] FedAvg [%s]", ok,
                                       kPairedSeeds, kFairnessRequired, join(p.fedmgd_fair).c_str(),
                                       join(p.fedavg_fair).c_str())};
}

Outcome sampling() {
  const auto start = Clock::now();
  std::vector<double> server, client;
  int ok = 0;
  for (int seed = 1; seed <= kPairedSeeds; ++seed) {
    auto cfg = desk(static_cast<std::uint64_t>(seed), Strategy::FedMGD, 4);
    server.push_back(final_acc(run_fedmgd(cfg)));
    cfg.sampler = SamplerMode::ClientProportional;
    client.push_back(final_acc(run_fedmgd(cfg)));
    ok += server.back() >= client.back();
  }
  return {ok >= kSamplingRequired,
          fmt("ServerUniform >= ClientProportional in %d/%d seeds (need %d); server [%s] client [%s]; %.0f s", ok,
              kPairedSeeds, kSamplingRequired, join(server).c_str(), join(client).c_str(), seconds_since(start))};
}

// ---------------------------------------------------------------- 10
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "fedsim_acceptance_determinism";
  fs::remove_all(root);
  std::string detail;
  bool ok = true;
  for (auto s : {Strategy::FedAvg, Strategy::FedProx, Strategy::F2U, Strategy::FedMGD}) {
    auto cfg = desk(7, s);
    cfg.plan.gan_rounds = 40;
    cfg.plan.enhance_rounds = 5;
    cfg.rounds = 10;
    run_to_directory(cfg, root / (to_string(s) + "_a"));
    run_to_directory(cfg, root / (to_string(s) + "_b"));
    const auto a = slurp(root / (to_string(s) + "_a") / "metrics.csv");
    const auto b = slurp(root / (to_string(s) + "_b") / "metrics.csv");
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += fmt("%s%s %s (%zu bytes)", detail.empty() ? "" : ", ", to_string(s).c_str(), same ? "identical" : "DIFFER",
                  a.size());
  }
  fs::remove_all(root);
  return {ok, detail};
}

// ---------------------------------------------------------------- 11
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::string format_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  } catch (const std::exception& e) {
    return std::string("wrong error type: ") + e.what();
  }
  return "no error";
}

Outcome idx_round_trip() {
  std::vector<std::uint8_t> img, lab;
  put_u32(img, kIdxImageMagic);
  put_u32(img, 1);
  put_u32(img, 2);
  put_u32(img, 2);
  img.insert(img.end(), {0, 255, 0, 255});
  put_u32(lab, kIdxLabelMagic);
  put_u32(lab, 1);
  lab.push_back(7);
  const auto ds = parse_idx(img, lab);
  const bool exact = ds.images.shape == Shape{1, 1, 2, 2} && ds.images.data == std::vector<double>{-1, 1, -1, 1} &&
                     ds.labels == std::vector<int>{7};

  auto bad_magic = lab;
  bad_magic[3] = 0x03;
  const auto magic_err = format_error([&] { parse_idx(img, bad_magic); });
  auto cut = img;
  cut.pop_back();
  const auto trunc_err = format_error([&] { parse_idx(cut, lab); });
  const bool named = magic_err.find("bad magic") != std::string::npos &&
                     magic_err.find("labels") != std::string::npos &&
                     trunc_err.find("truncated") != std::string::npos &&
                     trunc_err.find("pixel data") != std::string::npos;
  return {exact && named, fmt("fixture %zu+%zu bytes decodes %s; magic error \"%s\"; truncation error \"%s\"", img.size(),
                              lab.size(), exact ? "exactly" : "WRONG", magic_err.c_str(), trunc_err.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient suite", gradient_suite},
      {"aggregation oracle", aggregation_oracle},
      {"partition invariants", partition_invariants},
      {"realistic score divergence", score_divergence},
      {"unseen-class score", unseen_class},
      {"FedMGD beats FedAvg (alpha 0.01)", table_one},
      {"two-stage vs one-stage", two_stage},
      {"fairness std", fairness},
      {"server vs client label sampling", sampling},
      {"determinism", determinism},
      {"IDX fixture", idx_round_trip},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
