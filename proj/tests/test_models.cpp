#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/autograd.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/error.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/models.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

namespace {

const ImageShape kShape{1, 8};

Tensor random_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, 1, 8, 8});
  for (double& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

ParamVector sample_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamVector p;
  p.add("a.weight", Tensor({2, 3}));
  p.add("scalarish", Tensor({1}));
  p.add("conv", Tensor({2, 1, 3, 3}));
  for (auto& [name, t] : p)
    for (double& v : t.data) v = rng.uniform(-1e3, 1e3);
  return p;
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("classifier: shapes, zero head gives uniform rows") {
    Classifier c(kShape, 4, 7);
    const Tensor logits = c.classify(random_batch(5, 1));
    CHECK(logits.shape == Shape{5, 4});
    c.params()["fc.weight"].data.assign(c.params()["fc.weight"].numel(), 0.0);
    c.params()["fc.bias"].data.assign(4, 0.0);
    const Tensor p = softmax_rows(c.classify(random_batch(3, 2)));
    for (double v : p.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("classifier: identical params give bit-identical logits") {
    Classifier a(kShape, 4, 7);
    Classifier b(kShape, 4, 99);
    CHECK_FALSE(a.params() == b.params());
    b.params().assign_values(a.params());
    const Tensor x = random_batch(6, 3);
    CHECK(a.classify(x) == b.classify(x));
  }

  TEST_CASE("classifier: wrong input shape") {
    Classifier c(kShape, 4, 7);
    CHECK_THROWS_AS(c.classify(Tensor({2, 1, 4, 4})), DimensionError);
    CHECK_THROWS_AS(c.classify(Tensor({2, 3, 8, 8})), DimensionError);
  }

  TEST_CASE("classifier: two conv layers and one fully connected layer") {
    Classifier c(kShape, 4, 7);
    std::vector<std::string> names;
    for (const auto& [name, t] : c.params()) names.push_back(name);
    CHECK(names == std::vector<std::string>{"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc.weight",
                                            "fc.bias"});
  }

  TEST_CASE("generator: deterministic, tanh range, label checks") {
    CondGenerator g(kShape, 4, 5);
    const std::vector<int> labels{0, 1, 2, 3, 3, 0};
    const auto a = g.generate(labels, 42);
    const auto b = g.generate(labels, 42);
    CHECK(a.images == b.images);
    CHECK(a.labels == labels);
    CHECK(a.images.shape == Shape{6, 1, 8, 8});
    CHECK_FALSE(g.generate(labels, 43).images == a.images);
    // blow up the weights so tanh saturates
    for (auto& [name, t] : g.params())
      for (double& v : t.data) v *= 1e3;
    const auto big = g.generate(labels, 1);
    CHECK(std::all_of(big.images.data.begin(), big.images.data.end(), [](double v) { return v >= -1 && v <= 1; }));
    CHECK_THROWS_AS(g.generate(std::vector<int>{4}, 1), IndexError);
    CHECK_THROWS_AS(g.generate(std::vector<int>{}, 1), ContractError);
  }

  TEST_CASE("generator: noise is standard normal") {
    CondGenerator g(kShape, 2, 5, 16, 8);
    std::vector<int> labels(2000, 1);
    const Tensor in = g.make_input(labels, 8);
    const std::size_t width = 16 + 2;
    double sum = 0, sq = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      for (std::size_t j = 0; j < 16; ++j) {
        const double z = in.data[r * width + j];
        sum += z;
        sq += z * z;
      }
      CHECK(in.data[r * width + 16] == 0.0);
      CHECK(in.data[r * width + 17] == 1.0);
    }
    const double n = 2000.0 * 16.0;
    CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  }

  TEST_CASE("discriminator: zero head gives one half, one output per sample") {
    Discriminator d(kShape, 3, 4);
    const auto p = d.discriminate(random_batch(7, 4));
    CHECK(p.size() == 7);
    CHECK(std::all_of(p.begin(), p.end(), [](double v) { return v > 0 && v < 1; }));
    d.params()["head.weight"].data.assign(d.params()["head.weight"].numel(), 0.0);
    d.params()["head.bias"].data.assign(1, 0.0);
    for (double v : d.discriminate(random_batch(3, 5))) CHECK(v == 0.5);
    CHECK_THROWS_AS(d.discriminate(Tensor({1, 1, 6, 6})), DimensionError);
  }

  TEST_CASE("discriminator trained on one class scores that class higher") {
    const LabeledDataset ds = synth_dataset(4, 60, 8, 11);
    std::vector<std::size_t> cls0, cls0_held, cls1;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == 0) (cls0.size() < 50 ? cls0 : cls0_held).push_back(i);
      if (ds.labels[i] == 1) cls1.push_back(i);
    }
    Discriminator d(kShape, 3, 8);
    AdamState opt(5e-3);
    Rng rng(1);
    // fakes are uniform noise; reals are class 0 only
    for (int step = 0; step < 150; ++step) {
      Tensor fake({16, 1, 8, 8});
      for (double& v : fake.data) v = rng.uniform(-1, 1);
      std::vector<std::size_t> pick(16);
      for (auto& i : pick) i = cls0[rng.uniform_index(cls0.size())];
      Tape tape;
      d.params().set_requires_grad(true);
      Var loss = tape.add(tape.binary_cross_entropy(d.forward(tape, tape.constant(gather_images(ds, pick))), 1.0),
                          tape.binary_cross_entropy(d.forward(tape, tape.constant(std::move(fake))), 0.0));
      d.params().zero_grad();
      tape.backward(loss);
      adam_step(d.params(), opt);
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const double same = mean(d.discriminate(gather_images(ds, cls0_held)));
    const double other = mean(d.discriminate(gather_images(ds, cls1)));
    INFO("held-out class 0: " << same << ", class 1: " << other);
    CHECK(same > other);
  }

  TEST_CASE("checkpoint: round-trip, empty, corruption") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const ParamVector p = sample_params(seed);
      CHECK(restore_params(flatten_params(p)) == p);
    }
    Classifier c(kShape, 4, 7);
    CHECK(restore_params(flatten_params(c.params())) == c.params());

    const ParamVector empty;
    const auto bytes = flatten_params(empty);
    CHECK(bytes.size() == 4 + 2 + 4 + 4);
    CHECK(restore_params(bytes).empty());

    auto full = flatten_params(sample_params(1));
    CHECK(std::string(full.begin(), full.begin() + 4) == "FMGD");
    CHECK(full[4] == 1);  // version, little-endian
    CHECK(full[5] == 0);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{13}, full.size() - 1}) {
      std::vector<std::uint8_t> shorter(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(restore_params(shorter), FormatError);
    }
    auto flipped = full;
    flipped[20] ^= 0x10;
    CHECK_THROWS_AS(restore_params(flipped), FormatError);
    auto bad_magic = full;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(restore_params(bad_magic), FormatError);
  }

  TEST_CASE("param vectors: names unique, compatibility") {
    ParamVector p;
    p.add("w", Tensor({2}));
    CHECK_THROWS(p.add("w", Tensor({2})));
    ParamVector q;
    q.add("w", Tensor({3}));
    CHECK_FALSE(p.compatible_with(q));
    CHECK_THROWS_AS(p.require_compatible(q, "test"), ContractError);
    ParamVector r;
    r.add("v", Tensor({2}));
    CHECK_FALSE(p.compatible_with(r));
  }
}
