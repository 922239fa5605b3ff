#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fedsim {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Deterministic seed for a (base, a, b, c) tuple, e.g. (experiment seed, round, client).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) noexcept;

// Seeded random stream. The engine (mt19937_64) is fully specified by the
// standard; the distributions are implemented here so that draws are
// bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform in (0, 1]; safe for log().
  double uniform_open0() { return 1.0 - uniform(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal();
  // log of a Gamma(shape, 1) variate. Working in log space keeps tiny
  // shapes (Dirichlet alpha = 0.01) from underflowing to zero.
  double log_gamma_variate(double shape);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::mt19937_64 engine_;
};

// Dirichlet(alpha * 1_k) draw.
std::vector<double> dirichlet(Rng& rng, double alpha, std::size_t k);

}  // namespace fedsim
