#pragma once

// Small builders shared by the unit tests.

#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"

namespace fedsim::testing {

// Dataset with `counts[c]` samples of class c and constant 1x2x2 images;
// enough for partition tests that only look at labels.
inline LabeledDataset labels_only(const std::vector<std::size_t>& counts) {
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) ds.labels.insert(ds.labels.end(), counts[c], static_cast<int>(c));
  ds.images = Tensor({ds.labels.size(), 1, 2, 2}, 0.0);
  return ds;
}

// The desk setup used by the directional checks.
inline ExperimentConfig desk_config(std::uint64_t seed, Strategy strategy, std::size_t clients = 2,
                                    double alpha = 0.01) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.strategy = strategy;
  cfg.num_clients = clients;
  cfg.alpha = alpha;
  cfg.dataset.num_classes = 4;
  cfg.resolution = 8;
  return cfg;
}

// Two-record-wide helper for "same value" checks on doubles.
inline bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace fedsim::testing
