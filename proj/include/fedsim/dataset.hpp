#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

// Images [N x C x H x W] in [-1, 1] with class labels.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t resolution() const { return images.dim(2); }
  std::size_t image_numel() const { return images.numel() / labels.size(); }
  // Throws if any invariant (label range, pixel range, shape) is violated.
  void validate() const;
};

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

// Decodes an IDX image/label pair. `resolution` == 0 keeps the native size,
// otherwise images are resized (nearest neighbour) to resolution x resolution.
LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                         std::size_t resolution = 0);
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t resolution = 0);

// Class-conditional oriented gratings: fixed class phase jittered by up to
// pi/3, amplitude in [0.5, 0.9], uniform noise of 0.1; exactly `per_class`
// samples of each class.
LabeledDataset synth_dataset(int num_classes, std::size_t per_class, std::size_t resolution, std::uint64_t seed);

Tensor nearest_resize(const Tensor& images, std::size_t resolution);

Tensor gather_images(const LabeledDataset& ds, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices);
LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices);

std::vector<std::size_t> class_histogram(std::span<const int> labels, int num_classes);
std::vector<std::size_t> class_histogram(const LabeledDataset& ds, std::span<const std::size_t> indices);

struct PartitionSpec {
  double alpha = 0.1;
  std::size_t num_clients = 2;
  std::uint64_t seed = 0;
};

struct Partition {
  std::vector<std::vector<std::size_t>> shards;
  std::vector<std::size_t> test_indices;
};

// Stratified 10% global test split, then per-class Dirichlet(alpha) shares
// across clients. Every index lands in exactly one of shards/test; shards
// and test are sorted ascending.
Partition dirichlet_partition(const LabeledDataset& ds, const PartitionSpec& spec);

// Size of the stratified holdout for n samples: 10% rounded half-up, at
// least one when n >= 2.
std::size_t holdout_count(std::size_t n);

struct ShardSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
// Seeded split of one client shard into training data and a final-10% local test set.
ShardSplit split_local_holdout(std::span<const std::size_t> shard, std::uint64_t seed);

// Mean over client pairs of the L1 distance between normalized label histograms.
double mean_pairwise_label_l1(const LabeledDataset& ds, const Partition& p);

}  // namespace fedsim
