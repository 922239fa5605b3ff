#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/autograd.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t resolution = 8;

  std::size_t numel() const noexcept { return channels * resolution * resolution; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor init_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed);

// Layer sizes of the classifier: conv3x3 -> ReLU -> conv3x3/2 -> ReLU -> FC.
struct ClassifierWidths {
  std::size_t conv1 = 4;
  std::size_t conv2 = 8;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(ImageShape shape, int num_classes, std::uint64_t seed, ClassifierWidths widths = {});

  // Records the forward pass. With `trainable` set, gradients reach the
  // parameters (subject to their requires_grad flag); otherwise they are
  // bound as constants.
  Var forward(Tape& tape, Var images, bool trainable = true);
  // Logits [B x C] for a batch, no gradient recording.
  Tensor classify(const Tensor& batch) const;

  ParamVector& params() noexcept { return params_; }
  const ParamVector& params() const noexcept { return params_; }
  int num_classes() const noexcept { return num_classes_; }
  const ImageShape& image_shape() const noexcept { return shape_; }

 private:
  ImageShape shape_;
  int num_classes_ = 0;
  ParamVector params_;
};

struct SynthBatch {
  Tensor images;
  std::vector<int> labels;
  std::size_t size() const noexcept { return labels.size(); }
};

// Conditional generator G(z | y): [z, onehot(y)] -> hidden ReLU -> tanh image.
class CondGenerator {
 public:
  CondGenerator() = default;
  CondGenerator(ImageShape shape, int num_classes, std::uint64_t seed, std::size_t noise_dim = 16,
                std::size_t hidden = 64);

  // Noise drawn from N(0, 1) with `seed`, concatenated with one-hot labels.
  Tensor make_input(std::span<const int> labels, std::uint64_t seed) const;
  Var forward(Tape& tape, Var input);
  SynthBatch generate(std::span<const int> labels, std::uint64_t seed) const;

  ParamVector& params() noexcept { return params_; }
  const ParamVector& params() const noexcept { return params_; }
  int num_classes() const noexcept { return num_classes_; }
  std::size_t noise_dim() const noexcept { return noise_dim_; }
  const ImageShape& image_shape() const noexcept { return shape_; }

 private:
  ImageShape shape_;
  int num_classes_ = 0;
  std::size_t noise_dim_ = 0;
  ParamVector params_;
};

// Unconditional discriminator: conv3x3/2 -> ReLU -> FC -> sigmoid, one
// probability per sample.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(ImageShape shape, std::uint64_t seed, std::size_t width = 8);

  // Returns per-sample probabilities [B].
  Var forward(Tape& tape, Var images, bool trainable = true);
  std::vector<double> discriminate(const Tensor& batch) const;

  ParamVector& params() noexcept { return params_; }
  const ParamVector& params() const noexcept { return params_; }
  const ImageShape& image_shape() const noexcept { return shape_; }

 private:
  ImageShape shape_;
  ParamVector params_;
};

// Binary transport format: "FMGD", u16 version, u32 entry count, entries of
// {u16 name length, name, u8 rank, u32 extents, f64 data}, trailing CRC32.
// All integers and reals little-endian.
std::vector<std::uint8_t> flatten_params(const ParamVector& params);
ParamVector restore_params(std::span<const std::uint8_t> bytes);

}  // namespace fedsim
