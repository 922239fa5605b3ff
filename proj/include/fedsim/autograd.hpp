#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, Conv2dSpec spec);

// Reverse-mode differentiation tape for one forward pass.
//
// Parameters enter through `param`, which keeps a pointer to the caller's
// tensor; `backward` adds dLoss/dParam into that tensor's grad slot when its
// `requires_grad` flag is set. Gradients accumulate across passes; callers
// zero them. The tape is cleared by `backward` and cannot be reused for a
// second backward without a new forward pass.
class Tape {
 public:
  Var constant(Tensor value);
  Var param(Tensor& t);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // x[B x I] * w[I x O] + b[O]
  Var linear(Var x, Var w, Var b);
  // x[B x C x H x W], w[O x C x k x k], b[O]
  Var conv2d(Var x, Var w, Var b, Conv2dSpec spec);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var reshape(Var x, Shape shape);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var sum(Var x);
  Var mean(Var x);
  // [B x ...] -> [B], mean over every trailing element.
  Var mean_per_sample(Var x);
  // Mean over the batch of -log softmax(logits)[label].
  Var cross_entropy(Var logits, std::span<const int> labels);
  // Mean over the batch of -(t log p + (1 - t) log(1 - p)), p in (0,1).
  Var binary_cross_entropy(Var probs, double target);

  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* leaf = nullptr;
    std::function<void(Tape&, const Node&)> back;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> back);
  std::vector<double>& grad_of(std::size_t id) { return nodes_[id].grad; }
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  const Node& node(Var v) const { return nodes_.at(v.id); }

  std::vector<Node> nodes_;
};

// Row-wise softmax of a [B x C] tensor (no graph).
Tensor softmax_rows(const Tensor& logits);
// Row-wise argmax of a [B x C] tensor; ties resolve to the smallest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace fedsim
