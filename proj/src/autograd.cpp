#include "fedsim/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, Conv2dSpec spec) {
  if (spec.stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (in + 2 * spec.padding < kernel)
    throw DimensionError("conv2d: kernel larger than padded input");
  return (in + 2 * spec.padding - kernel) / spec.stride + 1;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  value.requires_grad = false;
  value.grad.reset();
  return push(std::move(value), false, nullptr);
}

Var Tape::param(Tensor& t) {
  Tensor copy(t.shape, t.data);
  Var v = push(std::move(copy), t.requires_grad, nullptr);
  if (t.requires_grad) nodes_[v.id].leaf = &t;
  return v;
}

double Tape::scalar(Var v) const {
  const auto& t = value(v);
  if (t.numel() != 1) throw ContractError("scalar(): value has " + std::to_string(t.numel()) + " elements");
  return t.data[0];
}

Var Tape::linear(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& Bv = value(b);
  if (X.rank() != 2 || W.rank() != 2 || Bv.rank() != 1 || X.dim(1) != W.dim(0) || W.dim(1) != Bv.dim(0))
    throw DimensionError("linear: input " + shape_str(X.shape) + ", weight " + shape_str(W.shape) +
                         ", bias " + shape_str(Bv.shape) + " do not conform");
  const std::size_t B = X.dim(0), I = X.dim(1), O = W.dim(1);
  Tensor out({B, O});
  for (std::size_t r = 0; r < B; ++r) {
    double* o = &out.data[r * O];
    for (std::size_t k = 0; k < O; ++k) o[k] = Bv.data[k];
    for (std::size_t i = 0; i < I; ++i) {
      const double xv = X.data[r * I + i];
      if (xv == 0.0) continue;
      const double* wr = &W.data[i * O];
      for (std::size_t k = 0; k < O; ++k) o[k] += xv * wr[k];
    }
  }
  const bool ng = needs(x) || needs(w) || needs(b);
  return push(std::move(out), ng, [x, w, b, B, I, O](Tape& t, const Node& self) {
    const auto& g = self.grad;
    const auto& Xd = t.nodes_[x.id].value.data;
    const auto& Wd = t.nodes_[w.id].value.data;
    if (t.needs(x)) {
      auto& gx = t.grad_of(x.id);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < I; ++i) {
          double s = 0.0;
          const double* wr = &Wd[i * O];
          const double* gr = &g[r * O];
          for (std::size_t k = 0; k < O; ++k) s += gr[k] * wr[k];
          gx[r * I + i] += s;
        }
    }
    if (t.needs(w)) {
      auto& gw = t.grad_of(w.id);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < I; ++i) {
          const double xv = Xd[r * I + i];
          if (xv == 0.0) continue;
          double* gwr = &gw[i * O];
          const double* gr = &g[r * O];
          for (std::size_t k = 0; k < O; ++k) gwr[k] += xv * gr[k];
        }
    }
    if (t.needs(b)) {
      auto& gb = t.grad_of(b.id);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t k = 0; k < O; ++k) gb[k] += g[r * O + k];
    }
  });
}

Var Tape::conv2d(Var x, Var w, Var b, Conv2dSpec spec) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& Bv = value(b);
  if (X.rank() != 4 || W.rank() != 4 || Bv.rank() != 1 || X.dim(1) != W.dim(1) ||
      W.dim(2) != W.dim(3) || W.dim(0) != Bv.dim(0))
    throw DimensionError("conv2d: input " + shape_str(X.shape) + ", weight " + shape_str(W.shape) +
                         ", bias " + shape_str(Bv.shape) + " do not conform");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const std::size_t O = W.dim(0), K = W.dim(2);
  const std::size_t Ho = conv_out_extent(H, K, spec), Wo = conv_out_extent(Wd, K, spec);
  const long s = static_cast<long>(spec.stride), p = static_cast<long>(spec.padding);
  Tensor out({N, O, Ho, Wo});

  // Visits every (output, input, weight) triple that contributes.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::size_t wi = ((o * C + c) * K + ky) * K + kx;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                const std::size_t obase = ((n * O + o) * Ho + oy) * Wo;
                const std::size_t ibase = ((n * C + c) * H + static_cast<std::size_t>(iy)) * Wd;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx);
                  if (ix < 0 || ix >= static_cast<long>(Wd)) continue;
                  fn(obase + ox, ibase + static_cast<std::size_t>(ix), wi);
                }
              }
            }
  };

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      std::fill_n(&out.data[(n * O + o) * Ho * Wo], Ho * Wo, Bv.data[o]);
  {
    double* od = out.data.data();
    const double* xd = X.data.data();
    const double* wd = W.data.data();
    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { od[oi] += wd[wi] * xd[ii]; });
  }

  const bool ng = needs(x) || needs(w) || needs(b);
  return push(std::move(out), ng, [=](Tape& t, const Node& self) {
    const double* g = self.grad.data();
    if (t.needs(x)) {
      double* gx = t.grad_of(x.id).data();
      const double* wd = t.nodes_[w.id].value.data.data();
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gx[ii] += wd[wi] * g[oi]; });
    }
    if (t.needs(w)) {
      double* gw = t.grad_of(w.id).data();
      const double* xd = t.nodes_[x.id].value.data.data();
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += xd[ii] * g[oi]; });
    }
    if (t.needs(b)) {
      auto& gb = t.grad_of(b.id);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
          const double* gp = &g[(n * O + o) * Ho * Wo];
          double acc = 0.0;
          for (std::size_t k = 0; k < Ho * Wo; ++k) acc += gp[k];
          gb[o] += acc;
        }
    }
  });
}

Var Tape::relu(Var x) {
  Tensor out = Tensor(value(x).shape, value(x).data);
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), needs(x), [x](Tape& t, const Node& self) {
    auto& gx = t.grad_of(x.id);
    const auto& xv = t.nodes_[x.id].value.data;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > 0.0) gx[i] += self.grad[i];
  });
}

Var Tape::sigmoid(Var x) {
  Tensor out = Tensor(value(x).shape, value(x).data);
  for (auto& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return push(std::move(out), needs(x), [x](Tape& t, const Node& self) {
    auto& gx = t.grad_of(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double y = self.value.data[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var Tape::tanh(Var x) {
  Tensor out = Tensor(value(x).shape, value(x).data);
  for (auto& v : out.data) v = std::tanh(v);
  return push(std::move(out), needs(x), [x](Tape& t, const Node& self) {
    auto& gx = t.grad_of(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double y = self.value.data[i];
      gx[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var Tape::reshape(Var x, Shape shape) {
  if (shape_numel(shape) != value(x).numel())
    throw DimensionError("reshape: " + shape_str(value(x).shape) + " to " + shape_str(shape));
  Tensor out(std::move(shape), value(x).data);
  return push(std::move(out), needs(x), [x](Tape& t, const Node& self) {
    auto& gx = t.grad_of(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Var Tape::add(Var a, Var b) {
  if (value(a).shape != value(b).shape)
    throw DimensionError("add: " + shape_str(value(a).shape) + " vs " + shape_str(value(b).shape));
  Tensor out = Tensor(value(a).shape, value(a).data);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += value(b).data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    for (Var v : {a, b}) {
      if (!t.needs(v)) continue;
      auto& g = t.grad_of(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  if (value(a).shape != value(b).shape)
    throw DimensionError("mul: " + shape_str(value(a).shape) + " vs " + shape_str(value(b).shape));
  Tensor out = Tensor(value(a).shape, value(a).data);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= value(b).data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    const auto& av = t.nodes_[a.id].value.data;
    const auto& bv = t.nodes_[b.id].value.data;
    if (t.needs(a)) {
      auto& g = t.grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (t.needs(b)) {
      auto& g = t.grad_of(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = Tensor(value(a).shape, value(a).data);
  for (auto& v : out.data) v *= c;
  return push(std::move(out), needs(a), [a, c](Tape& t, const Node& self) {
    auto& g = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data) s += v;
  return push(Tensor({1}, {s}), needs(x), [x](Tape& t, const Node& self) {
    for (auto& g : t.grad_of(x.id)) g += self.grad[0];
  });
}

Var Tape::mean(Var x) {
  const double n = static_cast<double>(value(x).numel());
  return scale(sum(x), 1.0 / n);
}

Var Tape::mean_per_sample(Var x) {
  const auto& X = value(x);
  if (X.rank() < 1) throw DimensionError("mean_per_sample: rank-0 input");
  const std::size_t B = X.dim(0), M = X.numel() / B;
  Tensor out({B});
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < M; ++k) s += X.data[r * M + k];
    out.data[r] = s / static_cast<double>(M);
  }
  return push(std::move(out), needs(x), [x, B, M](Tape& t, const Node& self) {
    auto& g = t.grad_of(x.id);
    for (std::size_t r = 0; r < B; ++r) {
      const double gr = self.grad[r] / static_cast<double>(M);
      for (std::size_t k = 0; k < M; ++k) g[r * M + k] += gr;
    }
  });
}

Var Tape::cross_entropy(Var logits, std::span<const int> labels) {
  const auto& L = value(logits);
  if (L.rank() != 2) throw DimensionError("cross_entropy: logits must be [B x C], got " + shape_str(L.shape));
  const std::size_t B = L.dim(0), C = L.dim(1);
  if (C < 2) throw DimensionError("cross_entropy: need at least 2 classes");
  if (labels.size() != B)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");

  Tensor probs = softmax_rows(L);
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const double* row = &L.data[r * C];
    const double top = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t k = 0; k < C; ++k) z += std::exp(row[k] - top);
    loss += (top + std::log(z)) - row[labels[r]];
  }
  loss /= static_cast<double>(B);
  std::vector<int> y(labels.begin(), labels.end());
  return push(Tensor({1}, {loss}), needs(logits),
              [logits, probs = std::move(probs), y = std::move(y), B, C](Tape& t, const Node& self) {
                auto& g = t.grad_of(logits.id);
                const double scale = self.grad[0] / static_cast<double>(B);
                for (std::size_t r = 0; r < B; ++r)
                  for (std::size_t k = 0; k < C; ++k) {
                    const double target = static_cast<int>(k) == y[r] ? 1.0 : 0.0;
                    g[r * C + k] += scale * (probs.data[r * C + k] - target);
                  }
              });
}

Var Tape::binary_cross_entropy(Var probs, double target) {
  static constexpr double kEps = 1e-12;
  const auto& P = value(probs);
  const std::size_t B = P.dim(0);
  double loss = 0.0;
  for (double p : P.data) {
    const double q = std::clamp(p, kEps, 1.0 - kEps);
    loss -= target * std::log(q) + (1.0 - target) * std::log(1.0 - q);
  }
  loss /= static_cast<double>(B);
  return push(Tensor({1}, {loss}), needs(probs), [probs, target, B](Tape& t, const Node& self) {
    auto& g = t.grad_of(probs.id);
    const auto& pv = t.nodes_[probs.id].value.data;
    const double scale = self.grad[0] / static_cast<double>(B);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double q = std::clamp(pv[i], kEps, 1.0 - kEps);
      g[i] += scale * (-target / q + (1.0 - target) / (1.0 - q));
    }
  });
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw ContractError("backward: loss is not on this tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(lv.shape));
  lv.check_finite("backward: loss");
  if (!nodes_[loss.id].needs_grad) {
    nodes_.clear();
    return;
  }
  for (std::size_t i = 0; i <= loss.id; ++i)
    if (nodes_[i].needs_grad) nodes_[i].grad.assign(nodes_[i].value.numel(), 0.0);
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.back) n.back(*this, n);
    if (n.leaf) {
      if (!n.leaf->grad || n.leaf->grad->size() != n.grad.size()) n.leaf->grad.emplace(n.grad.size(), 0.0);
      auto& lg = *n.leaf->grad;
      for (std::size_t k = 0; k < lg.size(); ++k) lg[k] += n.grad[k];
    }
  }
  nodes_.clear();
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [B x C], got " + shape_str(logits.shape));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  Tensor out(logits.shape, logits.data);
  for (std::size_t r = 0; r < B; ++r) {
    double* row = &out.data[r * C];
    const double top = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t k = 0; k < C; ++k) z += (row[k] = std::exp(row[k] - top));
    for (std::size_t k = 0; k < C; ++k) row[k] /= z;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B x C], got " + shape_str(logits.shape));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t r = 0; r < B; ++r) {
    const double* row = &logits.data[r * C];
    out[r] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

}  // namespace fedsim
