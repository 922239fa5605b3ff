#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

// One bias-corrected Adam update of every entry in `params`, in place.
// Every entry must carry a populated grad slot; grads are left untouched.
void adam_step(ParamVector& params, AdamState& state);

}  // namespace fedsim
