#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedsim/autograd.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so entries whose true
  // gradient is ~0 are judged on absolute error.
  double floor = 1e-2;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Builds a scalar loss over `params` on the given tape.
using LossBuilder = std::function<Var(Tape&, ParamVector&)>;

// Compares backward() against central differences for every entry of
// every tensor in `params`. Values are restored afterwards.
GradCheckResult check_gradients(std::string name, ParamVector& params, const LossBuilder& loss,
                                const GradCheckOptions& opts = {});

// Every tape op plus the classifier, discriminator and generator on
// instances of at most 200 parameters.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace fedsim
