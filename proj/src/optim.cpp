#include "fedsim/optim.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

void adam_step(ParamVector& params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params.at(i).grad || params.at(i).grad->size() != params.at(i).numel())
      throw ContractError("adam_step: missing grad for '" + params.name(i) + "'");

  if (state.first_moment.empty()) {
    for (const auto& [_, t] : params) {
      state.first_moment.emplace_back(t.numel(), 0.0);
      state.second_moment.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw ContractError("adam_step: optimizer state belongs to a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].size() != params.at(i).numel())
      throw ContractError("adam_step: moment shape mismatch for '" + params.name(i) + "'");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    const auto& g = *p.grad;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    p.check_finite("adam_step: " + params.name(i));
  }
}

}  // namespace fedsim
