#include "fedsim/tensor.hpp"

#include <cmath>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& s) {
  for (auto d : s)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
}
}  // namespace

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  check_shape(shape);
  data.assign(shape_numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  check_shape(shape);
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
}

void Tensor::zero_grad() {
  if (grad)
    std::fill(grad->begin(), grad->end(), 0.0);
  else
    grad.emplace(data.size(), 0.0);
}

void Tensor::check_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw NumericError(std::string(what) + ": non-finite value at element " + std::to_string(i));
}

void ParamVector::add(std::string name, Tensor t) {
  for (const auto& [n, _] : entries_)
    if (n == name) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(t));
}

std::size_t ParamVector::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

Tensor& ParamVector::operator[](std::string_view name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamVector::operator[](std::string_view name) const {
  return const_cast<ParamVector&>(*this)[name];
}

bool ParamVector::compatible_with(const ParamVector& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape != other.entries_[i].second.shape) return false;
  }
  return true;
}

void ParamVector::require_compatible(const ParamVector& other, std::string_view context) const {
  if (!compatible_with(other))
    throw ContractError(std::string(context) + ": parameter vectors are not aggregation-compatible");
}

void ParamVector::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamVector::set_requires_grad(bool on) {
  for (auto& [_, t] : entries_) t.requires_grad = on;
}

void ParamVector::assign_values(const ParamVector& other) {
  require_compatible(other, "assign_values");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].second.data = other.at(i).data;
}

double param_distance(const ParamVector& a, const ParamVector& b) {
  a.require_compatible(b, "param_distance");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.at(i).data;
    const auto& y = b.at(i).data;
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - y[j]) * (x[j] - y[j]);
  }
  return std::sqrt(sq);
}

}  // namespace fedsim
