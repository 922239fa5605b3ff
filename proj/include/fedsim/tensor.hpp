#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedsim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles with an optional gradient slot.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Allocates (or clears) the gradient slot.
  void zero_grad();
  // Throws NumericError naming `what` if any value is NaN or infinite.
  void check_finite(std::string_view what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

// Ordered, uniquely named parameter tensors of one model.
class ParamVector {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor t);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t numel() const noexcept;

  Tensor& at(std::size_t i) { return entries_.at(i).second; }
  const Tensor& at(std::size_t i) const { return entries_.at(i).second; }
  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  Tensor& operator[](std::string_view name);
  const Tensor& operator[](std::string_view name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Names, order and shapes match exactly.
  bool compatible_with(const ParamVector& other) const;
  void require_compatible(const ParamVector& other, std::string_view context) const;

  void zero_grad();
  void set_requires_grad(bool on);
  // Copies values only; grads and flags on *this are kept.
  void assign_values(const ParamVector& other);

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
};

// L2 norm of (a - b) over every element; a and b must be compatible.
double param_distance(const ParamVector& a, const ParamVector& b);

}  // namespace fedsim
