// Dense row-major tensors of 64-bit floats.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sofpi {

using Shape = std::vector<std::size_t>;

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when operand shapes do not conform. The message names both shapes.
class ShapeError : public Error {
 public:
  ShapeError(std::string_view op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

std::string shape_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor from(std::initializer_list<double> values);
  /// Like the constructor but rejects NaN/Inf entries.
  static Tensor checked(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Index helpers for rank-2 [H,W] and rank-3 [C,H,W] tensors.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  /// Channel c of a [C,H,W] tensor as an [H,W] tensor.
  Tensor channel(std::size_t c) const;

  bool all_finite() const;
  void require_finite(std::string_view what) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b);

// Eager, non-differentiable arithmetic used by solvers and operators.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor operator*(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor& operator+=(Tensor& a, const Tensor& b);
Tensor& operator-=(Tensor& a, const Tensor& b);
Tensor& operator*=(Tensor& a, double s);
/// a += s * b
void axpy(double s, const Tensor& b, Tensor& a);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double squared_norm(const Tensor& a);
double norm(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
Tensor clamp(const Tensor& a, double lo, double hi);

}  // namespace sofpi
