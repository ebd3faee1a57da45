#include "sofpi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sofpi {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(std::string_view op, const Shape& a, const Shape& b)
    : Error(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::checked(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.require_finite("checked tensor");
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::channel(std::size_t c) const {
  if (rank() != 3 || c >= shape_[0]) throw ShapeError("channel() expects [C,H,W], got " + shape_string(shape_));
  const std::size_t plane = shape_[1] * shape_[2];
  return Tensor(Shape{shape_[1], shape_[2]},
                std::vector<double>(data_.begin() + c * plane, data_.begin() + (c + 1) * plane));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(std::string_view what) const {
  if (!all_finite()) throw Error(std::string(what) + ": non-finite entry");
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor r = a;
  r += b;
  return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor r = a;
  r -= b;
  return r;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor r = a;
  r *= s;
  return r;
}

Tensor operator*(const Tensor& a, double s) { return s * a; }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  Tensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] *= b[i];
  return r;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Tensor& operator-=(Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

Tensor& operator*=(Tensor& a, double s) {
  for (auto& v : a.data()) v *= s;
  return a;
}

void axpy(double s, const Tensor& b, Tensor& a) {
  require_same_shape("axpy", a, b);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

double squared_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return acc;
}

double norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Shape s{parts.size()};
  for (auto e : parts[0].shape()) s.push_back(e);
  std::vector<double> data;
  data.reserve(shape_numel(s));
  for (const auto& p : parts) {
    require_same_shape("stack", parts[0], p);
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor r = a;
  for (auto& v : r.data()) v = std::clamp(v, lo, hi);
  return r;
}

}  // namespace sofpi
