#include "sofpi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sofpi {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  NoGradGuard guard;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, false);
  return f(vars).value().item();
}

double relative(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace

Tensor random_normal(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor t(shape);
  for (double& x : t.vec()) x = dist(rng);
  return t;
}

GradCheck check_directional(const ScalarFn& f, const std::vector<Tensor>& inputs, double h, int probes,
                            std::uint64_t seed) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const std::vector<Tensor> grads = gradients(f(vars), vars);

  GradCheck worst;
  worst.relative_error = -1.0;
  for (int p = 0; p < probes; ++p) {
    std::vector<Tensor> dirs;
    double n2 = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      dirs.push_back(random_normal(inputs[i].shape(), seed + 7919 * static_cast<std::uint64_t>(p) + i));
      n2 += squared_norm(dirs.back());
    }
    const double inv = 1.0 / std::sqrt(n2);
    double analytic = 0.0;
    std::vector<Tensor> plus = inputs, minus = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      dirs[i] *= inv;
      analytic += dot(grads[i], dirs[i]);
      axpy(h, dirs[i], plus[i]);
      axpy(-h, dirs[i], minus[i]);
    }
    const double numeric = (evaluate(f, plus) - evaluate(f, minus)) / (2.0 * h);
    const double err = relative(analytic, numeric);
    if (err > worst.relative_error) worst = {analytic, numeric, err};
  }
  return worst;
}

GradCheck check_coordinate(const ScalarFn& f, const std::vector<Tensor>& inputs, std::size_t input,
                           std::size_t index, double h) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const std::vector<Tensor> grads = gradients(f(vars), vars);
  std::vector<Tensor> plus = inputs, minus = inputs;
  plus[input][index] += h;
  minus[input][index] -= h;
  const double numeric = (evaluate(f, plus) - evaluate(f, minus)) / (2.0 * h);
  const double analytic = grads[input][index];
  return {analytic, numeric, relative(analytic, numeric)};
}

double adjoint_relative_error(const ForwardOperator& a, int pairs, std::uint64_t seed) {
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    const Tensor x = random_normal(a.domain_shape(), seed + 2 * static_cast<std::uint64_t>(p));
    const Tensor y = random_normal(a.range_shape(), seed + 2 * static_cast<std::uint64_t>(p) + 1);
    worst = std::max(worst, relative(dot(a.apply(x), y), dot(x, a.adjoint(y))));
  }
  return worst;
}

}  // namespace sofpi
