// Numerical checks shared by the self-test battery and the test suites.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sofpi/autodiff.hpp"
#include "sofpi/operators.hpp"

namespace sofpi {

using ScalarFn = std::function<Var(const std::vector<Var>&)>;

struct GradCheck {
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

/// Compares <grad f, d> from the tape with the central difference
/// (f(x + h d) - f(x - h d)) / 2h along a random unit direction d over all
/// inputs. Reports the worst of `probes` directions.
GradCheck check_directional(const ScalarFn& f, const std::vector<Tensor>& inputs, double h, int probes,
                            std::uint64_t seed);

/// Same comparison for a single coordinate of one input.
GradCheck check_coordinate(const ScalarFn& f, const std::vector<Tensor>& inputs, std::size_t input,
                           std::size_t index, double h);

/// Worst |<Ax, y> - <x, A^T y>| / max(|<Ax, y>|, |<x, A^T y>|) over random
/// Gaussian pairs.
double adjoint_relative_error(const ForwardOperator& a, int pairs, std::uint64_t seed);

Tensor random_normal(const Shape& shape, std::uint64_t seed);

}  // namespace sofpi
