// The inversion block Psi(v, y, rho) = (A^T A + rho I)^{-1} (A^T y + rho v),
// its hand-derived backward rule, and a TV-regularised reconstruction used
// for initialisation and as the classical baseline.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sofpi/autodiff.hpp"
#include "sofpi/operators.hpp"

namespace sofpi {

struct CGConfig {
  double rel_tolerance = 1e-6;
  int max_iters = 50;
};

struct CGReport {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Raised when the residual grows for five consecutive iterations, which
/// means the normal operator is not symmetric positive definite (typically an
/// unmatched forward/adjoint pair).
class CGDivergence : public Error {
 public:
  using Error::Error;
};

using LinearMap = std::function<Tensor(const Tensor&)>;

/// Solves a x = b for symmetric positive definite a, starting from x. Stops
/// when ||b - a x|| <= rel_tolerance * ||b||; otherwise returns the last
/// iterate with converged = false.
CGReport conjugate_gradient(const LinearMap& a, const Tensor& b, Tensor& x, const CGConfig& cfg);

/// rho = cap * sigmoid(0.4 w), so rho always lies in (0, cap).
struct RhoParam {
  double w = 0.0;
  double cap = 0.8;

  double value() const;
  /// d rho / d w.
  double derivative() const;
  static RhoParam from_value(double rho, double cap = 0.8);
};

/// The same reparameterisation on the tape.
Var rho_from_w(const Var& w, double cap);

Tensor psi_forward(const Tensor& v, const Tensor& y, double rho, const ForwardOperator& a, const CGConfig& cfg,
                   CGReport* report = nullptr);

/// One-shot solve through ForwardOperator::solve_shifted_normal. Throws for
/// operators whose normal matrix has no closed-form inverse.
Tensor psi_forward_exact(const Tensor& v, const Tensor& y, double rho, const ForwardOperator& a);

struct PsiGradients {
  Tensor grad_v;
  Tensor grad_y;
  double grad_rho = 0.0;
  CGReport solve;
};

/// With z = (A^T A + rho I)^{-1} upstream (one CG solve, zero start):
/// grad_v = rho z, grad_y = A z, grad_rho = <v - psi_out, z>.
PsiGradients psi_backward(const Tensor& upstream, const Tensor& v, const Tensor& y, double rho,
                          const Tensor& psi_out, const ForwardOperator& a, const CGConfig& cfg);

/// Psi as a custom-gradient op with inputs (v, y, rho). The gradient for y is
/// only produced when differentiate_y is set.
class PsiOp final : public CustomGradOp {
 public:
  PsiOp(OperatorPtr op, CGConfig cfg, bool differentiate_y = false)
      : op_(std::move(op)), cfg_(cfg), differentiate_y_(differentiate_y) {}
  std::string name() const override { return "psi"; }
  Tensor forward(const std::vector<const Tensor*>& inputs) const override;
  std::vector<Tensor> backward(const std::vector<const Tensor*>& inputs, const Tensor& output,
                               const Tensor& upstream) const override;

 private:
  OperatorPtr op_;
  CGConfig cfg_;
  bool differentiate_y_;
};

Var psi(const Var& v, const Var& y, const Var& rho, OperatorPtr op, const CGConfig& cfg, bool differentiate_y = false);

// ---------------------------------------------------------------------------

struct TVConfig {
  double alpha = 0.01;
  int iters = 100;
  /// Primal and dual steps; 0 selects 1/sqrt(8) for both (tau * sigma * 8 = 1).
  double tau = 0.0;
  double sigma = 0.0;
  /// Inner solve for the data-term proximal step when A has no closed form.
  CGConfig inner{1e-8, 100};
};

/// Isotropic total variation with forward differences (Neumann boundary).
/// Rank-3 inputs couple their channels.
double total_variation(const Tensor& u);
double tv_objective(const Tensor& u, const Tensor& y, const ForwardOperator& a, double alpha);

/// Primal-dual iterations for min_u 1/2 ||A u - y||^2 + alpha TV(u) starting
/// from zero. When objective is given it receives the objective after every
/// iteration.
Tensor tv_reconstruct(const Tensor& y, const ForwardOperator& a, const TVConfig& cfg,
                      std::vector<double>* objective = nullptr);

}  // namespace sofpi
