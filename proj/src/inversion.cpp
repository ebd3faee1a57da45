#include "sofpi/inversion.hpp"

#include <cmath>

#include "sofpi/nn.hpp"

namespace sofpi {

CGReport conjugate_gradient(const LinearMap& a, const Tensor& b, Tensor& x, const CGConfig& cfg) {
  if (cfg.rel_tolerance <= 0.0 || cfg.max_iters < 1) throw Error("CG needs rel_tolerance > 0 and max_iters >= 1");
  require_same_shape("conjugate_gradient", b, x);
  CGReport report;
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    x = Tensor::zeros(b.shape());
    report.converged = true;
    return report;
  }
  Tensor r = b - a(x);
  double rr = squared_norm(r);
  report.relative_residual = std::sqrt(rr) / bnorm;
  if (report.relative_residual <= cfg.rel_tolerance) {
    report.converged = true;
    return report;
  }
  Tensor p = r;
  int increases = 0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const Tensor ap = a(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) throw CGDivergence("CG: operator is not positive definite (p^T A p = " + std::to_string(pap) + ")");
    const double alpha = rr / pap;
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    const double rr_new = squared_norm(r);
    increases = rr_new > rr ? increases + 1 : 0;
    if (increases >= 5) throw CGDivergence("CG: residual increased for 5 consecutive iterations");
    report.iterations = it;
    report.relative_residual = std::sqrt(rr_new) / bnorm;
    if (report.relative_residual <= cfg.rel_tolerance) {
      report.converged = true;
      return report;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return report;
}

double RhoParam::value() const { return cap * sigmoid(0.4 * w); }

double RhoParam::derivative() const {
  const double s = sigmoid(0.4 * w);
  return 0.4 * cap * s * (1.0 - s);
}

RhoParam RhoParam::from_value(double rho, double cap) {
  if (!(rho > 0.0 && rho < cap)) throw Error("rho must lie in (0, cap)");
  const double s = rho / cap;
  return RhoParam{std::log(s / (1.0 - s)) / 0.4, cap};
}

Var rho_from_w(const Var& w, double cap) { return scale(sigmoid(scale(w, 0.4)), cap); }

namespace {

LinearMap shifted_normal(const ForwardOperator& a, double rho) {
  return [&a, rho](const Tensor& x) {
    Tensor out = a.adjoint(a.apply(x));
    axpy(rho, x, out);
    return out;
  };
}

void check_psi_inputs(const Tensor& v, const Tensor& y, double rho, const ForwardOperator& a) {
  if (v.shape() != a.domain_shape()) throw ShapeError("psi: v", v.shape(), a.domain_shape());
  if (y.shape() != a.range_shape()) throw ShapeError("psi: y", y.shape(), a.range_shape());
  if (!(rho > 0.0)) throw Error("psi: rho must be positive");
}

}  // namespace

Tensor psi_forward(const Tensor& v, const Tensor& y, double rho, const ForwardOperator& a, const CGConfig& cfg,
                   CGReport* report) {
  check_psi_inputs(v, y, rho, a);
  Tensor rhs = a.adjoint(y);
  axpy(rho, v, rhs);
  Tensor x = Tensor::zeros(v.shape());
  const CGReport r = conjugate_gradient(shifted_normal(a, rho), rhs, x, cfg);
  if (report) *report = r;
  return x;
}

Tensor psi_forward_exact(const Tensor& v, const Tensor& y, double rho, const ForwardOperator& a) {
  check_psi_inputs(v, y, rho, a);
  Tensor rhs = a.adjoint(y);
  axpy(rho, v, rhs);
  auto x = a.solve_shifted_normal(rhs, rho);
  if (!x) throw Error("psi_forward_exact: " + to_string(a.kind()) + " has no closed-form normal inverse");
  return *x;
}

PsiGradients psi_backward(const Tensor& upstream, const Tensor& v, const Tensor& y, double rho,
                          const Tensor& psi_out, const ForwardOperator& a, const CGConfig& cfg) {
  check_psi_inputs(v, y, rho, a);
  require_same_shape("psi_backward", upstream, v);
  require_same_shape("psi_backward", psi_out, v);
  // All three gradients share the solve (A^T A + rho I) z = upstream.
  PsiGradients g;
  Tensor z = Tensor::zeros(v.shape());
  g.solve = conjugate_gradient(shifted_normal(a, rho), upstream, z, cfg);
  g.grad_v = rho * z;
  g.grad_y = a.apply(z);
  g.grad_rho = dot(v - psi_out, z);
  return g;
}

Tensor PsiOp::forward(const std::vector<const Tensor*>& inputs) const {
  return psi_forward(*inputs[0], *inputs[1], inputs[2]->item(), *op_, cfg_);
}

std::vector<Tensor> PsiOp::backward(const std::vector<const Tensor*>& inputs, const Tensor& output,
                                    const Tensor& upstream) const {
  const auto g = psi_backward(upstream, *inputs[0], *inputs[1], inputs[2]->item(), output, *op_, cfg_);
  return {g.grad_v, differentiate_y_ ? g.grad_y : Tensor(), Tensor::scalar(g.grad_rho)};
}

Var psi(const Var& v, const Var& y, const Var& rho, OperatorPtr op, const CGConfig& cfg, bool differentiate_y) {
  return apply(std::make_shared<PsiOp>(std::move(op), cfg, differentiate_y), {v, y, rho});
}

// ---------------------------------------------------------------------------
// Total variation

namespace {

struct Grid {
  std::size_t channels, h, w;
};

Grid grid_of(const Tensor& u) {
  if (u.rank() == 2) return {1, u.extent(0), u.extent(1)};
  if (u.rank() == 3) return {u.extent(0), u.extent(1), u.extent(2)};
  throw ShapeError("TV expects [H,W] or [C,H,W], got " + shape_string(u.shape()));
}

// p has layout [C, 2, H, W] flattened: (c*2 + d) plane; d = 0 is the row
// direction, d = 1 the column direction.
Tensor gradient(const Tensor& u, const Grid& g) {
  Tensor p(Shape{g.channels, 2, g.h, g.w});
  const std::size_t plane = g.h * g.w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* x = u.data().data() + c * plane;
    double* gi = p.data().data() + (2 * c) * plane;
    double* gj = p.data().data() + (2 * c + 1) * plane;
    for (std::size_t i = 0; i < g.h; ++i)
      for (std::size_t j = 0; j < g.w; ++j) {
        const std::size_t k = i * g.w + j;
        gi[k] = i + 1 < g.h ? x[k + g.w] - x[k] : 0.0;
        gj[k] = j + 1 < g.w ? x[k + 1] - x[k] : 0.0;
      }
  }
  return p;
}

// Exact adjoint of gradient(), i.e. minus the discrete divergence.
Tensor gradient_adjoint(const Tensor& p, const Grid& g, const Shape& out_shape) {
  Tensor u(out_shape);
  const std::size_t plane = g.h * g.w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* x = u.data().data() + c * plane;
    const double* gi = p.data().data() + (2 * c) * plane;
    const double* gj = p.data().data() + (2 * c + 1) * plane;
    for (std::size_t i = 0; i < g.h; ++i)
      for (std::size_t j = 0; j < g.w; ++j) {
        const std::size_t k = i * g.w + j;
        if (i + 1 < g.h) {
          x[k + g.w] += gi[k];
          x[k] -= gi[k];
        }
        if (j + 1 < g.w) {
          x[k + 1] += gj[k];
          x[k] -= gj[k];
        }
      }
  }
  return u;
}

}  // namespace

double total_variation(const Tensor& u) {
  const Grid g = grid_of(u);
  const Tensor p = gradient(u, g);
  const std::size_t plane = g.h * g.w;
  double tv = 0.0;
  for (std::size_t k = 0; k < plane; ++k) {
    double s = 0.0;
    for (std::size_t q = 0; q < 2 * g.channels; ++q) s += p[q * plane + k] * p[q * plane + k];
    tv += std::sqrt(s);
  }
  return tv;
}

double tv_objective(const Tensor& u, const Tensor& y, const ForwardOperator& a, double alpha) {
  return 0.5 * squared_norm(a.apply(u) - y) + alpha * total_variation(u);
}

Tensor tv_reconstruct(const Tensor& y, const ForwardOperator& a, const TVConfig& cfg, std::vector<double>* objective) {
  if (y.shape() != a.range_shape()) throw ShapeError("tv_reconstruct", y.shape(), a.range_shape());
  if (!(cfg.alpha > 0.0)) throw Error("TV weight alpha must be positive");
  const double tau = cfg.tau > 0.0 ? cfg.tau : 1.0 / std::sqrt(8.0);
  const double sigma = cfg.sigma > 0.0 ? cfg.sigma : 1.0 / std::sqrt(8.0);
  if (tau * sigma * 8.0 > 1.0 + 1e-12) throw Error("TV step sizes violate tau * sigma * ||grad||^2 <= 1");

  const Shape& shape = a.domain_shape();
  const Grid g = grid_of(Tensor(shape));
  const std::size_t plane = g.h * g.w;
  const Tensor aty = a.adjoint(y);
  Tensor u(shape), u_bar(shape);
  Tensor p(Shape{g.channels, 2, g.h, g.w});
  if (objective) objective->clear();

  for (int it = 0; it < cfg.iters; ++it) {
    // Dual ascent and projection onto the alpha-ball of the pointwise norm.
    const Tensor gu = gradient(u_bar, g);
    axpy(sigma, gu, p);
    for (std::size_t k = 0; k < plane; ++k) {
      double s = 0.0;
      for (std::size_t q = 0; q < 2 * g.channels; ++q) s += p[q * plane + k] * p[q * plane + k];
      const double n = std::sqrt(s);
      if (n > cfg.alpha)
        for (std::size_t q = 0; q < 2 * g.channels; ++q) p[q * plane + k] *= cfg.alpha / n;
    }
    // Primal step: prox of tau/2 ||A u - y||^2, i.e. (A^T A + I/tau)^{-1}(A^T y + u~/tau).
    Tensor u_tilde = u - tau * gradient_adjoint(p, g, shape);
    Tensor rhs = aty;
    axpy(1.0 / tau, u_tilde, rhs);
    Tensor u_new;
    if (auto exact = a.solve_shifted_normal(rhs, 1.0 / tau)) {
      u_new = std::move(*exact);
    } else {
      u_new = u;
      conjugate_gradient(shifted_normal(a, 1.0 / tau), rhs, u_new, cfg.inner);
    }
    u_bar = 2.0 * u_new - u;
    u = std::move(u_new);
    if (objective) objective->push_back(tv_objective(u, y, a, cfg.alpha));
  }
  return u;
}

}  // namespace sofpi
