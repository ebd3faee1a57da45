// Diffeomorphic registration: Gaussian smoothing K, bilinear warping,
// stationary-velocity exponentials, EPDiff geodesic shooting and a
// shooting-based registration optimiser.
//
// Vector fields (momentum, velocity, displacement) and coordinate maps are
// [2,H,W] tensors; channel 0 is the x (column) component and channel 1 the y
// (row) component. A deformation is stored in map form, phi(i,j) = absolute
// (x, y) grid coordinates, so the identity holds (j, i) at pixel (i, j).

#pragma once

#include <filesystem>
#include <vector>

#include "sofpi/autodiff.hpp"

namespace sofpi {

struct KernelConfig {
  /// Gaussian standard deviation in pixels; <= 0 selects 0.05 * min(H, W).
  double sigma = 0.0;
  /// Weight of the (gamma/2) <m0, K m0> regulariser.
  double gamma = 1.0;

  double sigma_for(std::size_t h, std::size_t w) const;
};

enum class Integrator { euler_epdiff, scaling_squaring_svf };

std::string to_string(Integrator s);
Integrator parse_integrator(const std::string& name);

struct IntegratorConfig {
  int steps = 10;
  Integrator scheme = Integrator::euler_epdiff;
  int squaring = 6;
};

Tensor identity_map(std::size_t h, std::size_t w);

/// v = K m, per-channel Gaussian convolution in the frequency domain with
/// periodic boundary and DC gain exactly 1. Accepts [H,W] or [C,H,W].
Tensor smooth(const Tensor& m, const KernelConfig& k);
Var smooth(const Var& m, const KernelConfig& k);

enum class Boundary {
  /// Samples outside the grid read as 0.
  zero,
  /// Coordinates are clamped to the grid, so constant fields stay constant.
  clamp,
};

/// Bilinear samples of img ([H,W] or [C,H,W]) at the coordinates of a
/// [2,H,W] map, one output per map pixel. Differentiable in img and coords.
Var sample_bilinear(const Var& img, const Var& coords, Boundary boundary);

/// img o phi with zero padding outside the grid.
Tensor warp(const Tensor& img, const Tensor& phi);
Var warp(const Var& img, const Var& phi);

/// Periodic central differences along x (columns) or y (rows) of an [H,W] or
/// [C,H,W] field.
Var diff_x(const Var& f);
Var diff_y(const Var& f);

/// Scaling and squaring: phi = Id + sign v / 2^S, then phi <- phi o phi S
/// times. Displacements are composed with clamp-to-border sampling so
/// constant fields give exact translations.
Tensor svf_exp(const Tensor& v, const IntegratorConfig& cfg, double sign = 1.0);
Var svf_exp(const Var& v, int squaring, double sign = 1.0);

/// Coordinate form of ad*_v m: (Dv)^T m + (Dm) v + m div v.
Var epdiff_rhs(const Var& m, const Var& v);

struct ShootResult {
  Tensor phi;
  Tensor phi_inv;
  /// m(t) at t = 0, 1/T, ..., 1.
  std::vector<Tensor> momenta;
  /// <m(t), K m(t)> at the same times.
  std::vector<double> energy;
};

/// Forward Euler on the EPDiff system with T = cfg.steps steps. Throws when
/// the integration produces non-finite values.
ShootResult epdiff_shoot(const Tensor& m0, const KernelConfig& k, const IntegratorConfig& cfg);

/// phi^{-1}(1) from the same integration, differentiable in m0.
Var shoot_inverse_map(const Var& m0, const KernelConfig& k, const IntegratorConfig& cfg);

double ssd(const Tensor& a, const Tensor& b);

struct RegisterConfig {
  /// w in (gamma/2) <m0, K m0> + (w/2) ||f o phi^{-1}(1) - g||^2.
  double fidelity_weight = 10000.0;
  int max_iters = 200;
  double armijo = 1e-4;
  int max_failures = 20;
  /// Stop once the Sobolev gradient norm falls below this.
  double gradient_tolerance = 1e-9;
};

struct RegistrationResult {
  Tensor momentum;
  Tensor phi;
  Tensor phi_inv;
  /// Energy of every accepted iterate, starting with the initial one.
  std::vector<double> energy;
  int iterations = 0;
  bool line_search_failed = false;
  double initial_ssd = 0.0;
  double final_ssd = 0.0;
};

/// Minimises (gamma/2) <m0, K m0> + (w/2) ||f o phi^{-1}(1) - g||^2 over m0
/// by Sobolev gradient descent (direction -K grad) with Armijo backtracking,
/// starting from zero.
RegistrationResult lddmm_register(const Tensor& f, const Tensor& g, const KernelConfig& k,
                                  const IntegratorConfig& cfg, const RegisterConfig& opt);

// ---------------------------------------------------------------------------
// Momentum datasets: pair_<idx>_{f,g,m}.jrrt plus manifest.txt.

struct MomentumDatasetInfo {
  std::size_t height = 0, width = 0;
  std::size_t count = 0;
  KernelConfig kernel;
  IntegratorConfig integrator;
  double fidelity_weight = 0.0;
};

void write_momentum_pair(const std::filesystem::path& dir, std::size_t idx, const Tensor& f, const Tensor& g,
                         const Tensor& m);
void write_momentum_manifest(const std::filesystem::path& dir, const MomentumDatasetInfo& info);
MomentumDatasetInfo read_momentum_manifest(const std::filesystem::path& dir);

struct MomentumPair {
  Tensor f, g, m;
};
MomentumPair read_momentum_pair(const std::filesystem::path& dir, std::size_t idx);

}  // namespace sofpi
