// Learnable registration blocks: the momentum net Lambda(t, g) and the
// shooting-warping net Gamma(m, g), composed as Phi(t, g) = Gamma(Lambda(t, g), g).

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sofpi/autodiff.hpp"
#include "sofpi/kvfile.hpp"
#include "sofpi/lddmm.hpp"

namespace sofpi {

struct NamedParam {
  std::string name;
  Var value;
};

/// Ordered, named parameter tensors of one network. Copies share storage; use
/// clone() for an independent copy.
struct NetWeights {
  int stage = 0;
  std::vector<NamedParam> params;

  const Var& get(const std::string& name) const;
  std::vector<Var> vars() const;
  std::size_t parameter_count() const;
  NetWeights clone() const;
  void set_requires_grad(bool on);
  /// Multiplies every parameter by zero.
  void zero();
};

/// Encoder-decoder: 2 -> base -> wide (stride 2) -> wide (stride 2) -> wide
/// -> up -> base -> up -> 2, 3x3 kernels, leaky rectifiers between layers and
/// a linear last layer. The grid must be divisible by 4.
struct LambdaArch {
  std::size_t base = 16;
  std::size_t wide = 32;
  double slope = 0.2;
  /// The last layer's output is multiplied by this and its initial kernel
  /// divided by it, so the initial map is unchanged while Adam's per-step
  /// change in pixel-unit momentum grows by the same factor.
  double output_gain = 10.0;
};

/// Shooting core (smooth -> svf_exp -> warp) plus an optional residual CNN
/// [base image, mx, my] -> width -> width -> 1 whose last layer starts at zero.
struct GammaArch {
  std::size_t width = 16;
  bool residual = true;
  double slope = 0.2;
  int squaring = 6;
  KernelConfig kernel;
};

KeyValues to_key_values(const LambdaArch& a);
KeyValues to_key_values(const GammaArch& a);
LambdaArch lambda_arch_from(const KeyValues& kv);
GammaArch gamma_arch_from(const KeyValues& kv);

/// Kernels uniform in +-1/sqrt(fan_in), zero biases.
NetWeights init_lambda(const LambdaArch& arch, std::uint64_t seed, int stage = 0);
/// As init_lambda, with the last residual layer at zero.
NetWeights init_gamma(const GammaArch& arch, std::uint64_t seed, int stage = 0);

/// Momentum [2,H,W] from t and g ([H,W] each).
Var lambda_forward(const Var& t, const Var& g, const LambdaArch& arch, const NetWeights& w);

/// Prediction [H,W] from momentum m [2,H,W] and template g [H,W].
Var gamma_forward(const Var& m, const Var& g, const GammaArch& arch, const NetWeights& w);

struct PhiOutput {
  Var f;
  Var m;
};

PhiOutput phi_forward(const Var& t, const Var& g, const LambdaArch& la, const NetWeights& theta1, const GammaArch& ga,
                      const NetWeights& theta2);

/// Writes <dir>/manifest.txt (names, shapes, architecture, stage) and one
/// <name>.jrrt per parameter.
void save_weights(const std::filesystem::path& dir, const NetWeights& w, const KeyValues& arch);
/// Reads weights saved by save_weights; arch receives the stored architecture
/// keys when given.
NetWeights load_weights(const std::filesystem::path& dir, KeyValues* arch = nullptr);

/// Throws unless w has exactly the parameter names and shapes of reference.
void check_compatible(const NetWeights& w, const NetWeights& reference, const std::string& what);

}  // namespace sofpi
