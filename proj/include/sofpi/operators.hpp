// Matched forward/adjoint imaging operators, k-space sampling masks and
// measurement noise models.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sofpi/tensor.hpp"

namespace sofpi {

enum class OperatorKind { identity, masked_fourier, ray_transform };

std::string to_string(OperatorKind kind);

/// A linear map A with its adjoint. Implementations are immutable after
/// construction, so apply/adjoint may run concurrently.
class ForwardOperator {
 public:
  virtual ~ForwardOperator() = default;

  virtual OperatorKind kind() const = 0;
  virtual const Shape& domain_shape() const = 0;
  virtual const Shape& range_shape() const = 0;
  virtual Tensor apply(const Tensor& x) const = 0;
  virtual Tensor adjoint(const Tensor& y) const = 0;

  /// Exact (A^T A + rho I)^{-1} b when the normal operator is diagonal in a
  /// known basis; empty otherwise.
  virtual std::optional<Tensor> solve_shifted_normal(const Tensor& /*b*/, double /*rho*/) const {
    return std::nullopt;
  }

 protected:
  void check_domain(const Tensor& x) const;
  void check_range(const Tensor& y) const;
};

using OperatorPtr = std::shared_ptr<const ForwardOperator>;

class IdentityOperator final : public ForwardOperator {
 public:
  explicit IdentityOperator(Shape shape) : shape_(std::move(shape)) {}
  OperatorKind kind() const override { return OperatorKind::identity; }
  const Shape& domain_shape() const override { return shape_; }
  const Shape& range_shape() const override { return shape_; }
  Tensor apply(const Tensor& x) const override;
  Tensor adjoint(const Tensor& y) const override;
  std::optional<Tensor> solve_shifted_normal(const Tensor& b, double rho) const override;

 private:
  Shape shape_;
};

/// Whether images live in R^{HxW} or are complex, stored as [2,H,W]
/// (channel 0 real part, channel 1 imaginary part).
enum class FourierDomain { real, complex };

/// y = M F x with F the unitary 2D DFT and M a 0/1 mask in DFT layout (DC at
/// [0,0]). The range is [2,H,W] with unsampled bins held at zero.
class MaskedFourierOperator final : public ForwardOperator {
 public:
  MaskedFourierOperator(Tensor mask, FourierDomain domain);
  OperatorKind kind() const override { return OperatorKind::masked_fourier; }
  const Shape& domain_shape() const override { return domain_; }
  const Shape& range_shape() const override { return range_; }
  Tensor apply(const Tensor& x) const override;
  Tensor adjoint(const Tensor& y) const override;
  std::optional<Tensor> solve_shifted_normal(const Tensor& b, double rho) const override;

  /// M F z for a complex image z given as [2,H,W], whatever the domain.
  Tensor apply_complex(const Tensor& z) const;
  const Tensor& mask() const { return mask_; }
  FourierDomain domain() const { return domain_kind_; }

 private:
  Tensor mask_;
  FourierDomain domain_kind_;
  Shape domain_, range_;
  std::size_t h_, w_;
};

/// Parallel-beam ray transform with Joseph-style interpolation. Views are
/// uniform over 360 degrees; the detector has unit spacing and is centred on
/// the image. The adjoint applies the transpose of the same sparse weights.
class RayTransformOperator final : public ForwardOperator {
 public:
  RayTransformOperator(std::size_t h, std::size_t w, std::size_t views, std::size_t detectors = 0);
  OperatorKind kind() const override { return OperatorKind::ray_transform; }
  const Shape& domain_shape() const override { return domain_; }
  const Shape& range_shape() const override { return range_; }
  Tensor apply(const Tensor& x) const override;
  Tensor adjoint(const Tensor& y) const override;

  std::size_t views() const { return range_[0]; }
  std::size_t detectors() const { return range_[1]; }
  static std::size_t default_detectors(std::size_t h, std::size_t w);

 private:
  Shape domain_, range_;
  std::vector<std::size_t> row_start_;
  std::vector<std::uint32_t> column_;
  std::vector<double> weight_;
};

OperatorPtr make_identity_operator(Shape shape);
OperatorPtr make_masked_fourier(Tensor mask, FourierDomain domain = FourierDomain::real);
OperatorPtr make_ray_transform(std::size_t h, std::size_t w, std::size_t views, std::size_t detectors = 0);

/// Largest singular value of A by power iteration on A^T A.
double operator_norm(const ForwardOperator& a, int iterations = 60, std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Sampling masks

enum class SamplingPattern { radial, random_2d, random_1d };

std::string to_string(SamplingPattern p);
SamplingPattern parse_sampling_pattern(const std::string& name);

struct SamplingMask {
  SamplingPattern pattern = SamplingPattern::radial;
  double rate = 1.0;
  /// Radius (radial, random-2d) or band width in columns (random-1d) of the
  /// fully sampled centre.
  double center = 0.0;
  std::uint64_t seed = 0;
  /// [H,W] of 0/1 values in DFT layout.
  Tensor mask;

  double fraction() const;
};

/// Default fully sampled centre for a pattern on an h x w grid.
double default_mask_center(SamplingPattern pattern, std::size_t h, std::size_t w);

/// Deterministic in all arguments. Throws when the rate cannot be reached
/// within 0.02 or the centre does not fit.
SamplingMask make_mask(SamplingPattern pattern, double rate, double center, std::uint64_t seed, std::size_t h,
                       std::size_t w);

/// Writes <stem>.jrrt and a <stem>.txt sidecar (pattern/rate/center/seed).
void save_mask(const std::filesystem::path& stem, const SamplingMask& m);
SamplingMask load_mask(const std::filesystem::path& stem);

/// Moves DC from [0,0] to the grid centre (for display).
Tensor fftshift(const Tensor& img);

// ---------------------------------------------------------------------------
// Noise

enum class NoiseKind {
  /// z = u + sigma (xi1 + i xi2), then y = M F z.
  complex_image_gaussian,
  /// y = A (u + sigma xi).
  real_image_gaussian,
};

std::string to_string(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseModel {
  NoiseKind kind = NoiseKind::real_image_gaussian;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

Tensor simulate_measurement(const Tensor& u, const ForwardOperator& a, const NoiseModel& noise);

}  // namespace sofpi
