// Image quality metrics for reconstructions normalised to [0,1].

#pragma once

#include <limits>

#include "sofpi/tensor.hpp"

namespace sofpi {

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) in dB.
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);

struct SsimConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double peak = 1.0;
};

/// Mean local SSIM over every position where the Gaussian window fits
/// entirely inside the [H,W] images.
double ssim(const Tensor& x, const Tensor& ref, const SsimConfig& cfg = {});

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(std::size_t size, double sigma);

}  // namespace sofpi
