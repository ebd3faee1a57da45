#include "sofpi/metrics.hpp"

#include <cmath>

namespace sofpi {

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  require_same_shape("psnr", x, ref);
  if (x.empty()) throw Error("psnr of empty images");
  const double mse = squared_norm(x - ref) / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw Error("gaussian window size must be odd, got " + std::to_string(size));
  std::vector<double> taps(size);
  const double c = 0.5 * static_cast<double>(size - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

// Valid-region separable filtering: rows first, then columns.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t n = taps.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += taps[k] * img[i * w + j + k];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += taps[k] * rows[(i + k) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& ref, const SsimConfig& cfg) {
  require_same_shape("ssim", x, ref);
  if (x.rank() != 2) throw ShapeError("ssim expects [H,W] images, got " + shape_string(x.shape()));
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  if (h < cfg.window || w < cfg.window)
    throw ShapeError("ssim window " + std::to_string(cfg.window) + "x" + std::to_string(cfg.window) +
                     " does not fit images of shape " + shape_string(x.shape()));
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  const auto& a = x.vec();
  const auto& b = ref.vec();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, taps), mu_b = filter_valid(b, h, w, taps);
  const auto e_aa = filter_valid(aa, h, w, taps), e_bb = filter_valid(bb, h, w, taps);
  const auto e_ab = filter_valid(ab, h, w, taps);
  const double c1 = std::pow(cfg.k1 * cfg.peak, 2), c2 = std::pow(cfg.k2 * cfg.peak, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i], vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace sofpi
