#include "sofpi/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "sofpi/fft.hpp"
#include "sofpi/jrrt.hpp"
#include "sofpi/kvfile.hpp"

namespace sofpi {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::identity: return "identity";
    case OperatorKind::masked_fourier: return "masked-fourier";
    case OperatorKind::ray_transform: return "ray-transform";
  }
  return "?";
}

void ForwardOperator::check_domain(const Tensor& x) const {
  if (x.shape() != domain_shape()) throw ShapeError(to_string(kind()) + " apply", x.shape(), domain_shape());
}

void ForwardOperator::check_range(const Tensor& y) const {
  if (y.shape() != range_shape()) throw ShapeError(to_string(kind()) + " adjoint", y.shape(), range_shape());
}

Tensor IdentityOperator::apply(const Tensor& x) const {
  check_domain(x);
  return x;
}

Tensor IdentityOperator::adjoint(const Tensor& y) const {
  check_range(y);
  return y;
}

std::optional<Tensor> IdentityOperator::solve_shifted_normal(const Tensor& b, double rho) const {
  check_domain(b);
  return (1.0 / (1.0 + rho)) * b;
}

// ---------------------------------------------------------------------------

MaskedFourierOperator::MaskedFourierOperator(Tensor mask, FourierDomain domain)
    : mask_(std::move(mask)), domain_kind_(domain) {
  if (mask_.rank() != 2) throw ShapeError("mask must be [H,W], got " + shape_string(mask_.shape()));
  h_ = mask_.extent(0);
  w_ = mask_.extent(1);
  for (auto& v : mask_.data()) v = v != 0.0 ? 1.0 : 0.0;
  domain_ = domain == FourierDomain::real ? Shape{h_, w_} : Shape{2, h_, w_};
  range_ = Shape{2, h_, w_};
}

namespace {

std::vector<Complex> to_complex(const Tensor& x, std::size_t n) {
  std::vector<Complex> z(n);
  if (x.rank() == 2) {
    for (std::size_t i = 0; i < n; ++i) z[i] = {x[i], 0.0};
  } else {
    for (std::size_t i = 0; i < n; ++i) z[i] = {x[i], x[n + i]};
  }
  return z;
}

Tensor from_complex(const std::vector<Complex>& z, std::size_t h, std::size_t w) {
  Tensor t(Shape{2, h, w});
  const std::size_t n = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = z[i].real();
    t[n + i] = z[i].imag();
  }
  return t;
}

}  // namespace

Tensor MaskedFourierOperator::apply_complex(const Tensor& z) const {
  if (z.shape() != range_) throw ShapeError("masked-fourier apply_complex", z.shape(), range_);
  auto c = to_complex(z, h_ * w_);
  dft2(c, h_, w_, false);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= mask_[i];
  return from_complex(c, h_, w_);
}

Tensor MaskedFourierOperator::apply(const Tensor& x) const {
  check_domain(x);
  auto c = to_complex(x, h_ * w_);
  dft2(c, h_, w_, false);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= mask_[i];
  return from_complex(c, h_, w_);
}

Tensor MaskedFourierOperator::adjoint(const Tensor& y) const {
  check_range(y);
  auto c = to_complex(y, h_ * w_);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= mask_[i];
  dft2(c, h_, w_, true);
  if (domain_kind_ == FourierDomain::complex) return from_complex(c, h_, w_);
  Tensor out(Shape{h_, w_});
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

std::optional<Tensor> MaskedFourierOperator::solve_shifted_normal(const Tensor& b, double rho) const {
  check_domain(b);
  auto c = to_complex(b, h_ * w_);
  dft2(c, h_, w_, false);
  for (std::size_t a = 0; a < h_; ++a)
    for (std::size_t k = 0; k < w_; ++k) {
      double m = mask_[a * w_ + k];
      if (domain_kind_ == FourierDomain::real) {
        // For real images A^T A = F^H Msym F with Msym(k) = (M(k) + M(-k)) / 2.
        const std::size_t ma = (h_ - a) % h_, mk = (w_ - k) % w_;
        m = 0.5 * (m + mask_[ma * w_ + mk]);
      }
      c[a * w_ + k] /= (m + rho);
    }
  dft2(c, h_, w_, true);
  if (domain_kind_ == FourierDomain::complex) return from_complex(c, h_, w_);
  Tensor out(Shape{h_, w_});
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

// ---------------------------------------------------------------------------

std::size_t RayTransformOperator::default_detectors(std::size_t h, std::size_t w) {
  return static_cast<std::size_t>(std::ceil(std::numbers::sqrt2 * static_cast<double>(std::max(h, w))));
}

RayTransformOperator::RayTransformOperator(std::size_t h, std::size_t w, std::size_t views, std::size_t detectors) {
  if (h == 0 || w == 0 || views == 0) throw Error("ray transform needs a non-empty grid and at least one view");
  if (detectors == 0) detectors = default_detectors(h, w);
  domain_ = {h, w};
  range_ = {views, detectors};
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double dc = 0.5 * static_cast<double>(detectors - 1);
  row_start_.reserve(views * detectors + 1);
  row_start_.push_back(0);
  auto push = [&](std::size_t i, std::size_t j, double wgt) {
    if (wgt == 0.0) return;
    column_.push_back(static_cast<std::uint32_t>(i * w + j));
    weight_.push_back(wgt);
  };
  for (std::size_t v = 0; v < views; ++v) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(views);
    const double dx = std::cos(theta), dy = std::sin(theta);
    const double ex = -dy, ey = dx;
    for (std::size_t d = 0; d < detectors; ++d) {
      const double s = static_cast<double>(d) - dc;
      const double px = cx + s * ex, py = cy + s * ey;
      if (std::abs(dx) >= std::abs(dy)) {
        // March over columns, interpolate between rows.
        const double step = 1.0 / std::abs(dx);
        for (std::size_t j = 0; j < w; ++j) {
          const double t = (static_cast<double>(j) - px) / dx;
          const double y = py + t * dy;
          const double fl = std::floor(y);
          const double f = y - fl;
          const long i0 = static_cast<long>(fl);
          if (i0 >= 0 && i0 < static_cast<long>(h)) push(static_cast<std::size_t>(i0), j, (1.0 - f) * step);
          if (i0 + 1 >= 0 && i0 + 1 < static_cast<long>(h)) push(static_cast<std::size_t>(i0 + 1), j, f * step);
        }
      } else {
        const double step = 1.0 / std::abs(dy);
        for (std::size_t i = 0; i < h; ++i) {
          const double t = (static_cast<double>(i) - py) / dy;
          const double x = px + t * dx;
          const double fl = std::floor(x);
          const double f = x - fl;
          const long j0 = static_cast<long>(fl);
          if (j0 >= 0 && j0 < static_cast<long>(w)) push(i, static_cast<std::size_t>(j0), (1.0 - f) * step);
          if (j0 + 1 >= 0 && j0 + 1 < static_cast<long>(w)) push(i, static_cast<std::size_t>(j0 + 1), f * step);
        }
      }
      row_start_.push_back(column_.size());
    }
  }
}

Tensor RayTransformOperator::apply(const Tensor& x) const {
  check_domain(x);
  Tensor y(range_);
  for (std::size_t r = 0; r + 1 < row_start_.size(); ++r) {
    double acc = 0.0;
    for (std::size_t e = row_start_[r]; e < row_start_[r + 1]; ++e) acc += weight_[e] * x[column_[e]];
    y[r] = acc;
  }
  return y;
}

Tensor RayTransformOperator::adjoint(const Tensor& y) const {
  check_range(y);
  Tensor x(domain_);
  for (std::size_t r = 0; r + 1 < row_start_.size(); ++r) {
    const double yr = y[r];
    for (std::size_t e = row_start_[r]; e < row_start_[r + 1]; ++e) x[column_[e]] += weight_[e] * yr;
  }
  return x;
}

OperatorPtr make_identity_operator(Shape shape) { return std::make_shared<IdentityOperator>(std::move(shape)); }

OperatorPtr make_masked_fourier(Tensor mask, FourierDomain domain) {
  return std::make_shared<MaskedFourierOperator>(std::move(mask), domain);
}

OperatorPtr make_ray_transform(std::size_t h, std::size_t w, std::size_t views, std::size_t detectors) {
  return std::make_shared<RayTransformOperator>(h, w, views, detectors);
}

double operator_norm(const ForwardOperator& a, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Tensor x(a.domain_shape());
  for (auto& v : x.data()) v = uni(rng);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double n = norm(x);
    if (n == 0.0) return 0.0;
    x *= 1.0 / n;
    x = a.adjoint(a.apply(x));
    lambda = norm(x);
  }
  return std::sqrt(lambda);
}

// ---------------------------------------------------------------------------
// Sampling masks

std::string to_string(SamplingPattern p) {
  switch (p) {
    case SamplingPattern::radial: return "radial";
    case SamplingPattern::random_2d: return "random-2d";
    case SamplingPattern::random_1d: return "random-1d";
  }
  return "?";
}

SamplingPattern parse_sampling_pattern(const std::string& name) {
  if (name == "radial") return SamplingPattern::radial;
  if (name == "random-2d") return SamplingPattern::random_2d;
  if (name == "random-1d") return SamplingPattern::random_1d;
  throw Error("unknown sampling pattern '" + name + "' (expected radial, random-2d, random-1d)");
}

double SamplingMask::fraction() const { return sum(mask) / static_cast<double>(mask.size()); }

double default_mask_center(SamplingPattern pattern, std::size_t h, std::size_t w) {
  const double n = static_cast<double>(std::min(h, w));
  switch (pattern) {
    case SamplingPattern::radial: return 0.0;
    case SamplingPattern::random_2d: return std::max(1.0, std::round(0.06 * n));
    case SamplingPattern::random_1d: return std::max(2.0, std::round(0.08 * static_cast<double>(w)));
  }
  return 0.0;
}

namespace {

constexpr double kRateTolerance = 0.02;

void rasterize_spokes(std::size_t spokes, std::size_t h, std::size_t w, Tensor& mask) {
  const double reach = 0.5 * std::hypot(static_cast<double>(h), static_cast<double>(w));
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  for (std::size_t s = 0; s < spokes; ++s) {
    const double theta = std::numbers::pi * static_cast<double>(s) / static_cast<double>(spokes);
    const double c = std::cos(theta), sn = std::sin(theta);
    for (double t = -reach; t <= reach; t += 0.5) {
      const long kx = std::lround(t * c), ky = std::lround(t * sn);
      // Signed frequencies on an n-grid range over [-n/2, (n-1)/2].
      if (kx < -wl / 2 || kx > (wl - 1) / 2 || ky < -hl / 2 || ky > (hl - 1) / 2) continue;
      const std::size_t a = static_cast<std::size_t>((ky + hl) % hl);
      const std::size_t b = static_cast<std::size_t>((kx + wl) % wl);
      mask.at(a, b) = 1.0;
    }
  }
}

double frequency_radius(std::size_t a, std::size_t b, std::size_t h, std::size_t w) {
  return std::hypot(static_cast<double>(signed_frequency(a, h)), static_cast<double>(signed_frequency(b, w)));
}

// Indices of the k smallest exponential keys -log(U)/weight, i.e. a weighted
// sample without replacement.
std::vector<std::size_t> weighted_sample(const std::vector<double>& weights, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double u = uni(rng);
    if (u <= 0.0) u = std::numeric_limits<double>::min();
    keys.emplace_back(-std::log(u) / weights[i], i);
  }
  k = std::min(k, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<long>(k), keys.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(keys[i].second);
  return out;
}

}  // namespace

SamplingMask make_mask(SamplingPattern pattern, double rate, double center, std::uint64_t seed, std::size_t h,
                       std::size_t w) {
  if (!(rate > 0.0 && rate <= 1.0)) throw Error("sampling rate must lie in (0,1], got " + std::to_string(rate));
  if (center < 0.0) throw Error("mask centre must be non-negative");
  if (h == 0 || w == 0) throw Error("mask grid must be non-empty");
  SamplingMask m{pattern, rate, center, seed, Tensor(Shape{h, w})};
  if (rate == 1.0) {
    m.mask = Tensor::ones(Shape{h, w});
    return m;
  }
  const double total = static_cast<double>(h * w);
  const auto target = static_cast<std::size_t>(std::lround(rate * total));

  auto force_center_disc = [&](Tensor& mask) {
    std::size_t count = 0;
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = 0; b < w; ++b)
        if (frequency_radius(a, b, h, w) <= center) {
          mask.at(a, b) = 1.0;
          ++count;
        }
    return count;
  };

  switch (pattern) {
    case SamplingPattern::radial: {
      if (center > 0.5 * static_cast<double>(std::min(h, w))) throw Error("radial mask centre does not fit the grid");
      const double spoke_length = static_cast<double>(std::max(h, w));
      const auto first = static_cast<std::size_t>(std::ceil(rate * total / spoke_length));
      // Spokes overlap near DC, so the nominal count undershoots; take the
      // count whose realised fraction is closest to the target.
      double best_err = std::numeric_limits<double>::infinity();
      Tensor best;
      for (std::size_t spokes = std::max<std::size_t>(1, first / 2); spokes <= 4 * first + 4; ++spokes) {
        Tensor mask(Shape{h, w});
        rasterize_spokes(spokes, h, w, mask);
        force_center_disc(mask);
        const double frac = sum(mask) / total;
        if (std::abs(frac - rate) < best_err) {
          best_err = std::abs(frac - rate);
          best = mask;
        }
        if (frac > rate + kRateTolerance) break;
      }
      m.mask = std::move(best);
      break;
    }
    case SamplingPattern::random_2d: {
      if (center > 0.5 * static_cast<double>(std::min(h, w))) throw Error("random-2d mask centre does not fit the grid");
      const std::size_t fixed = force_center_disc(m.mask);
      if (fixed > target) throw Error("random-2d: fully sampled centre alone exceeds the requested rate");
      const double spread = 0.25 * static_cast<double>(std::min(h, w));
      std::vector<double> weights;
      std::vector<std::size_t> index;
      for (std::size_t i = 0; i < h * w; ++i) {
        if (m.mask[i] != 0.0) continue;
        const double r = frequency_radius(i / w, i % w, h, w);
        weights.push_back(std::exp(-r * r / (2.0 * spread * spread)));
        index.push_back(i);
      }
      std::mt19937_64 rng(seed);
      for (auto k : weighted_sample(weights, target - fixed, rng)) m.mask[index[k]] = 1.0;
      break;
    }
    case SamplingPattern::random_1d: {
      const auto band = static_cast<std::size_t>(std::lround(center));
      if (band > w) throw Error("random-1d: centre band wider than the grid");
      const auto columns = static_cast<std::size_t>(std::lround(rate * static_cast<double>(w)));
      if (band > columns) throw Error("random-1d: fully sampled band alone exceeds the requested rate");
      // Band of `band` columns centred on DC.
      std::vector<long> order(w);
      for (std::size_t b = 0; b < w; ++b) order[b] = signed_frequency(b, w);
      std::vector<bool> chosen(w, false);
      std::vector<std::size_t> by_distance(w);
      for (std::size_t b = 0; b < w; ++b) by_distance[b] = b;
      std::stable_sort(by_distance.begin(), by_distance.end(), [&](std::size_t x, std::size_t y) {
        const long ax = std::abs(order[x]), ay = std::abs(order[y]);
        return ax != ay ? ax < ay : order[x] > order[y];
      });
      for (std::size_t i = 0; i < band; ++i) chosen[by_distance[i]] = true;
      const double spread = 0.25 * static_cast<double>(w);
      std::vector<double> weights;
      std::vector<std::size_t> index;
      for (std::size_t b = 0; b < w; ++b) {
        if (chosen[b]) continue;
        const double k = static_cast<double>(order[b]);
        weights.push_back(std::exp(-k * k / (2.0 * spread * spread)));
        index.push_back(b);
      }
      std::mt19937_64 rng(seed);
      for (auto k : weighted_sample(weights, columns - band, rng)) chosen[index[k]] = true;
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b) m.mask.at(a, b) = chosen[b] ? 1.0 : 0.0;
      break;
    }
  }
  if (std::abs(m.fraction() - rate) > kRateTolerance)
    throw Error(to_string(pattern) + ": rate " + std::to_string(rate) + " is not reachable on a " + std::to_string(h) +
                "x" + std::to_string(w) + " grid (closest " + std::to_string(m.fraction()) + ")");
  return m;
}

void save_mask(const std::filesystem::path& stem, const SamplingMask& m) {
  write_jrrt(stem.string() + ".jrrt", m.mask);
  KeyValues kv;
  kv.set("pattern", to_string(m.pattern));
  kv.set("rate", m.rate);
  kv.set("center", m.center);
  kv.set("seed", m.seed);
  kv.write(stem.string() + ".txt");
}

SamplingMask load_mask(const std::filesystem::path& stem) {
  SamplingMask m;
  m.mask = read_jrrt(stem.string() + ".jrrt");
  const KeyValues kv = KeyValues::read(stem.string() + ".txt");
  m.pattern = parse_sampling_pattern(kv.get("pattern"));
  m.rate = kv.get_double("rate");
  m.center = kv.get_double("center");
  m.seed = kv.get_u64("seed");
  if (m.mask.rank() != 2) throw IoError("mask " + stem.string() + " is not [H,W]");
  return m;
}

Tensor fftshift(const Tensor& img) {
  if (img.rank() != 2) throw ShapeError("fftshift expects [H,W], got " + shape_string(img.shape()));
  const std::size_t h = img.extent(0), w = img.extent(1);
  Tensor out(img.shape());
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t b = 0; b < w; ++b) out.at((a + h / 2) % h, (b + w / 2) % w) = img.at(a, b);
  return out;
}

// ---------------------------------------------------------------------------
// Noise

std::string to_string(NoiseKind k) {
  return k == NoiseKind::complex_image_gaussian ? "complex-gaussian-image" : "gaussian-pre-projection";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "complex-gaussian-image") return NoiseKind::complex_image_gaussian;
  if (name == "gaussian-pre-projection") return NoiseKind::real_image_gaussian;
  throw Error("unknown noise kind '" + name + "'");
}

Tensor simulate_measurement(const Tensor& u, const ForwardOperator& a, const NoiseModel& noise) {
  if (noise.sigma < 0.0) throw Error("noise sigma must be non-negative");
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (noise.kind == NoiseKind::complex_image_gaussian) {
    const auto* fourier = dynamic_cast<const MaskedFourierOperator*>(&a);
    if (!fourier) throw Error("complex image-domain noise requires a masked-fourier operator");
    if (u.shape() != a.domain_shape()) throw ShapeError("simulate_measurement", u.shape(), a.domain_shape());
    if (noise.sigma == 0.0) return a.apply(u);
    const std::size_t n = fourier->mask().size();
    Tensor z(Shape{2, fourier->mask().extent(0), fourier->mask().extent(1)});
    if (u.rank() == 2) {
      for (std::size_t i = 0; i < n; ++i) z[i] = u[i];
    } else {
      z = u;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] += noise.sigma * normal(rng);
    for (std::size_t i = 0; i < n; ++i) z[n + i] += noise.sigma * normal(rng);
    return fourier->apply_complex(z);
  }
  if (noise.sigma == 0.0) return a.apply(u);
  Tensor noisy = u;
  for (auto& v : noisy.data()) v += noise.sigma * normal(rng);
  return a.apply(noisy);
}

}  // namespace sofpi
