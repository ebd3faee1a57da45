#include "sofpi/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sofpi/jrrt.hpp"

namespace sofpi {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void PhantomSpec::validate() const {
  if (height < 8 || width < 8) throw Error("phantom grid must be at least 8x8");
  const double in01[] = {background, myocardium, blood, disc_level};
  for (double v : in01)
    if (!(v >= 0.0 && v <= 1.0)) throw Error("phantom intensities must lie in [0,1]");
  const double s = static_cast<double>(std::min(height, width));
  const double cx = center_x * static_cast<double>(width), cy = center_y * static_cast<double>(height);
  const double ro = ring_outer * s;
  if (!(ring_inner > 0.0 && ring_outer > ring_inner)) throw Error("ring radii must satisfy 0 < inner < outer");
  if (cx - ro < 0.0 || cy - ro < 0.0 || cx + ro > static_cast<double>(width) || cy + ro > static_cast<double>(height))
    throw Error("ring does not fit inside the grid");
  const double ax = ellipse_ax * s, ay = ellipse_ay * s;
  const double ex = 0.5 * static_cast<double>(width), ey = 0.5 * static_cast<double>(height);
  if (ax <= 0.0 || ay <= 0.0 || ex - ax < 0.0 || ey - ay < 0.0) throw Error("background ellipse does not fit");
  if (discs < 0 || (discs > 0 && !(disc_radius > 0.0 && disc_radius < ring_inner)))
    throw Error("papillary discs must be smaller than the blood pool");
}

PhantomSpec PhantomSpec::random(std::uint64_t seed, std::size_t height, std::size_t width) {
  std::mt19937_64 rng(mix_seed(seed, 17));
  auto jitter = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  PhantomSpec s;
  s.height = height;
  s.width = width;
  s.center_x = 0.5 + jitter(-0.04, 0.04);
  s.center_y = 0.5 + jitter(-0.04, 0.04);
  s.ellipse_ax = jitter(0.38, 0.46);
  s.ellipse_ay = jitter(0.32, 0.40);
  s.ring_inner = jitter(0.13, 0.17);
  s.ring_outer = s.ring_inner + jitter(0.06, 0.09);
  s.background = jitter(0.2, 0.3);
  s.myocardium = jitter(0.5, 0.6);
  s.blood = jitter(0.85, 0.95);
  s.disc_level = s.myocardium;
  s.seed = rng();
  s.validate();
  return s;
}

namespace {

struct Geometry {
  double cx, cy, ex, ey, ax, ay, ri, ro, rd;
  std::vector<std::pair<double, double>> discs;  // centres relative to the ring centre
  double sigma_d, c_max;
};

Geometry geometry(const PhantomSpec& spec, const DeformSpec& deform) {
  spec.validate();
  const double s = static_cast<double>(std::min(spec.height, spec.width));
  Geometry g{};
  // Pixel centres sit at integer coordinates.
  g.cx = spec.center_x * static_cast<double>(spec.width) - 0.5;
  g.cy = spec.center_y * static_cast<double>(spec.height) - 0.5;
  g.ex = 0.5 * static_cast<double>(spec.width) - 0.5;
  g.ey = 0.5 * static_cast<double>(spec.height) - 0.5;
  g.ax = spec.ellipse_ax * s;
  g.ay = spec.ellipse_ay * s;
  g.ri = spec.ring_inner * s;
  g.ro = spec.ring_outer * s;
  g.rd = spec.disc_radius * s;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < spec.discs; ++k) {
    const double a = angle(rng);
    const double r = g.ri - 1.5 * g.rd;
    g.discs.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  const double mid = 0.5 * (g.ri + g.ro);
  g.sigma_d = deform.sigma_d > 0.0 ? deform.sigma_d : 1.2 * mid;
  if (!(deform.amplitude >= 0.0 && deform.amplitude < 0.5)) throw Error("contraction amplitude must lie in [0, 0.5)");
  g.c_max = deform.amplitude / std::exp(-mid * mid / (2.0 * g.sigma_d * g.sigma_d));
  // R'(r) = 1 - c w(r) (1 - r^2/sigma_d^2) stays positive for c < 1.
  if (g.c_max >= 1.0) throw Error("contraction too strong for the smoothness scale; the map would fold");
  const double limit = 0.25 * s;
  if (g.sigma_d * g.c_max * std::exp(-0.5) >= limit) throw Error("deformation exceeds a quarter of the grid");
  return g;
}

double base_intensity(const Geometry& g, const PhantomSpec& spec, double x, double y) {
  const double ux = (x - g.ex) / g.ax, uy = (y - g.ey) / g.ay;
  if (ux * ux + uy * uy > 1.0) return 0.0;
  const double dx = x - g.cx, dy = y - g.cy;
  const double r2 = dx * dx + dy * dy;
  if (r2 > g.ro * g.ro) return spec.background;
  if (r2 > g.ri * g.ri) return spec.myocardium;
  for (const auto& [px, py] : g.discs)
    if ((dx - px) * (dx - px) + (dy - py) * (dy - py) <= g.rd * g.rd) return spec.disc_level;
  return spec.blood;
}

// Solves r (1 - c w(r)) = rho for r by Newton's method.
double invert_radius(double rho, double c, double sigma) {
  if (c == 0.0 || rho == 0.0) return rho;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double r = rho;
  for (int it = 0; it < 50; ++it) {
    const double w = std::exp(-r * r * inv2s2);
    const double fr = r * (1.0 - c * w) - rho;
    const double dfr = 1.0 - c * w * (1.0 - r * r / (sigma * sigma));
    const double step = fr / dfr;
    r -= step;
    if (std::abs(step) < 1e-13 * (1.0 + r)) break;
  }
  return r;
}

}  // namespace

double max_displacement(const PhantomSpec& spec, const DeformSpec& deform) {
  const Geometry g = geometry(spec, deform);
  return g.sigma_d * g.c_max * std::exp(-0.5);
}

Tensor render_phantom(const PhantomSpec& spec, const DeformSpec& deform, double phase) {
  if (!(phase >= 0.0 && phase < 1.0)) throw Error("cardiac phase must lie in [0,1)");
  const Geometry g = geometry(spec, deform);
  const double c = g.c_max * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * phase));
  constexpr int kSuper = 4;
  Tensor img(Shape{spec.height, spec.width});
  for (std::size_t i = 0; i < spec.height; ++i)
    for (std::size_t j = 0; j < spec.width; ++j) {
      double acc = 0.0;
      for (int a = 0; a < kSuper; ++a)
        for (int b = 0; b < kSuper; ++b) {
          const double x = static_cast<double>(j) + (b + 0.5) / kSuper - 0.5;
          const double y = static_cast<double>(i) + (a + 0.5) / kSuper - 0.5;
          const double dx = x - g.cx, dy = y - g.cy;
          const double rho = std::hypot(dx, dy);
          const double scale = rho > 0.0 ? invert_radius(rho, c, g.sigma_d) / rho : 1.0;
          acc += base_intensity(g, spec, g.cx + dx * scale, g.cy + dy * scale);
        }
      img.at(i, j) = acc / (kSuper * kSuper);
    }
  return img;
}

ImagePair make_pair(const PhantomSpec& spec, const DeformSpec& deform, double template_phase, double target_phase) {
  return {render_phantom(spec, deform, template_phase), render_phantom(spec, deform, target_phase)};
}

// ---------------------------------------------------------------------------

std::string to_string(Modality m) {
  switch (m) {
    case Modality::mri: return "mri";
    case Modality::ct_sparse: return "ct-sparse";
    case Modality::ct_lowdose: return "ct-lowdose";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  if (name == "mri") return Modality::mri;
  if (name == "ct-sparse") return Modality::ct_sparse;
  if (name == "ct-lowdose") return Modality::ct_lowdose;
  throw Error("unknown modality '" + name + "' (expected mri, ct-sparse or ct-lowdose)");
}

double DatasetManifest::effective_sigma() const {
  if (sigma >= 0.0) return sigma;
  switch (modality) {
    case Modality::mri: return 0.05;
    case Modality::ct_sparse: return 0.0;
    case Modality::ct_lowdose: return 0.10;
  }
  return 0.0;
}

std::size_t DatasetManifest::effective_views() const {
  if (views > 0) return views;
  return modality == Modality::ct_lowdose ? 181 : 18;
}

KeyValues DatasetManifest::to_key_values() const {
  KeyValues kv;
  kv.set("modality", to_string(modality));
  kv.set("n_train", std::uint64_t{n_train});
  kv.set("n_test", std::uint64_t{n_test});
  kv.set("height", std::uint64_t{height});
  kv.set("width", std::uint64_t{width});
  kv.set("seed", seed);
  kv.set("phases", phases);
  kv.set("amplitude", amplitude);
  kv.set("min_contrast", min_contrast);
  kv.set("pattern", to_string(pattern));
  kv.set("rate", rate);
  kv.set("center", center);
  kv.set("views", std::uint64_t{views});
  kv.set("sigma", sigma);
  kv.set("kernel_sigma", kernel.sigma);
  kv.set("kernel_gamma", kernel.gamma);
  kv.set("integrator_steps", integrator.steps);
  kv.set("registration_weight", registration.fidelity_weight);
  kv.set("registration_iters", registration.max_iters);
  kv.set("max_ratio", max_ratio);
  kv.set("max_attempts", max_attempts);
  for (const auto& s : samples)
    kv.set("sample." + std::to_string(s.index),
           std::string(s.test ? "test" : "train") + "," + std::to_string(s.template_phase) + "," +
               std::to_string(s.target_phase) + "," + std::to_string(s.seed) + "," + std::to_string(s.attempts) + "," +
               format_double(s.registration_ratio));
  return kv;
}

DatasetManifest DatasetManifest::from_key_values(const KeyValues& kv) {
  DatasetManifest m;
  m.modality = parse_modality(kv.get("modality", to_string(m.modality)));
  m.n_train = kv.get_u64("n_train", m.n_train);
  m.n_test = kv.get_u64("n_test", m.n_test);
  m.height = kv.get_u64("height", m.height);
  m.width = kv.get_u64("width", m.width);
  m.seed = kv.get_u64("seed", m.seed);
  m.phases = static_cast<int>(kv.get_int("phases", m.phases));
  m.amplitude = kv.get_double("amplitude", m.amplitude);
  m.min_contrast = kv.get_double("min_contrast", m.min_contrast);
  m.pattern = parse_sampling_pattern(kv.get("pattern", to_string(m.pattern)));
  m.rate = kv.get_double("rate", m.rate);
  m.center = kv.get_double("center", m.center);
  m.views = kv.get_u64("views", m.views);
  m.sigma = kv.get_double("sigma", m.sigma);
  m.kernel.sigma = kv.get_double("kernel_sigma", m.kernel.sigma);
  m.kernel.gamma = kv.get_double("kernel_gamma", m.kernel.gamma);
  m.integrator.steps = static_cast<int>(kv.get_int("integrator_steps", m.integrator.steps));
  m.registration.fidelity_weight = kv.get_double("registration_weight", m.registration.fidelity_weight);
  m.registration.max_iters = static_cast<int>(kv.get_int("registration_iters", m.registration.max_iters));
  m.max_ratio = kv.get_double("max_ratio", m.max_ratio);
  m.max_attempts = static_cast<int>(kv.get_int("max_attempts", m.max_attempts));
  for (std::size_t idx = 0; idx < m.n_train + m.n_test; ++idx) {
    const std::string key = "sample." + std::to_string(idx);
    if (!kv.has(key)) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : kv.get(key) + ",") {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (f.size() != 6) throw Error("manifest entry '" + key + "' is malformed");
    SampleEntry e;
    e.index = idx;
    e.test = f[0] == "test";
    e.template_phase = std::stoi(f[1]);
    e.target_phase = std::stoi(f[2]);
    e.seed = std::stoull(f[3]);
    e.attempts = std::stoi(f[4]);
    e.registration_ratio = std::stod(f[5]);
    m.samples.push_back(e);
  }
  if (m.phases < 2) throw Error("a dataset needs at least two cardiac phases");
  if (!(m.min_contrast >= 0.0 && m.min_contrast <= 1.0)) throw Error("min_contrast must lie in [0,1]");
  return m;
}

OperatorPtr make_dataset_operator(const DatasetManifest& m, SamplingMask* mask_out) {
  if (m.modality == Modality::mri) {
    const double center = m.center >= 0.0 ? m.center : default_mask_center(m.pattern, m.height, m.width);
    SamplingMask mask = make_mask(m.pattern, m.rate, center, mix_seed(m.seed, 101), m.height, m.width);
    OperatorPtr op = make_masked_fourier(mask.mask, FourierDomain::real);
    if (mask_out) *mask_out = std::move(mask);
    return op;
  }
  return make_ray_transform(m.height, m.width, m.effective_views());
}

namespace {

std::filesystem::path sample_path(const std::filesystem::path& dir, std::size_t idx, char what) {
  return dir / ("sample_" + std::to_string(idx) + "_" + what + ".jrrt");
}

}  // namespace

DatasetManifest build_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir, const LogFn& log) {
  DatasetManifest out = manifest;
  out.samples.clear();
  std::filesystem::create_directories(dir);
  SamplingMask mask;
  const OperatorPtr op = make_dataset_operator(out, &mask);
  if (out.modality == Modality::mri) save_mask(dir / "mask", mask);
  const double sigma = out.effective_sigma();
  const NoiseKind noise_kind =
      out.modality == Modality::mri ? NoiseKind::complex_image_gaussian : NoiseKind::real_image_gaussian;

  const std::size_t total = out.n_train + out.n_test;
  for (std::size_t idx = 0; idx < total; ++idx) {
    bool done = false;
    for (int attempt = 1; attempt <= out.max_attempts && !done; ++attempt) {
      SampleEntry e;
      e.index = idx;
      e.test = idx >= out.n_train;
      e.attempts = attempt;
      e.seed = mix_seed(mix_seed(out.seed, idx), static_cast<std::uint64_t>(attempt));
      std::mt19937_64 rng(e.seed);
      std::uniform_int_distribution<int> pick(0, out.phases - 1);
      e.template_phase = pick(rng);
      // Pairs whose contraction levels are close differ by sub-pixel motion,
      // which bilinear warping cannot reproduce to the validation ratio.
      auto level = [&](int ph) { return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * ph / out.phases)); };
      do e.target_phase = pick(rng);
      while (std::abs(level(e.target_phase) - level(e.template_phase)) < out.min_contrast);

      const PhantomSpec spec = PhantomSpec::random(e.seed, out.height, out.width);
      DeformSpec deform;
      deform.amplitude = out.amplitude;
      deform.seed = e.seed;
      const double phases = static_cast<double>(out.phases);
      const ImagePair pair = make_pair(spec, deform, e.template_phase / phases, e.target_phase / phases);
      const Tensor y = simulate_measurement(pair.f, *op, NoiseModel{noise_kind, sigma, mix_seed(e.seed, 7)});

      RegistrationResult reg;
      try {
        reg = lddmm_register(pair.f, pair.g, out.kernel, out.integrator, out.registration);
      } catch (const Error& err) {
        if (log) log("sample " + std::to_string(idx) + " attempt " + std::to_string(attempt) + ": " + err.what());
        continue;
      }
      const double initial = ssd(pair.g, pair.f);
      const Tensor reproduced = shoot_warp(reg.momentum, pair.g, out.kernel, out.integrator);
      e.registration_ratio = initial > 0.0 ? ssd(reproduced, pair.f) / initial : 0.0;
      if (e.registration_ratio > out.max_ratio) {
        if (log)
          log("sample " + std::to_string(idx) + " attempt " + std::to_string(attempt) + " rejected: momentum reproduces " +
              format_double(e.registration_ratio) + " of the initial SSD");
        continue;
      }
      write_jrrt(sample_path(dir, idx, 'g'), pair.g);
      write_jrrt(sample_path(dir, idx, 'f'), pair.f);
      write_jrrt(sample_path(dir, idx, 'y'), y);
      write_jrrt(sample_path(dir, idx, 'm'), reg.momentum);
      out.samples.push_back(e);
      done = true;
      if (log) log("sample " + std::to_string(idx) + (e.test ? " (test)" : " (train)") + " ratio " +
                   format_double(e.registration_ratio));
    }
    if (!done)
      throw Error("sample " + std::to_string(idx) + " failed registration validation after " +
                  std::to_string(out.max_attempts) + " attempts");
  }
  out.to_key_values().write(dir / "manifest.txt");
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = DatasetManifest::from_key_values(KeyValues::read(dir / "manifest.txt"));
  const auto& m = ds.manifest;
  if (m.modality == Modality::mri) {
    const SamplingMask mask = load_mask(dir / "mask");
    if (mask.mask.shape() != Shape{m.height, m.width})
      throw IoError("mask in " + dir.string() + " does not match the manifest grid");
    ds.op = make_masked_fourier(mask.mask, FourierDomain::real);
  } else {
    ds.op = make_dataset_operator(m);
  }
  for (std::size_t idx = 0; idx < m.n_train + m.n_test; ++idx) {
    TrainingSample s{read_jrrt(sample_path(dir, idx, 'g')), read_jrrt(sample_path(dir, idx, 'y')),
                     read_jrrt(sample_path(dir, idx, 'f')), read_jrrt(sample_path(dir, idx, 'm')), Tensor()};
    const Shape grid{m.height, m.width};
    if (s.g.shape() != grid || s.f.shape() != grid) throw IoError("sample " + std::to_string(idx) + " grid mismatch");
    if (s.y.shape() != ds.op->range_shape()) throw ShapeError("sample measurement", s.y.shape(), ds.op->range_shape());
    if (s.m.shape() != Shape{2, m.height, m.width}) throw IoError("sample " + std::to_string(idx) + " momentum shape");
    if (idx < m.n_train) {
      ds.train.push_back(std::move(s));
      ds.train_ids.push_back(idx);
    } else {
      ds.test.push_back(std::move(s));
      ds.test_ids.push_back(idx);
    }
  }
  return ds;
}

}  // namespace sofpi
