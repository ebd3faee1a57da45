#include "sofpi/lddmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sofpi/fft.hpp"
#include "sofpi/jrrt.hpp"
#include "sofpi/kvfile.hpp"

namespace sofpi {

double KernelConfig::sigma_for(std::size_t h, std::size_t w) const {
  return sigma > 0.0 ? sigma : 0.05 * static_cast<double>(std::min(h, w));
}

std::string to_string(Integrator s) {
  return s == Integrator::euler_epdiff ? "euler-epdiff" : "scaling-squaring-svf";
}

Integrator parse_integrator(const std::string& name) {
  if (name == "euler-epdiff") return Integrator::euler_epdiff;
  if (name == "scaling-squaring-svf") return Integrator::scaling_squaring_svf;
  throw Error("unknown integrator '" + name + "'");
}

Tensor identity_map(std::size_t h, std::size_t w) {
  Tensor id(Shape{2, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      id.at(0, i, j) = static_cast<double>(j);
      id.at(1, i, j) = static_cast<double>(i);
    }
  return id;
}

namespace {

struct Planes {
  std::size_t channels, h, w;
};

Planes planes_of(const Tensor& t, const char* what) {
  if (t.rank() == 2) return {1, t.extent(0), t.extent(1)};
  if (t.rank() == 3) return {t.extent(0), t.extent(1), t.extent(2)};
  throw ShapeError(std::string(what) + " expects [H,W] or [C,H,W], got " + shape_string(t.shape()));
}

void check_map(const Tensor& map, std::size_t h, std::size_t w, const char* what) {
  if (map.shape() != Shape{2, h, w}) throw ShapeError(what, map.shape(), Shape{2, h, w});
}

// Gaussian transfer function on the DFT grid.
const std::vector<double>& transfer(std::size_t h, std::size_t w, double sigma) {
  thread_local std::size_t ch = 0, cw = 0;
  thread_local double cs = -1.0;
  thread_local std::vector<double> cache;
  if (ch != h || cw != w || cs != sigma) {
    cache.resize(h * w);
    const double c = 2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma;
    for (std::size_t a = 0; a < h; ++a) {
      const double ky = static_cast<double>(signed_frequency(a, h)) / static_cast<double>(h);
      for (std::size_t b = 0; b < w; ++b) {
        const double kx = static_cast<double>(signed_frequency(b, w)) / static_cast<double>(w);
        cache[a * w + b] = std::exp(-c * (kx * kx + ky * ky));
      }
    }
    ch = h, cw = w, cs = sigma;
  }
  return cache;
}

Tensor smooth_eager(const Tensor& m, double sigma) {
  const Planes p = planes_of(m, "smooth");
  const auto& tf = transfer(p.h, p.w, sigma);
  Tensor out(m.shape());
  std::vector<Complex> buf(p.h * p.w);
  for (std::size_t c = 0; c < p.channels; ++c) {
    const double* src = m.data().data() + c * p.h * p.w;
    for (std::size_t k = 0; k < buf.size(); ++k) buf[k] = src[k];
    dft2(buf, p.h, p.w, false);
    for (std::size_t k = 0; k < buf.size(); ++k) buf[k] *= tf[k];
    dft2(buf, p.h, p.w, true);
    double* dst = out.data().data() + c * p.h * p.w;
    for (std::size_t k = 0; k < buf.size(); ++k) dst[k] = buf[k].real();
  }
  return out;
}

// Periodic central difference along the last (x) or second to last (y) axis,
// multiplied by sign. With sign = -1 this is the adjoint of the sign = +1 map.
Tensor periodic_diff(const Tensor& f, bool along_x, double sign) {
  const Planes p = planes_of(f, along_x ? "diff_x" : "diff_y");
  Tensor out(f.shape());
  const double s = 0.5 * sign;
  for (std::size_t c = 0; c < p.channels; ++c) {
    const double* a = f.data().data() + c * p.h * p.w;
    double* o = out.data().data() + c * p.h * p.w;
    for (std::size_t i = 0; i < p.h; ++i) {
      const std::size_t ip = (i + 1) % p.h, im = (i + p.h - 1) % p.h;
      for (std::size_t j = 0; j < p.w; ++j) {
        if (along_x) {
          const std::size_t jp = (j + 1) % p.w, jm = (j + p.w - 1) % p.w;
          o[i * p.w + j] = s * (a[i * p.w + jp] - a[i * p.w + jm]);
        } else {
          o[i * p.w + j] = s * (a[ip * p.w + j] - a[im * p.w + j]);
        }
      }
    }
  }
  return out;
}

// Bilinear stencil of one sample position.
struct Stencil {
  long x0, y0, x1, y1;
  double fx, fy;
  // Derivative of the position w.r.t. the raw coordinate (0 when clamped).
  double dx, dy;
};

Stencil stencil(double x, double y, std::size_t h, std::size_t w, Boundary b) {
  if (!std::isfinite(x) || !std::isfinite(y)) throw Error("sample_bilinear: non-finite sample coordinate");
  Stencil s{};
  s.dx = s.dy = 1.0;
  if (b == Boundary::clamp) {
    const double xm = static_cast<double>(w - 1), ym = static_cast<double>(h - 1);
    if (x < 0.0 || x > xm) s.dx = 0.0;
    if (y < 0.0 || y > ym) s.dy = 0.0;
    x = std::clamp(x, 0.0, xm);
    y = std::clamp(y, 0.0, ym);
  }
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  s.x0 = static_cast<long>(fx0);
  s.y0 = static_cast<long>(fy0);
  s.fx = x - fx0;
  s.fy = y - fy0;
  s.x1 = s.x0 + 1;
  s.y1 = s.y0 + 1;
  if (b == Boundary::clamp) {
    s.x1 = std::min<long>(s.x1, static_cast<long>(w) - 1);
    s.y1 = std::min<long>(s.y1, static_cast<long>(h) - 1);
  }
  return s;
}

struct Sampler {
  const Tensor& img;
  Planes p;
  double at(std::size_t c, long y, long x) const {
    if (x < 0 || y < 0 || x >= static_cast<long>(p.w) || y >= static_cast<long>(p.h)) return 0.0;
    return img[(c * p.h + static_cast<std::size_t>(y)) * p.w + static_cast<std::size_t>(x)];
  }
};

void scatter(Tensor& g, const Planes& p, std::size_t c, long y, long x, double v) {
  if (x < 0 || y < 0 || x >= static_cast<long>(p.w) || y >= static_cast<long>(p.h)) return;
  g[(c * p.h + static_cast<std::size_t>(y)) * p.w + static_cast<std::size_t>(x)] += v;
}

Tensor sample_forward(const Tensor& img, const Tensor& coords, Boundary b) {
  const Planes p = planes_of(img, "sample_bilinear");
  check_map(coords, p.h, p.w, "sample_bilinear: coordinate map");
  Tensor out(img.shape());
  const Sampler smp{img, p};
  const std::size_t n = p.h * p.w;
  for (std::size_t k = 0; k < n; ++k) {
    const Stencil s = stencil(coords[k], coords[n + k], p.h, p.w, b);
    for (std::size_t c = 0; c < p.channels; ++c) {
      const double top = (1.0 - s.fx) * smp.at(c, s.y0, s.x0) + s.fx * smp.at(c, s.y0, s.x1);
      const double bot = (1.0 - s.fx) * smp.at(c, s.y1, s.x0) + s.fx * smp.at(c, s.y1, s.x1);
      out[c * n + k] = (1.0 - s.fy) * top + s.fy * bot;
    }
  }
  return out;
}

}  // namespace

Tensor smooth(const Tensor& m, const KernelConfig& k) {
  const Planes p = planes_of(m, "smooth");
  return smooth_eager(m, k.sigma_for(p.h, p.w));
}

Var smooth(const Var& m, const KernelConfig& k) {
  const Planes p = planes_of(m.value(), "smooth");
  const double sigma = k.sigma_for(p.h, p.w);
  // K is real, symmetric and self-adjoint, so the backward map is K itself.
  return make_result(
      smooth_eager(m.value(), sigma), {m},
      [sigma](const DiffNode&, const Tensor& up) { return std::vector<Tensor>{smooth_eager(up, sigma)}; }, "smooth");
}

Var sample_bilinear(const Var& img, const Var& coords, Boundary boundary) {
  Tensor out = sample_forward(img.value(), coords.value(), boundary);
  return make_result(
      std::move(out), {img, coords},
      [boundary](const DiffNode& self, const Tensor& up) {
        const Tensor& image = self.parents[0]->value;
        const Tensor& map = self.parents[1]->value;
        const Planes p = planes_of(image, "sample_bilinear");
        const std::size_t n = p.h * p.w;
        const bool want_img = self.parents[0]->requires_grad;
        const bool want_map = self.parents[1]->requires_grad;
        Tensor gi = want_img ? Tensor(image.shape()) : Tensor();
        Tensor gm = want_map ? Tensor(map.shape()) : Tensor();
        const Sampler smp{image, p};
        for (std::size_t k = 0; k < n; ++k) {
          const Stencil s = stencil(map[k], map[n + k], p.h, p.w, boundary);
          double gx = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < p.channels; ++c) {
            const double u = up[c * n + k];
            if (u == 0.0) continue;
            if (want_img) {
              scatter(gi, p, c, s.y0, s.x0, u * (1.0 - s.fy) * (1.0 - s.fx));
              scatter(gi, p, c, s.y0, s.x1, u * (1.0 - s.fy) * s.fx);
              scatter(gi, p, c, s.y1, s.x0, u * s.fy * (1.0 - s.fx));
              scatter(gi, p, c, s.y1, s.x1, u * s.fy * s.fx);
            }
            if (want_map) {
              const double i00 = smp.at(c, s.y0, s.x0), i01 = smp.at(c, s.y0, s.x1);
              const double i10 = smp.at(c, s.y1, s.x0), i11 = smp.at(c, s.y1, s.x1);
              gx += u * ((1.0 - s.fy) * (i01 - i00) + s.fy * (i11 - i10));
              gy += u * ((1.0 - s.fx) * (i10 - i00) + s.fx * (i11 - i01));
            }
          }
          if (want_map) {
            gm[k] = gx * s.dx;
            gm[n + k] = gy * s.dy;
          }
        }
        return std::vector<Tensor>{std::move(gi), std::move(gm)};
      },
      "sample_bilinear");
}

Tensor warp(const Tensor& img, const Tensor& phi) { return sample_forward(img, phi, Boundary::zero); }

Var warp(const Var& img, const Var& phi) { return sample_bilinear(img, phi, Boundary::zero); }

Var diff_x(const Var& f) {
  return make_result(
      periodic_diff(f.value(), true, 1.0), {f},
      [](const DiffNode&, const Tensor& up) { return std::vector<Tensor>{periodic_diff(up, true, -1.0)}; }, "diff_x");
}

Var diff_y(const Var& f) {
  return make_result(
      periodic_diff(f.value(), false, 1.0), {f},
      [](const DiffNode&, const Tensor& up) { return std::vector<Tensor>{periodic_diff(up, false, -1.0)}; },
      "diff_y");
}

Var svf_exp(const Var& v, int squaring, double sign) {
  if (squaring < 1) throw Error("svf_exp: squaring levels must be >= 1");
  if (v.value().rank() != 3 || v.value().extent(0) != 2)
    throw ShapeError("svf_exp expects a [2,H,W] velocity, got " + shape_string(v.shape()));
  const std::size_t h = v.value().extent(1), w = v.value().extent(2);
  const Var id(identity_map(h, w));
  Var d = scale(v, sign / std::ldexp(1.0, squaring));
  for (int s = 0; s < squaring; ++s) d = d + sample_bilinear(d, id + d, Boundary::clamp);
  return id + d;
}

Tensor svf_exp(const Tensor& v, const IntegratorConfig& cfg, double sign) {
  NoGradGuard guard;
  return svf_exp(Var(v), cfg.squaring, sign).value();
}

Var epdiff_rhs(const Var& m, const Var& v) {
  const Var mx = slice(m, 0, 0, 1), my = slice(m, 0, 1, 2);
  const Var vx = slice(v, 0, 0, 1), vy = slice(v, 0, 1, 2);
  const Var vx_x = diff_x(vx), vx_y = diff_y(vx), vy_x = diff_x(vy), vy_y = diff_y(vy);
  const Var div = vx_x + vy_y;
  const Var tx = vx_x * mx + vy_x * my + diff_x(mx) * vx + diff_y(mx) * vy + mx * div;
  const Var ty = vx_y * mx + vy_y * my + diff_x(my) * vx + diff_y(my) * vy + my * div;
  return concat({tx, ty}, 0);
}

namespace {

// Integrates EPDiff from m0 and returns phi^{-1}(1) as a map. When extras is
// given it also receives phi(1), the momentum trajectory and the energies.
Var integrate(const Var& m0, const KernelConfig& k, const IntegratorConfig& cfg, ShootResult* extras) {
  if (cfg.steps < 1) throw Error("EPDiff integration needs at least one step");
  if (cfg.scheme != Integrator::euler_epdiff) throw Error("geodesic shooting requires the euler-epdiff scheme");
  const Tensor& m0v = m0.value();
  if (m0v.rank() != 3 || m0v.extent(0) != 2)
    throw ShapeError("epdiff_shoot expects a [2,H,W] momentum, got " + shape_string(m0v.shape()));
  const std::size_t h = m0v.extent(1), w = m0v.extent(2);
  const double eps = 1.0 / cfg.steps;
  const Tensor id_t = identity_map(h, w);
  const Var id(id_t);
  Var m = m0;
  Var d_inv(Tensor(Shape{2, h, w}));
  Tensor d_fwd(Shape{2, h, w});
  for (int step = 0; step <= cfg.steps; ++step) {
    const Var v = smooth(m, k);
    if (extras) {
      extras->momenta.push_back(m.value());
      extras->energy.push_back(dot(m.value(), v.value()));
    }
    if (step == cfg.steps) break;
    if (extras) {
      NoGradGuard guard;
      const Tensor v_at = sample_forward(v.value(), id_t + d_fwd, Boundary::clamp);
      axpy(eps, v_at, d_fwd);
    }
    const Var back = scale(v, -eps);
    d_inv = back + sample_bilinear(d_inv, id + back, Boundary::clamp);
    m = m - scale(epdiff_rhs(m, v), eps);
    if (!m.value().all_finite() || !d_inv.value().all_finite())
      throw Error("EPDiff integration became non-finite at step " + std::to_string(step + 1) +
                  "; use more time steps or a wider kernel");
  }
  if (extras) {
    extras->phi = id_t + d_fwd;
    extras->phi_inv = id_t + d_inv.value();
  }
  return id + d_inv;
}

}  // namespace

ShootResult epdiff_shoot(const Tensor& m0, const KernelConfig& k, const IntegratorConfig& cfg) {
  NoGradGuard guard;
  ShootResult r;
  integrate(Var(m0), k, cfg, &r);
  return r;
}

Var shoot_inverse_map(const Var& m0, const KernelConfig& k, const IntegratorConfig& cfg) {
  return integrate(m0, k, cfg, nullptr);
}

double ssd(const Tensor& a, const Tensor& b) {
  require_same_shape("ssd", a, b);
  return squared_norm(a - b);
}

RegistrationResult lddmm_register(const Tensor& f, const Tensor& g, const KernelConfig& k,
                                  const IntegratorConfig& cfg, const RegisterConfig& opt) {
  require_same_shape("lddmm_register", f, g);
  if (f.rank() != 2) throw ShapeError("lddmm_register expects [H,W] images, got " + shape_string(f.shape()));
  if (!(opt.fidelity_weight > 0.0) || !(k.gamma > 0.0)) throw Error("registration weights must be positive");
  const std::size_t h = f.extent(0), w = f.extent(1);
  const Var fv(f), gv(g);

  // Energy and its gradient with respect to m0.
  auto evaluate = [&](const Tensor& m0, Tensor& grad) {
    Var m(m0, true);
    const Var warped = warp(fv, shoot_inverse_map(m, k, cfg));
    const Var e = scale(sum(m * smooth(m, k)), 0.5 * k.gamma) + scale(squared_norm(warped - gv), 0.5 * opt.fidelity_weight);
    grad = gradients(e, {m})[0];
    return e.item();
  };

  RegistrationResult r;
  Tensor m(Shape{2, h, w}), grad;
  double energy = evaluate(m, grad);
  r.energy.push_back(energy);
  double step = 0.0;
  for (int it = 0; it < opt.max_iters; ++it) {
    const Tensor dir = smooth(grad, k);
    const double slope = dot(grad, dir);
    if (!(std::sqrt(slope) > opt.gradient_tolerance)) break;
    // First trial moves the velocity by at most one pixel.
    if (step == 0.0) step = 1.0 / std::max(max_abs(smooth(dir, k)), 1e-300);
    int failures = 0;
    bool accepted = false;
    while (!accepted) {
      const Tensor trial = m - step * dir;
      Tensor trial_grad;
      double trial_energy = std::numeric_limits<double>::infinity();
      try {
        trial_energy = evaluate(trial, trial_grad);
      } catch (const Error&) {
        // A blown-up shooting is treated like a failed step.
      }
      if (std::isfinite(trial_energy) && trial_energy <= energy - opt.armijo * step * slope) {
        m = trial;
        grad = std::move(trial_grad);
        energy = trial_energy;
        r.energy.push_back(energy);
        step *= 2.0;
        accepted = true;
      } else {
        step *= 0.5;
        if (++failures >= opt.max_failures) break;
      }
    }
    r.iterations = it + 1;
    if (!accepted) {
      r.line_search_failed = true;
      break;
    }
  }
  const ShootResult shot = epdiff_shoot(m, k, cfg);
  r.momentum = std::move(m);
  r.phi = shot.phi;
  r.phi_inv = shot.phi_inv;
  r.initial_ssd = ssd(f, g);
  r.final_ssd = ssd(warp(f, r.phi_inv), g);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path pair_path(const std::filesystem::path& dir, std::size_t idx, char what) {
  return dir / ("pair_" + std::to_string(idx) + "_" + what + ".jrrt");
}

}  // namespace

void write_momentum_pair(const std::filesystem::path& dir, std::size_t idx, const Tensor& f, const Tensor& g,
                         const Tensor& m) {
  std::filesystem::create_directories(dir);
  write_jrrt(pair_path(dir, idx, 'f'), f);
  write_jrrt(pair_path(dir, idx, 'g'), g);
  write_jrrt(pair_path(dir, idx, 'm'), m);
}

void write_momentum_manifest(const std::filesystem::path& dir, const MomentumDatasetInfo& info) {
  KeyValues kv;
  kv.set("height", std::uint64_t{info.height});
  kv.set("width", std::uint64_t{info.width});
  kv.set("count", std::uint64_t{info.count});
  kv.set("kernel_sigma", info.kernel.sigma_for(info.height, info.width));
  kv.set("gamma", info.kernel.gamma);
  kv.set("scheme", to_string(info.integrator.scheme));
  kv.set("steps", info.integrator.steps);
  kv.set("squaring", info.integrator.squaring);
  kv.set("fidelity_weight", info.fidelity_weight);
  std::filesystem::create_directories(dir);
  kv.write(dir / "manifest.txt");
}

MomentumDatasetInfo read_momentum_manifest(const std::filesystem::path& dir) {
  const KeyValues kv = KeyValues::read(dir / "manifest.txt");
  MomentumDatasetInfo info;
  info.height = kv.get_u64("height");
  info.width = kv.get_u64("width");
  info.count = kv.get_u64("count");
  info.kernel.sigma = kv.get_double("kernel_sigma");
  info.kernel.gamma = kv.get_double("gamma");
  info.integrator.scheme = parse_integrator(kv.get("scheme"));
  info.integrator.steps = static_cast<int>(kv.get_int("steps"));
  info.integrator.squaring = static_cast<int>(kv.get_int("squaring"));
  info.fidelity_weight = kv.get_double("fidelity_weight");
  return info;
}

MomentumPair read_momentum_pair(const std::filesystem::path& dir, std::size_t idx) {
  MomentumPair p{read_jrrt(pair_path(dir, idx, 'f')), read_jrrt(pair_path(dir, idx, 'g')),
                 read_jrrt(pair_path(dir, idx, 'm'))};
  if (p.f.rank() != 2 || p.f.shape() != p.g.shape() || p.m.shape() != Shape{2, p.f.extent(0), p.f.extent(1)})
    throw IoError("momentum pair " + std::to_string(idx) + " in " + dir.string() + " has inconsistent shapes");
  return p;
}

}  // namespace sofpi
