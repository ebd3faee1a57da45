// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. Usage: acceptance [workdir] [criterion...]

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "sofpi/cli.hpp"
#include "sofpi/config.hpp"
#include "sofpi/gradcheck.hpp"
#include "sofpi/metrics.hpp"
#include "sofpi/phantoms.hpp"

using namespace sofpi;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

Eigen::MatrixXd dense(const ForwardOperator& a) {
  const std::size_t n = shape_numel(a.domain_shape()), m = shape_numel(a.range_shape());
  Eigen::MatrixXd out(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e(a.domain_shape());
    e[j] = 1.0;
    const Tensor col = a.apply(e);
    for (std::size_t i = 0; i < m; ++i) out(i, j) = col[i];
  }
  return out;
}

Eigen::VectorXd vec(const Tensor& t) { return Eigen::Map<const Eigen::VectorXd>(t.vec().data(), t.size()); }

Tensor disc(std::size_t n, double cx, double cy, double r) {
  Tensor img(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          acc += std::hypot(i + (a + 0.5) / 4 - 0.5 - cy, j + (b + 0.5) / 4 - 0.5 - cx) < r ? 1.0 : 0.0;
      img.at(i, j) = acc / 16.0;
    }
  return img;
}

Tensor smooth_field(std::size_t n, double amp, std::uint64_t seed) {
  Tensor v = smooth(random_normal({2, n, n}, seed), KernelConfig{4.0, 1.0});
  return (amp / max_abs(v)) * v;
}

// ---------------------------------------------------------------------------

void adjoint(Outcome& o) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (SamplingPattern p : {SamplingPattern::radial, SamplingPattern::random_2d, SamplingPattern::random_1d})
    for (double rate : {1.0 / 5.0, 1.0 / 4.0, 1.0 / 3.0}) {
      const auto mask = make_mask(p, rate, default_mask_center(p, 64, 64), 11, 64, 64);
      const double e = adjoint_relative_error(*make_masked_fourier(mask.mask), 100, 3);
      worst = std::max(worst, e);
      o.require(e < 1e-10, to_string(p) + " rate " + fmt(rate));
    }
  for (std::size_t views : {18u, 181u}) {
    const double e = adjoint_relative_error(*make_ray_transform(64, 64, views), 100, 4);
    worst = std::max(worst, e);
    o.require(e < 1e-10, std::to_string(views) + " views");
  }
  const double t = since(t0);
  o.require(t < 30.0, "runtime");
  o.detail << "worst relative error " << fmt(worst) << ", " << fmt(t) << " s";
}

void psi_checks(Outcome& o) {
  const auto t0 = Clock::now();
  // Dense direct solve, one Fourier and one ray-transform problem.
  double dense_err = 0.0;
  const auto fourier = make_masked_fourier(
      make_mask(SamplingPattern::radial, 0.25, default_mask_center(SamplingPattern::radial, 16, 16), 5, 16, 16).mask);
  const auto ray = make_ray_transform(16, 16, 18);
  for (const OperatorPtr& a : {fourier, ray}) {
    const Tensor v = random_normal({16, 16}, 5), y = a->apply(random_normal({16, 16}, 6));
    const double rho = 0.25;
    const Eigen::MatrixXd m = dense(*a);
    const Eigen::MatrixXd normal = m.transpose() * m + rho * Eigen::MatrixXd::Identity(256, 256);
    const Eigen::VectorXd ref = normal.ldlt().solve(m.transpose() * vec(y) + rho * vec(v));
    dense_err = std::max(dense_err, (vec(psi_forward(v, y, rho, *a, {1e-12, 500})) - ref).cwiseAbs().maxCoeff());
  }
  o.require(dense_err < 1e-6, "dense solve");

  // Finite differences for v, y and rho.
  const Tensor target = random_normal({16, 16}, 9);
  const ScalarFn f = [&](const std::vector<Var>& in) {
    return squared_norm(psi(in[0], in[1], in[2], fourier, {1e-14, 500}, true) - Var(target));
  };
  const std::vector<Tensor> inputs{random_normal({16, 16}, 7), random_normal({2, 16, 16}, 8), Tensor::scalar(0.35)};
  double fd_err = 0.0;
  for (std::size_t input = 0; input < 3; ++input)
    for (std::size_t idx : {0u, 37u, 130u, 255u}) {
      if (idx >= inputs[input].size()) continue;
      fd_err = std::max(fd_err, check_coordinate(f, inputs, input, idx, 1e-5).relative_error);
    }
  o.require(fd_err < 1e-4, "finite differences");

  // Identity operator: Psi = (y + rho v)/(1 + rho), grad_v = rho/(1+rho) up,
  // grad_y = up/(1+rho), grad_rho = <v - Psi, up>/(1+rho).
  const auto id = make_identity_operator({16, 16});
  const Tensor v = random_normal({16, 16}, 1), y = random_normal({16, 16}, 2), up = random_normal({16, 16}, 3);
  const double rho = 0.6;
  const Tensor out = psi_forward(v, y, rho, *id, {1e-14, 50});
  const auto g = psi_backward(up, v, y, rho, out, *id, {1e-14, 50});
  const double closed = std::max(
      {max_abs_diff(out, (1.0 / (1.0 + rho)) * (y + rho * v)), max_abs_diff(g.grad_v, (rho / (1.0 + rho)) * up),
       max_abs_diff(g.grad_y, (1.0 / (1.0 + rho)) * up),
       std::abs(g.grad_rho - dot(v - out, up) / (1.0 + rho))});
  o.require(closed < 1e-8, "identity closed forms");
  const double t = since(t0);
  o.require(t < 60.0, "runtime");
  o.detail << "dense " << fmt(dense_err) << ", fd " << fmt(fd_err) << ", closed form " << fmt(closed) << ", "
           << fmt(t) << " s";
}

void douglas_rachford(Outcome& o) {
  const auto t0 = Clock::now();
  const std::size_t n = 8;
  const OperatorPtr a = make_identity_operator({n, n});
  double worst = 0.0;
  std::uint64_t seed = 1;
  for (double tau : {0.5, 1.0, 3.0})
    for (double rho : {0.1, 0.4, 0.79}) {
      const Tensor z = random_normal({n, n}, seed++), y = random_normal({n, n}, seed++);
      // Phi is the proximal map of (tau/2)||x - z||^2; the composite minimiser
      // of (rho tau/2)||x - z||^2 + 1/2||x - y||^2 is known in closed form.
      const PhiMap phi = [&](const Var& t) {
        return PhiOutput{scale(t + Var(tau * z), 1.0 / (1.0 + tau)), Var(Tensor(Shape{2, n, n}))};
      };
      const Tensor expected = (1.0 / (1.0 + rho * tau)) * (y + (rho * tau) * z);
      DRState s = initial_state(random_normal({n, n}, seed++));
      for (int k = 0; k < 200; ++k) s = stage_forward(s, Var(y), Var(Tensor::scalar(rho)), phi, a, {1e-14, 50});
      worst = std::max({worst, max_abs_diff(s.u.value(), expected), max_abs_diff(s.f.value(), expected)});
    }
  o.require(worst < 1e-6, "convergence");
  const double t = since(t0);
  o.require(t < 30.0, "runtime");
  o.detail << "max error after 200 iterations " << fmt(worst) << ", " << fmt(t) << " s";
}

void lddmm_invariants(Outcome& o) {
  const auto t0 = Clock::now();
  const auto zero = epdiff_shoot(Tensor(Shape{2, 32, 32}), KernelConfig{}, IntegratorConfig{});
  const bool identity = zero.phi == identity_map(32, 32) && zero.phi_inv == identity_map(32, 32) &&
                        svf_exp(Tensor(Shape{2, 32, 32}), IntegratorConfig{}) == identity_map(32, 32);
  o.require(identity, "zero momentum identity");

  const auto s = epdiff_shoot(smooth_field(32, 1.5, 11), KernelConfig{}, IntegratorConfig{});
  double drift = 0.0;
  for (double e : s.energy) drift = std::max(drift, std::abs(e - s.energy.front()) / s.energy.front());
  o.require(drift < 0.02, "energy drift");

  // Velocity K m from registering a 64x64 phantom pair (end-diastole to
  // end-systole), the fields the shooting layer sees in practice.
  const ImagePair pair = make_pair(PhantomSpec::random(3, 64, 64), DeformSpec{}, 0.0, 0.5);
  const auto reg = lddmm_register(pair.f, pair.g, KernelConfig{}, IntegratorConfig{}, RegisterConfig{});
  const Tensor v = smooth(reg.momentum, KernelConfig{});
  const Tensor fwd = svf_exp(v, IntegratorConfig{}, 1.0), inv = svf_exp(v, IntegratorConfig{}, -1.0);
  const Tensor id = identity_map(64, 64);
  double consistency = 0.0;
  for (const auto& [a, b] : {std::pair{&fwd, &inv}, std::pair{&inv, &fwd}}) {
    // Displacements extend past the grid by clamping, as in svf_exp.
    const Tensor comp = *b + sample_bilinear(Var(*a - id), Var(*b), Boundary::clamp).value();
    consistency = std::max(consistency, max_abs_diff(comp, id));
  }
  o.require(consistency < 0.1, "inverse consistency");

  const Tensor g = disc(32, 14.0, 16.0, 7.0), f = disc(32, 18.0, 16.0, 7.0);
  RegisterConfig opt;
  opt.max_iters = 200;
  const auto r = lddmm_register(f, g, KernelConfig{}, IntegratorConfig{}, opt);
  bool monotone = true;
  for (std::size_t k = 1; k < r.energy.size(); ++k) monotone = monotone && r.energy[k] <= r.energy[k - 1];
  const double ratio = r.final_ssd / r.initial_ssd;
  o.require(ratio <= 0.1 && r.iterations <= 200, "registration ratio");
  o.require(monotone, "monotone energies");
  const double t = since(t0);
  o.require(t < 180.0, "runtime");
  o.detail << "drift " << fmt(drift) << ", inverse consistency " << fmt(consistency) << " px (peak velocity "
           << fmt(max_abs(v)) << " px), registration ratio "
           << fmt(ratio) << " in " << r.iterations << " iterations, " << fmt(t) << " s";
}

void differentiability(Outcome& o) {
  const auto t0 = Clock::now();
  const std::size_t n = 8;
  PipelineConfig cfg;
  cfg.stages = 1;
  cfg.cg = {1e-13, 300};
  cfg.tv.iters = 20;
  const OperatorPtr a = make_masked_fourier(
      make_mask(SamplingPattern::radial, 0.25, default_mask_center(SamplingPattern::radial, n, n), 3, n, n).mask);
  const auto params = init_stages(cfg, 5);
  PhantomSpec spec = PhantomSpec::random(2, n, n);
  const ImagePair pair = make_pair(spec, DeformSpec{}, 0.0, 0.5);
  const Tensor y = a->apply(pair.f), m = 0.3 * random_normal({2, n, n}, 3);
  const Tensor t0v = initial_estimate(y, *a, cfg);
  const LossConfig lc = LossConfig::defaults(1);

  struct Probe {
    int net;  // 1 = Lambda, 2 = Gamma residual
    std::string name;
    std::size_t index;
  };
  const std::vector<Probe> probes{{1, "enc1.weight", 0},  {1, "enc2.weight", 17}, {1, "mid.bias", 3},
                                  {1, "out.weight", 5},   {2, "res1.weight", 0},  {2, "res2.weight", 40},
                                  {2, "res3.weight", 2}};
  std::vector<Tensor> inputs;
  for (const Probe& p : probes)
    inputs.push_back((p.net == 1 ? params[0].theta1 : params[0].theta2).get(p.name).value());
  inputs.push_back(params[0].w.value());
  const ScalarFn loss = [&](const std::vector<Var>& in) {
    StageParams sp = params[0].clone();
    for (std::size_t i = 0; i < probes.size(); ++i)
      for (auto& q : (probes[i].net == 1 ? sp.theta1 : sp.theta2).params)
        if (q.name == probes[i].name) q.value = in[i];
    sp.w = in.back();
    return pipeline_loss(pipeline_forward(t0v, pair.g, y, {sp}, cfg, a), pair.f, m, lc).total;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t idx = i < probes.size() ? probes[i].index : 0;
    const auto r = check_coordinate(loss, inputs, i, idx, 1e-5);
    worst = std::max(worst, r.relative_error);
    o.require(r.relative_error < 1e-3, i < probes.size() ? probes[i].name : std::string("w"));
  }
  const double t = since(t0);
  o.require(t < 120.0, "runtime");
  o.detail << probes.size() << " weight probes and w, worst relative error " << fmt(worst) << ", " << fmt(t) << " s";
}

void training_smoke(Outcome& o, const fs::path& work) {
  const auto t0 = Clock::now();
  DatasetManifest m;
  m.n_train = 8;
  m.n_test = 2;
  m.height = m.width = 32;
  m.seed = 3;
  build_dataset(m, work / "c6_data");
  Dataset ds = load_dataset(work / "c6_data");
  PipelineConfig cfg;
  cfg.stages = 2;
  auto params = init_stages(cfg, 3);
  TrainConfig tc;
  tc.joint_epochs = 50;
  tc.adam.lr = 1e-4;
  const auto h = train(params, ds.train, cfg, LossConfig::defaults(2), tc, ds.op);
  const double ratio = h.final_loss / h.initial_loss;
  o.require(ratio < 0.5, "loss ratio");
  std::string rhos;
  for (const auto& p : params) {
    const double r = p.rho();
    o.require(r > 0.0 && r < 0.8, "rho range");
    rhos += " " + fmt(r);
  }
  const double t = since(t0);
  o.require(t < 600.0, "runtime");
  o.detail << "loss " << fmt(h.initial_loss) << " -> " << fmt(h.final_loss) << " (ratio " << fmt(ratio) << "), rho"
           << rhos << ", " << fmt(t) << " s";
}

// Criteria 7-9 share one trained model.
struct QualityRun {
  double baseline_psnr = 0, baseline_ssim = 0, baseline_seconds = 0;
  double net_psnr = 0, net_ssim = 0, net_seconds = 0;
  int monotone = 0, samples = 0;
  bool all_finite = true;
  bool zero_momentum_exact = true;
  double seconds = 0;
};

// Stage-wise pretraining, then joint training; about 20 minutes on one core.
constexpr int kPretrainEpochs = 25;
constexpr int kJointEpochs = 100;

QualityRun quality_run(const fs::path& work) {
  const auto t0 = Clock::now();
  QualityRun q;
  DatasetManifest m;
  m.n_train = 60;
  m.n_test = 8;
  m.height = m.width = 64;
  m.seed = 7;
  m.pattern = SamplingPattern::radial;
  m.rate = 0.25;
  m.sigma = 0.05;
  build_dataset(m, work / "c7_data");
  Dataset ds = load_dataset(work / "c7_data");
  PipelineConfig cfg;
  cfg.stages = 3;

  const RegisterConfig baseline_opt{10000.0, 200, 1e-4, 20, 1e-9};
  for (const auto& s : ds.test) {
    const auto b0 = Clock::now();
    const Tensor tv = initial_estimate(s.y, *ds.op, cfg);
    const auto r = lddmm_register(tv, s.g, m.kernel, m.integrator, baseline_opt);
    const Tensor u = shoot_warp(r.momentum, s.g, m.kernel, m.integrator);
    q.baseline_seconds += since(b0);
    q.baseline_psnr += psnr(u, s.f);
    q.baseline_ssim += ssim(u, s.f);
  }

  auto params = init_stages(cfg, 5);
  TrainConfig tc;
  tc.pretrain_epochs = kPretrainEpochs;
  tc.joint_epochs = kJointEpochs;
  train(params, ds.train, cfg, LossConfig::defaults(3), tc, ds.op);

  // One untimed call so first-touch allocation is not billed to sample 0.
  infer(ds.test[0].g, ds.test[0].y, params, cfg, ds.op, InferMode::net_output);
  for (const auto& s : ds.test) {
    const auto i0 = Clock::now();
    const Inference net = infer(s.g, s.y, params, cfg, ds.op, InferMode::net_output);
    q.net_seconds += since(i0);
    const Inference shoot = infer(s.g, s.y, params, cfg, ds.op, InferMode::shoot_warp);
    q.net_psnr += psnr(net.u, s.f);
    q.net_ssim += ssim(net.u, s.f);
    q.all_finite = q.all_finite && net.u.all_finite() && shoot.u.all_finite();
    if (ssd(net.stage_u.back(), s.f) <= ssd(net.stage_u.front(), s.f)) ++q.monotone;
    const Tensor zero_m(Shape{2, s.g.shape()[0], s.g.shape()[1]});
    q.zero_momentum_exact = q.zero_momentum_exact && shoot_warp(zero_m, s.g, m.kernel, m.integrator) == s.g;
    ++q.samples;
  }
  const double n = q.samples;
  q.baseline_psnr /= n;
  q.baseline_ssim /= n;
  q.baseline_seconds /= n;
  q.net_psnr /= n;
  q.net_ssim /= n;
  q.net_seconds /= n;
  q.seconds = since(t0);
  return q;
}

void quality(Outcome& o, const QualityRun& q) {
  o.require(q.net_psnr >= q.baseline_psnr + 2.0, "psnr margin");
  o.require(q.net_ssim >= q.baseline_ssim + 0.02, "ssim margin");
  o.require(q.net_seconds < q.baseline_seconds, "inference time");
  o.require(q.seconds < 3600.0, "runtime");
  o.detail << "psnr " << fmt(q.net_psnr) << " vs baseline " << fmt(q.baseline_psnr) << " dB, ssim "
           << fmt(q.net_ssim) << " vs " << fmt(q.baseline_ssim) << ", " << fmt(q.net_seconds) << " vs "
           << fmt(q.baseline_seconds) << " s per sample, " << fmt(q.seconds) << " s";
}

void monotonicity(Outcome& o, const QualityRun& q) {
  o.require(q.monotone >= 0.8 * q.samples, "fraction");
  o.detail << q.monotone << "/" << q.samples << " test samples with ||u3 - f|| <= ||u1 - f||";
}

void inference_modes(Outcome& o, const QualityRun& q) {
  o.require(q.all_finite, "finite reconstructions");
  o.require(q.zero_momentum_exact, "zero momentum returns template");
  o.detail << "net-output and shoot-warp finite on " << q.samples << " samples, zero momentum exact";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism(Outcome& o, const fs::path& work) {
  RunConfig rc;
  rc.seed = 11;
  rc.data.n_train = 4;
  rc.data.n_test = 2;
  rc.data.height = rc.data.width = 32;
  rc.pipeline.stages = 2;
  rc.train.joint_epochs = 3;
  rc.baseline.max_iters = 20;
  const fs::path cfg_path = work / "c10.txt";
  rc.to_key_values().write(cfg_path);
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / ("c10_run" + std::to_string(run));
    fs::remove_all(dir);
    for (const char* cmd : {"gen-data", "train", "infer", "baseline", "eval"}) {
      std::ostringstream out, err;
      const int code = run_command({cmd, "--config", cfg_path.string(), "--out", dir.string()}, out, err);
      o.require(code == 0, std::string(cmd) + " exit code: " + err.str());
    }
    csv[run] = slurp(dir / "metrics.csv");
  }
  o.require(!csv[0].empty() && csv[0] == csv[1], "identical metrics.csv");
  o.detail << "two runs, metrics.csv " << csv[0].size() << " bytes, " << (csv[0] == csv[1] ? "identical" : "different");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "sofpi_acceptance";
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));
  const auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  const auto report = [&](int id, const std::string& name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    try {
      body(o);
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail.str()
              << std::endl;
    failures += o.passed ? 0 : 1;
  };

  if (wanted(1)) report(1, "adjoint correctness", adjoint);
  if (wanted(2)) report(2, "psi correctness", psi_checks);
  if (wanted(3)) report(3, "douglas-rachford oracle", douglas_rachford);
  if (wanted(4)) report(4, "lddmm invariants", lddmm_invariants);
  if (wanted(5)) report(5, "end-to-end differentiability", differentiability);
  if (wanted(6)) report(6, "training smoke", [&](Outcome& o) { training_smoke(o, work); });
  if (wanted(7) || wanted(8) || wanted(9)) {
    std::optional<QualityRun> q;
    std::string error;
    try {
      q = quality_run(work);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const auto with = [&](void (*f)(Outcome&, const QualityRun&)) {
      return [&, f](Outcome& o) {
        if (!q) throw Error("quality run failed: " + error);
        f(o, *q);
      };
    };
    if (wanted(7)) report(7, "desk-scale quality", with(quality));
    if (wanted(8)) report(8, "stage monotonicity", with(monotonicity));
    if (wanted(9)) report(9, "both inference modes", with(inference_modes));
  }
  if (wanted(10)) report(10, "determinism", [&](Outcome& o) { determinism(o, work); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
