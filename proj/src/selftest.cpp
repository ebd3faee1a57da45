#include "sofpi/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "sofpi/gradcheck.hpp"
#include "sofpi/inversion.hpp"
#include "sofpi/lddmm.hpp"
#include "sofpi/metrics.hpp"
#include "sofpi/nn.hpp"
#include "sofpi/pipeline.hpp"

namespace sofpi {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

CheckResult below(const std::string& name, double value, double bound) {
  return {name, std::isfinite(value) && value < bound, "error " + sci(value) + " (bound " + sci(bound) + ")"};
}

CheckResult guarded(const std::string& name, const std::function<CheckResult()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

std::vector<CheckResult> run_self_tests() {
  std::vector<CheckResult> out;

  for (SamplingPattern p : {SamplingPattern::radial, SamplingPattern::random_2d, SamplingPattern::random_1d}) {
    const std::string name = "adjoint masked-fourier " + to_string(p);
    out.push_back(guarded(name, [&] {
      const auto mask = make_mask(p, 0.25, default_mask_center(p, 32, 32), 3, 32, 32);
      return below(name, adjoint_relative_error(*make_masked_fourier(mask.mask), 10, 11), 1e-10);
    }));
  }
  out.push_back(guarded("adjoint ray-transform 18 views", [] {
    return below("adjoint ray-transform 18 views", adjoint_relative_error(*make_ray_transform(32, 32, 18), 10, 13),
                 1e-10);
  }));

  out.push_back(guarded("psi cg vs direct solve", [] {
    const auto mask = make_mask(SamplingPattern::radial, 0.25, default_mask_center(SamplingPattern::radial, 16, 16), 5, 16, 16);
    const auto a = make_masked_fourier(mask.mask);
    const Tensor v = random_normal({16, 16}, 1), y = a->apply(random_normal({16, 16}, 2));
    const Tensor cg = psi_forward(v, y, 0.3, *a, CGConfig{1e-12, 200});
    return below("psi cg vs direct solve", max_abs_diff(cg, psi_forward_exact(v, y, 0.3, *a)), 1e-6);
  }));

  out.push_back(guarded("psi gradients", [] {
    const auto mask = make_mask(SamplingPattern::random_2d, 0.3, 0.0, 6, 8, 8);
    const OperatorPtr a = make_masked_fourier(mask.mask);
    const Tensor target = random_normal({8, 8}, 9);
    const ScalarFn f = [&](const std::vector<Var>& in) {
      return squared_norm(psi(in[0], in[1], in[2], a, CGConfig{1e-13, 300}, true) - Var(target));
    };
    const auto r = check_directional(f, {random_normal({8, 8}, 7), random_normal({2, 8, 8}, 8), Tensor::scalar(0.4)},
                                     1e-5, 3, 21);
    return below("psi gradients", r.relative_error, 1e-4);
  }));

  out.push_back(guarded("conv2d gradients", [] {
    const ScalarFn f = [](const std::vector<Var>& in) {
      return squared_norm(leaky_relu(conv2d(in[0], in[1], 2, 1), 0.2));
    };
    const auto r = check_directional(f, {random_normal({2, 8, 8}, 1), random_normal({3, 2, 3, 3}, 2)}, 1e-6, 3, 5);
    return below("conv2d gradients", r.relative_error, 1e-6);
  }));

  out.push_back(guarded("bilinear warp gradients", [] {
    const Tensor id = identity_map(8, 8);
    const ScalarFn f = [&](const std::vector<Var>& in) {
      return squared_norm(sample_bilinear(in[0], Var(id) + in[1], Boundary::zero));
    };
    const auto r = check_directional(f, {random_normal({8, 8}, 3), 0.3 * random_normal({2, 8, 8}, 4)}, 1e-6, 3, 9);
    return below("bilinear warp gradients", r.relative_error, 1e-5);
  }));

  out.push_back(guarded("zero momentum gives identity maps", [] {
    const auto s = epdiff_shoot(Tensor(Shape{2, 16, 16}), KernelConfig{}, IntegratorConfig{});
    const Tensor id = identity_map(16, 16);
    const bool ok = s.phi == id && s.phi_inv == id && svf_exp(Tensor(Shape{2, 16, 16}), IntegratorConfig{}) == id;
    return CheckResult{"zero momentum gives identity maps", ok, ok ? "exact" : "maps differ from identity"};
  }));

  out.push_back(guarded("smoothing keeps constants", [] {
    const Tensor c(Shape{2, 16, 16}, 0.7);
    return below("smoothing keeps constants", max_abs_diff(smooth(c, KernelConfig{}), c), 1e-12);
  }));

  out.push_back(guarded("one-stage pipeline gradient in w", [] {
    PipelineConfig cfg;
    cfg.stages = 1;
    cfg.lambda.base = 4;
    cfg.lambda.wide = 4;
    cfg.gamma.width = 4;
    cfg.init = InitMode::adjoint;
    cfg.cg = {1e-13, 300};
    const auto mask = make_mask(SamplingPattern::random_2d, 0.4, 0.0, 2, 8, 8);
    const OperatorPtr a = make_masked_fourier(mask.mask);
    auto params = init_stages(cfg, 3);
    const Tensor f = 0.5 * (random_normal({8, 8}, 4) + Tensor(Shape{8, 8}, 1.0));
    const Tensor g = f + 0.1 * random_normal({8, 8}, 5);
    const Tensor y = a->apply(f);
    const Tensor t0 = initial_estimate(y, *a, cfg);
    const ScalarFn loss = [&](const std::vector<Var>& in) {
      StageParams p = params[0];
      p.w = in[0];
      const auto states = pipeline_forward(t0, g, y, {p}, cfg, a);
      return pipeline_loss(states, f, Tensor(Shape{2, 8, 8}), LossConfig{{1.0}, {0.1}}).total;
    };
    const auto r = check_directional(loss, {Tensor::scalar(0.3)}, 1e-5, 1, 1);
    return below("one-stage pipeline gradient in w", r.relative_error, 1e-3);
  }));

  out.push_back(guarded("metric sanity", [] {
    const Tensor ref = 0.5 * (random_normal({16, 16}, 1) + Tensor(Shape{16, 16}, 1.0));
    const bool ok = std::abs(psnr(ref + Tensor(Shape{16, 16}, 0.1), ref) - 20.0) < 1e-9 && ssim(ref, ref) == 1.0 &&
                    psnr(ref, ref) == kPsnrIdentical;
    return CheckResult{"metric sanity", ok, ok ? "psnr 20 dB at uniform error 0.1, ssim(x,x) = 1" : "mismatch"};
  }));

  return out;
}

}  // namespace sofpi
