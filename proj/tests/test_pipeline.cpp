#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sofpi/gradcheck.hpp"
#include "sofpi/pipeline.hpp"

using namespace sofpi;

namespace {

PipelineConfig tiny_config(int stages) {
  PipelineConfig cfg;
  cfg.stages = stages;
  cfg.lambda.base = 4;
  cfg.lambda.wide = 4;
  cfg.gamma.width = 4;
  cfg.tv.iters = 20;
  return cfg;
}

Tensor image(std::size_t n, std::uint64_t seed) {
  Tensor t = random_normal({n, n}, seed);
  for (double& x : t.vec()) x = 0.5 + 0.2 * std::tanh(x);
  return t;
}

OperatorPtr fourier(std::size_t n) {
  return make_masked_fourier(make_mask(SamplingPattern::random_2d, 0.4, 0.0, 2, n, n).mask);
}

std::vector<TrainingSample> toy_samples(std::size_t count, std::size_t n, const ForwardOperator& a) {
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    TrainingSample s;
    s.f = image(n, 10 + i);
    s.g = image(n, 100 + i);
    s.y = a.apply(s.f);
    s.m = 0.3 * random_normal({2, n, n}, 200 + i);
    out.push_back(s);
  }
  return out;
}

PhiMap constant_phi(const std::function<Var(const Var&)>& f, std::size_t n) {
  return [f, n](const Var& t) { return PhiOutput{f(t), Var(Tensor(Shape{2, n, n}))}; };
}

}  // namespace

TEST(StageForward, PassthroughRecursion) {
  const std::size_t n = 6;
  const OperatorPtr a = make_identity_operator({n, n});
  const Tensor y = random_normal({n, n}, 1);
  const double rho = 0.5;
  DRState s = initial_state(random_normal({n, n}, 2));
  const PhiMap phi = constant_phi([](const Var& t) { return t; }, n);
  double prev = max_abs_diff(s.t.value(), y);
  for (int k = 0; k < 20; ++k) {
    const Tensor t = s.t.value();
    s = stage_forward(s, Var(y), Var(Tensor::scalar(rho)), phi, a, {1e-14, 50});
    EXPECT_LT(max_abs_diff(s.t.value(), (1.0 / (1.0 + rho)) * (y + rho * t)), 1e-12);
    const double err = max_abs_diff(s.t.value(), y);
    EXPECT_NEAR(err, prev * rho / (1.0 + rho), 1e-10);
    prev = err;
  }
}

TEST(StageForward, BookkeepingIsExact) {
  const std::size_t n = 8;
  const OperatorPtr a = fourier(n);
  const DRState s0 = initial_state(image(n, 3));
  const PhiMap phi = constant_phi([](const Var& t) { return scale(t, 0.7); }, n);
  const DRState s1 = stage_forward(s0, Var(a->apply(image(n, 4))), Var(Tensor::scalar(0.3)), phi, a, {});
  EXPECT_EQ(s1.b.value(), s0.t.value() - s1.f.value());
  EXPECT_EQ(s1.t.value(), s1.b.value() + s1.u.value());
  EXPECT_EQ(s1.stage, 1);
}

TEST(StageForward, DouglasRachfordReachesCompositeMinimiser) {
  // Phi(t) = argmin_x tau/2 ||x - z||^2 + 1/2 ||x - t||^2 and Psi the resolvent
  // of 1/2 ||x - y||^2 with weight rho: the fixed point minimises
  // rho tau/2 ||x - z||^2 + 1/2 ||x - y||^2, i.e. x* = (y + rho tau z) / (1 + rho tau).
  const std::size_t n = 8;
  const OperatorPtr a = make_identity_operator({n, n});
  for (double tau : {0.5, 2.0})
    for (double rho : {0.2, 0.7}) {
      const Tensor z = random_normal({n, n}, 5), y = random_normal({n, n}, 6);
      const PhiMap phi =
          constant_phi([&](const Var& t) { return scale(t + Var(tau * z), 1.0 / (1.0 + tau)); }, n);
      const Tensor expected = (1.0 / (1.0 + rho * tau)) * (y + (rho * tau) * z);
      DRState s = initial_state(Tensor(Shape{n, n}));
      for (int k = 0; k < 200; ++k) s = stage_forward(s, Var(y), Var(Tensor::scalar(rho)), phi, a, {1e-14, 50});
      EXPECT_LT(max_abs_diff(s.f.value(), expected), 1e-6) << "tau " << tau << " rho " << rho;
      EXPECT_LT(max_abs_diff(s.u.value(), expected), 1e-6) << "tau " << tau << " rho " << rho;
    }
}

TEST(Pipeline, OneStageEqualsStageForward) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(1);
  const OperatorPtr a = fourier(n);
  const auto params = init_stages(cfg, 3);
  const Tensor g = image(n, 1), y = a->apply(image(n, 2));
  const Tensor t0 = initial_estimate(y, *a, cfg);
  const auto states = pipeline_forward(t0, g, y, params, cfg, a);
  ASSERT_EQ(states.size(), 2u);
  const DRState direct = stage_forward(initial_state(t0), Var(g), Var(y), params[0], cfg, a);
  EXPECT_EQ(states[1].u.value(), direct.u.value());
  EXPECT_EQ(states[1].t.value(), direct.t.value());
}

TEST(Pipeline, Deterministic) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(2);
  const OperatorPtr a = fourier(n);
  const Tensor g = image(n, 1), y = a->apply(image(n, 2));
  const Tensor t0 = initial_estimate(y, *a, cfg);
  const auto s1 = pipeline_forward(t0, g, y, init_stages(cfg, 4), cfg, a);
  const auto s2 = pipeline_forward(t0, g, y, init_stages(cfg, 4), cfg, a);
  EXPECT_EQ(s1.back().u.value(), s2.back().u.value());
}

TEST(Loss, PerfectPredictionsGiveZero) {
  const Tensor f = image(4, 1), m = random_normal({2, 4, 4}, 2);
  DRState s;
  s.u = Var(f);
  s.m = Var(m);
  EXPECT_EQ(pipeline_loss({DRState{}, s, s}, f, m, LossConfig::defaults(2)).total.item(), 0.0);
}

TEST(Loss, FinalStageCountsTwice) {
  const Tensor f(Shape{2, 2});
  DRState s;
  s.u = Var(Tensor(Shape{2, 2}, std::vector<double>{2.0, 0.0, 0.0, 0.0}));
  s.m = Var(Tensor(Shape{2, 2, 2}));
  EXPECT_EQ(pipeline_loss({DRState{}, s}, f, Tensor(Shape{2, 2, 2}), LossConfig{{1.0}, {0.0}}).total.item(), 8.0);
}

TEST(Loss, DefaultWeightsDoubleTowardsTheEnd) {
  const auto c = LossConfig::defaults(3);
  EXPECT_EQ(c.alpha, (std::vector<double>{0.25, 0.5, 1.0}));
  EXPECT_EQ(c.beta, (std::vector<double>{0.025, 0.05, 0.1}));
}

TEST(Loss, GradientInWeightsAndRhoMatchesFiniteDifferences) {
  const std::size_t n = 8;
  PipelineConfig cfg = tiny_config(1);
  cfg.cg = {1e-13, 300};
  const OperatorPtr a = fourier(n);
  const auto params = init_stages(cfg, 5);
  const Tensor f = image(n, 1), g = image(n, 2), y = a->apply(f), m = 0.3 * random_normal({2, n, n}, 3);
  const Tensor t0 = initial_estimate(y, *a, cfg);
  const LossConfig lc{{1.0}, {0.1}};
  const ScalarFn loss = [&](const std::vector<Var>& in) {
    StageParams p = params[0].clone();
    for (auto& q : p.theta1.params)
      if (q.name == "enc1.weight") q.value = in[0];
    for (auto& q : p.theta2.params)
      if (q.name == "res1.weight") q.value = in[1];
    p.w = in[2];
    return pipeline_loss(pipeline_forward(t0, g, y, {p}, cfg, a), f, m, lc).total;
  };
  const std::vector<Tensor> inputs{params[0].theta1.get("enc1.weight").value(),
                                   params[0].theta2.get("res1.weight").value(), params[0].w.value()};
  for (std::size_t input = 0; input < 3; ++input) {
    const auto r = check_coordinate(loss, inputs, input, 0, 1e-5);
    EXPECT_LT(r.relative_error, 1e-3) << "input " << input;
  }
}

TEST(Adam, MatchesHandComputedSteps) {
  Var p(Tensor::from({1.0, -2.0}), true);
  Adam opt({p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  const double g1[] = {0.5, -3.0}, g2[] = {-1.0, 2.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    opt.zero_grad();
    backward(sum(p * Var(Tensor::from({g[0], g[1]}))));
    opt.step();
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value()[i], x[i], 1e-14);
    }
  }
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(2);
  const OperatorPtr a = fourier(n);
  auto samples = toy_samples(3, n, *a);
  auto params = init_stages(cfg, 6);
  const auto before = init_stages(cfg, 6);
  TrainConfig tc;
  tc.pretrain_epochs = 1;
  tc.joint_epochs = 2;
  tc.adam.lr = 0.0;
  tc.warm_start_stages = false;
  const auto h = train(params, samples, cfg, LossConfig::defaults(2), tc, a);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto x = params[k].vars(), y = before[k].vars();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].value(), y[i].value());
  }
  EXPECT_EQ(h.initial_loss, h.final_loss);
}

TEST(Train, WarmStartCopiesPreviousStage) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(2);
  const OperatorPtr a = fourier(n);
  auto samples = toy_samples(2, n, *a);
  auto params = init_stages(cfg, 6);
  TrainConfig tc;
  tc.pretrain_epochs = 1;
  tc.joint_epochs = 0;
  tc.adam.lr = 0.0;
  train(params, samples, cfg, LossConfig::defaults(2), tc, a);
  const auto x = params[0].vars(), y = params[1].vars();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].value(), y[i].value());
  EXPECT_EQ(params[1].theta1.stage, 1);
}

TEST(Train, RhoStaysInRangeAndLossFalls) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(2);
  const OperatorPtr a = fourier(n);
  auto samples = toy_samples(4, n, *a);
  auto params = init_stages(cfg, 7);
  TrainConfig tc;
  tc.joint_epochs = 15;
  tc.adam.lr = 1e-2;
  const auto h = train(params, samples, cfg, LossConfig::defaults(2), tc, a);
  EXPECT_LT(h.final_loss, h.initial_loss);
  for (const auto& e : h.epochs)
    for (double r : e.rho) {
      EXPECT_GT(r, 0.0);
      EXPECT_LT(r, 0.8);
    }
}

TEST(Train, NonFiniteLossIsReported) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(1);
  const OperatorPtr a = fourier(n);
  auto samples = toy_samples(2, n, *a);
  samples[1].f[0] = std::nan("");
  auto params = init_stages(cfg, 8);
  TrainConfig tc;
  tc.joint_epochs = 1;
  try {
    train(params, samples, cfg, LossConfig::defaults(1), tc, a);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(Infer, ZeroMomentumShootWarpReturnsTemplate) {
  const std::size_t n = 8;
  const PipelineConfig cfg = tiny_config(2);
  const OperatorPtr a = fourier(n);
  auto params = init_stages(cfg, 9);
  for (auto& p : params) p.theta1.zero();
  const Tensor g = image(n, 1), y = a->apply(image(n, 2));
  const auto shoot = infer(g, y, params, cfg, a, InferMode::shoot_warp);
  EXPECT_EQ(max_abs(shoot.m), 0.0);
  EXPECT_EQ(shoot.u, g);
  const auto net = infer(g, y, params, cfg, a, InferMode::net_output);
  EXPECT_EQ(net.u.shape(), shoot.u.shape());
  EXPECT_EQ(net.stage_u.size(), 2u);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sofpi_checkpoint";
  std::filesystem::remove_all(dir);
  PipelineConfig cfg = tiny_config(2);
  cfg.rho_init = 0.3;
  auto params = init_stages(cfg, 10);
  params[1].w.mutable_value()[0] = 1.25;
  Adam opt(params[0].vars(), {});
  save_checkpoint(dir, params, cfg, &opt);
  PipelineConfig back_cfg;
  const auto back = load_checkpoint(dir, &back_cfg);
  EXPECT_EQ(back_cfg.to_key_values().text(), cfg.to_key_values().text());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto x = back[k].vars(), y = params[k].vars();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].value(), y[i].value());
  }
  EXPECT_EQ(back[1].rho(), params[1].rho());
  std::filesystem::remove_all(dir);
}

TEST(Stages, RhoStartsAtConfiguredValue) {
  PipelineConfig cfg = tiny_config(3);
  for (const auto& p : init_stages(cfg, 1)) EXPECT_NEAR(p.rho(), cfg.rho_init, 1e-14);
}
