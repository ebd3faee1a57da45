#include "sofpi/pipeline.hpp"

#include <cmath>
#include <fstream>

#include "sofpi/jrrt.hpp"
#include "sofpi/nn.hpp"

namespace sofpi {

double StageParams::rho() const { return rho_cap * sigmoid(0.4 * w.item()); }

Var StageParams::rho_var() const { return rho_from_w(w, rho_cap); }

std::vector<Var> StageParams::vars() const {
  std::vector<Var> out = theta1.vars();
  for (const auto& v : theta2.vars()) out.push_back(v);
  out.push_back(w);
  return out;
}

void StageParams::set_requires_grad(bool on) {
  theta1.set_requires_grad(on);
  theta2.set_requires_grad(on);
  w.node()->requires_grad = on;
}

StageParams StageParams::clone() const {
  return StageParams{theta1.clone(), theta2.clone(), Var(w.value(), w.requires_grad()), rho_cap};
}

std::string to_string(InitMode m) { return m == InitMode::tv ? "tv" : "adjoint"; }

InitMode parse_init_mode(const std::string& name) {
  if (name == "tv") return InitMode::tv;
  if (name == "adjoint") return InitMode::adjoint;
  throw Error("unknown initialisation '" + name + "' (expected tv or adjoint)");
}

KeyValues PipelineConfig::to_key_values() const {
  KeyValues kv;
  kv.set("stages", stages);
  kv.set("init", to_string(init));
  kv.set("tv_alpha", tv.alpha);
  kv.set("tv_iters", tv.iters);
  kv.set("cg_tolerance", cg.rel_tolerance);
  kv.set("cg_max_iters", cg.max_iters);
  kv.set("rho_cap", rho_cap);
  kv.set("rho_init", rho_init);
  kv.set("lambda_base", std::uint64_t{lambda.base});
  kv.set("lambda_wide", std::uint64_t{lambda.wide});
  kv.set("lambda_slope", lambda.slope);
  kv.set("lambda_output_gain", lambda.output_gain);
  kv.set("gamma_width", std::uint64_t{gamma.width});
  kv.set("gamma_residual", gamma.residual ? "true" : "false");
  kv.set("gamma_slope", gamma.slope);
  kv.set("gamma_squaring", gamma.squaring);
  kv.set("kernel_sigma", gamma.kernel.sigma);
  kv.set("kernel_gamma", gamma.kernel.gamma);
  kv.set("shoot_steps", shooting.steps);
  return kv;
}

PipelineConfig PipelineConfig::from_key_values(const KeyValues& kv) {
  PipelineConfig c;
  c.stages = static_cast<int>(kv.get_int("stages", c.stages));
  c.init = parse_init_mode(kv.get("init", to_string(c.init)));
  c.tv.alpha = kv.get_double("tv_alpha", c.tv.alpha);
  c.tv.iters = static_cast<int>(kv.get_int("tv_iters", c.tv.iters));
  c.cg.rel_tolerance = kv.get_double("cg_tolerance", c.cg.rel_tolerance);
  c.cg.max_iters = static_cast<int>(kv.get_int("cg_max_iters", c.cg.max_iters));
  c.rho_cap = kv.get_double("rho_cap", c.rho_cap);
  c.rho_init = kv.get_double("rho_init", c.rho_init);
  c.lambda.base = kv.get_u64("lambda_base", c.lambda.base);
  c.lambda.wide = kv.get_u64("lambda_wide", c.lambda.wide);
  c.lambda.slope = kv.get_double("lambda_slope", c.lambda.slope);
  c.lambda.output_gain = kv.get_double("lambda_output_gain", c.lambda.output_gain);
  c.gamma.width = kv.get_u64("gamma_width", c.gamma.width);
  c.gamma.residual = kv.get("gamma_residual", "true") == "true";
  c.gamma.slope = kv.get_double("gamma_slope", c.gamma.slope);
  c.gamma.squaring = static_cast<int>(kv.get_int("gamma_squaring", c.gamma.squaring));
  c.gamma.kernel.sigma = kv.get_double("kernel_sigma", c.gamma.kernel.sigma);
  c.gamma.kernel.gamma = kv.get_double("kernel_gamma", c.gamma.kernel.gamma);
  c.shooting.steps = static_cast<int>(kv.get_int("shoot_steps", c.shooting.steps));
  if (c.stages < 1) throw Error("pipeline needs at least one stage");
  return c;
}

std::vector<StageParams> init_stages(const PipelineConfig& cfg, std::uint64_t seed) {
  if (cfg.stages < 1) throw Error("pipeline needs at least one stage");
  const double w0 = RhoParam::from_value(cfg.rho_init, cfg.rho_cap).w;
  std::vector<StageParams> out;
  for (int k = 0; k < cfg.stages; ++k) {
    const std::uint64_t s = seed * 1000003u + static_cast<std::uint64_t>(k) * 2;
    out.push_back(StageParams{init_lambda(cfg.lambda, s, k), init_gamma(cfg.gamma, s + 1, k),
                              Var(Tensor::scalar(w0), true), cfg.rho_cap});
  }
  return out;
}

Tensor initial_estimate(const Tensor& y, const ForwardOperator& a, const PipelineConfig& cfg) {
  return cfg.init == InitMode::tv ? tv_reconstruct(y, a, cfg.tv) : a.adjoint(y);
}

DRState initial_state(const Tensor& t0) {
  DRState s;
  s.t = Var(t0);
  return s;
}

DRState stage_forward(const DRState& state, const Var& y, const Var& rho, const PhiMap& phi, const OperatorPtr& a,
                      const CGConfig& cg) {
  const PhiOutput p = phi(state.t);
  DRState out;
  out.stage = state.stage + 1;
  out.f = p.f;
  out.m = p.m;
  out.u = psi(scale(p.f, 2.0) - state.t, y, rho, a, cg);
  out.b = state.t - p.f;
  out.t = out.b + out.u;
  return out;
}

DRState stage_forward(const DRState& state, const Var& g, const Var& y, const StageParams& p,
                      const PipelineConfig& cfg, const OperatorPtr& a) {
  const PhiMap phi = [&](const Var& t) { return phi_forward(t, g, cfg.lambda, p.theta1, cfg.gamma, p.theta2); };
  return stage_forward(state, y, p.rho_var(), phi, a, cfg.cg);
}

std::vector<DRState> pipeline_forward(const Tensor& t0, const Tensor& g, const Tensor& y,
                                      const std::vector<StageParams>& params, const PipelineConfig& cfg,
                                      const OperatorPtr& a, int count) {
  const int n = count < 0 ? static_cast<int>(params.size()) : count;
  if (n > static_cast<int>(params.size()))
    throw Error("pipeline_forward: " + std::to_string(n) + " stages requested, " + std::to_string(params.size()) +
                " available");
  const Var gv(g), yv(y);
  std::vector<DRState> states{initial_state(t0)};
  for (int k = 0; k < n; ++k) states.push_back(stage_forward(states.back(), gv, yv, params[k], cfg, a));
  return states;
}

LossConfig LossConfig::defaults(int stages) {
  LossConfig c;
  for (int i = 1; i <= stages; ++i) {
    c.alpha.push_back(std::ldexp(1.0, i - stages));
    c.beta.push_back(0.1 * std::ldexp(1.0, i - stages));
  }
  return c;
}

LossValue pipeline_loss(const std::vector<DRState>& states, const Tensor& f, const Tensor& m_tilde,
                        const LossConfig& cfg) {
  const std::size_t k = states.size() - 1;
  if (k == 0) throw Error("pipeline_loss needs at least one stage");
  if (cfg.alpha.size() < k || cfg.beta.size() < k)
    throw Error("loss weights cover " + std::to_string(std::min(cfg.alpha.size(), cfg.beta.size())) + " stages, " +
                std::to_string(k) + " present");
  const Var fv(f), mv(m_tilde);
  LossValue out;
  Var total;
  for (std::size_t i = 1; i <= k; ++i) {
    const Var img = squared_norm(states[i].u - fv);
    const Var mom = squared_norm(states[i].m - mv);
    out.image.push_back(img.item());
    out.momentum.push_back(mom.item());
    Var term = scale(img, cfg.alpha[i - 1]) + scale(mom, cfg.beta[i - 1]);
    if (i == k) term = term + scale(img, cfg.alpha[k - 1]);
    total = total.defined() ? total + term : term;
  }
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw Error("Adam parameters must be leaves");
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& x = p.mutable_value();
    for (std::size_t j = 0; j < x.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      x[j] -= cfg_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps);
    }
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::size_t n = 0;
  for (const auto& e : epochs) n = std::max({n, e.image.size(), e.rho.size()});
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "phase,stage,epoch,loss";
  for (const char* col : {"image", "momentum", "rho"})
    for (std::size_t i = 1; i <= n; ++i) os << ',' << col << '_' << i;
  os << '\n';
  auto cells = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < n; ++i) os << ',' << (i < v.size() ? format_double(v[i]) : "");
  };
  for (const auto& e : epochs) {
    os << e.phase << ',' << e.stage << ',' << e.epoch << ',' << format_double(e.loss);
    cells(e.image);
    cells(e.momentum);
    cells(e.rho);
    os << '\n';
  }
  os << "# initial_loss=" << format_double(initial_loss) << " final_loss=" << format_double(final_loss) << '\n';
}

double dataset_loss(const std::vector<StageParams>& params, const std::vector<TrainingSample>& samples,
                    const PipelineConfig& cfg, const LossConfig& loss, const OperatorPtr& a) {
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& s : samples) {
    const Tensor t0 = s.t0.empty() ? initial_estimate(s.y, *a, cfg) : s.t0;
    total += pipeline_loss(pipeline_forward(t0, s.g, s.y, params, cfg, a), s.f, s.m, loss).total.item();
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

namespace {

std::vector<double> rho_values(const std::vector<StageParams>& params) {
  std::vector<double> r;
  for (const auto& p : params) r.push_back(p.rho());
  return r;
}

void run_phase(const std::string& phase, int upto, std::vector<Var> trainable, int epochs,
               std::vector<StageParams>& params, const std::vector<TrainingSample>& samples,
               const PipelineConfig& cfg, const LossConfig& loss, const TrainConfig& tc, const OperatorPtr& a,
               TrainHistory& history) {
  for (auto& p : params) p.set_requires_grad(false);
  for (auto& v : trainable) v.node()->requires_grad = true;
  Adam opt(std::move(trainable), tc.adam);
  const std::size_t n = samples.size();
  const std::size_t batch = static_cast<std::size_t>(std::max(1, tc.batch));
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec;
    rec.phase = phase;
    rec.stage = upto;
    rec.epoch = epoch;
    rec.image.assign(static_cast<std::size_t>(upto), 0.0);
    rec.momentum.assign(static_cast<std::size_t>(upto), 0.0);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      opt.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[i];
        const auto states = pipeline_forward(s.t0, s.g, s.y, params, cfg, a, upto);
        const LossValue lv = pipeline_loss(states, s.f, s.m, loss);
        const double value = lv.total.item();
        if (!std::isfinite(value))
          throw Error("training loss became non-finite (" + phase + " phase, stage " + std::to_string(upto) +
                      ", epoch " + std::to_string(epoch) + ", sample " + std::to_string(i) + ")");
        backward(scale(lv.total, 1.0 / static_cast<double>(end - start)));
        rec.loss += value / static_cast<double>(n);
        for (std::size_t k = 0; k < lv.image.size(); ++k) {
          rec.image[k] += lv.image[k] / static_cast<double>(n);
          rec.momentum[k] += lv.momentum[k] / static_cast<double>(n);
        }
      }
      opt.step();
    }
    rec.rho = rho_values(params);
    if (tc.on_epoch) tc.on_epoch(phase, upto, epoch, rec.loss);
    history.epochs.push_back(std::move(rec));
  }
  for (auto& p : params) p.set_requires_grad(true);
}

}  // namespace

TrainHistory train(std::vector<StageParams>& params, std::vector<TrainingSample>& samples, const PipelineConfig& cfg,
                   const LossConfig& loss, const TrainConfig& tc, const OperatorPtr& a) {
  if (params.size() != static_cast<std::size_t>(cfg.stages))
    throw Error("train: " + std::to_string(params.size()) + " stage parameter sets for " +
                std::to_string(cfg.stages) + " stages");
  if (samples.empty()) throw Error("train: empty training set");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    if (s.m.empty()) throw Error("train: sample " + std::to_string(i) + " has no ground-truth momentum");
    if (s.t0.empty()) s.t0 = initial_estimate(s.y, *a, cfg);
  }
  TrainHistory history;
  history.initial_loss = dataset_loss(params, samples, cfg, loss, a);
  if (tc.pretrain_epochs > 0) {
    for (int k = 1; k <= cfg.stages; ++k) {
      if (k > 1 && tc.warm_start_stages) {
        const int stage = params[k - 1].theta1.stage;
        params[k - 1] = params[k - 2].clone();
        params[k - 1].theta1.stage = params[k - 1].theta2.stage = stage;
      }
      run_phase("pretrain", k, params[k - 1].vars(), tc.pretrain_epochs, params, samples, cfg, loss, tc, a, history);
    }
  }
  if (tc.joint_epochs > 0) {
    std::vector<Var> all;
    for (const auto& p : params)
      for (const auto& v : p.vars()) all.push_back(v);
    run_phase("joint", cfg.stages, std::move(all), tc.joint_epochs, params, samples, cfg, loss, tc, a, history);
  }
  history.final_loss = dataset_loss(params, samples, cfg, loss, a);
  return history;
}

std::string to_string(InferMode m) { return m == InferMode::net_output ? "net-output" : "shoot-warp"; }

Tensor shoot_warp(const Tensor& m, const Tensor& g, const KernelConfig& k, const IntegratorConfig& integ) {
  return warp(g, epdiff_shoot(m, k, integ).phi);
}

Inference infer(const Tensor& g, const Tensor& y, const std::vector<StageParams>& params, const PipelineConfig& cfg,
                const OperatorPtr& a, InferMode mode, const Tensor* t0) {
  if (params.empty()) throw Error("infer: no trained stages");
  NoGradGuard guard;
  const Tensor start = t0 ? *t0 : initial_estimate(y, *a, cfg);
  const auto states = pipeline_forward(start, g, y, params, cfg, a);
  Inference out;
  for (std::size_t k = 1; k < states.size(); ++k) out.stage_u.push_back(states[k].u.value());
  const StageParams& last = params.back();
  const Var gv(g);
  const Var m = lambda_forward(states.back().t, gv, cfg.lambda, last.theta1);
  out.m = m.value();
  if (mode == InferMode::net_output)
    out.u = gamma_forward(m, gv, cfg.gamma, last.theta2).value();
  else
    out.u = shoot_warp(out.m, g, cfg.gamma.kernel, cfg.shooting);
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const std::vector<StageParams>& params,
                     const PipelineConfig& cfg, const Adam* optimizer) {
  std::filesystem::create_directories(dir);
  cfg.to_key_values().write(dir / "pipeline.txt");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto stage_dir = dir / ("stage_" + std::to_string(k));
    save_weights(stage_dir / "lambda", params[k].theta1, to_key_values(cfg.lambda));
    save_weights(stage_dir / "gamma", params[k].theta2, to_key_values(cfg.gamma));
    KeyValues rho;
    rho.set("w", params[k].w.item());
    rho.set("cap", params[k].rho_cap);
    rho.set("rho", params[k].rho());
    rho.write(stage_dir / "rho.txt");
  }
  if (optimizer) {
    const auto opt_dir = dir / "optimizer";
    std::filesystem::create_directories(opt_dir);
    KeyValues kv;
    kv.set("steps", static_cast<std::uint64_t>(optimizer->steps()));
    kv.set("count", std::uint64_t{optimizer->first_moments().size()});
    kv.write(opt_dir / "adam.txt");
    for (std::size_t i = 0; i < optimizer->first_moments().size(); ++i) {
      write_jrrt(opt_dir / ("m_" + std::to_string(i) + ".jrrt"), optimizer->first_moments()[i]);
      write_jrrt(opt_dir / ("v_" + std::to_string(i) + ".jrrt"), optimizer->second_moments()[i]);
    }
  }
}

std::vector<StageParams> load_checkpoint(const std::filesystem::path& dir, PipelineConfig* cfg_out) {
  const PipelineConfig cfg = PipelineConfig::from_key_values(KeyValues::read(dir / "pipeline.txt"));
  const auto reference = init_stages(cfg, 0);
  std::vector<StageParams> params;
  for (int k = 0; k < cfg.stages; ++k) {
    const auto stage_dir = dir / ("stage_" + std::to_string(k));
    StageParams p;
    p.theta1 = load_weights(stage_dir / "lambda");
    p.theta2 = load_weights(stage_dir / "gamma");
    check_compatible(p.theta1, reference[k].theta1, "stage " + std::to_string(k) + " lambda");
    check_compatible(p.theta2, reference[k].theta2, "stage " + std::to_string(k) + " gamma");
    const KeyValues rho = KeyValues::read(stage_dir / "rho.txt");
    p.w = Var(Tensor::scalar(rho.get_double("w")), true);
    p.rho_cap = rho.get_double("cap");
    params.push_back(std::move(p));
  }
  if (cfg_out) *cfg_out = cfg;
  return params;
}

}  // namespace sofpi
