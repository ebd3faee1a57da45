// The unrolled Douglas-Rachford pipeline: N stages of
//   f = Phi(t, g),  u = Psi(2f - t, y, rho),  b = t - f,  t <- b + u,
// its training loss, stage-wise and joint training with Adam, and the two
// inference paths.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sofpi/inversion.hpp"
#include "sofpi/regnets.hpp"

namespace sofpi {

struct DRState {
  int stage = 0;
  Var t;  // iterate after this stage (t^{k+1}); for the initial state, t^0
  Var b;  // t^k - f^{k+1}
  Var u;  // reconstruction u^{k+1}
  Var f;  // registration prediction f^{k+1}
  Var m;  // predicted momentum
};

struct StageParams {
  NetWeights theta1;
  NetWeights theta2;
  /// Scalar leaf; rho = cap * sigmoid(0.4 w).
  Var w;
  double rho_cap = 0.8;

  double rho() const;
  Var rho_var() const;
  std::vector<Var> vars() const;
  void set_requires_grad(bool on);
  StageParams clone() const;
};

enum class InitMode { tv, adjoint };

std::string to_string(InitMode m);
InitMode parse_init_mode(const std::string& name);

struct PipelineConfig {
  int stages = 3;
  LambdaArch lambda;
  GammaArch gamma;
  InitMode init = InitMode::tv;
  TVConfig tv;
  CGConfig cg;
  double rho_cap = 0.8;
  /// Starting rho of every stage.
  double rho_init = 0.4;
  /// EPDiff integration for shoot-warp inference.
  IntegratorConfig shooting;

  KeyValues to_key_values() const;
  static PipelineConfig from_key_values(const KeyValues& kv);
};

std::vector<StageParams> init_stages(const PipelineConfig& cfg, std::uint64_t seed);

/// t^0 from the measurement: TV reconstruction or the zero-filled adjoint.
Tensor initial_estimate(const Tensor& y, const ForwardOperator& a, const PipelineConfig& cfg);

using PhiMap = std::function<PhiOutput(const Var& t)>;

DRState initial_state(const Tensor& t0);

/// One stage with an arbitrary registration map phi.
DRState stage_forward(const DRState& state, const Var& y, const Var& rho, const PhiMap& phi, const OperatorPtr& a,
                      const CGConfig& cg);
DRState stage_forward(const DRState& state, const Var& g, const Var& y, const StageParams& p,
                      const PipelineConfig& cfg, const OperatorPtr& a);

/// Initial state followed by `count` stages (all stages when count < 0).
std::vector<DRState> pipeline_forward(const Tensor& t0, const Tensor& g, const Tensor& y,
                                      const std::vector<StageParams>& params, const PipelineConfig& cfg,
                                      const OperatorPtr& a, int count = -1);

struct LossConfig {
  std::vector<double> alpha;
  std::vector<double> beta;

  /// alpha_i = 2^{i-N}, beta_i = 0.1 * 2^{i-N}.
  static LossConfig defaults(int stages);
};

struct LossValue {
  Var total;
  std::vector<double> image;     // ||u^i - f||^2
  std::vector<double> momentum;  // ||m^i - m~||^2
};

/// alpha_K ||u^K - f||^2 + sum_i alpha_i ||u^i - f||^2 + sum_i beta_i ||m^i - m~||^2
/// over the stages present in `states` (K = last one).
LossValue pipeline_loss(const std::vector<DRState>& states, const Tensor& f, const Tensor& m_tilde,
                        const LossConfig& cfg);

struct TrainingSample {
  Tensor g, y, f, m;
  /// Cached t^0; filled by train() when empty.
  Tensor t0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);
  /// Applies one update from the gradients accumulated in the parameters.
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  int batch = 1;
  /// Epochs per stage in the stage-wise phase.
  int pretrain_epochs = 0;
  /// Epochs of joint training of all stages.
  int joint_epochs = 50;
  /// Start stage k from the weights pretrained for stage k-1.
  bool warm_start_stages = true;
  AdamConfig adam;
  /// Progress callback (phase, stage, epoch, loss); may be empty.
  std::function<void(const std::string&, int, int, double)> on_epoch;
};

struct EpochRecord {
  std::string phase;  // "pretrain" or "joint"
  int stage = 0;      // stages included in the loss
  int epoch = 0;
  double loss = 0.0;  // mean per-sample loss over the epoch
  std::vector<double> image;
  std::vector<double> momentum;
  std::vector<double> rho;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Mean full N-stage loss over the training set before and after training.
  double initial_loss = 0.0;
  double final_loss = 0.0;

  void write_csv(const std::filesystem::path& path) const;
};

/// Mean full loss over the samples without recording a graph.
double dataset_loss(const std::vector<StageParams>& params, const std::vector<TrainingSample>& samples,
                    const PipelineConfig& cfg, const LossConfig& loss, const OperatorPtr& a);

/// Trains params in place. Throws when a loss becomes non-finite, naming the
/// stage and sample.
TrainHistory train(std::vector<StageParams>& params, std::vector<TrainingSample>& samples, const PipelineConfig& cfg,
                   const LossConfig& loss, const TrainConfig& tc, const OperatorPtr& a);

enum class InferMode { net_output, shoot_warp };

std::string to_string(InferMode m);

struct Inference {
  Tensor u;
  Tensor m;
  /// u^1..u^N of the unrolled stages.
  std::vector<Tensor> stage_u;
};

Inference infer(const Tensor& g, const Tensor& y, const std::vector<StageParams>& params, const PipelineConfig& cfg,
                const OperatorPtr& a, InferMode mode, const Tensor* t0 = nullptr);

/// g o phi(1) for phi shot from m.
Tensor shoot_warp(const Tensor& m, const Tensor& g, const KernelConfig& k, const IntegratorConfig& integ);

void save_checkpoint(const std::filesystem::path& dir, const std::vector<StageParams>& params,
                     const PipelineConfig& cfg, const Adam* optimizer = nullptr);
std::vector<StageParams> load_checkpoint(const std::filesystem::path& dir, PipelineConfig* cfg = nullptr);

}  // namespace sofpi
