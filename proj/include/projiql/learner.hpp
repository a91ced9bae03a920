#pragma once

// Proj-IQL learner with IQL and weighted-BC baselines behind one training interface.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "projiql/datasets.hpp"
#include "projiql/envs.hpp"
#include "projiql/numerics.hpp"
#include "projiql/policies.hpp"

namespace projiql::learn {

enum class Mode { proj_iql, iql, wbc };
/// Order of the per-sample clip and the batch mean when reducing tau_proj.
enum class TauReduction { clip_then_mean, mean_then_clip };
/// Starting point of the learned policy: fresh random weights or a copy of the cloned behavior policy.
enum class PolicyInit { random, behavior };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
std::string to_string(TauReduction r);
TauReduction tau_reduction_from_string(const std::string& s);
std::string to_string(PolicyInit p);
PolicyInit policy_init_from_string(const std::string& s);

struct LearnerConfig {
  Mode mode = Mode::proj_iql;
  double inverse_temperature = 3.0;  // 1 / lambda
  double expectile_tau = 0.7;        // used by mode iql
  double polyak_coef = 5e-3;
  double clip_low = 0.5;
  double clip_high = 1.0;
  TauReduction tau_reduction = TauReduction::clip_then_mean;
  double advantage_cap = 100.0;
  double density_floor = 1e-8;
  double gamma = 0.99;

  double lr_q = 3e-4;
  double lr_v = 3e-4;
  double lr_policy = 3e-4;
  double lr_bc = 3e-4;
  std::size_t batch_size = 256;
  /// BC pretraining has its own batch so batch-size ablations share one behavior model.
  std::size_t bc_batch_size = 256;
  std::size_t steps = 10000;
  std::size_t bc_steps = 10000;

  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  std::size_t n_critics = 2;
  double policy_dropout = 0.0;
  bool state_dependent_std = true;
  double log_std_low = -5.0;
  double log_std_high = 2.0;
  PolicyInit policy_init = PolicyInit::random;

  std::size_t eval_every = 0;  // 0 evaluates only after the last step
  std::size_t eval_episodes = 10;

  void validate() const;
};

// ---------------------------------------------------------------------------
// tau_proj

struct TauProj {
  std::vector<double> per_sample;  // clipped values (raw values under mean_then_clip)
  double batch_value = 0.5;
  double coefficient = 0.0;        // beta . phi / |phi|^2
};

/// Projection coefficient of the behavior-density vector onto the policy-density vector.
TauProj tau_proj(std::span<const double> beta, std::span<const double> phi, double low = 0.5, double high = 1.0,
                 TauReduction reduction = TauReduction::clip_then_mean);
/// Same quantity from log-densities; rescales phi internally so it cannot underflow.
TauProj tau_proj_from_log(std::span<const double> log_beta, std::span<const double> log_phi, double low = 0.5,
                          double high = 1.0, TauReduction reduction = TauReduction::clip_then_mean);

// ---------------------------------------------------------------------------
// Losses. Every input that must not receive gradient is detached inside the loss.

/// mean l2_tau(q_hat - v); q_hat is treated as a constant.
nn::Var value_loss(const nn::Var& q_hat, const nn::Var& v, double tau);
/// mean (r + gamma (1 - done) v_next - q)^2; v_next is treated as a constant.
nn::Var q_loss(const nn::Var& q, const nn::Tensor& rewards, const nn::Tensor& dones, const nn::Var& v_next,
               double gamma);

struct PolicyWeights {
  std::vector<double> ratio;         // pi_bar / max(pi_beta, floor)
  std::vector<double> snis;          // n r_i / sum r (all ones when unused)
  std::vector<double> exp_advantage; // min(exp(A / lambda), cap)
  std::vector<double> total;         // snis * exp_advantage
};

/// Self-normalized importance weights n r_i / sum_j r_j. Throws ValidationError when sum r = 0.
std::vector<double> snis_weights(std::span<const double> ratios);
PolicyWeights policy_weights(std::span<const double> log_pi_bar, std::span<const double> log_beta,
                             std::span<const double> advantages, const LearnerConfig& config);
/// -mean(w f log pi). log_pi_bar, log_beta, q and v are all detached; only log_pi carries gradient.
nn::Var policy_loss(const nn::Var& log_pi, const nn::Var& log_pi_bar, const nn::Var& log_beta, const nn::Var& q,
                    const nn::Var& v, const LearnerConfig& config, PolicyWeights* weights = nullptr);

/// target <- (1 - c) target + c source.
void soft_update(nn::MlpParams& target, const nn::MlpParams& source, double coefficient);

// ---------------------------------------------------------------------------
// Training

struct TrainState {
  std::vector<nn::MlpParams> q;
  std::vector<nn::MlpParams> q_target;
  nn::MlpParams v;
  pol::Policy policy;
  pol::Policy behavior;
  std::vector<nn::AdamState> q_adam;
  nn::AdamState v_adam;
  nn::AdamState policy_adam;
  std::size_t step = 0;
  std::uint64_t seed = 0;
};

struct MetricsRow {
  std::size_t step = 0;
  double tau_proj = 0.0;
  double loss_v = 0.0;
  double loss_q = 0.0;
  double loss_pi = 0.0;
  std::optional<double> eval_return;
  std::optional<double> eval_success;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_discounted_return = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
  std::vector<double> bc_losses;
  std::optional<EvalResult> final_eval;
};

/// Network shapes, behavior cloning and initialisation (Algorithm 1 up to the main loop).
TrainState init_state(const data::OfflineDataset& dataset, const LearnerConfig& config, std::uint64_t seed,
                      std::vector<double>* bc_losses = nullptr);
/// One main-loop iteration: sample, tau_proj, update psi, theta, phi, soft-update the target.
MetricsRow train_step(TrainState& state, const data::OfflineDataset& dataset, const LearnerConfig& config);

using ProgressFn = std::function<void(const MetricsRow&)>;
TrainResult train(const data::OfflineDataset& dataset, const LearnerConfig& config, std::uint64_t seed,
                  const envs::Environment* eval_env = nullptr, const ProgressFn& progress = {});

/// Deterministic (mean-action) rollouts; episode i uses the stream (seed, i).
EvalResult evaluate(const pol::Policy& policy, const data::DatasetMetadata& meta, const envs::Environment& env,
                    std::size_t episodes, std::uint64_t seed);
EvalResult evaluate(const envs::RolloutPolicy& policy, const envs::Environment& env, std::size_t episodes,
                    std::uint64_t seed);

/// Q-network input rows: encoded states followed by the action encoding.
nn::Tensor q_input(const data::DatasetMetadata& meta, std::span<const double> states, std::span<const double> actions);
/// min over critics of Q(s, a), tape-free.
std::vector<double> q_values(const std::vector<nn::MlpParams>& critics, const nn::Tensor& input);

inline constexpr const char* kMetricsHeader = "step,tau_proj,loss_v,loss_q,loss_pi,eval_return,eval_success";
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

void save_state(const TrainState& state, const LearnerConfig& config, const std::string& path);

}  // namespace projiql::learn
