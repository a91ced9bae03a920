#pragma once

// Policy networks (diagonal Gaussian and categorical heads), densities, sampling,
// behavior cloning and checkpoints.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "projiql/datasets.hpp"
#include "projiql/envs.hpp"
#include "projiql/numerics.hpp"

namespace projiql::pol {

enum class PolicyKind { gaussian, categorical };

std::string to_string(PolicyKind kind);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::gaussian;
  std::size_t observation_dim = 0;
  /// Action components (Gaussian) or number of actions (categorical).
  std::size_t action_dim = 0;
  std::vector<std::size_t> hidden = {64, 64};
  nn::Activation activation = nn::Activation::relu;
  double dropout = 0.0;
  double log_std_low = -5.0;
  double log_std_high = 2.0;
  /// Log-std produced by the network; otherwise a single trainable vector.
  bool state_dependent_std = true;

  void validate() const;

  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

/// Policy shape matching a dataset (one-hot input for index states).
PolicyConfig config_for(const data::DatasetMetadata& meta);

class Policy {
 public:
  Policy() = default;
  Policy(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  PolicyKind kind() const { return config_.kind; }
  std::size_t action_dim() const { return config_.action_dim; }

  nn::MlpParams& net() { return net_; }
  const nn::MlpParams& net() const { return net_; }
  /// K x 1; only used when the log-std is state independent.
  nn::Tensor& log_std() { return log_std_; }
  const nn::Tensor& log_std() const { return log_std_; }

  /// Trainable tensors in a fixed order: network tensors, then the global log-std if present.
  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  std::string parameter_name(std::size_t i) const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  PolicyConfig config_;
  nn::MlpParams net_;
  nn::Tensor log_std_;
};

/// Network input for raw dataset states: one-hot rows for index states, a copy otherwise.
nn::Tensor encode_states(const data::DatasetMetadata& meta, std::span<const double> states);
/// Action tensor: N x K for continuous actions, N x 1 indices for discrete ones.
nn::Tensor action_tensor(const data::DatasetMetadata& meta, std::span<const double> actions);

// ---------------------------------------------------------------------------
// Differentiable evaluation

struct PolicyBinding {
  nn::MlpBinding net;
  std::optional<nn::Var> log_std;

  std::vector<nn::Tensor> gradients(const nn::Gradients& grads) const;
};

PolicyBinding bind(nn::Tape& tape, const Policy& policy, bool trainable);

/// Per-row log pi(a|s) as an N x 1 node. `actions` follows action_tensor's layout.
nn::Var log_density(const Policy& policy, const PolicyBinding& binding, const nn::Var& observations,
                    const nn::Tensor& actions, std::optional<std::uint64_t> dropout_seed = {});

// ---------------------------------------------------------------------------
// Tape-free evaluation (evaluation mode, no dropout)

struct GaussianHead {
  nn::Tensor mean;     // N x K
  nn::Tensor log_std;  // N x K, clamped
};

GaussianHead gaussian_head(const Policy& policy, const nn::Tensor& observations);
/// N x A action probabilities.
nn::Tensor categorical_probs(const Policy& policy, const nn::Tensor& observations);

std::vector<double> log_density(const Policy& policy, const nn::Tensor& observations, const nn::Tensor& actions);
std::vector<double> density(const Policy& policy, const nn::Tensor& observations, const nn::Tensor& actions);

/// One action for one encoded observation. Deterministic mode returns the mean (Gaussian) or the
/// most likely action (categorical); otherwise draws from the stream (seed, 0).
std::vector<double> sample(const Policy& policy, std::span<const double> observation, std::uint64_t seed,
                           bool deterministic = false);

/// Closed-form Gaussian log-density used as an independent reference.
double gaussian_log_density(std::span<const double> action, std::span<const double> mean,
                            std::span<const double> log_std);

// ---------------------------------------------------------------------------
// Behavior cloning

struct BcConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 256;
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
  /// Use every row each step instead of sampled minibatches.
  bool full_batch = false;
};

struct BcResult {
  Policy policy;
  std::vector<double> loss_history;  // -mean log-density per step
};

/// Maximizes the average log-density of dataset actions. Throws TrainingError on a non-finite loss.
BcResult bc_train(const data::OfflineDataset& dataset, Policy policy, const BcConfig& config);

/// Negative mean log-density of the whole dataset (no dropout).
double bc_loss(const data::OfflineDataset& dataset, const Policy& policy);

// ---------------------------------------------------------------------------
// Rollouts and checkpoints

/// Acts with the deterministic policy output in an environment whose states are encoded per `meta`.
class PolicyActor final : public envs::RolloutPolicy {
 public:
  PolicyActor(Policy policy, data::DatasetMetadata meta, bool deterministic = true);
  envs::ActionKind action_kind() const override;
  std::size_t action_dim() const override;
  std::vector<double> act(const std::vector<double>& state, StreamRng& rng) override;
  std::unique_ptr<envs::RolloutPolicy> clone() const override;

 private:
  Policy policy_;
  data::DatasetMetadata meta_;
  bool deterministic_;
};

void save_policy(const Policy& policy, const std::string& path);
Policy load_policy(const std::string& path);
data::Container policy_container(const Policy& policy, const std::string& prefix);
Policy policy_from_container(const data::Container& c, const std::string& prefix);

}  // namespace projiql::pol
