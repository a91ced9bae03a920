#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "projiql/rng.hpp"

namespace projiql {

/// Finite MDP with dense transition tensor [s][a][s'] and reward table [s][a].
struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // row-major [s][a][s']
  std::vector<double> reward;      // row-major [s][a]
  double gamma = 0.9;
  std::vector<double> initial_distribution;

  TabularMDP() = default;
  TabularMDP(std::size_t states, std::size_t actions, double discount);

  double& p(std::size_t s, std::size_t a, std::size_t next) {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double& r(std::size_t s, std::size_t a) { return reward[s * n_actions + a]; }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  /// Throws ValidationError unless rows are stochastic within 1e-12 and gamma is in [0,1).
  void validate() const;
  std::size_t sample_next(std::size_t s, std::size_t a, StreamRng& rng) const;
  std::size_t sample_initial(StreamRng& rng) const;
};

/// Table of action probabilities, one row per state.
class CategoricalPolicy {
 public:
  CategoricalPolicy() = default;
  CategoricalPolicy(std::size_t states, std::size_t actions, std::vector<double> probs);
  static CategoricalPolicy uniform(std::size_t states, std::size_t actions);
  static CategoricalPolicy deterministic(std::size_t actions, const std::vector<std::size_t>& choice);

  std::size_t n_states() const { return states_; }
  std::size_t n_actions() const { return actions_; }
  double prob(std::size_t s, std::size_t a) const { return probs_[s * actions_ + a]; }
  double& prob(std::size_t s, std::size_t a) { return probs_[s * actions_ + a]; }
  const double* row(std::size_t s) const { return probs_.data() + s * actions_; }
  const std::vector<double>& table() const { return probs_; }

  /// Rows must sum to 1 within 1e-9 with non-negative entries.
  void validate() const;
  std::size_t sample(std::size_t s, StreamRng& rng) const;

  friend bool operator==(const CategoricalPolicy&, const CategoricalPolicy&) = default;

 private:
  std::size_t states_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> probs_;
};

/// Exact V^pi by solving (I - gamma P_pi) V = r_pi.
std::vector<double> policy_evaluation(const TabularMDP& mdp, const CategoricalPolicy& policy);
/// Q^pi(s,a) = r + gamma sum_s' P V^pi(s').
std::vector<double> q_from_v(const TabularMDP& mdp, const std::vector<double>& v);
/// Expected discounted return from the initial distribution.
double performance(const TabularMDP& mdp, const CategoricalPolicy& policy);

struct OptimalValues {
  std::vector<double> v;
  std::vector<double> q;  // [s][a]
  std::vector<std::size_t> greedy;
};
OptimalValues value_iteration(const TabularMDP& mdp, double tolerance = 1e-12, int max_iterations = 1000000);

/// Random MDP with Dirichlet(1) transitions and rewards in [reward_low, reward_high].
TabularMDP random_mdp(std::size_t states, std::size_t actions, double gamma, std::uint64_t seed,
                      double reward_low = 0.0, double reward_high = 1.0);
CategoricalPolicy random_policy(std::size_t states, std::size_t actions, std::uint64_t seed);

}  // namespace projiql
