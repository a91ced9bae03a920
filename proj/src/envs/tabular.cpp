#include "projiql/tabular.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "projiql/errors.hpp"

namespace projiql {

TabularMDP::TabularMDP(std::size_t states, std::size_t actions, double discount)
    : n_states(states),
      n_actions(actions),
      transition(states * actions * states, 0.0),
      reward(states * actions, 0.0),
      gamma(discount),
      initial_distribution(states, states ? 1.0 / static_cast<double>(states) : 0.0) {}

void TabularMDP::validate() const {
  if (n_states == 0 || n_actions == 0) throw ValidationError("MDP needs at least one state and one action");
  if (transition.size() != n_states * n_actions * n_states) throw ValidationError("transition tensor size mismatch");
  if (reward.size() != n_states * n_actions) throw ValidationError("reward table size mismatch");
  if (initial_distribution.size() != n_states) throw ValidationError("initial distribution size mismatch");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0,1)");
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < n_states; ++n) {
        const double v = p(s, a, n);
        if (!(v >= 0.0)) throw ValidationError("negative transition probability");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw ValidationError("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                              ") sums to " + std::to_string(total));
      }
      if (!std::isfinite(r(s, a))) throw ValidationError("non-finite reward");
    }
  }
  double init = 0.0;
  for (double v : initial_distribution) {
    if (!(v >= 0.0)) throw ValidationError("negative initial probability");
    init += v;
  }
  if (std::abs(init - 1.0) > 1e-12) throw ValidationError("initial distribution does not sum to 1");
}

namespace {

std::size_t sample_from(const double* probs, std::size_t n, StreamRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding can leave acc slightly below 1; fall back to the last positive entry.
  for (std::size_t i = n; i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return n - 1;
}

}  // namespace

std::size_t TabularMDP::sample_next(std::size_t s, std::size_t a, StreamRng& rng) const {
  return sample_from(&transition[(s * n_actions + a) * n_states], n_states, rng);
}

std::size_t TabularMDP::sample_initial(StreamRng& rng) const {
  return sample_from(initial_distribution.data(), n_states, rng);
}

CategoricalPolicy::CategoricalPolicy(std::size_t states, std::size_t actions, std::vector<double> probs)
    : states_(states), actions_(actions), probs_(std::move(probs)) {
  validate();
}

CategoricalPolicy CategoricalPolicy::uniform(std::size_t states, std::size_t actions) {
  return CategoricalPolicy(states, actions, std::vector<double>(states * actions, 1.0 / static_cast<double>(actions)));
}

CategoricalPolicy CategoricalPolicy::deterministic(std::size_t actions, const std::vector<std::size_t>& choice) {
  std::vector<double> probs(choice.size() * actions, 0.0);
  for (std::size_t s = 0; s < choice.size(); ++s) probs[s * actions + choice[s]] = 1.0;
  return CategoricalPolicy(choice.size(), actions, std::move(probs));
}

void CategoricalPolicy::validate() const {
  if (probs_.size() != states_ * actions_ || actions_ == 0) throw ValidationError("policy table size mismatch");
  for (std::size_t s = 0; s < states_; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions_; ++a) {
      const double v = prob(s, a);
      if (!(v >= 0.0)) throw ValidationError("negative action probability in state " + std::to_string(s));
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("policy row " + std::to_string(s) + " does not sum to 1");
  }
}

std::size_t CategoricalPolicy::sample(std::size_t s, StreamRng& rng) const { return sample_from(row(s), actions_, rng); }

std::vector<double> policy_evaluation(const TabularMDP& mdp, const CategoricalPolicy& policy) {
  mdp.validate();
  policy.validate();
  if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions) {
    throw ShapeError("policy does not match the MDP");
  }
  const auto n = static_cast<Eigen::Index>(mdp.n_states);
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double pa = policy.prob(s, a);
      if (pa == 0.0) continue;
      rhs(static_cast<Eigen::Index>(s)) += pa * mdp.r(s, a);
      for (std::size_t next = 0; next < mdp.n_states; ++next) {
        system(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next)) -= mdp.gamma * pa * mdp.p(s, a, next);
      }
    }
  }
  const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
  return {v.data(), v.data() + v.size()};
}

std::vector<double> q_from_v(const TabularMDP& mdp, const std::vector<double>& v) {
  std::vector<double> q(mdp.n_states * mdp.n_actions);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      double next = 0.0;
      for (std::size_t n = 0; n < mdp.n_states; ++n) next += mdp.p(s, a, n) * v[n];
      q[s * mdp.n_actions + a] = mdp.r(s, a) + mdp.gamma * next;
    }
  }
  return q;
}

double performance(const TabularMDP& mdp, const CategoricalPolicy& policy) {
  const auto v = policy_evaluation(mdp, policy);
  double eta = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) eta += mdp.initial_distribution[s] * v[s];
  return eta;
}

OptimalValues value_iteration(const TabularMDP& mdp, double tolerance, int max_iterations) {
  mdp.validate();
  OptimalValues out;
  out.v.assign(mdp.n_states, 0.0);
  for (int it = 0; it < max_iterations; ++it) {
    out.q = q_from_v(mdp, out.v);
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      const double best = *std::max_element(out.q.begin() + static_cast<long>(s * mdp.n_actions),
                                            out.q.begin() + static_cast<long>((s + 1) * mdp.n_actions));
      change = std::max(change, std::abs(best - out.v[s]));
      out.v[s] = best;
    }
    if (change < tolerance) break;
    if (it + 1 == max_iterations) throw ConvergenceError("value iteration did not converge", change);
  }
  out.q = q_from_v(mdp, out.v);
  out.greedy.resize(mdp.n_states);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    const auto first = out.q.begin() + static_cast<long>(s * mdp.n_actions);
    out.greedy[s] = static_cast<std::size_t>(std::max_element(first, first + static_cast<long>(mdp.n_actions)) - first);
  }
  return out;
}

namespace {

std::vector<double> dirichlet_ones(std::size_t n, StreamRng& rng) {
  std::vector<double> x(n);
  double total = 0.0;
  for (double& v : x) {
    v = -std::log(1.0 - rng.uniform());
    total += v;
  }
  for (double& v : x) v /= total;
  // Absorb rounding so the row sums to 1 within 1e-12.
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) sum += x[i];
  x[n - 1] = 1.0 - sum;
  if (x[n - 1] < 0.0) x[n - 1] = 0.0;
  return x;
}

}  // namespace

TabularMDP random_mdp(std::size_t states, std::size_t actions, double gamma, std::uint64_t seed, double reward_low,
                      double reward_high) {
  TabularMDP mdp(states, actions, gamma);
  StreamRng rng(seed, 0x6d6470ULL);
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      const auto row = dirichlet_ones(states, rng);
      for (std::size_t n = 0; n < states; ++n) mdp.p(s, a, n) = row[n];
      mdp.r(s, a) = rng.uniform(reward_low, reward_high);
    }
  }
  mdp.initial_distribution = dirichlet_ones(states, rng);
  mdp.validate();
  return mdp;
}

CategoricalPolicy random_policy(std::size_t states, std::size_t actions, std::uint64_t seed) {
  StreamRng rng(seed, 0x706f6cULL);
  std::vector<double> probs;
  for (std::size_t s = 0; s < states; ++s) {
    const auto row = dirichlet_ones(actions, rng);
    probs.insert(probs.end(), row.begin(), row.end());
  }
  return CategoricalPolicy(states, actions, std::move(probs));
}

}  // namespace projiql
