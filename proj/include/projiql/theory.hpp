#pragma once

// Exact tabular checks of the lemmas and theorems behind Proj-IQL.
//
// Every check distinguishes a violated precondition (ContractError) from a falsified
// statement (a BoundReport with pass == false).

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "projiql/expectile.hpp"
#include "projiql/tabular.hpp"

namespace projiql::theory {

/// pass <=> lhs <= rhs + tolerance. Sweeps aggregate trials and keep the worst instance.
struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  double tolerance = 0.0;
  bool pass = false;
  std::size_t trials = 1;
  std::size_t failures = 0;
  std::uint64_t seed = 0;
  bool gating = true;  // false for diagnostic probes that may legitimately fail
  std::map<std::string, double> detail;

  void finish();
};

/// Folds `next` into an aggregate over trials: keeps the smallest slack, counts failures.
void accumulate(BoundReport& total, const BoundReport& next);

struct TabularPolicyPair {
  CategoricalPolicy pi_k;
  CategoricalPolicy pi_k1;
  TauSchedule tau_k = TauSchedule(0.5);
  TauSchedule tau_k1 = TauSchedule(0.5);
};

// ---------------------------------------------------------------------------
// Lemma 1: V_tau is non-decreasing in tau.

BoundReport check_lemma1(const TabularMDP& mdp, const CategoricalPolicy& policy, double tau1, double tau2);
/// Random 6-state 3-action MDPs with random tau1 < tau2.
BoundReport sweep_lemma1(std::size_t instances, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Lemma 3: expectile variance is non-decreasing in tau on [0.5, 1), with Var^tau - Var = (E - E^tau)^2.

BoundReport check_lemma3(const WeightedSamples& samples, double tau1, double tau2);
BoundReport sweep_lemma3(std::size_t instances, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Theorem 1: the dataset-weighted value loss with tau_proj equals the policy-weighted loss with
// tau_bar_proj up to a Pinsker budget on the Q < V branch.

struct ValueLossForms {
  double dataset_form = 0.0;      // actions from pi_beta, level c(s) pi_phi(a|s)
  double policy_form = 0.0;       // actions from pi_phi, level c(s) pi_beta(a|s)
  double positive_dataset = 0.0;  // Q >= V terms of each form
  double positive_policy = 0.0;
  double budget = 0.0;            // sqrt(eps/2) E_s sum_{a: Q<V} (Q - V)^2
  double max_kl = 0.0;            // max_s KL(pi_phi || pi_beta)
};

/// c(s) = <pi_beta(.|s), pi_phi(.|s)> / |pi_phi(.|s)|^2 per state; state weights default to uniform.
ValueLossForms value_loss_forms(const CategoricalPolicy& pi_beta, const CategoricalPolicy& pi_phi,
                                std::span<const double> q, std::span<const double> v,
                                std::span<const double> state_weights = {});
BoundReport check_theorem1_equivalence(const CategoricalPolicy& pi_beta, const CategoricalPolicy& pi_phi,
                                       std::span<const double> q, std::span<const double> v,
                                       std::span<const double> state_weights = {});

/// KL(p || q) for one state; +inf when p puts mass where q has none.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double max_state_kl(const CategoricalPolicy& p, const CategoricalPolicy& q);
/// Exponential tilt of `base` by random Gaussian logits, scaled so that max-state KL equals `target_kl`.
CategoricalPolicy perturb_policy(const CategoricalPolicy& base, double target_kl, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Lemma 2: eta(pi_phi) <= eta(pi_beta) + V_max sqrt(eps) / (sqrt(2) (1 - gamma)) inside a KL ball.

BoundReport check_lemma2(const TabularMDP& mdp, const CategoricalPolicy& pi_beta, double epsilon, std::size_t trials,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Exact tabular Proj-IQL: pi_{k+1} = pi_k exp(A_k / lambda) / Z_k.

struct TabularIterate {
  CategoricalPolicy policy;
  TauSchedule tau = TauSchedule(0.5);
  std::vector<double> q;  // Q^{pi_k}_{tau_k}, [s][a]
  std::vector<double> v;  // V^{pi_k}_{tau_k}
};

/// Tau for iteration k.
using TauRule = std::function<TauSchedule(std::size_t k)>;

/// Linear ramp from `from` at k = 0 to `to` at k = iterations.
TauRule tau_ramp(double from, double to, std::size_t iterations);

/// The exponential tilt of one iterate; lambda = +inf leaves the policy unchanged.
CategoricalPolicy tilt_policy(const CategoricalPolicy& pi, std::span<const double> q, std::span<const double> v,
                              double lambda);

/// Returns iterations + 1 iterates (k = 0 .. iterations), each with exact expectile tables.
std::vector<TabularIterate> run_tabular_projiql(const TabularMDP& mdp, std::size_t iterations, double lambda,
                                                const CategoricalPolicy& initial, const TauRule& tau_rule);

/// Q^{pi_{k+1}}_{tau_{k+1}} >= Q^{pi_k}_{tau_k} - 1e-8 elementwise at every consecutive pair.
BoundReport check_theorem2(const std::vector<TabularIterate>& trajectory);
/// Random MDPs, random initial policies, lambda log-uniform in [0.1, 10], random non-decreasing tau ramps.
BoundReport sweep_theorem2(std::size_t instances, std::uint64_t seed, std::size_t iterations = 5);

// ---------------------------------------------------------------------------
// Theorem 3: E_{pi_{k+1}}[A_{k+1}] <= 0 <= E_{pi_{k+1}}[A_k] statewise.

BoundReport check_theorem3(const TabularMDP& mdp, const TabularPolicyPair& pair);
/// Random instances: pi_k random, pi_{k+1} its exact tilt with lambda log-uniform in [lambda_low, lambda_high].
BoundReport sweep_theorem3(std::size_t instances, std::uint64_t seed, double lambda_low = 0.002,
                           double lambda_high = 0.02);

// ---------------------------------------------------------------------------
// Theorem 4 and the Cantelli chain.

/// Probability mass of {a : Q(s,a) - V(s) >= 0} under `probs` (ties count as superior).
double check_criterion_probability(std::span<const double> probs, std::span<const double> q, double v);
/// Same at state s of a policy and a [s][a] table.
double check_criterion_probability(const CategoricalPolicy& policy, std::span<const double> q, double v,
                                   std::size_t s);

/// mc_samples = 0 enumerates; otherwise probabilities under the sampling policies are Monte Carlo
/// estimates and the tolerance is 3 / sqrt(mc_samples).
BoundReport check_theorem4(const TabularMDP& mdp, const TabularPolicyPair& pair, std::size_t mc_samples,
                           std::uint64_t seed);
BoundReport sweep_theorem4(std::size_t instances, std::uint64_t seed, std::size_t mc_samples = 0);

// ---------------------------------------------------------------------------

/// Two-armed bandit (one state, gamma 0) with the given arm rewards.
TabularMDP bandit(std::span<const double> rewards);

}  // namespace projiql::theory
