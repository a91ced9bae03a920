#include "projiql/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "projiql/errors.hpp"

namespace projiql::theory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kExact = 1e-9;

BoundReport make_report(std::string name, double tolerance, std::uint64_t seed = 0) {
  BoundReport r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  r.seed = seed;
  return r;
}

// An empty aggregate that accumulate() fills.
BoundReport make_sweep(std::string name, double tolerance, std::uint64_t seed) {
  BoundReport r = make_report(std::move(name), tolerance, seed);
  r.trials = 0;
  r.slack = kInf;
  r.pass = true;
  return r;
}

void require_half_to_one(const TauSchedule& tau, const char* what) {
  if (!(tau.min() >= 0.5 && tau.max() <= 1.0))
    throw ContractError(std::string(what) + ": expectile levels must lie in [0.5, 1]");
}

std::vector<double> row_of(std::span<const double> table, std::size_t s, std::size_t n) {
  return {table.begin() + static_cast<std::ptrdiff_t>(s * n), table.begin() + static_cast<std::ptrdiff_t>((s + 1) * n)};
}

double log_uniform(StreamRng& rng, double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); }

std::pair<double, double> sorted_pair(StreamRng& rng, double lo, double hi) {
  double a = rng.uniform(lo, hi);
  double b = rng.uniform(lo, hi);
  while (a == b) b = rng.uniform(lo, hi);
  return {std::min(a, b), std::max(a, b)};
}

}  // namespace

void BoundReport::finish() {
  slack = rhs - lhs;
  pass = lhs <= rhs + tolerance;
  failures = pass ? 0 : 1;
}

void accumulate(BoundReport& total, const BoundReport& next) {
  const bool first = total.trials == 0;
  total.trials += next.trials;
  total.failures += next.pass ? next.failures : std::max<std::size_t>(next.failures, 1);
  if (first || next.slack < total.slack) {
    total.lhs = next.lhs;
    total.rhs = next.rhs;
    total.slack = next.slack;
    total.detail = next.detail;
  }
  total.pass = total.failures == 0;
}

// ---------------------------------------------------------------------------

BoundReport check_lemma1(const TabularMDP& mdp, const CategoricalPolicy& policy, double tau1, double tau2) {
  if (!(tau1 < tau2)) throw ContractError("check_lemma1 needs tau1 < tau2");
  const auto v1 = expectile_value_iteration(mdp, policy, TauSchedule(tau1)).v;
  const auto v2 = expectile_value_iteration(mdp, policy, TauSchedule(tau2)).v;
  BoundReport r = make_report("lemma1", kExact);
  // Worst state: largest V_tau1 - V_tau2.
  std::size_t worst = 0;
  for (std::size_t s = 1; s < v1.size(); ++s)
    if (v1[s] - v2[s] > v1[worst] - v2[worst]) worst = s;
  r.lhs = v1[worst];
  r.rhs = v2[worst];
  r.detail = {{"tau1", tau1}, {"tau2", tau2}, {"state", static_cast<double>(worst)}};
  r.finish();
  return r;
}

BoundReport sweep_lemma1(std::size_t instances, std::uint64_t seed) {
  BoundReport total = make_sweep("lemma1", kExact, seed);
  for (std::size_t i = 0; i < instances; ++i) {
    StreamRng rng(seed, i);
    const double gamma = rng.uniform(0.5, 0.95);
    const TabularMDP mdp = random_mdp(6, 3, gamma, stream_key(seed, 1000 + i));
    const CategoricalPolicy pi = random_policy(6, 3, stream_key(seed, 2000 + i));
    const auto [t1, t2] = sorted_pair(rng, 0.01, 0.99);
    accumulate(total, check_lemma1(mdp, pi, t1, t2));
  }
  return total;
}

// ---------------------------------------------------------------------------

BoundReport check_lemma3(const WeightedSamples& samples, double tau1, double tau2) {
  if (!(0.5 <= tau1 && tau1 <= tau2 && tau2 < 1.0)) throw ContractError("check_lemma3 needs 0.5 <= tau1 <= tau2 < 1");
  samples.validate();
  const double var = weighted_variance(samples);
  const double mean = weighted_mean(samples);
  BoundReport r = make_report("lemma3", kExact);
  r.lhs = expectile_variance(samples, ExpectileParam(tau1));
  r.rhs = expectile_variance(samples, ExpectileParam(tau2));
  double residual = 0.0;
  for (double tau : {tau1, tau2}) {
    const double e = expectile(samples, ExpectileParam(tau));
    const double gap = expectile_variance(samples, ExpectileParam(tau)) - var - (mean - e) * (mean - e);
    residual = std::max(residual, std::abs(gap));
  }
  r.detail = {{"tau1", tau1}, {"tau2", tau2}, {"identity_residual", residual}};
  r.finish();
  if (residual > kExact) {
    r.pass = false;
    r.failures = 1;
  }
  return r;
}

BoundReport sweep_lemma3(std::size_t instances, std::uint64_t seed) {
  BoundReport total = make_sweep("lemma3", kExact, seed);
  for (std::size_t i = 0; i < instances; ++i) {
    StreamRng rng(seed, i);
    WeightedSamples s;
    const std::size_t n = 2 + rng.index(7);
    for (std::size_t k = 0; k < n; ++k) {
      s.values.push_back(3.0 * rng.normal());
      s.weights.push_back(rng.uniform(0.01, 1.0));
    }
    const auto [t1, t2] = sorted_pair(rng, 0.5, 0.999);
    accumulate(total, check_lemma3(s, t1, t2));
  }
  return total;
}

// ---------------------------------------------------------------------------

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

double max_state_kl(const CategoricalPolicy& p, const CategoricalPolicy& q) {
  if (p.n_states() != q.n_states() || p.n_actions() != q.n_actions()) throw ShapeError("max_state_kl: shape mismatch");
  double m = 0.0;
  const std::size_t na = p.n_actions();
  for (std::size_t s = 0; s < p.n_states(); ++s)
    m = std::max(m, kl_divergence({p.row(s), na}, {q.row(s), na}));
  return m;
}

namespace {

CategoricalPolicy tilt_by(const CategoricalPolicy& base, const std::vector<double>& logits, double t) {
  const std::size_t ns = base.n_states();
  const std::size_t na = base.n_actions();
  std::vector<double> probs(ns * na, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    double m = -kInf;
    for (std::size_t a = 0; a < na; ++a)
      if (base.prob(s, a) > 0.0) m = std::max(m, t * logits[s * na + a]);
    double z = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      if (base.prob(s, a) <= 0.0) continue;
      probs[s * na + a] = base.prob(s, a) * std::exp(t * logits[s * na + a] - m);
      z += probs[s * na + a];
    }
    for (std::size_t a = 0; a < na; ++a) probs[s * na + a] /= z;
  }
  return CategoricalPolicy(ns, na, std::move(probs));
}

}  // namespace

CategoricalPolicy perturb_policy(const CategoricalPolicy& base, double target_kl, std::uint64_t seed) {
  if (!(target_kl >= 0.0)) throw ContractError("perturb_policy: target KL must be >= 0");
  if (target_kl == 0.0) return base;
  StreamRng rng(seed, 0);
  std::vector<double> logits(base.n_states() * base.n_actions());
  for (double& z : logits) z = rng.normal();
  // KL(pi_t || base) grows with t for an exponential tilt, so bisection on t finds the target.
  double hi = 1.0;
  while (max_state_kl(tilt_by(base, logits, hi), base) < target_kl && hi < 1e6) hi *= 2.0;
  if (max_state_kl(tilt_by(base, logits, hi), base) < target_kl) return tilt_by(base, logits, hi);
  double lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (max_state_kl(tilt_by(base, logits, mid), base) < target_kl) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return tilt_by(base, logits, lo);
}

ValueLossForms value_loss_forms(const CategoricalPolicy& pi_beta, const CategoricalPolicy& pi_phi,
                                std::span<const double> q, std::span<const double> v,
                                std::span<const double> state_weights) {
  const std::size_t ns = pi_beta.n_states();
  const std::size_t na = pi_beta.n_actions();
  if (pi_phi.n_states() != ns || pi_phi.n_actions() != na || q.size() != ns * na || v.size() != ns)
    throw ShapeError("value_loss_forms: table shapes differ");
  std::vector<double> d(state_weights.begin(), state_weights.end());
  if (d.empty()) d.assign(ns, 1.0 / static_cast<double>(ns));
  if (d.size() != ns) throw ShapeError("value_loss_forms: state weights length");

  ValueLossForms f;
  f.max_kl = max_state_kl(pi_phi, pi_beta);
  double squares = 0.0;
  for (std::size_t s = 0; s < ns; ++s) {
    double dot = 0.0;
    double norm2 = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      dot += pi_beta.prob(s, a) * pi_phi.prob(s, a);
      norm2 += pi_phi.prob(s, a) * pi_phi.prob(s, a);
    }
    if (!(norm2 > 0.0)) throw ValidationError("value_loss_forms: pi_phi row is zero");
    const double c = dot / norm2;
    for (std::size_t a = 0; a < na; ++a) {
      const double u = q[s * na + a] - v[s];
      const double u2 = u * u;
      const double tau = c * pi_phi.prob(s, a);
      const double tau_bar = c * pi_beta.prob(s, a);
      const double data_term = d[s] * pi_beta.prob(s, a) * (u >= 0.0 ? tau : 1.0 - tau) * u2;
      const double policy_term = d[s] * pi_phi.prob(s, a) * (u >= 0.0 ? tau_bar : 1.0 - tau_bar) * u2;
      f.dataset_form += data_term;
      f.policy_form += policy_term;
      if (u >= 0.0) {
        f.positive_dataset += data_term;
        f.positive_policy += policy_term;
      }
      squares += d[s] * u2;
    }
  }
  f.budget = std::isinf(f.max_kl) ? kInf : std::sqrt(f.max_kl / 2.0) * squares;
  return f;
}

BoundReport check_theorem1_equivalence(const CategoricalPolicy& pi_beta, const CategoricalPolicy& pi_phi,
                                       std::span<const double> q, std::span<const double> v,
                                       std::span<const double> state_weights) {
  const ValueLossForms f = value_loss_forms(pi_beta, pi_phi, q, v, state_weights);
  BoundReport r = make_report("theorem1", 1e-12);
  r.lhs = std::abs(f.dataset_form - f.policy_form);
  r.rhs = f.budget;
  const double positive_gap = std::abs(f.positive_dataset - f.positive_policy);
  r.detail = {{"dataset_form", f.dataset_form},
              {"policy_form", f.policy_form},
              {"positive_branch_gap", positive_gap},
              {"max_kl", f.max_kl}};
  r.finish();
  // The Q >= V branch is an exact identity for every pi_phi.
  if (positive_gap > 1e-12 * std::max(1.0, std::abs(f.positive_dataset))) {
    r.pass = false;
    r.failures = 1;
  }
  return r;
}

// ---------------------------------------------------------------------------

BoundReport check_lemma2(const TabularMDP& mdp, const CategoricalPolicy& pi_beta, double epsilon, std::size_t trials,
                         std::uint64_t seed) {
  if (!(epsilon >= 0.0)) throw ContractError("check_lemma2: epsilon must be >= 0");
  const double r_min = *std::min_element(mdp.reward.begin(), mdp.reward.end());
  const double r_max = *std::max_element(mdp.reward.begin(), mdp.reward.end());
  if (r_min < 0.0) throw ContractError("check_lemma2: rewards must be rescaled to [0, R_max]");
  const double v_max = r_max / (1.0 - mdp.gamma);
  const double eta_beta = performance(mdp, pi_beta);
  const double bound = eta_beta + v_max * std::sqrt(epsilon) / (std::sqrt(2.0) * (1.0 - mdp.gamma));

  BoundReport total = make_sweep("lemma2", 1e-12, seed);
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    StreamRng rng(seed, i);
    CategoricalPolicy phi;
    for (std::uint64_t attempt = 0;; ++attempt) {
      const double target = epsilon * (i == 0 ? 1.0 : rng.uniform(0.05, 1.0));
      phi = perturb_policy(pi_beta, target, stream_key(stream_key(seed, i), attempt));
      if (max_state_kl(phi, pi_beta) <= epsilon) break;
      ++rejected;
    }
    BoundReport r = make_report("lemma2", 1e-12, seed);
    r.lhs = performance(mdp, phi);
    r.rhs = bound;
    r.detail = {{"epsilon", epsilon}, {"kl", max_state_kl(phi, pi_beta)}, {"eta_beta", eta_beta}};
    r.finish();
    accumulate(total, r);
  }
  total.detail["rejected"] = static_cast<double>(rejected);
  return total;
}

// ---------------------------------------------------------------------------

TauRule tau_ramp(double from, double to, std::size_t iterations) {
  return [=](std::size_t k) {
    if (iterations == 0) return TauSchedule(from);
    const double t = static_cast<double>(std::min(k, iterations)) / static_cast<double>(iterations);
    return TauSchedule(from + (to - from) * t);
  };
}

CategoricalPolicy tilt_policy(const CategoricalPolicy& pi, std::span<const double> q, std::span<const double> v,
                              double lambda) {
  if (!(lambda > 0.0)) throw ContractError("tilt_policy: lambda must be positive");
  if (std::isinf(lambda)) return pi;
  const std::size_t ns = pi.n_states();
  const std::size_t na = pi.n_actions();
  if (q.size() != ns * na || v.size() != ns) throw ShapeError("tilt_policy: table shapes differ");
  std::vector<double> probs(ns * na, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    // Z_k(s) in closed form; shifting by the largest exponent keeps small lambda finite.
    double m = -kInf;
    for (std::size_t a = 0; a < na; ++a)
      if (pi.prob(s, a) > 0.0) m = std::max(m, (q[s * na + a] - v[s]) / lambda);
    double z = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      if (pi.prob(s, a) <= 0.0) continue;
      probs[s * na + a] = pi.prob(s, a) * std::exp((q[s * na + a] - v[s]) / lambda - m);
      z += probs[s * na + a];
    }
    for (std::size_t a = 0; a < na; ++a) probs[s * na + a] /= z;
  }
  return CategoricalPolicy(ns, na, std::move(probs));
}

std::vector<TabularIterate> run_tabular_projiql(const TabularMDP& mdp, std::size_t iterations, double lambda,
                                                const CategoricalPolicy& initial, const TauRule& tau_rule) {
  if (!(lambda > 0.0)) throw ContractError("run_tabular_projiql: lambda must be positive");
  std::vector<TabularIterate> out;
  out.reserve(iterations + 1);
  CategoricalPolicy pi = initial;
  for (std::size_t k = 0; k <= iterations; ++k) {
    TabularIterate it{pi, tau_rule(k), {}, {}};
    require_half_to_one(it.tau, "run_tabular_projiql");
    const auto values = expectile_value_iteration(mdp, pi, it.tau);
    it.q = values.q;
    it.v = values.v;
    if (k < iterations) pi = tilt_policy(pi, it.q, it.v, lambda);
    out.push_back(std::move(it));
  }
  return out;
}

BoundReport check_theorem2(const std::vector<TabularIterate>& trajectory) {
  if (trajectory.size() < 2) throw ContractError("check_theorem2 needs at least two iterates");
  const std::size_t ns = trajectory.front().policy.n_states();
  const std::size_t na = trajectory.front().policy.n_actions();
  for (std::size_t k = 0; k + 1 < trajectory.size(); ++k)
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t a = 0; a < na; ++a)
        if (trajectory[k + 1].tau.at(s, a) < trajectory[k].tau.at(s, a))
          throw ContractError("check_theorem2: tau schedule decreases at iteration " + std::to_string(k + 1));

  BoundReport r = make_report("theorem2", 1e-8);
  r.lhs = -kInf;
  for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
    const auto& q0 = trajectory[k].q;
    const auto& q1 = trajectory[k + 1].q;
    for (std::size_t i = 0; i < q0.size(); ++i) {
      // Violation is Q_k - Q_{k+1}; the statement says it is <= 0.
      if (q0[i] - q1[i] > r.lhs) {
        r.lhs = q0[i] - q1[i];
        r.detail = {{"iteration", static_cast<double>(k + 1)},
                    {"state", static_cast<double>(i / na)},
                    {"action", static_cast<double>(i % na)}};
      }
    }
  }
  r.rhs = 0.0;
  r.trials = trajectory.size() - 1;
  r.finish();
  return r;
}

BoundReport sweep_theorem2(std::size_t instances, std::uint64_t seed, std::size_t iterations) {
  BoundReport total = make_sweep("theorem2", 1e-8, seed);
  for (std::size_t i = 0; i < instances; ++i) {
    StreamRng rng(seed, i);
    const double gamma = rng.uniform(0.5, 0.95);
    const TabularMDP mdp = random_mdp(6, 3, gamma, stream_key(seed, 1000 + i));
    const CategoricalPolicy pi = random_policy(6, 3, stream_key(seed, 2000 + i));
    const auto [from, to] = sorted_pair(rng, 0.5, 0.95);
    const double lambda = log_uniform(rng, 0.1, 10.0);
    BoundReport r = check_theorem2(run_tabular_projiql(mdp, iterations, lambda, pi, tau_ramp(from, to, iterations)));
    r.detail["lambda"] = lambda;
    accumulate(total, r);
  }
  return total;
}

// ---------------------------------------------------------------------------

BoundReport check_theorem3(const TabularMDP& mdp, const TabularPolicyPair& pair) {
  require_half_to_one(pair.tau_k, "check_theorem3");
  require_half_to_one(pair.tau_k1, "check_theorem3");
  const auto old_values = expectile_value_iteration(mdp, pair.pi_k, pair.tau_k);
  const auto new_values = expectile_value_iteration(mdp, pair.pi_k1, pair.tau_k1);
  const std::size_t na = mdp.n_actions;
  double max_lhs = -kInf;
  double min_rhs = kInf;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      const double p = pair.pi_k1.prob(s, a);
      lhs += p * (new_values.q[s * na + a] - new_values.v[s]);
      rhs += p * (old_values.q[s * na + a] - old_values.v[s]);
    }
    max_lhs = std::max(max_lhs, lhs);
    min_rhs = std::min(min_rhs, rhs);
  }
  // Both halves of the proof, lhs <= 0 <= rhs, folded into one violation measured against 0.
  BoundReport r = make_report("theorem3", kExact);
  r.lhs = std::max(max_lhs, -min_rhs);
  r.rhs = 0.0;
  r.detail = {{"max_lhs", max_lhs}, {"min_rhs", min_rhs}};
  r.finish();
  return r;
}

BoundReport sweep_theorem3(std::size_t instances, std::uint64_t seed, double lambda_low, double lambda_high) {
  if (!(0.0 < lambda_low && lambda_low <= lambda_high)) throw ContractError("sweep_theorem3: bad lambda range");
  BoundReport total = make_sweep("theorem3", kExact, seed);
  for (std::size_t i = 0; i < instances; ++i) {
    StreamRng rng(seed, i);
    const double gamma = rng.uniform(0.5, 0.95);
    const TabularMDP mdp = random_mdp(6, 3, gamma, stream_key(seed, 1000 + i));
    TabularPolicyPair pair;
    pair.pi_k = random_policy(6, 3, stream_key(seed, 2000 + i));
    pair.tau_k = TauSchedule(rng.uniform(0.5, 0.9));
    pair.tau_k1 = TauSchedule(rng.uniform(0.5, 0.9));
    const double lambda = log_uniform(rng, lambda_low, lambda_high);
    const auto values = expectile_value_iteration(mdp, pair.pi_k, pair.tau_k);
    pair.pi_k1 = tilt_policy(pair.pi_k, values.q, values.v, lambda);
    BoundReport r = check_theorem3(mdp, pair);
    r.detail["lambda"] = lambda;
    accumulate(total, r);
  }
  total.detail["lambda_low"] = lambda_low;
  total.detail["lambda_high"] = lambda_high;
  return total;
}

// ---------------------------------------------------------------------------

double check_criterion_probability(std::span<const double> probs, std::span<const double> q, double v) {
  if (probs.size() != q.size()) throw ShapeError("criterion probability: length mismatch");
  double p = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a)
    if (q[a] - v >= 0.0) p += probs[a];
  return p;
}

double check_criterion_probability(const CategoricalPolicy& policy, std::span<const double> q, double v,
                                   std::size_t s) {
  const std::size_t na = policy.n_actions();
  const auto row = row_of(q, s, na);
  return check_criterion_probability({policy.row(s), na}, row, v);
}

namespace {

struct CantelliTerms {
  double var = 0.0;
  double var_tau = 0.0;
  double residual = 0.0;   // |Var^tau - Var - eps^2|
  double eps = 0.0;        // E^tau - E
  double probability = 0.0;
  double quotient = 1.0;   // Var / Var^tau when eps > 0, else 1
};

CantelliTerms cantelli(std::span<const double> probs, std::span<const double> q, double v) {
  CantelliTerms c;
  double mean = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a) mean += probs[a] * q[a];
  for (std::size_t a = 0; a < q.size(); ++a) {
    c.var += probs[a] * (q[a] - mean) * (q[a] - mean);
    c.var_tau += probs[a] * (q[a] - v) * (q[a] - v);
  }
  c.eps = v - mean;
  c.residual = std::abs(c.var_tau - c.var - c.eps * c.eps);
  c.probability = check_criterion_probability(probs, q, v);
  // One-sided Chebyshev needs V strictly above the mean; otherwise the bound is the trivial 1.
  if (c.eps > kExact && c.var_tau > 0.0) c.quotient = c.var / c.var_tau;
  return c;
}

double sampled_probability(const CategoricalPolicy& pi, std::span<const double> q, double v, std::size_t s,
                           std::size_t n, StreamRng& rng) {
  const std::size_t na = pi.n_actions();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (q[s * na + pi.sample(s, rng)] - v >= 0.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

BoundReport check_theorem4(const TabularMDP& mdp, const TabularPolicyPair& pair, std::size_t mc_samples,
                           std::uint64_t seed) {
  require_half_to_one(pair.tau_k, "check_theorem4");
  require_half_to_one(pair.tau_k1, "check_theorem4");
  const std::size_t ns = mdp.n_states;
  const std::size_t na = mdp.n_actions;
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a)
      if (pair.tau_k1.at(s, a) < pair.tau_k.at(s, a))
        throw ContractError("check_theorem4 needs tau_k <= tau_{k+1}");

  const auto old_values = expectile_value_iteration(mdp, pair.pi_k, pair.tau_k);
  const auto new_values = expectile_value_iteration(mdp, pair.pi_k1, pair.tau_k1);
  const double tolerance = mc_samples > 0 ? 3.0 / std::sqrt(static_cast<double>(mc_samples)) : kExact;
  const CategoricalPolicy uniform = CategoricalPolicy::uniform(ns, na);

  double max_gap = -kInf;
  double cantelli_violation = -kInf;
  double max_residual = 0.0;
  double min_eps = kInf;
  for (std::size_t s = 0; s < ns; ++s) {
    // Deterministic test policies give the exact maximum; the stochastic ones are also evaluated.
    auto max_probability = [&](const std::vector<double>& q, double v, std::uint64_t stream) {
      double best = 0.0;
      for (std::size_t a = 0; a < na; ++a)
        if (q[s * na + a] - v >= 0.0) best = 1.0;
      StreamRng rng(seed, stream);
      for (const CategoricalPolicy* pi : {&pair.pi_k, &pair.pi_k1, &uniform}) {
        const double p = mc_samples > 0 ? sampled_probability(*pi, q, v, s, mc_samples, rng)
                                        : check_criterion_probability(*pi, q, v, s);
        best = std::max(best, p);
      }
      return best;
    };
    const double lhs = max_probability(new_values.q, new_values.v[s], 2 * s + 1);
    const double rhs = max_probability(old_values.q, old_values.v[s], 2 * s);
    max_gap = std::max(max_gap, lhs - rhs);

    // Proof chain under each iterate's own policy.
    const auto fresh = cantelli({pair.pi_k1.row(s), na}, row_of(new_values.q, s, na), new_values.v[s]);
    const auto prior = cantelli({pair.pi_k.row(s), na}, row_of(old_values.q, s, na), old_values.v[s]);
    for (const auto& c : {fresh, prior}) {
      max_residual = std::max(max_residual, c.residual);
      min_eps = std::min(min_eps, c.eps);
      cantelli_violation = std::max(cantelli_violation, c.probability - c.quotient);
    }
  }

  BoundReport r = make_report("theorem4", tolerance, seed);
  r.lhs = std::max({max_gap, cantelli_violation, max_residual - kExact, -min_eps - kExact});
  r.rhs = 0.0;
  r.detail = {{"max_probability_gap", max_gap},
              {"cantelli_violation", cantelli_violation},
              {"identity_residual", max_residual},
              {"min_epsilon", min_eps},
              {"mc_samples", static_cast<double>(mc_samples)}};
  r.finish();
  return r;
}

BoundReport sweep_theorem4(std::size_t instances, std::uint64_t seed, std::size_t mc_samples) {
  BoundReport total =
      make_sweep("theorem4", mc_samples > 0 ? 3.0 / std::sqrt(static_cast<double>(mc_samples)) : kExact, seed);
  for (std::size_t i = 0; i < instances; ++i) {
    StreamRng rng(seed, i);
    const double gamma = rng.uniform(0.5, 0.95);
    const TabularMDP mdp = random_mdp(6, 3, gamma, stream_key(seed, 1000 + i));
    TabularPolicyPair pair;
    pair.pi_k = random_policy(6, 3, stream_key(seed, 2000 + i));
    const auto [t1, t2] = sorted_pair(rng, 0.5, 0.99);
    pair.tau_k = TauSchedule(t1);
    pair.tau_k1 = TauSchedule(t2);
    const double lambda = log_uniform(rng, 0.01, 10.0);
    const auto values = expectile_value_iteration(mdp, pair.pi_k, pair.tau_k);
    pair.pi_k1 = tilt_policy(pair.pi_k, values.q, values.v, lambda);
    accumulate(total, check_theorem4(mdp, pair, mc_samples, stream_key(seed, 3000 + i)));
  }
  return total;
}

TabularMDP bandit(std::span<const double> rewards) {
  if (rewards.empty()) throw ValidationError("bandit needs at least one arm");
  TabularMDP mdp(1, rewards.size(), 0.0);
  for (std::size_t a = 0; a < rewards.size(); ++a) {
    mdp.p(0, a, 0) = 1.0;
    mdp.r(0, a) = rewards[a];
  }
  mdp.initial_distribution = {1.0};
  return mdp;
}

}  // namespace projiql::theory
