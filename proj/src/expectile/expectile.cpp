#include "projiql/expectile.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "projiql/errors.hpp"

namespace projiql {

ExpectileParam::ExpectileParam(double tau) : tau_(tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("expectile level must lie in (0,1), got " + std::to_string(tau));
}

WeightedSamples WeightedSamples::uniform(std::vector<double> values) {
  WeightedSamples s;
  s.weights.assign(values.size(), 1.0);
  s.values = std::move(values);
  return s;
}

void WeightedSamples::validate() const {
  if (values.empty()) throw ValidationError("expectile of an empty sample");
  if (values.size() != weights.size()) throw ValidationError("values and weights differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw ValidationError("non-finite sample value");
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw ValidationError("weights must be finite and >= 0");
    total += weights[i];
  }
  if (!(total > 0.0)) throw ValidationError("weights must have a positive sum");
}

double l2_tau(double u, double tau) { return (u < 0.0 ? 1.0 - tau : tau) * u * u; }

namespace {

double mean_of(std::span<const double> values, std::span<const double> weights) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += weights[i] * values[i];
    den += weights[i];
  }
  return num / den;
}

}  // namespace

double expectile(std::span<const double> values, std::span<const double> weights, std::span<const double> taus) {
  if (values.empty()) throw ValidationError("expectile of an empty sample");
  if (values.size() != weights.size() || values.size() != taus.size()) {
    throw ValidationError("values, weights and levels differ in length");
  }
  bool all_half = true;
  for (double t : taus) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("expectile level must lie in (0,1)");
    all_half = all_half && t == 0.5;
  }
  if (all_half) return mean_of(values, weights);

  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  // Stationarity: g(v) = sum_i w_i |tau_i - 1(x_i < v)| (x_i - v) is non-increasing in v.
  auto g = [&](double v) {
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double u = values[i] - v;
      total += weights[i] * (u < 0.0 ? 1.0 - taus[i] : taus[i]) * u;
    }
    return total;
  };
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    if (g(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double expectile(const WeightedSamples& samples, ExpectileParam tau) {
  samples.validate();
  const std::vector<double> taus(samples.values.size(), tau.value());
  return expectile(samples.values, samples.weights, taus);
}

double weighted_mean(const WeightedSamples& samples) {
  samples.validate();
  return mean_of(samples.values, samples.weights);
}

double weighted_variance(const WeightedSamples& samples) {
  const double m = weighted_mean(samples);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < samples.values.size(); ++i) {
    const double d = samples.values[i] - m;
    num += samples.weights[i] * d * d;
    den += samples.weights[i];
  }
  return num / den;
}

double expectile_variance(const WeightedSamples& samples, ExpectileParam tau) {
  const double e = expectile(samples, tau);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < samples.values.size(); ++i) {
    const double d = samples.values[i] - e;
    num += samples.weights[i] * d * d;
    den += samples.weights[i];
  }
  return num / den;
}

TauSchedule::TauSchedule(double scalar) : scalar_(scalar) { ExpectileParam check(scalar); }

TauSchedule::TauSchedule(std::size_t n_states, std::size_t n_actions, std::vector<double> table)
    : n_actions_(n_actions), table_(std::move(table)) {
  if (table_.size() != n_states * n_actions || table_.empty()) throw ValidationError("tau table size mismatch");
  for (double t : table_) ExpectileParam check(t);
}

double TauSchedule::at(std::size_t s, std::size_t a) const {
  return table_.empty() ? scalar_ : table_[s * n_actions_ + a];
}

double TauSchedule::min() const { return table_.empty() ? scalar_ : *std::min_element(table_.begin(), table_.end()); }
double TauSchedule::max() const { return table_.empty() ? scalar_ : *std::max_element(table_.begin(), table_.end()); }

ExpectileValues expectile_value_iteration(const TabularMDP& mdp, const CategoricalPolicy& policy,
                                          const TauSchedule& tau, double tolerance, int max_iterations) {
  mdp.validate();
  policy.validate();
  if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions) {
    throw ShapeError("policy does not match the MDP");
  }
  const std::size_t na = mdp.n_actions;
  ExpectileValues out;
  out.v.assign(mdp.n_states, 0.0);
  out.q.assign(mdp.n_states * na, 0.0);
  const double horizon = mdp.gamma / (1.0 - mdp.gamma);
  std::vector<double> taus(na);
  std::vector<double> values;
  std::vector<double> weights;
  std::vector<double> level;
  for (int it = 1; it <= max_iterations; ++it) {
    out.q = q_from_v(mdp, out.v);
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      values.clear();
      weights.clear();
      level.clear();
      for (std::size_t a = 0; a < na; ++a) {
        if (policy.prob(s, a) <= 0.0) continue;
        values.push_back(out.q[s * na + a]);
        weights.push_back(policy.prob(s, a));
        level.push_back(tau.at(s, a));
      }
      const double v = expectile(values, weights, level);
      change = std::max(change, std::abs(v - out.v[s]));
      out.v[s] = v;
    }
    out.iterations = it;
    out.residual = change;
    if (change * std::max(horizon, 1.0) < tolerance || change == 0.0) {
      out.q = q_from_v(mdp, out.v);
      return out;
    }
  }
  throw ConvergenceError("expectile value iteration hit its iteration cap", out.residual);
}

}  // namespace projiql
