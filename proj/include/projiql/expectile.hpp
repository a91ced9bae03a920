#pragma once

#include <span>
#include <variant>
#include <vector>

#include "projiql/tabular.hpp"

namespace projiql {

/// Expectile level; 0 < tau < 1.
class ExpectileParam {
 public:
  explicit ExpectileParam(double tau);
  double value() const { return tau_; }
  operator double() const { return tau_; }

 private:
  double tau_;
};

struct WeightedSamples {
  std::vector<double> values;
  std::vector<double> weights;

  static WeightedSamples uniform(std::vector<double> values);
  void validate() const;
};

/// |tau - 1(u < 0)| u^2
double l2_tau(double u, double tau);

/// Minimizer of sum_i w_i L2^tau(x_i - v), by bisection on the stationarity condition.
double expectile(const WeightedSamples& samples, ExpectileParam tau);
/// Same with one level per sample.
double expectile(std::span<const double> values, std::span<const double> weights, std::span<const double> taus);

/// Weighted mean squared deviation around the tau-expectile.
double expectile_variance(const WeightedSamples& samples, ExpectileParam tau);

double weighted_mean(const WeightedSamples& samples);
double weighted_variance(const WeightedSamples& samples);

/// Scalar level or one level per (state, action).
class TauSchedule {
 public:
  TauSchedule(double scalar);  // NOLINT(google-explicit-constructor)
  TauSchedule(std::size_t n_states, std::size_t n_actions, std::vector<double> table);

  double at(std::size_t s, std::size_t a) const;
  bool is_scalar() const { return table_.empty(); }
  double min() const;
  double max() const;

 private:
  double scalar_ = 0.5;
  std::size_t n_actions_ = 0;
  std::vector<double> table_;
};

struct ExpectileValues {
  std::vector<double> v;  // per state
  std::vector<double> q;  // [s][a]
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed point of V(s) = E^tau_{a~pi}[Q(s,a)], Q(s,a) = r + gamma E_{s'} V(s').
/// Iterates until the sup-norm change times gamma/(1-gamma) drops below `tolerance`
/// (so the change itself is below tolerance too).
ExpectileValues expectile_value_iteration(const TabularMDP& mdp, const CategoricalPolicy& policy,
                                          const TauSchedule& tau, double tolerance = 1e-10,
                                          int max_iterations = 2000000);

}  // namespace projiql
