#include <algorithm>
#include <cmath>

#include "projiql/numerics.hpp"

namespace projiql::nn {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p));
  return f(tape, leaves).value().item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double step,
                           double tolerance) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.parameter(p));
  const Var out = f(tape, leaves);
  const Gradients grads = tape.backward(out);

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& analytic = grads.of(leaves[pi]);
    for (std::size_t k = 0; k < params[pi].size(); ++k) {
      const double original = probe[pi][k];
      probe[pi][k] = original + step;
      const double up = evaluate(f, probe);
      probe[pi][k] = original - step;
      const double down = evaluate(f, probe);
      probe[pi][k] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err || !std::isfinite(rel)) {
        report.max_rel_err = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_param = pi;
        report.worst_index = k;
      }
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace projiql::nn
