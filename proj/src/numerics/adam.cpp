#include <cmath>

#include "projiql/errors.hpp"
#include "projiql/numerics.hpp"

namespace projiql::nn {

AdamState make_adam_state(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.shape());
    s.second_moment.emplace_back(p.shape());
  }
  return s;
}

AdamState make_adam_state(const MlpParams& params) {
  std::vector<Tensor> copies;
  for (const Tensor* t : params.tensors()) copies.push_back(Tensor(t->shape()));
  return make_adam_state(copies);
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double learning_rate, const AdamConfig& config, const std::function<std::string(std::size_t)>& name) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  auto label = [&](std::size_t i) { return name ? name(i) : "parameter " + std::to_string(i); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) throw ShapeError("adam_step: gradient shape mismatch for " + label(i));
    if (!grads[i].all_finite()) throw ValidationError("adam_step: non-finite gradient in " + label(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      p[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state, double learning_rate,
               const AdamConfig& config) {
  const auto tensors = params.tensors();
  adam_step(tensors, grads, state, learning_rate, config, [&](std::size_t i) { return params.tensor_name(i); });
}

}  // namespace projiql::nn
