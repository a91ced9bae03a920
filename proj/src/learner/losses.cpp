#include <algorithm>
#include <cmath>
#include <limits>

#include "projiql/errors.hpp"
#include "projiql/learner.hpp"

namespace projiql::learn {

namespace {

double coefficient(std::span<const double> beta, std::span<const double> phi) {
  double dot = 0.0;
  double norm2 = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    dot += beta[i] * phi[i];
    norm2 += phi[i] * phi[i];
  }
  if (!(norm2 > 0.0)) throw ValidationError("tau_proj: policy densities are all zero, projection undefined");
  return dot / norm2;
}

TauProj reduce(double c, std::span<const double> phi, double low, double high, TauReduction reduction) {
  TauProj out;
  out.coefficient = c;
  out.per_sample.resize(phi.size());
  double total = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double raw = c * phi[i];
    out.per_sample[i] = reduction == TauReduction::clip_then_mean ? std::clamp(raw, low, high) : raw;
    total += out.per_sample[i];
  }
  const double mean = total / static_cast<double>(phi.size());
  out.batch_value = std::clamp(mean, low, high);
  return out;
}

void check_inputs(std::span<const double> beta, std::span<const double> phi, double low, double high) {
  if (beta.size() != phi.size()) throw ShapeError("tau_proj: density vectors differ in length");
  if (phi.empty()) throw ValidationError("tau_proj: empty batch");
  if (!(0.0 <= low && low < high)) throw ValidationError("tau_proj: clip bounds must satisfy 0 <= low < high");
}

}  // namespace

TauProj tau_proj(std::span<const double> beta, std::span<const double> phi, double low, double high,
                 TauReduction reduction) {
  check_inputs(beta, phi, low, high);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!(beta[i] >= 0.0) || !(phi[i] >= 0.0) || !std::isfinite(beta[i]) || !std::isfinite(phi[i]))
      throw ValidationError("tau_proj: densities must be finite and non-negative");
  }
  return reduce(coefficient(beta, phi), phi, low, high, reduction);
}

TauProj tau_proj_from_log(std::span<const double> log_beta, std::span<const double> log_phi, double low, double high,
                          TauReduction reduction) {
  check_inputs(log_beta, log_phi, low, high);
  const auto max_of = [](std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : xs) {
      if (std::isnan(v)) throw ValidationError("tau_proj: NaN log-density");
      m = std::max(m, v);
    }
    return m;
  };
  const double mp = max_of(log_phi);
  const double mb = max_of(log_beta);
  if (!std::isfinite(mp)) throw ValidationError("tau_proj: policy densities are all zero, projection undefined");
  std::vector<double> phi(log_phi.size());
  if (!std::isfinite(mb)) return reduce(0.0, phi, low, high, reduction);
  // beta = e^mb beta_s and phi = e^mp phi_s with both maxima at 1, so nothing under- or overflows;
  // c = e^(mb - mp) c_s, and the offset is exactly 0 when the two log-densities coincide.
  std::vector<double> beta(log_beta.size());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    beta[i] = std::exp(log_beta[i] - mb);
    phi[i] = std::exp(log_phi[i] - mp);
  }
  const double c_s = coefficient(beta, phi);
  const double offset = mb - mp;
  // raw_i = c phi_i = c_s e^(offset + log_phi_i)
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = std::exp(offset + log_phi[i]);
  TauProj out = reduce(c_s, phi, low, high, reduction);
  out.coefficient = c_s * std::exp(offset);
  return out;
}

nn::Var value_loss(const nn::Var& q_hat, const nn::Var& v, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("value_loss: tau must lie in (0,1)");
  const nn::Var u = nn::sub(nn::detach(q_hat), v);
  return nn::mean(nn::asymmetric_weight(nn::square(u), u, 1.0 - tau, tau));
}

nn::Var q_loss(const nn::Var& q, const nn::Tensor& rewards, const nn::Tensor& dones, const nn::Var& v_next,
               double gamma) {
  const nn::Tensor& vn = v_next.value();
  if (rewards.size() != q.value().size() || dones.size() != q.value().size() || vn.size() != q.value().size())
    throw ShapeError("q_loss: batch columns differ in length");
  nn::Tensor target(q.value().shape());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = rewards[i] + gamma * (1.0 - dones[i]) * vn[i];
  return nn::mean(nn::square(nn::sub(q.tape()->constant(std::move(target)), q)));
}

std::vector<double> snis_weights(std::span<const double> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("snis_weights: ratios must be finite and >= 0");
    total += r;
  }
  if (!(total > 0.0)) throw ValidationError("snis_weights: ratios sum to zero");
  std::vector<double> w(ratios.size());
  const double n = static_cast<double>(ratios.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = n * ratios[i] / total;
  return w;
}

PolicyWeights policy_weights(std::span<const double> log_pi_bar, std::span<const double> log_beta,
                             std::span<const double> advantages, const LearnerConfig& config) {
  const std::size_t n = advantages.size();
  PolicyWeights w;
  w.exp_advantage.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(advantages[i] * config.inverse_temperature);
    w.exp_advantage[i] = std::min(e, config.advantage_cap);
  }
  if (config.mode == Mode::proj_iql) {
    if (log_pi_bar.size() != n || log_beta.size() != n) throw ShapeError("policy_weights: batch length mismatch");
    const double log_floor = std::log(config.density_floor);
    std::vector<double> log_ratio(n);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      log_ratio[i] = log_pi_bar[i] - std::max(log_beta[i], log_floor);
      m = std::max(m, log_ratio[i]);
    }
    if (!std::isfinite(m)) throw ValidationError("snis_weights: ratios sum to zero");
    w.ratio.resize(n);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      w.ratio[i] = std::exp(log_ratio[i]);
      // Normalisation is scale invariant, so shifting by the max keeps it finite.
      scaled[i] = std::exp(log_ratio[i] - m);
    }
    w.snis = snis_weights(scaled);
  } else {
    w.ratio.assign(n, 1.0);
    w.snis.assign(n, 1.0);
  }
  w.total.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.total[i] = w.snis[i] * w.exp_advantage[i];
  return w;
}

nn::Var policy_loss(const nn::Var& log_pi, const nn::Var& log_pi_bar, const nn::Var& log_beta, const nn::Var& q,
                    const nn::Var& v, const LearnerConfig& config, PolicyWeights* weights) {
  const std::size_t n = log_pi.value().size();
  if (q.value().size() != n || v.value().size() != n) throw ShapeError("policy_loss: batch length mismatch");
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = q.value()[i] - v.value()[i];
  PolicyWeights w = policy_weights(nn::detach(log_pi_bar).value().data(), nn::detach(log_beta).value().data(), adv,
                                   config);
  nn::Tape& tape = *log_pi.tape();
  const nn::Var coeff = tape.constant(nn::Tensor(log_pi.value().shape(), w.total));
  if (weights) *weights = std::move(w);
  return nn::neg(nn::mean(nn::mul(coeff, log_pi)));
}

void soft_update(nn::MlpParams& target, const nn::MlpParams& source, double coefficient) {
  if (!(coefficient > 0.0 && coefficient <= 1.0)) throw ValidationError("soft_update: coefficient must lie in (0,1]");
  auto dst = target.tensors();
  const auto src = source.tensors();
  if (dst.size() != src.size()) throw ShapeError("soft_update: parameter lists differ");
  for (std::size_t i = 0; i < dst.size(); ++i)
    if (!dst[i]->same_shape(*src[i])) throw ShapeError("soft_update: shape mismatch in " + target.tensor_name(i));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i]->data();
    const auto s = src[i]->data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (1.0 - coefficient) * d[k] + coefficient * s[k];
  }
}

}  // namespace projiql::learn
