#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "projiql/errors.hpp"
#include "projiql/policies.hpp"

namespace projiql::pol {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

std::size_t head_width(const PolicyConfig& c) {
  if (c.kind == PolicyKind::categorical) return c.action_dim;
  return c.state_dependent_std ? 2 * c.action_dim : c.action_dim;
}

void require_obs(const Policy& p, const nn::Tensor& obs) {
  if (obs.cols() != p.config().observation_dim)
    throw ShapeError("policy expects observations of width " + std::to_string(p.config().observation_dim) +
                     ", got " + obs.shape_string());
}

void require_actions(const Policy& p, const nn::Tensor& obs, const nn::Tensor& actions) {
  const std::size_t want = p.kind() == PolicyKind::categorical ? 1 : p.action_dim();
  if (actions.cols() != want || actions.rows() != obs.rows())
    throw ShapeError("policy expects actions of shape [" + std::to_string(obs.rows()) + ", " + std::to_string(want) +
                     "], got " + actions.shape_string());
}

nn::Tensor one_hot(const nn::Tensor& indices, std::size_t width) {
  nn::Tensor out({indices.rows(), width});
  for (std::size_t r = 0; r < indices.rows(); ++r) {
    const double a = indices[r];
    if (!(a >= 0 && a < static_cast<double>(width)) || a != std::floor(a))
      throw ShapeError("action index " + std::to_string(a) + " out of range");
    out.at(r, static_cast<std::size_t>(a)) = 1.0;
  }
  return out;
}

}  // namespace

std::string to_string(PolicyKind kind) { return kind == PolicyKind::gaussian ? "gaussian" : "categorical"; }

void PolicyConfig::validate() const {
  if (observation_dim == 0 || action_dim == 0) throw ValidationError("policy dimensions must be positive");
  if (!(log_std_low < log_std_high)) throw ValidationError("policy log-std clamp needs low < high");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("policy dropout must lie in [0,1)");
  for (std::size_t h : hidden)
    if (h == 0) throw ValidationError("policy hidden widths must be positive");
}

PolicyConfig config_for(const data::DatasetMetadata& meta) {
  PolicyConfig c;
  c.kind = meta.action_kind == data::ColumnKind::index ? PolicyKind::categorical : PolicyKind::gaussian;
  c.observation_dim = meta.observation_dim;
  c.action_dim = meta.action_dim;
  return c;
}

Policy::Policy(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::vector<std::size_t> sizes = {config_.observation_dim};
  sizes.insert(sizes.end(), config_.hidden.begin(), config_.hidden.end());
  sizes.push_back(head_width(config_));
  net_ = nn::make_mlp(sizes, config_.activation, seed, config_.dropout);
  if (config_.kind == PolicyKind::gaussian && !config_.state_dependent_std)
    log_std_ = nn::Tensor({config_.action_dim, 1}, 0.0);
}

std::vector<nn::Tensor*> Policy::parameters() {
  auto out = net_.tensors();
  if (log_std_.size() > 0) out.push_back(&log_std_);
  return out;
}

std::vector<const nn::Tensor*> Policy::parameters() const {
  auto out = net_.tensors();
  if (log_std_.size() > 0) out.push_back(&log_std_);
  return out;
}

std::string Policy::parameter_name(std::size_t i) const {
  const std::size_t n = net_.tensors().size();
  return i < n ? "policy " + net_.tensor_name(i) : "policy log_std";
}

nn::Tensor encode_states(const data::DatasetMetadata& meta, std::span<const double> states) {
  const std::size_t sd = meta.state_dim;
  if (sd == 0 || states.size() % sd != 0) throw ShapeError("state buffer does not match state_dim");
  const std::size_t n = states.size() / sd;
  if (meta.state_kind == data::ColumnKind::vector) {
    return nn::Tensor({n, sd}, std::vector<double>(states.begin(), states.end()));
  }
  nn::Tensor out({n, meta.observation_dim});
  for (std::size_t r = 0; r < n; ++r) {
    const double s = states[r];
    if (!(s >= 0 && s < static_cast<double>(meta.observation_dim)))
      throw ShapeError("state index " + std::to_string(s) + " out of range");
    out.at(r, static_cast<std::size_t>(s)) = 1.0;
  }
  return out;
}

nn::Tensor action_tensor(const data::DatasetMetadata& meta, std::span<const double> actions) {
  const std::size_t cols = meta.action_cols();
  if (actions.size() % cols != 0) throw ShapeError("action buffer does not match action_dim");
  return nn::Tensor({actions.size() / cols, cols}, std::vector<double>(actions.begin(), actions.end()));
}

std::vector<nn::Tensor> PolicyBinding::gradients(const nn::Gradients& grads) const {
  auto out = net.gradients(grads);
  if (log_std) out.push_back(grads.of(*log_std));
  return out;
}

PolicyBinding bind(nn::Tape& tape, const Policy& policy, bool trainable) {
  PolicyBinding b;
  b.net = nn::bind(tape, policy.net(), trainable);
  if (policy.log_std().size() > 0)
    b.log_std = trainable ? tape.parameter(policy.log_std()) : tape.constant(policy.log_std());
  return b;
}

nn::Var log_density(const Policy& policy, const PolicyBinding& binding, const nn::Var& observations,
                    const nn::Tensor& actions, std::optional<std::uint64_t> dropout_seed) {
  require_obs(policy, observations.value());
  require_actions(policy, observations.value(), actions);
  nn::Tape& tape = *observations.tape();
  const nn::Var out = nn::forward(policy.net(), binding.net, observations, dropout_seed);
  const std::size_t k = policy.action_dim();
  if (policy.kind() == PolicyKind::categorical) {
    const nn::Var mask = tape.constant(one_hot(actions, k));
    return nn::row_sum(nn::mul(nn::log_softmax(out), mask));
  }
  const PolicyConfig& c = policy.config();
  nn::Var mean = c.state_dependent_std ? nn::slice_cols(out, 0, k) : out;
  nn::Var raw_log_std;
  if (c.state_dependent_std) {
    raw_log_std = nn::slice_cols(out, k, 2 * k);
  } else {
    // Broadcast across rows as ones(N x 1) times the K x 1 weight.
    const nn::Var ones = tape.constant(nn::Tensor({actions.rows(), 1}, 1.0));
    const nn::Tensor zero_bias({k}, 0.0);
    raw_log_std = nn::linear(ones, nn::Var(*binding.log_std), tape.constant(zero_bias));
  }
  const nn::Var log_std = nn::clamp(raw_log_std, c.log_std_low, c.log_std_high);
  const nn::Var z = nn::mul(nn::sub(tape.constant(actions), mean), nn::exp(nn::neg(log_std)));
  const nn::Var per_dim = nn::sub(nn::scale(nn::square(z), -0.5), log_std);
  return nn::add_scalar(nn::row_sum(per_dim), -static_cast<double>(k) * kHalfLog2Pi);
}

GaussianHead gaussian_head(const Policy& policy, const nn::Tensor& observations) {
  if (policy.kind() != PolicyKind::gaussian) throw ContractError("gaussian_head on a categorical policy");
  require_obs(policy, observations);
  const nn::Tensor out = nn::forward(policy.net(), observations);
  const PolicyConfig& c = policy.config();
  const std::size_t k = policy.action_dim();
  GaussianHead h{nn::Tensor({out.rows(), k}), nn::Tensor({out.rows(), k})};
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      h.mean.at(r, j) = out.at(r, j);
      const double raw = c.state_dependent_std ? out.at(r, k + j) : policy.log_std()[j];
      h.log_std.at(r, j) = std::clamp(raw, c.log_std_low, c.log_std_high);
    }
  }
  return h;
}

nn::Tensor categorical_probs(const Policy& policy, const nn::Tensor& observations) {
  if (policy.kind() != PolicyKind::categorical) throw ContractError("categorical_probs on a Gaussian policy");
  require_obs(policy, observations);
  nn::Tensor out = nn::forward(policy.net(), observations);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double m = out.at(r, 0);
    for (std::size_t c = 1; c < out.cols(); ++c) m = std::max(m, out.at(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) total += (out.at(r, c) = std::exp(out.at(r, c) - m));
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) /= total;
  }
  return out;
}

double gaussian_log_density(std::span<const double> action, std::span<const double> mean,
                            std::span<const double> log_std) {
  if (action.size() != mean.size() || mean.size() != log_std.size())
    throw ShapeError("gaussian_log_density: dimension mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double z = (action[j] - mean[j]) / std::exp(log_std[j]);
    total += -0.5 * z * z - log_std[j] - kHalfLog2Pi;
  }
  return total;
}

std::vector<double> log_density(const Policy& policy, const nn::Tensor& observations, const nn::Tensor& actions) {
  require_obs(policy, observations);
  require_actions(policy, observations, actions);
  std::vector<double> out(observations.rows());
  if (policy.kind() == PolicyKind::categorical) {
    const nn::Tensor logits = nn::forward(policy.net(), observations);
    one_hot(actions, policy.action_dim());  // validates the indices
    for (std::size_t r = 0; r < out.size(); ++r) {
      double m = logits.at(r, 0);
      for (std::size_t c = 1; c < logits.cols(); ++c) m = std::max(m, logits.at(r, c));
      double total = 0.0;
      for (std::size_t c = 0; c < logits.cols(); ++c) total += std::exp(logits.at(r, c) - m);
      const auto a = static_cast<std::size_t>(actions[r]);
      out[r] = logits.at(r, a) - m - std::log(total);
    }
    return out;
  }
  const GaussianHead h = gaussian_head(policy, observations);
  const std::size_t k = policy.action_dim();
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = gaussian_log_density(actions.data().subspan(r * k, k), h.mean.data().subspan(r * k, k),
                                  h.log_std.data().subspan(r * k, k));
  }
  return out;
}

std::vector<double> density(const Policy& policy, const nn::Tensor& observations, const nn::Tensor& actions) {
  auto out = log_density(policy, observations, actions);
  for (double& v : out) v = std::exp(v);
  return out;
}

std::vector<double> sample(const Policy& policy, std::span<const double> observation, std::uint64_t seed,
                           bool deterministic) {
  const nn::Tensor obs({1, observation.size()}, std::vector<double>(observation.begin(), observation.end()));
  StreamRng rng(seed, 0);
  if (policy.kind() == PolicyKind::categorical) {
    const nn::Tensor probs = categorical_probs(policy, obs);
    const std::size_t n = probs.cols();
    if (deterministic) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n; ++c)
        if (probs[c] > probs[best]) best = c;
      return {static_cast<double>(best)};
    }
    double u = rng.uniform();
    for (std::size_t c = 0; c < n; ++c) {
      u -= probs[c];
      if (u < 0.0) return {static_cast<double>(c)};
    }
    return {static_cast<double>(n - 1)};
  }
  const GaussianHead h = gaussian_head(policy, obs);
  std::vector<double> a(policy.action_dim());
  for (std::size_t j = 0; j < a.size(); ++j) {
    a[j] = h.mean[j];
    if (!deterministic) a[j] += std::exp(h.log_std[j]) * rng.normal();
  }
  return a;
}

PolicyActor::PolicyActor(Policy policy, data::DatasetMetadata meta, bool deterministic)
    : policy_(std::move(policy)), meta_(std::move(meta)), deterministic_(deterministic) {}

envs::ActionKind PolicyActor::action_kind() const {
  return policy_.kind() == PolicyKind::categorical ? envs::ActionKind::discrete : envs::ActionKind::continuous;
}

std::size_t PolicyActor::action_dim() const { return policy_.action_dim(); }

std::vector<double> PolicyActor::act(const std::vector<double>& state, StreamRng& rng) {
  const nn::Tensor obs = encode_states(meta_, state);
  const std::uint64_t draw = deterministic_ ? 0 : rng.engine()();
  return sample(policy_, obs.data(), draw, deterministic_);
}

std::unique_ptr<envs::RolloutPolicy> PolicyActor::clone() const { return std::make_unique<PolicyActor>(*this); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

data::Container policy_container(const Policy& policy, const std::string& prefix) {
  const PolicyConfig& c = policy.config();
  data::Container out;
  std::string hidden;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(c.hidden[i]);
  out.metadata = {
      {prefix + "kind", to_string(c.kind)},
      {prefix + "observation_dim", std::to_string(c.observation_dim)},
      {prefix + "action_dim", std::to_string(c.action_dim)},
      {prefix + "hidden", hidden},
      {prefix + "activation", nn::to_string(c.activation)},
      {prefix + "dropout", exact(c.dropout)},
      {prefix + "log_std_low", exact(c.log_std_low)},
      {prefix + "log_std_high", exact(c.log_std_high)},
      {prefix + "state_dependent_std", c.state_dependent_std ? "1" : "0"},
  };
  const auto params = policy.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    out.columns.emplace_back(prefix + "param." + std::to_string(i), params[i]->values());
  return out;
}

Policy policy_from_container(const data::Container& c, const std::string& prefix) {
  PolicyConfig cfg;
  try {
    const std::string kind = c.get(prefix + "kind");
    if (kind != "gaussian" && kind != "categorical") throw FormatError("unknown policy kind " + kind);
    cfg.kind = kind == "gaussian" ? PolicyKind::gaussian : PolicyKind::categorical;
    cfg.observation_dim = std::stoull(c.get(prefix + "observation_dim"));
    cfg.action_dim = std::stoull(c.get(prefix + "action_dim"));
    cfg.hidden.clear();
    std::stringstream hs(c.get(prefix + "hidden"));
    for (std::string part; std::getline(hs, part, ',');)
      if (!part.empty()) cfg.hidden.push_back(std::stoull(part));
    cfg.activation = nn::activation_from_string(c.get(prefix + "activation"));
    cfg.dropout = std::stod(c.get(prefix + "dropout"));
    cfg.log_std_low = std::stod(c.get(prefix + "log_std_low"));
    cfg.log_std_high = std::stod(c.get(prefix + "log_std_high"));
    cfg.state_dependent_std = c.get(prefix + "state_dependent_std") == "1";
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed policy metadata: ") + e.what());
  }
  Policy policy(cfg, 0);
  auto params = policy.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& col = c.column(prefix + "param." + std::to_string(i));
    if (col.size() != params[i]->size()) throw FormatError("policy tensor " + std::to_string(i) + " has wrong size");
    params[i]->values() = col;
  }
  return policy;
}

void save_policy(const Policy& policy, const std::string& path) {
  data::Container c = policy_container(policy, "policy.");
  c.metadata.insert(c.metadata.begin(), {"type", "policy"});
  data::write_container(c, path);
}

Policy load_policy(const std::string& path) {
  const data::Container c = data::read_container(path);
  if (c.get("type") != "policy") throw FormatError(path + " does not hold a policy");
  return policy_from_container(c, "policy.");
}

}  // namespace projiql::pol
