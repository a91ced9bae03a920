#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "projiql/errors.hpp"
#include "projiql/learner.hpp"

namespace projiql::learn {

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t {
  kBehaviorInit = 1,
  kPolicyInit = 2,
  kValueInit = 3,
  kBatches = 4,
  kBcBatches = 5,
  kDropout = 6,
  kCriticInit = 16,
};

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return stream_key(seed, stream); }

std::vector<std::size_t> layer_sizes(std::size_t in, const LearnerConfig& c, std::size_t out) {
  std::vector<std::size_t> sizes = {in};
  for (std::size_t i = 0; i < c.hidden_layers; ++i) sizes.push_back(c.hidden_width);
  sizes.push_back(out);
  return sizes;
}

std::size_t action_input_width(const data::DatasetMetadata& meta) { return meta.action_dim; }

nn::Tensor column(const std::vector<double>& values) { return nn::Tensor({values.size(), 1}, values); }

void require_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) throw TrainingError(std::string(what) + " is not finite", static_cast<long>(step));
}

void apply_adam(nn::MlpParams& params, const std::vector<nn::Tensor>& grads, nn::AdamState& state, double lr,
                std::size_t step, const char* what) {
  try {
    nn::adam_step(params, grads, state, lr);
  } catch (const ValidationError& e) {
    throw TrainingError(std::string(what) + ": " + e.what(), static_cast<long>(step));
  }
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::proj_iql: return "proj-iql";
    case Mode::iql: return "iql";
    case Mode::wbc: return "wbc";
  }
  return "proj-iql";
}

Mode mode_from_string(const std::string& s) {
  if (s == "proj-iql") return Mode::proj_iql;
  if (s == "iql") return Mode::iql;
  if (s == "wbc") return Mode::wbc;
  throw ValidationError("unknown mode '" + s + "' (expected proj-iql, iql or wbc)");
}

std::string to_string(TauReduction r) { return r == TauReduction::clip_then_mean ? "clip-then-mean" : "mean-then-clip"; }

TauReduction tau_reduction_from_string(const std::string& s) {
  if (s == "clip-then-mean") return TauReduction::clip_then_mean;
  if (s == "mean-then-clip") return TauReduction::mean_then_clip;
  throw ValidationError("unknown tau reduction '" + s + "'");
}

std::string to_string(PolicyInit p) { return p == PolicyInit::random ? "random" : "behavior"; }

PolicyInit policy_init_from_string(const std::string& s) {
  if (s == "random") return PolicyInit::random;
  if (s == "behavior") return PolicyInit::behavior;
  throw ValidationError("unknown policy init '" + s + "'");
}

void LearnerConfig::validate() const {
  if (!(inverse_temperature > 0.0) || !std::isfinite(inverse_temperature))
    throw ValidationError("inverse_temperature must be positive");
  if (!(expectile_tau > 0.0 && expectile_tau < 1.0)) throw ValidationError("expectile_tau must lie in (0,1)");
  if (!(polyak_coef > 0.0 && polyak_coef < 1.0)) throw ValidationError("polyak_coef must lie in (0,1)");
  if (!(0.5 <= clip_low && clip_low < clip_high && clip_high <= 1.0))
    throw ValidationError("tau_proj clip bounds must satisfy 0.5 <= low < high <= 1");
  if (!(advantage_cap > 0.0)) throw ValidationError("advantage_cap must be positive");
  if (!(density_floor > 0.0)) throw ValidationError("density_floor must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0,1)");
  for (double lr : {lr_q, lr_v, lr_policy, lr_bc})
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("learning rates must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be at least 1");
  if (bc_batch_size == 0) throw ValidationError("bc_batch_size must be at least 1");
  if (hidden_width == 0) throw ValidationError("hidden_width must be positive");
  if (n_critics == 0) throw ValidationError("n_critics must be at least 1");
  if (!(policy_dropout >= 0.0 && policy_dropout < 1.0)) throw ValidationError("policy_dropout must lie in [0,1)");
  if (!(log_std_low < log_std_high) || !std::isfinite(log_std_low) || !std::isfinite(log_std_high))
    throw ValidationError("log_std bounds must be finite with low < high");
  if (eval_episodes == 0) throw ValidationError("eval_episodes must be at least 1");
}

nn::Tensor q_input(const data::DatasetMetadata& meta, std::span<const double> states, std::span<const double> actions) {
  const nn::Tensor obs = pol::encode_states(meta, states);
  const std::size_t n = obs.rows();
  const std::size_t aw = action_input_width(meta);
  nn::Tensor out({n, obs.cols() + aw});
  const std::size_t ac = meta.action_cols();
  if (actions.size() != n * ac) throw ShapeError("q_input: action rows do not match state rows");
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < obs.cols(); ++c) out.at(r, c) = obs.at(r, c);
    if (meta.action_kind == data::ColumnKind::index) {
      const auto a = static_cast<std::size_t>(actions[r]);
      if (a >= aw) throw ShapeError("q_input: action index out of range");
      out.at(r, obs.cols() + a) = 1.0;
    } else {
      for (std::size_t c = 0; c < ac; ++c) out.at(r, obs.cols() + c) = actions[r * ac + c];
    }
  }
  return out;
}

std::vector<double> q_values(const std::vector<nn::MlpParams>& critics, const nn::Tensor& input) {
  std::vector<double> out(input.rows(), std::numeric_limits<double>::infinity());
  for (const auto& net : critics) {
    const nn::Tensor q = nn::forward(net, input);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], q[i]);
  }
  return out;
}

TrainState init_state(const data::OfflineDataset& dataset, const LearnerConfig& config, std::uint64_t seed,
                      std::vector<double>* bc_losses) {
  config.validate();
  dataset.validate();
  if (dataset.empty()) throw ValidationError("training needs a non-empty dataset");
  const data::DatasetMetadata& meta = dataset.meta;

  TrainState s;
  s.seed = seed;
  pol::PolicyConfig pc = pol::config_for(meta);
  pc.hidden = std::vector<std::size_t>(config.hidden_layers, config.hidden_width);
  pc.dropout = config.policy_dropout;
  pc.state_dependent_std = config.state_dependent_std;
  pc.log_std_low = config.log_std_low;
  pc.log_std_high = config.log_std_high;

  pol::BcConfig bc;
  bc.steps = config.bc_steps;
  bc.batch_size = config.bc_batch_size;
  bc.learning_rate = config.lr_bc;
  bc.seed = derive(seed, kBcBatches);
  pol::BcResult cloned = pol::bc_train(dataset, pol::Policy(pc, derive(seed, kBehaviorInit)), bc);
  s.behavior = std::move(cloned.policy);
  if (bc_losses) *bc_losses = std::move(cloned.loss_history);

  s.policy = config.policy_init == PolicyInit::behavior ? s.behavior : pol::Policy(pc, derive(seed, kPolicyInit));

  const std::size_t q_in = meta.observation_dim + action_input_width(meta);
  for (std::size_t i = 0; i < config.n_critics; ++i) {
    s.q.push_back(nn::make_mlp(layer_sizes(q_in, config, 1), nn::Activation::relu, derive(seed, kCriticInit + i)));
    s.q_adam.push_back(nn::make_adam_state(s.q.back()));
  }
  s.q_target = s.q;
  s.v = nn::make_mlp(layer_sizes(meta.observation_dim, config, 1), nn::Activation::relu, derive(seed, kValueInit));
  s.v_adam = nn::make_adam_state(s.v);
  std::vector<nn::Tensor> pi_params;
  for (const auto* t : s.policy.parameters()) pi_params.push_back(*t);
  s.policy_adam = nn::make_adam_state(pi_params);
  return s;
}

MetricsRow train_step(TrainState& s, const data::OfflineDataset& dataset, const LearnerConfig& config) {
  const data::DatasetMetadata& meta = dataset.meta;
  const std::size_t step = s.step;
  const data::Batch batch = data::sample_batch(dataset, config.batch_size, derive(s.seed, kBatches), step);
  const nn::Tensor obs = pol::encode_states(meta, batch.states);
  const nn::Tensor next_obs = pol::encode_states(meta, batch.next_states);
  const nn::Tensor actions = pol::action_tensor(meta, batch.actions);
  const nn::Tensor sa = q_input(meta, batch.states, batch.actions);
  const nn::Tensor rewards = column(batch.rewards);
  const nn::Tensor dones = column(batch.dones);

  MetricsRow row;
  row.step = step;

  // tau for this step: projection of behavior densities onto current policy densities.
  const std::vector<double> log_beta = pol::log_density(s.behavior, obs, actions);
  std::vector<double> log_phi;
  double tau = config.expectile_tau;
  if (config.mode == Mode::iql) {
    row.tau_proj = tau;
  } else {
    log_phi = pol::log_density(s.policy, obs, actions);
    tau = tau_proj_from_log(log_beta, log_phi, config.clip_low, config.clip_high, config.tau_reduction).batch_value;
    row.tau_proj = tau;
  }
  // The value loss needs tau strictly inside (0,1).
  const double tau_v = std::min(tau, 1.0 - 1e-6);

  // psi
  {
    nn::Tape tape;
    const nn::Var q_hat = tape.constant(column(q_values(s.q_target, sa)));
    const nn::MlpBinding vb = nn::bind(tape, s.v, true);
    const nn::Var v = nn::forward(s.v, vb, tape.constant(obs));
    const nn::Var loss = value_loss(q_hat, v, tau_v);
    row.loss_v = loss.value().item();
    require_finite(row.loss_v, "value loss", step);
    apply_adam(s.v, vb.gradients(tape.backward(loss)), s.v_adam, config.lr_v, step, "value update");
  }

  // theta
  {
    const nn::Tensor v_next = nn::forward(s.v, next_obs);
    double total = 0.0;
    for (std::size_t i = 0; i < s.q.size(); ++i) {
      nn::Tape tape;
      const nn::MlpBinding qb = nn::bind(tape, s.q[i], true);
      const nn::Var q = nn::forward(s.q[i], qb, tape.constant(sa));
      const nn::Var loss = q_loss(q, rewards, dones, tape.constant(v_next), config.gamma);
      const double value = loss.value().item();
      require_finite(value, "q loss", step);
      total += value;
      apply_adam(s.q[i], qb.gradients(tape.backward(loss)), s.q_adam[i], config.lr_q, step, "q update");
    }
    row.loss_q = total / static_cast<double>(s.q.size());
  }

  // phi
  {
    nn::Tape tape;
    const nn::Var q = tape.constant(column(q_values(s.q, sa)));
    const nn::Var v = tape.constant(nn::forward(s.v, obs));
    const nn::Var lb = tape.constant(column(log_beta));
    const nn::Var lpb = tape.constant(column(config.mode == Mode::proj_iql ? log_phi : log_beta));
    const pol::PolicyBinding pb = pol::bind(tape, s.policy, true);
    std::optional<std::uint64_t> drop;
    if (config.policy_dropout > 0.0) drop = stream_key(derive(s.seed, kDropout), step);
    const nn::Var log_pi = pol::log_density(s.policy, pb, tape.constant(obs), actions, drop);
    nn::Var loss;
    try {
      loss = policy_loss(log_pi, lpb, lb, q, v, config);
    } catch (const ValidationError& e) {
      throw TrainingError(std::string("policy loss: ") + e.what(), static_cast<long>(step));
    }
    row.loss_pi = loss.value().item();
    require_finite(row.loss_pi, "policy loss", step);
    const auto grads = pb.gradients(tape.backward(loss));
    try {
      nn::adam_step(s.policy.parameters(), grads, s.policy_adam, config.lr_policy, {},
                    [&](std::size_t i) { return s.policy.parameter_name(i); });
    } catch (const ValidationError& e) {
      throw TrainingError(std::string("policy update: ") + e.what(), static_cast<long>(step));
    }
  }

  for (std::size_t i = 0; i < s.q.size(); ++i) soft_update(s.q_target[i], s.q[i], config.polyak_coef);
  ++s.step;
  return row;
}

TrainResult train(const data::OfflineDataset& dataset, const LearnerConfig& config, std::uint64_t seed,
                  const envs::Environment* eval_env, const ProgressFn& progress) {
  TrainResult result;
  result.state = init_state(dataset, config, seed, &result.bc_losses);
  result.metrics.reserve(config.steps);
  const std::uint64_t eval_seed = derive(seed, 0x6576616cULL);
  for (std::size_t k = 0; k < config.steps; ++k) {
    MetricsRow row = train_step(result.state, dataset, config);
    const bool last = k + 1 == config.steps;
    const bool periodic = config.eval_every > 0 && (k + 1) % config.eval_every == 0;
    if (eval_env && (periodic || last)) {
      const EvalResult ev = evaluate(result.state.policy, dataset.meta, *eval_env, config.eval_episodes, eval_seed);
      row.eval_return = ev.mean_return;
      row.eval_success = ev.success_rate;
      if (last) result.final_eval = ev;
    }
    if (progress) progress(row);
    result.metrics.push_back(row);
  }
  if (eval_env && config.steps == 0)
    result.final_eval = evaluate(result.state.policy, dataset.meta, *eval_env, config.eval_episodes, eval_seed);
  return result;
}

EvalResult evaluate(const pol::Policy& policy, const data::DatasetMetadata& meta, const envs::Environment& env,
                    std::size_t episodes, std::uint64_t seed) {
  return evaluate(pol::PolicyActor(policy, meta, true), env, episodes, seed);
}

EvalResult evaluate(const envs::RolloutPolicy& policy, const envs::Environment& env, std::size_t episodes,
                    std::uint64_t seed) {
  if (episodes == 0) throw ValidationError("evaluate needs at least one episode");
  const auto trajectories = envs::rollout(env, policy, seed, episodes);
  EvalResult r;
  std::vector<double> returns;
  const double gamma = env.gamma_hint();
  for (const auto& t : trajectories) {
    returns.push_back(t.total_return);
    r.success_rate += t.success ? 1.0 : 0.0;
    double disc = 0.0;
    double g = 1.0;
    for (const auto& step : t.steps) {
      disc += g * step.reward;
      g *= gamma;
    }
    r.mean_discounted_return += disc;
  }
  const double n = static_cast<double>(episodes);
  r.success_rate /= n;
  r.mean_discounted_return /= n;
  for (double x : returns) r.mean_return += x;
  r.mean_return /= n;
  for (double x : returns) r.std_return += (x - r.mean_return) * (x - r.mean_return) / n;
  r.std_return = std::sqrt(r.std_return);
  return r;
}

namespace {

std::string cell(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::optional<double> optional_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    out << r.step << "," << cell(r.tau_proj) << "," << cell(r.loss_v) << "," << cell(r.loss_q) << ","
        << cell(r.loss_pi) << "," << (r.eval_return ? cell(*r.eval_return) : "") << ","
        << (r.eval_success ? cell(*r.eval_success) : "") << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw ParseError("unexpected metrics header in " + path, 1, 1);
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw ParseError("expected 7 metrics fields", lineno, 1);
    try {
      MetricsRow r;
      r.step = std::stoull(f[0]);
      r.tau_proj = std::stod(f[1]);
      r.loss_v = std::stod(f[2]);
      r.loss_q = std::stod(f[3]);
      r.loss_pi = std::stod(f[4]);
      r.eval_return = optional_cell(f[5]);
      r.eval_success = optional_cell(f[6]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError("malformed metrics value", lineno, 1);
    }
  }
  return rows;
}

void save_state(const TrainState& state, const LearnerConfig& config, const std::string& path) {
  data::Container c = pol::policy_container(state.policy, "policy.");
  data::Container b = pol::policy_container(state.behavior, "behavior.");
  c.metadata.insert(c.metadata.begin(), {"type", "train_state"});
  c.metadata.emplace_back("mode", to_string(config.mode));
  c.metadata.emplace_back("step", std::to_string(state.step));
  c.metadata.emplace_back("seed", std::to_string(state.seed));
  c.metadata.emplace_back("n_critics", std::to_string(state.q.size()));
  c.metadata.insert(c.metadata.end(), b.metadata.begin(), b.metadata.end());
  c.columns.insert(c.columns.end(), b.columns.begin(), b.columns.end());
  auto add_net = [&](const nn::MlpParams& net, const std::string& prefix) {
    const auto ts = net.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) c.columns.emplace_back(prefix + std::to_string(i), ts[i]->values());
  };
  for (std::size_t i = 0; i < state.q.size(); ++i) {
    add_net(state.q[i], "q" + std::to_string(i) + ".");
    add_net(state.q_target[i], "q_target" + std::to_string(i) + ".");
  }
  add_net(state.v, "v.");
  data::write_container(c, path);
}

}  // namespace projiql::learn
