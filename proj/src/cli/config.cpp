#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"

namespace projiql::cli {

namespace {

enum class Type { text, number, count, flag, numbers, counts };

struct Key {
  const char* name;
  const char* fallback;
  Type type;
};

// Desk-scale defaults: 2e4 steps, evaluation every 500 steps, width-64 networks.
const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      {"run.name", "run", Type::text},
      {"run.out", "runs", Type::text},
      {"run.seeds", "0,2,4,6,8", Type::counts},
      {"run.threads", "1", Type::count},

      {"env.kind", "pointmaze", Type::text},
      {"env.layout", "mazes/four_rooms.txt", Type::text},
      {"env.max_steps", "30", Type::count},
      {"env.gamma", "0.95", Type::number},
      {"env.slip", "0", Type::number},
      {"env.action_bound", "0.7", Type::number},
      {"env.goal_radius", "0.5", Type::number},

      {"data.path", "dataset.pqd", Type::text},
      {"data.episodes", "300", Type::count},
      {"data.seed", "1", Type::count},
      {"data.behavior", "waypoint-noisy", Type::text},
      {"data.epsilon", "0", Type::number},
      {"data.noise", "0.1", Type::number},
      {"data.reward_shift", "-1", Type::number},
      {"data.random_start", "true", Type::flag},
      {"data.segment_steps", "30", Type::count},

      {"learner.mode", "proj-iql", Type::text},
      {"learner.inverse_temperature", "3", Type::number},
      {"learner.expectile_tau", "0.7", Type::number},
      {"learner.polyak_coef", "0.005", Type::number},
      {"learner.clip_low", "0.5", Type::number},
      {"learner.clip_high", "1", Type::number},
      {"learner.tau_reduction", "clip-then-mean", Type::text},
      {"learner.advantage_cap", "100", Type::number},
      {"learner.density_floor", "1e-8", Type::number},
      {"learner.gamma", "0.99", Type::number},
      {"learner.lr_q", "3e-4", Type::number},
      {"learner.lr_v", "3e-4", Type::number},
      {"learner.lr_policy", "3e-4", Type::number},
      {"learner.lr_bc", "3e-4", Type::number},
      {"learner.batch_size", "256", Type::count},
      {"learner.bc_batch_size", "256", Type::count},
      {"learner.steps", "20000", Type::count},
      {"learner.bc_steps", "5000", Type::count},
      {"learner.hidden_width", "64", Type::count},
      {"learner.hidden_layers", "2", Type::count},
      {"learner.n_critics", "2", Type::count},
      {"learner.policy_dropout", "0", Type::number},
      {"learner.state_dependent_std", "true", Type::flag},
      {"learner.log_std_low", "-1.6", Type::number},
      {"learner.log_std_high", "2", Type::number},
      {"learner.policy_init", "random", Type::text},
      {"learner.eval_every", "500", Type::count},
      {"learner.eval_episodes", "10", Type::count},

      {"sweep.taus", "0.3,0.6,0.9", Type::numbers},
      {"sweep.batches", "16,64,128,256", Type::counts},
      {"sweep.window", "1000", Type::count},
  };
  return keys;
}

const Key* find_key(const std::string& name) {
  for (const Key& k : schema())
    if (name == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const auto t = trim(s);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
  return r.ec == std::errc() && r.ptr == t.data() + t.size() && std::isfinite(out);
}

bool parse_count(const std::string& s, std::uint64_t& out) {
  const auto t = trim(s);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
  return r.ec == std::errc() && r.ptr == t.data() + t.size() && !t.empty();
}

bool parse_flag(const std::string& s, bool& out) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    out = true;
    return true;
  }
  if (t == "false" || t == "0" || t == "no" || t == "off") {
    out = false;
    return true;
  }
  return false;
}

void check_value(const Key& key, const std::string& value) {
  bool ok = true;
  double d = 0.0;
  std::uint64_t u = 0;
  bool b = false;
  switch (key.type) {
    case Type::text: ok = !value.empty(); break;
    case Type::number: ok = parse_double(value, d); break;
    case Type::count: ok = parse_count(value, u); break;
    case Type::flag: ok = parse_flag(value, b); break;
    case Type::numbers:
      for (const auto& item : split_list(value)) ok = ok && parse_double(item, d);
      ok = ok && !split_list(value).empty();
      break;
    case Type::counts:
      for (const auto& item : split_list(value)) ok = ok && parse_count(item, u);
      ok = ok && !split_list(value).empty();
      break;
  }
  if (!ok) throw ConfigError("bad value '" + value + "' for " + key.name);
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const Key& k : schema()) v.emplace_back(k.name);
    return v;
  }();
  return names;
}

RunConfig::RunConfig() : base_dir(fs::current_path()) {
  for (const Key& k : schema()) values_[k.name] = k.fallback;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(origin + ": key '" + section + "' is outside any [section]");
    for (const auto& [key, value] : body) config.set(section + "." + key, trim(value.data()));
  }
  return config;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig config = parse(buffer.str(), path.string());
  config.base_dir = fs::absolute(path).parent_path();
  return config;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not section.key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
  check_value(*k, value);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  double d = 0.0;
  if (!parse_double(get(key), d)) throw ConfigError(key + " is not a number");
  return d;
}

std::size_t RunConfig::count(const std::string& key) const {
  std::uint64_t u = 0;
  if (!parse_count(get(key), u)) throw ConfigError(key + " is not a non-negative integer");
  return static_cast<std::size_t>(u);
}

std::uint64_t RunConfig::seed(const std::string& key) const { return count(key); }

bool RunConfig::flag(const std::string& key) const {
  bool b = false;
  if (!parse_flag(get(key), b)) throw ConfigError(key + " is not a boolean");
  return b;
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) {
    double d = 0.0;
    if (!parse_double(item, d)) throw ConfigError(key + " has a non-numeric entry '" + item + "'");
    out.push_back(d);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get("run.seeds"))) {
    std::uint64_t u = 0;
    if (!parse_count(item, u)) throw ConfigError("run.seeds has a bad entry '" + item + "'");
    out.push_back(u);
  }
  return out;
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  std::string section;
  for (const Key& k : schema()) {
    const std::string name = k.name;
    const auto dot = name.find('.');
    if (name.substr(0, dot) != section) {
      if (!section.empty()) out << "\n";
      section = name.substr(0, dot);
      out << "[" << section << "]\n";
    }
    out << name.substr(dot + 1) << " = " << values_.at(name) << "\n";
  }
  return out.str();
}

void RunConfig::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_string();
  if (!out) throw ConfigError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

fs::path resolve(const RunConfig& config, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : config.base_dir / p;
}

fs::path output_root(const RunConfig& config) {
  if (const char* env = std::getenv("PROJIQL_OUT"); env != nullptr && *env != '\0') return fs::path(env);
  return resolve(config, config.get("run.out"));
}

fs::path dataset_path(const RunConfig& config) {
  const fs::path p(config.get("data.path"));
  return p.is_absolute() ? p : output_root(config) / p;
}

namespace {

envs::Layout load_layout(const RunConfig& config) {
  const fs::path p = resolve(config, config.get("env.layout"));
  if (!fs::exists(p)) throw ConfigError("layout file " + p.string() + " does not exist");
  return envs::Layout::load(p.string());
}

int horizon(std::size_t steps, const char* key) {
  if (steps == 0 || steps > 1000000) throw ConfigError(std::string(key) + " must be in [1, 1e6]");
  return static_cast<int>(steps);
}

envs::Environment make_environment(const RunConfig& config, bool for_data) {
  const std::string kind = config.get("env.kind");
  const std::size_t segment = config.count("data.segment_steps");
  const int steps = horizon(for_data && segment > 0 ? segment : config.count("env.max_steps"),
                            for_data && segment > 0 ? "data.segment_steps" : "env.max_steps");
  if (kind == "gridmaze") {
    envs::GridMazeOptions o;
    o.gamma = config.number("env.gamma");
    o.slip = config.number("env.slip");
    o.max_steps = steps;
    return envs::Environment(envs::build_gridmaze(load_layout(config), o));
  }
  if (kind == "pointmaze") {
    envs::PointMazeEnv pm;
    pm.layout = load_layout(config);
    pm.max_steps = steps;
    pm.action_bound = config.number("env.action_bound");
    pm.goal_radius = config.number("env.goal_radius");
    pm.random_start = for_data && config.flag("data.random_start");
    pm.validate();
    return envs::Environment(pm);
  }
  throw ConfigError("env.kind must be gridmaze or pointmaze, got '" + kind + "'");
}

}  // namespace

envs::Environment data_environment(const RunConfig& config) { return make_environment(config, true); }
envs::Environment eval_environment(const RunConfig& config) { return make_environment(config, false); }

envs::BehaviorPolicySpec behavior_spec(const RunConfig& config) {
  envs::BehaviorPolicySpec spec;
  try {
    spec.kind = envs::BehaviorPolicySpec::parse_kind(config.get("data.behavior"));
  } catch (const Error& e) {
    throw ConfigError(std::string("data.behavior: ") + e.what());
  }
  spec.epsilon = config.number("data.epsilon");
  spec.noise = config.number("data.noise");
  spec.validate();
  return spec;
}

learn::LearnerConfig learner_config(const RunConfig& config) {
  learn::LearnerConfig c;
  try {
    c.mode = learn::mode_from_string(config.get("learner.mode"));
    c.tau_reduction = learn::tau_reduction_from_string(config.get("learner.tau_reduction"));
    c.policy_init = learn::policy_init_from_string(config.get("learner.policy_init"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("learner: ") + e.what());
  }
  c.inverse_temperature = config.number("learner.inverse_temperature");
  c.expectile_tau = config.number("learner.expectile_tau");
  c.polyak_coef = config.number("learner.polyak_coef");
  c.clip_low = config.number("learner.clip_low");
  c.clip_high = config.number("learner.clip_high");
  c.advantage_cap = config.number("learner.advantage_cap");
  c.density_floor = config.number("learner.density_floor");
  c.gamma = config.number("learner.gamma");
  c.lr_q = config.number("learner.lr_q");
  c.lr_v = config.number("learner.lr_v");
  c.lr_policy = config.number("learner.lr_policy");
  c.lr_bc = config.number("learner.lr_bc");
  c.batch_size = config.count("learner.batch_size");
  c.bc_batch_size = config.count("learner.bc_batch_size");
  c.steps = config.count("learner.steps");
  c.bc_steps = config.count("learner.bc_steps");
  c.hidden_width = config.count("learner.hidden_width");
  c.hidden_layers = config.count("learner.hidden_layers");
  c.n_critics = config.count("learner.n_critics");
  c.policy_dropout = config.number("learner.policy_dropout");
  c.state_dependent_std = config.flag("learner.state_dependent_std");
  c.log_std_low = config.number("learner.log_std_low");
  c.log_std_high = config.number("learner.log_std_high");
  c.eval_every = config.count("learner.eval_every");
  c.eval_episodes = config.count("learner.eval_episodes");
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("learner: ") + e.what());
  }
  return c;
}

}  // namespace projiql::cli
