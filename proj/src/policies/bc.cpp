#include <cmath>
#include <numeric>

#include "projiql/errors.hpp"
#include "projiql/policies.hpp"

namespace projiql::pol {

namespace {

std::uint64_t dropout_key(std::uint64_t seed, std::size_t step) { return stream_key(seed ^ 0x62635f64726f70ULL, step); }

}  // namespace

double bc_loss(const data::OfflineDataset& dataset, const Policy& policy) {
  const nn::Tensor obs = encode_states(dataset.meta, dataset.states);
  const nn::Tensor act = action_tensor(dataset.meta, dataset.actions);
  const auto lp = log_density(policy, obs, act);
  return -std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
}

BcResult bc_train(const data::OfflineDataset& dataset, Policy policy, const BcConfig& config) {
  if (dataset.empty()) throw ValidationError("behavior cloning needs a non-empty dataset");
  if (config.batch_size == 0 && !config.full_batch) throw ValidationError("batch size must be at least 1");
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");

  BcResult result;
  result.loss_history.reserve(config.steps);
  std::vector<nn::Tensor> snapshot;
  for (const auto* t : policy.parameters()) snapshot.push_back(*t);
  nn::AdamState adam = nn::make_adam_state(snapshot);

  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const data::Batch batch = config.full_batch
                                  ? data::gather(dataset, all)
                                  : data::sample_batch(dataset, config.batch_size, config.seed, step);
    nn::Tape tape;
    const PolicyBinding binding = bind(tape, policy, true);
    const nn::Var obs = tape.constant(encode_states(dataset.meta, batch.states));
    const nn::Tensor act = action_tensor(dataset.meta, batch.actions);
    std::optional<std::uint64_t> drop;
    if (policy.config().dropout > 0.0) drop = dropout_key(config.seed, step);
    const nn::Var loss = nn::neg(nn::mean(log_density(policy, binding, obs, act, drop)));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw TrainingError("behavior cloning loss is not finite", static_cast<long>(step));
    result.loss_history.push_back(value);
    const auto grads = binding.gradients(tape.backward(loss));
    try {
      nn::adam_step(policy.parameters(), grads, adam, config.learning_rate, {},
                    [&](std::size_t i) { return policy.parameter_name(i); });
    } catch (const ValidationError& e) {
      throw TrainingError(std::string("behavior cloning: ") + e.what(), static_cast<long>(step));
    }
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace projiql::pol
