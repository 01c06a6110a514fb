#include "fedsim/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void StreamingAggregator::add(double weight, const ParameterVector& grad) {
  if (grad.size() != sum_.size()) {
    throw LengthError("pseudo-gradient length " + std::to_string(grad.size()) +
                      " does not match aggregate length " + std::to_string(sum_.size()));
  }
  if (!std::isfinite(weight)) throw NumericError("non-finite aggregation weight");
  for (std::size_t i = 0; i < grad.size(); ++i) sum_[i] += weight * grad[i];
  ++count_;
}

ParameterVector StreamingAggregator::result() const {
  if (count_ == 0) throw std::logic_error("aggregation over an empty stream");
  return sum_;
}

ParameterVector aggregate_streaming(std::span<const WeightedGradient> stream) {
  if (stream.empty()) throw std::logic_error("aggregation over an empty stream");
  StreamingAggregator agg(stream.front().grad->size());
  for (const auto& item : stream) agg.add(item.weight, *item.grad);
  return agg.result();
}

ServerState server_update(ServerState state, const ParameterVector& aggregated) {
  state.global_params = state.optimizer.step(state.global_params, aggregated);
  state.round += 1;
  return state;
}

ServerState rehearsal_step(ServerState state, const Dataset& heldout, const RehearsalConfig& cfg,
                           std::uint64_t seed) {
  if (cfg.steps == 0) return state;
  if (heldout.empty()) throw ConfigError("rehearsal is enabled but the held-out set is empty");
  if (cfg.learning_rate == 0.0) return state;

  Rng rng(seed);
  const std::size_t batch = std::min(cfg.batch_size, heldout.size());
  std::vector<std::size_t> order(heldout.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t pos = order.size();
  const SgdConfig sgd{cfg.learning_rate, 0.0};
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> rows;
    rows.reserve(batch);
    while (rows.size() < batch) {
      if (pos == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      rows.push_back(order[pos++]);
    }
    auto [loss, grad] = backward(from_params(state.architecture, state.global_params),
                                 heldout.batch(rows));
    state.global_params = sgd_step(state.global_params, grad, sgd).params;
  }
  return state;
}

Evaluation evaluate_params(const Architecture& arch, const ParameterVector& params,
                           const Dataset& data) {
  return evaluate(from_params(arch, params), data.as_batch());
}

}  // namespace fedsim
