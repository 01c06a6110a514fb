#pragma once

#include <cstdint>
#include <span>

#include "fedsim/client.hpp"
#include "fedsim/data.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

struct ServerState {
  std::uint64_t round = 0;  // completed rounds
  Architecture architecture;
  ParameterVector global_params;
  ServerOptimizer optimizer;
  std::uint64_t master_seed = 0;

  bool operator==(const ServerState&) const = default;
};

// Weighted running sum over pseudo-gradients with a single accumulator.
class StreamingAggregator {
 public:
  explicit StreamingAggregator(std::size_t length) : sum_(std::vector<double>(length, 0.0)) {}

  void add(double weight, const ParameterVector& grad);
  std::size_t count() const { return count_; }

  // Throws std::logic_error if nothing was added.
  ParameterVector result() const;

 private:
  ParameterVector sum_;
  std::size_t count_ = 0;
};

struct WeightedGradient {
  double weight = 0.0;
  const ParameterVector* grad = nullptr;
};

// Folds the stream in the given order. Weights are expected to be normalized
// already.
ParameterVector aggregate_streaming(std::span<const WeightedGradient> stream);

// One server-optimizer step on the aggregated pseudo-gradient; round += 1.
ServerState server_update(ServerState state, const ParameterVector& aggregated);

struct RehearsalConfig {
  std::size_t steps = 1;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;

  bool operator==(const RehearsalConfig&) const = default;
};

// SGD steps on held-out data after the global update. With steps == 0 or a
// zero rate the state comes back unchanged.
ServerState rehearsal_step(ServerState state, const Dataset& heldout,
                           const RehearsalConfig& cfg, std::uint64_t seed);

Evaluation evaluate_params(const Architecture& arch, const ParameterVector& params,
                           const Dataset& data);

}  // namespace fedsim
