#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/data.hpp"
#include "fedsim/dga.hpp"
#include "fedsim/server.hpp"
#include "fedsim/worker_pool.hpp"

namespace fedsim {

using ServerOptimizerConfig = std::variant<SgdConfig, AdamConfig>;

enum class StopMetric { kValAcc, kValLoss };

struct EarlyStop {
  StopMetric metric = StopMetric::kValAcc;
  double target = 1.0;

  bool reached(double val_acc, double val_loss) const {
    return metric == StopMetric::kValAcc ? val_acc >= target : val_loss <= target;
  }
  bool operator==(const EarlyStop&) const = default;
};

struct FederationConfig {
  std::size_t clients_per_round = 1;  // N
  std::size_t max_rounds = 100;
  std::size_t client_steps = 1;  // local SGD steps per round
  std::size_t client_batch_size = 32;
  SgdConfig client_optimizer;
  ServerOptimizerConfig server_optimizer = AdamConfig{};
  std::optional<RehearsalConfig> rehearsal;
  bool size_weighting = false;  // multiply strategy weights by client data size
  std::size_t workers = 1;
  bool deterministic = true;
  std::uint64_t seed = 0;
  std::optional<EarlyStop> early_stop;

  // Throws ConfigError; `num_clients` is K.
  void validate(std::size_t num_clients) const;
  bool operator==(const FederationConfig&) const = default;
};

ServerOptimizer make_server_optimizer(const ServerOptimizerConfig& cfg, std::size_t num_params);

// Distinct ids drawn uniformly from [0, k); the pool is full again next round.
std::vector<std::size_t> sample_clients(std::size_t k, std::size_t n, Rng& rng);

struct RoundMetrics {
  std::uint64_t round = 0;
  std::vector<std::size_t> clients;  // sampled order
  std::vector<double> weights;       // aligned with clients
  std::vector<double> client_losses; // NaN for clients that produced no result
  double val_loss = 0.0;
  double val_acc = 0.0;
  double weight_entropy = 0.0;
  std::int64_t wall_ms = 0;

  // One JSONL record; NaN losses are written as null.
  std::string to_json_line() const;
  static RoundMetrics from_json_line(const std::string& line);

  bool operator==(const RoundMetrics&) const = default;
};

struct RlRoundInfo {
  Observation observation;  // agent input before this round's update
  AggregationWeights weights_a;
  AggregationWeights weights_b;
  double cer_a = 0.0;
  double cer_b = 0.0;
  RewardDecision decision;
  ParameterVector candidate_a;
  ParameterVector candidate_b;
};

struct RoundOutcome {
  ServerState state;
  RoundMetrics metrics;
  std::vector<std::size_t> failed_clients;
  std::optional<RlRoundInfo> rl;
};

class RoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reinforcement-learned weighting state carried across rounds.
struct RlState {
  RlStrategy cfg;
  RlAgent agent;
  ReplayMemory memory;
  Rng explore_rng;
  Rng replay_rng;

  RlState(RlStrategy c, std::size_t slots, std::uint64_t seed);
};

// The server loop: sampling, dispatch to workers, weighting, aggregation,
// global update, rehearsal and validation.
class Federation {
 public:
  Federation(FederationConfig cfg, Architecture arch, std::vector<Dataset> clients,
             Dataset validation, Dataset rehearsal, StrategyConfig strategy);
  // The default scorer refers to validation_.
  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  const FederationConfig& config() const { return cfg_; }
  const Architecture& architecture() const { return arch_; }
  std::size_t num_clients() const { return clients_.size(); }
  const StrategyConfig& strategy() const { return strategy_; }
  const RlState* rl_state() const { return rl_.get(); }
  RlState* rl_state() { return rl_.get(); }

  // Replaces the CER evaluation used to reward the agent.
  void set_candidate_scorer(CandidateScorer scorer) { scorer_ = std::move(scorer); }

  ServerState initial_state() const;
  Evaluation validate(const ServerState& state) const;

  RoundOutcome run_round(const ServerState& state);

  using RoundCallback = std::function<void(const RoundOutcome&)>;

  // Runs until max_rounds or the early-stop target. `state` is advanced in
  // place.
  std::vector<RoundMetrics> run_training(ServerState& state, const RoundCallback& on_round = {});

 private:
  std::vector<ClientOutcome> dispatch(const ServerState& state,
                                      const std::vector<std::size_t>& ids);

  FederationConfig cfg_;
  Architecture arch_;
  std::vector<Dataset> clients_;
  Dataset validation_;
  Dataset rehearsal_;
  StrategyConfig strategy_;
  std::unique_ptr<RlState> rl_;
  CandidateScorer scorer_;
  std::unique_ptr<WorkerPool> pool_;
};

}  // namespace fedsim
