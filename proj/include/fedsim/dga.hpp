#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/server.hpp"

namespace fedsim {

// Per-slot aggregation weights; non-negative and summing to one.
using AggregationWeights = std::vector<double>;

AggregationWeights uniform_weights(std::size_t n);

// alpha_j = exp(-beta * L_j) / sum_i exp(-beta * L_i), max-shifted.
AggregationWeights softmax_weights(std::span<const double> losses, double beta);

// -sum alpha ln alpha, with 0 ln 0 = 0.
double weight_entropy(std::span<const double> weights);

// Zeroes the masked-out slots and rescales the rest to sum to one.
AggregationWeights renormalize(AggregationWeights weights, const std::vector<bool>& keep);

struct ClientFeatures {
  double loss = 0.0;
  double grad_mean = 0.0;
  double grad_var = 0.0;

  static ClientFeatures of(const ClientResult& r) {
    return {r.train_loss, r.grad_mag_mean, r.grad_mag_var};
  }
};

// Flattened (loss, grad mean, grad var) triples in slot order, each feature
// standardized across the slots with the population standard deviation.
using Observation = std::vector<double>;

Observation build_observation(std::span<const ClientFeatures> clients);

struct RewardPolicy {
  double threshold = 0.001;  // CER difference treated as a tie
  double reward = 1.0;

  void validate() const;
  bool operator==(const RewardPolicy&) const = default;
};

enum class Candidate { kA, kB };

struct RewardDecision {
  Candidate chosen = Candidate::kA;
  double reward = 0.0;
};

// A is the agent's weighting, B the softmax weighting. A lower CER is better.
RewardDecision compute_reward(double cer_a, double cer_b, const RewardPolicy& policy);

struct Transition {
  Observation observation;
  AggregationWeights action;
  double reward = 0.0;
};

class ReplayMemory {
 public:
  static constexpr std::size_t kDefaultCapacity = 1000;
  static constexpr std::size_t kDefaultBatch = 32;

  explicit ReplayMemory(std::size_t capacity = kDefaultCapacity);

  void push(Transition t);  // evicts the oldest entry when full

  // nullopt when empty. Draws with replacement while the memory holds fewer
  // than `batch` entries, without replacement otherwise.
  std::optional<std::vector<Transition>> sample(Rng& rng,
                                                std::size_t batch = kDefaultBatch) const;

  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return buffer_.empty(); }
  auto begin() const { return buffer_.begin(); }
  auto end() const { return buffer_.end(); }
  const Transition& operator[](std::size_t i) const { return buffer_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Transition> buffer_;
};

struct AgentConfig {
  AdamConfig optimizer;           // defaults: lr 1e-3, 0.9, 0.999, 1e-8
  double exploration = 1.0;       // std-dev of Gaussian logit noise on training actions
  std::size_t replay_capacity = ReplayMemory::kDefaultCapacity;
  std::size_t minibatch = ReplayMemory::kDefaultBatch;

  void validate() const;
  bool operator==(const AgentConfig&) const = default;
};

// Weight-inference network: 3N -> 2N -> N -> max(8, N/4) -> N, ReLU hidden
// layers, softmax over the outputs.
class RlAgent {
 public:
  RlAgent(std::size_t clients_per_round, AgentConfig cfg, std::uint64_t seed);

  static Architecture architecture_for(std::size_t clients_per_round);

  std::size_t slots() const { return slots_; }
  const Mlp& network() const { return network_; }
  const AgentConfig& config() const { return cfg_; }
  const AdamState& optimizer_state() const { return adam_; }

  // Deterministic policy output.
  AggregationWeights infer(const Observation& obs) const;
  // Policy output with Gaussian perturbation of the logits, used to pick the
  // action that gets rewarded.
  AggregationWeights explore(const Observation& obs, Rng& rng) const;

  // One Adam step on mean_i -r_i * sum_j a_ij log pi_j(obs_i).
  void update(std::span<const Transition> minibatch);

  void restore(Mlp network, AdamState adam);

 private:
  Matrix logits(const Observation& obs) const;

  std::size_t slots_;
  AgentConfig cfg_;
  Mlp network_;
  AdamState adam_;
};

AggregationWeights rl_infer_weights(const RlAgent& agent, const Observation& obs);
void agent_update(RlAgent& agent, std::span<const Transition> minibatch);

struct CandidateEvaluation {
  ServerState state_a;
  ServerState state_b;
  double cer_a = 0.0;
  double cer_b = 0.0;
};

// Scores a candidate global model; lower is better. The default scorer is
// the validation error rate.
using CandidateScorer = std::function<double(
    const ServerState& candidate, std::span<const double> weights,
    std::span<const std::size_t> client_ids)>;

// Builds both candidate models from a copy of `state` (the live optimizer
// state is not advanced) and scores them.
CandidateEvaluation evaluate_candidates(const ServerState& state,
                                        std::span<const PseudoGradient> grads,
                                        std::span<const double> weights_a,
                                        std::span<const double> weights_b,
                                        std::span<const std::size_t> client_ids,
                                        const CandidateScorer& scorer);

CandidateScorer validation_error_scorer(const Dataset& validation);

struct UniformStrategy {
  bool operator==(const UniformStrategy&) const = default;
};

struct SoftmaxStrategy {
  double beta = 1.0;
  bool operator==(const SoftmaxStrategy&) const = default;
};

struct RlStrategy {
  double beta = 1.0;  // temperature of the softmax reference weighting
  RewardPolicy policy;
  AgentConfig agent;
  bool operator==(const RlStrategy&) const = default;
};

using StrategyConfig = std::variant<UniformStrategy, SoftmaxStrategy, RlStrategy>;

std::string strategy_name(const StrategyConfig& s);
void validate_strategy(const StrategyConfig& s);

}  // namespace fedsim
