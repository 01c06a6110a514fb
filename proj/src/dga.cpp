#include "fedsim/dga.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/error.hpp"

namespace fedsim {

AggregationWeights uniform_weights(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform weights need at least one client");
  return AggregationWeights(n, 1.0 / static_cast<double>(n));
}

AggregationWeights softmax_weights(std::span<const double> losses, double beta) {
  if (losses.empty()) throw std::invalid_argument("softmax weights need at least one loss");
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("softmax temperature must be finite and non-negative");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw NumericError("non-finite client loss");
  }
  // exp(-beta * L) is largest at the smallest loss.
  const double shift = beta * *std::min_element(losses.begin(), losses.end());
  AggregationWeights w(losses.size());
  double total = 0.0;
  for (std::size_t j = 0; j < losses.size(); ++j) {
    w[j] = std::exp(shift - beta * losses[j]);
    total += w[j];
  }
  for (auto& v : w) v /= total;
  return w;
}

double weight_entropy(std::span<const double> weights) {
  double h = 0.0;
  for (double w : weights) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

AggregationWeights renormalize(AggregationWeights weights, const std::vector<bool>& keep) {
  if (keep.size() != weights.size()) throw LengthError("mask length differs from weights");
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!keep[j]) weights[j] = 0.0;
    total += weights[j];
  }
  if (!(total > 0.0)) {
    // All surviving slots carried zero mass; fall back to uniform over them.
    const auto n = static_cast<double>(std::count(keep.begin(), keep.end(), true));
    if (n == 0.0) throw std::invalid_argument("no slot survives the mask");
    for (std::size_t j = 0; j < weights.size(); ++j) weights[j] = keep[j] ? 1.0 / n : 0.0;
    return weights;
  }
  for (auto& w : weights) w /= total;
  return weights;
}

Observation build_observation(std::span<const ClientFeatures> clients) {
  const std::size_t n = clients.size();
  Observation obs(3 * n, 0.0);
  if (n == 0) return obs;
  auto standardize = [&](std::size_t feature, auto get) {
    double mean = 0.0;
    for (const auto& c : clients) mean += get(c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& c : clients) var += (get(c) - mean) * (get(c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
      obs[3 * j + feature] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? (get(clients[j]) - mean) / sd : 0.0;
    }
  };
  standardize(0, [](const ClientFeatures& c) { return c.loss; });
  standardize(1, [](const ClientFeatures& c) { return c.grad_mean; });
  standardize(2, [](const ClientFeatures& c) { return c.grad_var; });
  for (double v : obs) {
    if (!std::isfinite(v)) throw NumericError("non-finite observation feature");
  }
  return obs;
}

void RewardPolicy::validate() const {
  if (!(threshold >= 0.0)) throw ConfigError("reward threshold must be non-negative");
  if (!(reward > 0.0)) throw ConfigError("base reward must be positive");
}

RewardDecision compute_reward(double cer_a, double cer_b, const RewardPolicy& policy) {
  if (cer_b - cer_a > policy.threshold) return {Candidate::kA, policy.reward};
  if (std::abs(cer_a - cer_b) <= policy.threshold) return {Candidate::kA, 0.1 * policy.reward};
  return {Candidate::kB, -policy.reward};
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayMemory::push(Transition t) {
  buffer_.push_back(std::move(t));
  while (buffer_.size() > capacity_) buffer_.pop_front();
}

std::optional<std::vector<Transition>> ReplayMemory::sample(Rng& rng, std::size_t batch) const {
  if (buffer_.empty()) return std::nullopt;
  std::vector<Transition> out;
  out.reserve(batch);
  if (buffer_.size() < batch) {
    std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(buffer_[pick(rng)]);
    return out;
  }
  // Partial Fisher-Yates over the indices.
  std::vector<std::size_t> idx(buffer_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(buffer_[idx[i]]);
  }
  return out;
}

void AgentConfig::validate() const {
  optimizer.validate();
  if (!(exploration >= 0.0) || !std::isfinite(exploration)) {
    throw ConfigError("agent exploration must be finite and non-negative");
  }
  if (replay_capacity == 0) throw ConfigError("replay capacity must be positive");
  if (minibatch == 0) throw ConfigError("agent minibatch must be positive");
}

Architecture RlAgent::architecture_for(std::size_t n) {
  if (n == 0) throw ConfigError("agent needs at least one client slot");
  return Architecture{{3 * n, 2 * n, n, std::max<std::size_t>(8, n / 4), n}, Activation::kReLU};
}

RlAgent::RlAgent(std::size_t clients_per_round, AgentConfig cfg, std::uint64_t seed)
    : slots_(clients_per_round),
      cfg_(std::move(cfg)),
      network_(architecture_for(clients_per_round)),
      adam_(AdamState::fresh(architecture_for(clients_per_round).parameter_count())) {
  cfg_.validate();
  Rng rng(seed);
  network_ = Mlp::initialized(architecture_for(slots_), rng);
  // Zero output layer: the untrained agent weights clients uniformly.
  const auto last = network_.num_layers() - 1;
  for (auto& v : network_.weights(last).values()) v = 0.0;
  std::fill(network_.bias(last).begin(), network_.bias(last).end(), 0.0);
}

Matrix RlAgent::logits(const Observation& obs) const {
  if (obs.size() != 3 * slots_) {
    throw DimensionError("observation length " + std::to_string(obs.size()) + ", agent expects " +
                         std::to_string(3 * slots_));
  }
  Matrix z = forward(network_, Matrix(1, obs.size(), obs));
  for (double v : z.values()) {
    if (!std::isfinite(v)) throw NumericError("non-finite agent output");
  }
  return z;
}

AggregationWeights RlAgent::infer(const Observation& obs) const {
  const Matrix p = softmax_rows(logits(obs));
  return AggregationWeights(p.values().begin(), p.values().end());
}

AggregationWeights RlAgent::explore(const Observation& obs, Rng& rng) const {
  Matrix z = logits(obs);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : z.values()) v += cfg_.exploration * noise(rng);
  const Matrix p = softmax_rows(z);
  return AggregationWeights(p.values().begin(), p.values().end());
}

void RlAgent::update(std::span<const Transition> minibatch) {
  if (minibatch.empty()) return;
  const std::size_t m = minibatch.size();
  const std::size_t in = 3 * slots_;
  Matrix inputs(m, in);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = minibatch[i];
    if (t.observation.size() != in || t.action.size() != slots_) {
      throw DimensionError("transition does not match the agent's slot count");
    }
    std::copy(t.observation.begin(), t.observation.end(), inputs.row(i).begin());
  }
  Matrix pi = softmax_rows(forward(network_, inputs));
  // d/dz of -r * sum_j a_j log pi_j is -r * (a - pi) because sum_j a_j = 1.
  Matrix dz(m, slots_);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = minibatch[i];
    for (std::size_t j = 0; j < slots_; ++j) {
      dz(i, j) = -t.reward * (t.action[j] - pi(i, j)) * scale;
    }
  }
  const ParameterVector grad = backprop(network_, inputs, dz);
  ParameterVector params = to_params(network_);
  adam_update(params, grad, adam_, cfg_.optimizer);
  network_ = from_params(network_.architecture(), params);
}

void RlAgent::restore(Mlp network, AdamState adam) {
  if (network.architecture() != architecture_for(slots_)) {
    throw DimensionError("restored agent network has the wrong architecture");
  }
  if (adam.m.size() != network.architecture().parameter_count() ||
      adam.v.size() != adam.m.size()) {
    throw LengthError("restored agent optimizer state has the wrong length");
  }
  network_ = std::move(network);
  adam_ = std::move(adam);
}

AggregationWeights rl_infer_weights(const RlAgent& agent, const Observation& obs) {
  return agent.infer(obs);
}

void agent_update(RlAgent& agent, std::span<const Transition> minibatch) {
  agent.update(minibatch);
}

namespace {

ServerState apply_weights(const ServerState& state, std::span<const PseudoGradient> grads,
                          std::span<const double> weights) {
  if (weights.size() != grads.size()) throw LengthError("weights and gradients differ in count");
  StreamingAggregator agg(state.global_params.size());
  for (std::size_t j = 0; j < grads.size(); ++j) agg.add(weights[j], grads[j].values);
  return server_update(state, agg.result());
}

}  // namespace

CandidateEvaluation evaluate_candidates(const ServerState& state,
                                        std::span<const PseudoGradient> grads,
                                        std::span<const double> weights_a,
                                        std::span<const double> weights_b,
                                        std::span<const std::size_t> client_ids,
                                        const CandidateScorer& scorer) {
  CandidateEvaluation out{apply_weights(state, grads, weights_a),
                          apply_weights(state, grads, weights_b), 0.0, 0.0};
  out.cer_a = scorer(out.state_a, weights_a, client_ids);
  out.cer_b = std::equal(weights_a.begin(), weights_a.end(), weights_b.begin(), weights_b.end())
                  ? out.cer_a
                  : scorer(out.state_b, weights_b, client_ids);
  return out;
}

CandidateScorer validation_error_scorer(const Dataset& validation) {
  return [&validation](const ServerState& candidate, std::span<const double>,
                       std::span<const std::size_t>) {
    return evaluate_params(candidate.architecture, candidate.global_params, validation)
        .error_rate();
  };
}

std::string strategy_name(const StrategyConfig& s) {
  switch (s.index()) {
    case 0:
      return "uniform";
    case 1:
      return "softmax";
    default:
      return "rl";
  }
}

void validate_strategy(const StrategyConfig& s) {
  if (const auto* sm = std::get_if<SoftmaxStrategy>(&s)) {
    if (!(sm->beta >= 0.0) || !std::isfinite(sm->beta)) {
      throw ConfigError("strategy.beta must be finite and non-negative");
    }
  } else if (const auto* rl = std::get_if<RlStrategy>(&s)) {
    if (!(rl->beta >= 0.0) || !std::isfinite(rl->beta)) {
      throw ConfigError("strategy.beta must be finite and non-negative");
    }
    rl->policy.validate();
    rl->agent.validate();
  }
}

}  // namespace fedsim
