#include "fedsim/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "fedsim/error.hpp"

namespace fedsim {

void FederationConfig::validate(std::size_t num_clients) const {
  if (clients_per_round < 1) throw ConfigError("federation.clients_per_round must be at least 1");
  if (clients_per_round > num_clients) {
    throw ConfigError("federation.clients_per_round (" + std::to_string(clients_per_round) +
                      ") exceeds the number of clients K (" + std::to_string(num_clients) + ")");
  }
  if (client_steps < 1) throw ConfigError("federation.client_steps must be at least 1");
  if (client_batch_size < 1) throw ConfigError("federation.client_batch_size must be at least 1");
  if (workers < 1) throw ConfigError("federation.workers must be at least 1");
  client_optimizer.validate();
  std::visit([](const auto& c) { c.validate(); }, server_optimizer);
  if (rehearsal && rehearsal->batch_size < 1) {
    throw ConfigError("federation.rehearsal.batch_size must be at least 1");
  }
  if (rehearsal && !(rehearsal->learning_rate >= 0.0)) {
    throw ConfigError("federation.rehearsal.learning_rate must be non-negative");
  }
}

ServerOptimizer make_server_optimizer(const ServerOptimizerConfig& cfg, std::size_t num_params) {
  if (const auto* sgd = std::get_if<SgdConfig>(&cfg)) return ServerOptimizer::sgd(*sgd);
  return ServerOptimizer::adam(std::get<AdamConfig>(cfg), num_params);
}

std::vector<std::size_t> sample_clients(std::size_t k, std::size_t n, Rng& rng) {
  if (n < 1 || n > k) {
    throw std::invalid_argument("cannot sample " + std::to_string(n) + " distinct clients from " +
                                std::to_string(k));
  }
  std::vector<std::size_t> pool(k);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, k - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

std::string RoundMetrics::to_json_line() const {
  nlohmann::ordered_json j;
  j["round"] = round;
  j["clients"] = clients;
  j["weights"] = weights;
  j["client_losses"] = client_losses;  // NaN serializes as null
  j["val_loss"] = val_loss;
  j["val_acc"] = val_acc;
  j["weight_entropy"] = weight_entropy;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

RoundMetrics RoundMetrics::from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("metrics record: ") + e.what());
  }
  try {
    RoundMetrics m;
    m.round = j.at("round").get<std::uint64_t>();
    m.clients = j.at("clients").get<std::vector<std::size_t>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& v : j.at("client_losses")) {
      m.client_losses.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                            : v.get<double>());
    }
    m.val_loss = j.at("val_loss").get<double>();
    m.val_acc = j.at("val_acc").get<double>();
    m.weight_entropy = j.at("weight_entropy").get<double>();
    m.wall_ms = j.at("wall_ms").get<std::int64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics record: ") + e.what());
  }
}

RlState::RlState(RlStrategy c, std::size_t slots, std::uint64_t seed)
    : cfg(std::move(c)),
      agent(slots, cfg.agent, mix_seed(seed, {stream::kAgentInit})),
      memory(cfg.agent.replay_capacity),
      explore_rng(mix_seed(seed, {stream::kAgentExplore})),
      replay_rng(mix_seed(seed, {stream::kReplay})) {}

Federation::Federation(FederationConfig cfg, Architecture arch, std::vector<Dataset> clients,
                       Dataset validation, Dataset rehearsal, StrategyConfig strategy)
    : cfg_(std::move(cfg)),
      arch_(std::move(arch)),
      clients_(std::move(clients)),
      validation_(std::move(validation)),
      rehearsal_(std::move(rehearsal)),
      strategy_(std::move(strategy)) {
  arch_.validate();
  cfg_.validate(clients_.size());
  validate_strategy(strategy_);
  if (validation_.empty()) throw ConfigError("validation set is empty");
  if (cfg_.rehearsal && cfg_.rehearsal->steps > 0 && rehearsal_.empty()) {
    throw ConfigError("rehearsal is enabled but the held-out set is empty");
  }
  if (const auto* rl = std::get_if<RlStrategy>(&strategy_)) {
    rl_ = std::make_unique<RlState>(*rl, cfg_.clients_per_round, cfg_.seed);
  }
  scorer_ = validation_error_scorer(validation_);
  pool_ = std::make_unique<WorkerPool>(cfg_.workers);
}

ServerState Federation::initial_state() const {
  Rng rng(mix_seed(cfg_.seed, {stream::kModelInit}));
  ServerState s;
  s.architecture = arch_;
  s.global_params = to_params(Mlp::initialized(arch_, rng));
  s.optimizer = make_server_optimizer(cfg_.server_optimizer, s.global_params.size());
  s.master_seed = cfg_.seed;
  return s;
}

Evaluation Federation::validate(const ServerState& state) const {
  return evaluate_params(arch_, state.global_params, validation_);
}

namespace {

struct WorkerReply {
  ClientOutcome outcome;
  std::exception_ptr error;
};

}  // namespace

std::vector<ClientOutcome> Federation::dispatch(const ServerState& state,
                                                const std::vector<std::size_t>& ids) {
  const std::uint64_t round = state.round + 1;
  auto seed_params = std::make_shared<const ParameterVector>(state.global_params);
  Channel<WorkerReply> replies;
  for (auto id : ids) {
    ClientTrainConfig tc{cfg_.client_steps, cfg_.client_batch_size, cfg_.client_optimizer,
                         mix_seed(cfg_.seed, {stream::kClient, round, id})};
    const Dataset* data = &clients_[id];
    pool_->submit([id, tc, data, seed_params, this, &replies] {
      WorkerReply reply;
      try {
        reply.outcome = client_train(id, *seed_params, arch_, *data, tc);
      } catch (...) {
        reply.outcome.client_id = id;
        reply.error = std::current_exception();
      }
      replies.send(std::move(reply));
    });
  }
  std::vector<ClientOutcome> outcomes;
  outcomes.reserve(ids.size());
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto reply = replies.receive();
    if (reply.error && !first_error) first_error = reply.error;
    outcomes.push_back(std::move(reply.outcome));
  }
  if (first_error) std::rethrow_exception(first_error);
  if (cfg_.deterministic) {
    std::sort(outcomes.begin(), outcomes.end(),
              [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  }
  return outcomes;
}

RoundOutcome Federation::run_round(const ServerState& state) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t round = state.round + 1;
  const std::size_t n = cfg_.clients_per_round;

  Rng sampler(mix_seed(cfg_.seed, {stream::kSampling, round}));
  const auto ids = sample_clients(clients_.size(), n, sampler);

  // Results in fold order (sorted by id in deterministic mode, arrival order
  // otherwise).
  auto outcomes = dispatch(state, ids);

  RoundOutcome out;
  std::vector<std::size_t> slot_of(clients_.size());
  for (std::size_t j = 0; j < n; ++j) slot_of[ids[j]] = j;

  std::vector<const ClientResult*> by_slot(n, nullptr);
  for (const auto& o : outcomes) {
    if (o.ok()) {
      by_slot[slot_of[o.client_id]] = &*o.result;
    } else {
      out.failed_clients.push_back(o.client_id);
    }
  }
  std::sort(out.failed_clients.begin(), out.failed_clients.end());
  if (out.failed_clients.size() == n) {
    throw RoundError("round " + std::to_string(round) + ": all " + std::to_string(n) +
                     " sampled clients failed");
  }

  std::vector<bool> alive(n);
  std::vector<double> losses(n, std::numeric_limits<double>::quiet_NaN());
  double max_loss = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    alive[j] = by_slot[j] != nullptr;
    if (alive[j]) {
      losses[j] = by_slot[j]->train_loss;
      max_loss = std::max(max_loss, losses[j]);
    }
  }

  // Softmax over surviving slots, zero elsewhere.
  auto survivor_softmax = [&](double beta) {
    std::vector<double> live;
    for (std::size_t j = 0; j < n; ++j) {
      if (alive[j]) live.push_back(losses[j]);
    }
    const auto w = softmax_weights(live, beta);
    AggregationWeights full(n, 0.0);
    for (std::size_t j = 0, k = 0; j < n; ++j) {
      if (alive[j]) full[j] = w[k++];
    }
    return full;
  };
  auto size_adjusted = [&](AggregationWeights w) {
    if (!cfg_.size_weighting) return w;
    for (std::size_t j = 0; j < n; ++j) {
      if (alive[j]) w[j] *= static_cast<double>(by_slot[j]->dataset_size);
    }
    return renormalize(std::move(w), alive);
  };

  // Pseudo-gradients in fold order, paired with their slot.
  std::vector<PseudoGradient> grads;
  std::vector<std::size_t> grad_slot;
  for (const auto& o : outcomes) {
    if (!o.ok()) continue;
    grads.push_back(pseudo_gradient(o.client_id, state.global_params, o.result->final_params));
    grad_slot.push_back(slot_of[o.client_id]);
  }
  auto in_fold_order = [&](const AggregationWeights& w) {
    std::vector<double> v(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) v[i] = w[grad_slot[i]];
    return v;
  };
  std::vector<std::size_t> fold_ids;
  for (const auto& g : grads) fold_ids.push_back(g.client_id);

  AggregationWeights weights;
  ServerState next;
  if (std::holds_alternative<RlStrategy>(strategy_)) {
    RlState& rl = *rl_;
    std::vector<ClientFeatures> feats(n);
    for (std::size_t j = 0; j < n; ++j) {
      feats[j] = alive[j] ? ClientFeatures::of(*by_slot[j]) : ClientFeatures{max_loss, 0.0, 0.0};
    }
    Observation obs = build_observation(feats);
    AggregationWeights a = rl.agent.explore(obs, rl.explore_rng);
    a = renormalize(std::move(a), alive);
    AggregationWeights b = survivor_softmax(rl.cfg.beta);
    a = size_adjusted(std::move(a));
    b = size_adjusted(std::move(b));

    const auto wa = in_fold_order(a);
    const auto wb = in_fold_order(b);
    auto cand = evaluate_candidates(state, grads, wa, wb, fold_ids, scorer_);
    const auto decision = compute_reward(cand.cer_a, cand.cer_b, rl.cfg.policy);

    RlRoundInfo info{obs, a, b, cand.cer_a, cand.cer_b, decision, cand.state_a.global_params,
                     cand.state_b.global_params};
    if (decision.chosen == Candidate::kA) {
      next = std::move(cand.state_a);
      weights = a;
    } else {
      next = std::move(cand.state_b);
      weights = b;
    }
    rl.memory.push(Transition{std::move(obs), a, decision.reward});
    if (auto batch = rl.memory.sample(rl.replay_rng, rl.cfg.agent.minibatch)) {
      rl.agent.update(*batch);
    }
    out.rl = std::move(info);
  } else {
    if (std::holds_alternative<SoftmaxStrategy>(strategy_)) {
      weights = survivor_softmax(std::get<SoftmaxStrategy>(strategy_).beta);
    } else {
      weights = renormalize(uniform_weights(n), alive);
    }
    weights = size_adjusted(std::move(weights));
    const auto w = in_fold_order(weights);
    StreamingAggregator agg(state.global_params.size());
    for (std::size_t i = 0; i < grads.size(); ++i) agg.add(w[i], grads[i].values);
    next = server_update(state, agg.result());
  }

  if (cfg_.rehearsal) {
    next = rehearsal_step(std::move(next), rehearsal_, *cfg_.rehearsal,
                          mix_seed(cfg_.seed, {stream::kRehearsal, round}));
  }

  const auto ev = validate(next);
  out.metrics.round = round;
  out.metrics.clients = ids;
  out.metrics.weights = weights;
  out.metrics.client_losses = losses;
  out.metrics.val_loss = ev.loss;
  out.metrics.val_acc = ev.accuracy;
  out.metrics.weight_entropy = weight_entropy(weights);
  if (!cfg_.deterministic) {
    out.metrics.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
  }
  out.state = std::move(next);
  return out;
}

std::vector<RoundMetrics> Federation::run_training(ServerState& state,
                                                   const RoundCallback& on_round) {
  std::vector<RoundMetrics> history;
  for (std::size_t r = 0; r < cfg_.max_rounds; ++r) {
    auto outcome = run_round(state);
    if (on_round) on_round(outcome);
    state = std::move(outcome.state);
    history.push_back(std::move(outcome.metrics));
    const auto& m = history.back();
    if (cfg_.early_stop && cfg_.early_stop->reached(m.val_acc, m.val_loss)) break;
  }
  return history;
}

}  // namespace fedsim
