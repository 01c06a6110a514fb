// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/config.hpp"
#include "fedsim/dga.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/server.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::max_abs_diff;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

fs::path scratch_root() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / "fedsim_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::vector<RoundMetrics> run_config(const std::string& json, const std::string& name) {
  std::ostringstream log;
  const auto report = run_experiment(parse_config(json), RunOptions{scratch_root() / name, true}, log);
  if (report.exit_status != 0) throw std::runtime_error(name + ": " + report.error);
  return report.history;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Analytic gradients against central differences.
Verdict gradient_oracle() {
  Rng rng(20240611);
  std::uniform_int_distribution<int> depth(0, 3), width(1, 32), dim(1, 12), cls(2, 8), rows(1, 16);
  double worst = 0.0;
  int nets = 0;
  while (nets < 120) {
    Architecture arch;
    arch.activation = (nets % 2 == 0) ? Activation::kReLU : Activation::kTanh;
    arch.layer_dims.push_back(dim(rng));
    for (int h = depth(rng); h > 0; --h) arch.layer_dims.push_back(width(rng));
    arch.layer_dims.push_back(cls(rng));
    const Mlp m = Mlp::initialized(arch, rng);
    const Batch b = fedsim::testing::random_batch(rows(rng), arch.layer_dims.front(),
                                                  arch.layer_dims.back(), rng);
    // A ReLU kink within reach of the probe makes the difference quotient
    // meaningless; draw another network instead.
    if (arch.activation == Activation::kReLU &&
        fedsim::testing::min_abs_preactivation(m, b.inputs) < 1e-3) {
      continue;
    }
    const auto analytic = backward(m, b).grad.values;
    const auto numeric = finite_diff_grad(m, b, 1e-6).values;
    worst = std::max(worst, fedsim::testing::relative_error(analytic, numeric));
    ++nets;
  }
  return {worst < 1e-5, std::to_string(nets) + " networks, max relative error " + fmt("%.3g", worst)};
}

struct SmallTask {
  Architecture arch;
  std::vector<Dataset> clients;
  Dataset validation;
  Dataset rehearsal;
};

SmallTask small_task(std::size_t k, std::uint64_t seed) {
  SmallTask t;
  t.arch = Architecture{{8, 10, 3}, Activation::kReLU};
  const Dataset all = fedsim::testing::blobs(k * 20 + 100, 8, 3, 1.0, seed);
  Rng rng(seed + 1);
  auto split = split_holdout(all, 50.0 / all.size(), 50.0 / all.size(), rng);
  t.clients = partition(split.train, PartitionSpec{PartitionSpec::Kind::kIid, k, 1.0}, rng);
  t.validation = split.validation;
  t.rehearsal = split.rehearsal;
  return t;
}

// 2. Uniform weights, server SGD at lr 1: the new model is the client mean.
Verdict fedavg_identity() {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, k)(rng);
    const SmallTask t = small_task(k, 100 + trial);
    FederationConfig cfg;
    cfg.clients_per_round = n;
    cfg.client_steps = 3;
    cfg.client_batch_size = 8;
    cfg.client_optimizer = SgdConfig{0.1, 0.0};
    cfg.server_optimizer = SgdConfig{1.0, 0.0};
    cfg.seed = 900 + trial;
    Federation fed(cfg, t.arch, t.clients, t.validation, t.rehearsal, UniformStrategy{});
    const ServerState start = fed.initial_state();
    const auto out = fed.run_round(start);
    std::vector<double> mean(start.global_params.size(), 0.0);
    for (auto id : out.metrics.clients) {
      const ClientTrainConfig tc{cfg.client_steps, cfg.client_batch_size, cfg.client_optimizer,
                                 mix_seed(cfg.seed, {stream::kClient, 1, id})};
      const auto r = client_train(id, start.global_params, t.arch, t.clients[id], tc);
      for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] += r.result->final_params[i] / static_cast<double>(n);
      }
    }
    worst = std::max(worst, max_abs_diff(out.state.global_params.values, mean));
  }
  return {worst <= 1e-10, "20 random federations, max deviation " + fmt("%.3g", worst)};
}

// 3. One client, one local step, server SGD at lr 1 equals one centralized step.
Verdict degenerate_federation() {
  const SmallTask t = small_task(1, 55);
  FederationConfig cfg;
  cfg.clients_per_round = 1;
  cfg.client_steps = 1;
  cfg.client_batch_size = t.clients[0].size();
  cfg.client_optimizer = SgdConfig{0.2, 0.0};
  cfg.server_optimizer = SgdConfig{1.0, 0.0};
  cfg.seed = 3;
  Federation fed(cfg, t.arch, t.clients, t.validation, t.rehearsal, UniformStrategy{});
  const ServerState start = fed.initial_state();
  const auto out = fed.run_round(start);
  const auto g = backward(from_params(t.arch, start.global_params), t.clients[0].as_batch()).grad;
  std::vector<double> central(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) central[i] = start.global_params[i] - 0.2 * g[i];
  const double d = max_abs_diff(out.state.global_params.values, central);
  return {d <= 1e-12, "max deviation from the centralized step " + fmt("%.3g", d)};
}

// 4. Softmax weighting properties.
Verdict softmax_properties() {
  Rng rng(11);
  std::uniform_real_distribution<double> loss(0.0, 5.0), shift(-50.0, 50.0);
  std::vector<std::string> failures;
  int concentrated = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
    std::vector<double> l(n);
    for (auto& x : l) x = loss(rng);
    const double beta = std::uniform_real_distribution<double>(0.0, 20.0)(rng);
    const auto w = softmax_weights(l, beta);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-12 || *std::min_element(w.begin(), w.end()) < 0.0) {
      failures.push_back("simplex");
    }
    for (double x : softmax_weights(l, 0.0)) {
      if (std::abs(x - 1.0 / n) > 1e-15) failures.push_back("beta=0");
    }
    std::vector<double> moved(l);
    const double c = shift(rng);
    for (auto& x : moved) x += c;
    if (max_abs_diff(softmax_weights(moved, beta), w) > 1e-12) failures.push_back("translation");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (l[i] < l[j] && w[i] < w[j]) failures.push_back("anti-monotonicity");
      }
    }
    // Distinct minimum so the argmin is well defined.
    const std::size_t best = std::min_element(l.begin(), l.end()) - l.begin();
    l[best] -= 0.01;
    if (softmax_weights(l, 1e3)[best] > 0.99) ++concentrated;
  }
  const bool ok = failures.empty() && concentrated == trials;
  std::string detail = std::to_string(trials) + " trials, beta=1e3 concentrated in " +
                       std::to_string(concentrated);
  if (!failures.empty()) detail += ", first failure: " + failures.front();
  return {ok, detail};
}

// 5. Streaming aggregation against materialize-then-sum.
Verdict streaming_equivalence() {
  Rng rng(21);
  double same = 0.0, permuted = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 100, len = 1000;
    std::vector<ParameterVector> grads;
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) total += (x = std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    for (auto& x : w) x /= total;
    for (std::size_t j = 0; j < n; ++j) grads.push_back(fedsim::testing::random_params(len, rng));
    std::vector<std::vector<double>> scaled(n, std::vector<double>(len));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < len; ++i) scaled[j][i] = w[j] * grads[j][i];
    }
    std::vector<double> batch(len, 0.0);
    for (const auto& s : scaled) {
      for (std::size_t i = 0; i < len; ++i) batch[i] += s[i];
    }
    std::vector<WeightedGradient> stream;
    for (std::size_t j = 0; j < n; ++j) stream.push_back({w[j], &grads[j]});
    same = std::max(same, max_abs_diff(aggregate_streaming(stream).values, batch));
    std::shuffle(stream.begin(), stream.end(), rng);
    permuted = std::max(permuted, max_abs_diff(aggregate_streaming(stream).values, batch));
  }
  return {same <= 1e-12 && permuted <= 1e-9,
          fmt("max deviation %.3g in order, %.3g permuted", same, permuted)};
}

std::string synthetic_task(const std::string& strategy, const std::string& server, double rho,
                           std::size_t rounds, std::uint64_t seed, std::size_t workers = 1) {
  return R"({
    "label": "acceptance",
    "data": {"source": {"kind": "synthetic", "classes": 10, "dims": 20, "examples": 10000,
                        "cluster_spread": 1.0, "center_scale": 1.0},
             "partition": {"kind": "iid", "clients": 50},
             "noise": {"noisy_client_fraction": )" +
         std::to_string(rho) + R"(, "label_flip_prob": 0.5}},
    "model": {"hidden": [32]},
    "federation": {"clients_per_round": 10, "max_rounds": )" +
         std::to_string(rounds) + R"(, "client_steps": 1, "client_batch_size": 32,
                   "client_optimizer": {"learning_rate": 0.1},
                   "server_optimizer": )" +
         server + R"(, "workers": )" + std::to_string(workers) + R"(, "seed": )" +
         std::to_string(seed) + R"(},
    "strategy": )" +
         strategy + R"(
  })";
}

const char* kAdamServer = R"({"kind": "adam", "learning_rate": 0.03})";
const char* kFedAvgServer = R"({"kind": "sgd", "learning_rate": 1.0})";

// Target: the baseline's plateau (mean of its last 10 rounds) minus 0.01.
double plateau_target(const std::vector<RoundMetrics>& h) {
  double s = 0.0;
  for (std::size_t i = h.size() - 10; i < h.size(); ++i) s += h[i].val_acc;
  return s / 10.0 - 0.01;
}

double ratio_to(const std::vector<RoundMetrics>& h, double target, std::uint64_t base_rounds) {
  const auto r = rounds_to_target(h, StopMetric::kValAcc, target);
  return r ? static_cast<double>(*r) / static_cast<double>(base_rounds) : INFINITY;
}

// 6. Softmax weighting converges faster than uniform under label noise.
Verdict dga_speedup() {
  const std::size_t rounds = 300;
  std::vector<double> by_beta[3];
  const double betas[3] = {1.0, 5.0, 10.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto base =
        run_config(synthetic_task(R"({"kind": "uniform"})", kAdamServer, 0.2, rounds, seed), "c6_u");
    const double target = plateau_target(base);
    const auto base_rounds = rounds_to_target(base, StopMetric::kValAcc, target);
    for (int b = 0; b < 3; ++b) {
      const auto h = run_config(
          synthetic_task(R"({"kind": "softmax", "beta": )" + std::to_string(betas[b]) + "}",
                         kAdamServer, 0.2, rounds, seed),
          "c6_s");
      by_beta[b].push_back(ratio_to(h, target, *base_rounds));
    }
  }
  double best = INFINITY, best_beta = 0.0;
  std::string detail = "median round ratio vs uniform:";
  for (int b = 0; b < 3; ++b) {
    const double m = median(by_beta[b]);
    detail += fmt(" beta=%g %.3f", betas[b], m);
    if (m < best) best = m, best_beta = betas[b];
  }
  return {best <= 0.75, detail + fmt(" (best beta=%g, %.3f <= 0.75)", best_beta, best)};
}

// 7. Adam on the server beats plain FedAvg without noise.
Verdict hierarchical_speedup() {
  const std::size_t rounds = 300;
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto base = run_config(
        synthetic_task(R"({"kind": "uniform"})", kFedAvgServer, 0.0, rounds, seed), "c7_f");
    const double target = plateau_target(base);
    const auto base_rounds = rounds_to_target(base, StopMetric::kValAcc, target);
    const auto h =
        run_config(synthetic_task(R"({"kind": "uniform"})", kAdamServer, 0.0, rounds, seed), "c7_a");
    ratios.push_back(ratio_to(h, target, *base_rounds));
  }
  const double m = median(ratios);
  return {m <= 0.8, fmt("median round ratio Adam server vs FedAvg %.3f (<= 0.8)", m)};
}

double mean_weight_on(const AggregationWeights& w, const std::vector<std::size_t>& ids,
                      const std::set<std::size_t>& noisy, std::size_t* count) {
  double s = 0.0;
  *count = 0;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (noisy.count(ids[j])) s += w[j], ++*count;
  }
  return *count ? s / static_cast<double>(*count) : 0.0;
}

// 8. RL weighting mechanics and a directional learning check.
Verdict rl_mechanics() {
  std::vector<std::string> failures;

  ReplayMemory memory;
  for (int i = 0; i < 1005; ++i) memory.push(Transition{{double(i)}, {1.0}, 0.0});
  if (memory.capacity() != 1000 || memory.size() != 1000 || memory[0].observation[0] != 5.0) {
    failures.push_back("replay capacity/FIFO");
  }
  Rng rng(1);
  const auto batch = memory.sample(rng, AgentConfig{}.minibatch);
  if (AgentConfig{}.minibatch != 32 || !batch || batch->size() != 32) failures.push_back("minibatch");
  const RewardPolicy policy{0.001, 1.0};
  if (compute_reward(0.10, 0.20, policy).reward != 1.0 ||
      compute_reward(0.20, 0.10, policy).reward != -1.0 ||
      compute_reward(0.10, 0.1005, policy).reward != 0.1) {
    failures.push_back("reward values");
  }

  std::vector<double> before, after;
  bool adopted_exactly = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RunConfig cfg =
        parse_config(synthetic_task(R"({"kind": "rl"})", kAdamServer, 0.2, 200, seed));
    const PreparedData data = prepare_data(cfg.data, cfg.federation.seed);
    const std::set<std::size_t> noisy(data.noisy_clients.begin(), data.noisy_clients.end());
    Federation fed(cfg.federation, cfg.architecture(data.input_dim, data.num_classes), data.clients,
                   data.split.validation, data.split.rehearsal, cfg.strategy);
    // Reward oracle: a candidate is better the less weight it puts on the
    // known-noisy clients.
    fed.set_candidate_scorer([&](const ServerState&, std::span<const double> w,
                                 std::span<const std::size_t> ids) {
      double mass = 0.0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (noisy.count(ids[i])) mass += w[i];
      }
      return mass;
    });
    ServerState state = fed.initial_state();
    std::vector<std::pair<Observation, std::vector<std::size_t>>> late;
    for (std::size_t round = 1; round <= 200; ++round) {
      auto out = fed.run_round(state);
      const auto& info = *out.rl;
      const auto& adopted = info.decision.chosen == Candidate::kA ? info.candidate_a : info.candidate_b;
      adopted_exactly = adopted_exactly && out.state.global_params == adopted;
      if (round == 1) {
        // Round-1 value: the untrained agent on the first observation.
        RlAgent fresh(cfg.federation.clients_per_round, std::get<RlStrategy>(cfg.strategy).agent, 0);
        std::size_t c = 0;
        const double v = mean_weight_on(fresh.infer(info.observation), out.metrics.clients, noisy, &c);
        if (c > 0) before.push_back(v);
      }
      if (round > 190) late.emplace_back(info.observation, out.metrics.clients);
      state = std::move(out.state);
    }
    double sum = 0.0;
    std::size_t rounds_with_noisy = 0;
    for (const auto& [obs, ids] : late) {
      std::size_t c = 0;
      const double v = mean_weight_on(fed.rl_state()->agent.infer(obs), ids, noisy, &c);
      if (c > 0) sum += v, ++rounds_with_noisy;
    }
    after.push_back(sum / static_cast<double>(rounds_with_noisy));
  }
  if (!adopted_exactly) failures.push_back("adopted model differs from its candidate");
  const double b = median(before), a = median(after);
  if (!(a < b)) failures.push_back("noisy-client weight did not fall");
  std::string detail = fmt("median noisy-client weight round 1 %.4f, after 200 rounds %.4f", b, a);
  if (!failures.empty()) detail += ", first failure: " + failures.front();
  return {failures.empty(), detail};
}

// 9. Rehearsal on a convex task.
Verdict rehearsal() {
  const Architecture logreg{{20, 10}, Activation::kReLU};
  std::vector<std::string> failures;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset held = fedsim::testing::blobs(200, 20, 10, 1.5, 40 + seed);
    Rng rng(seed);
    ServerState s;
    s.architecture = logreg;
    s.global_params = to_params(Mlp::initialized(logreg, rng));
    s.optimizer = ServerOptimizer::sgd(SgdConfig{});
    const double before = evaluate_params(logreg, s.global_params, held).loss;
    for (double lr : {1e-2, 1e-3}) {
      const auto next = rehearsal_step(s, held, RehearsalConfig{1, held.size(), lr}, seed);
      if (!(evaluate_params(logreg, next.global_params, held).loss < before)) {
        failures.push_back("loss did not decrease at lr " + fmt("%g", lr));
      }
    }
    if (!(rehearsal_step(s, held, RehearsalConfig{0, 32, 1e-2}, seed) == s)) {
      failures.push_back("zero steps changed the state");
    }
  }
  // Disabled rehearsal inside a federation is bit-identical to none.
  const SmallTask t = small_task(6, 77);
  FederationConfig cfg;
  cfg.clients_per_round = 3;
  cfg.max_rounds = 5;
  cfg.seed = 8;
  auto train = [&](std::optional<RehearsalConfig> r) {
    auto c = cfg;
    c.rehearsal = r;
    Federation fed(c, t.arch, t.clients, t.validation, t.rehearsal, UniformStrategy{});
    ServerState st = fed.initial_state();
    fed.run_training(st);
    return st;
  };
  if (!(train(RehearsalConfig{0, 16, 1e-2}) == train(std::nullopt))) {
    failures.push_back("disabled rehearsal changed training");
  }
  std::string detail = "20 convex tasks at lr 1e-2 and 1e-3";
  if (!failures.empty()) detail += ", first failure: " + failures.front();
  return {failures.empty(), detail};
}

// 10. Byte-identical metrics across runs and worker-pool sizes.
Verdict determinism() {
  std::vector<std::string> streams;
  const std::size_t pools[] = {1, 4, 8, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    for (const char* strategy : {R"({"kind": "softmax", "beta": 5})", R"({"kind": "rl"})"}) {
      const std::string name = "c10_" + std::to_string(i) + (strategy[10] == 's' ? "s" : "r");
      run_config(synthetic_task(strategy, kAdamServer, 0.2, 30, 4, pools[i]), name);
      streams.push_back(slurp(scratch_root() / name / "metrics.jsonl"));
    }
  }
  bool same = true;
  for (std::size_t i = 2; i < streams.size(); ++i) same = same && streams[i] == streams[i % 2];
  return {same && !streams[0].empty(), "softmax and RL runs with 1, 4, 8 and 1 workers"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"FedAvg identity", fedavg_identity},
      {"single-client federation equals centralized SGD", degenerate_federation},
      {"softmax weight properties", softmax_properties},
      {"streaming aggregation equivalence", streaming_equivalence},
      {"softmax weighting speedup under label noise", dga_speedup},
      {"Adam server speedup over FedAvg", hierarchical_speedup},
      {"RL weighting mechanics", rl_mechanics},
      {"rehearsal step", rehearsal},
      {"determinism across runs and pool sizes", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu: %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first, v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  fs::remove_all(scratch_root());
  return failed == 0 ? 0 : 1;
}
