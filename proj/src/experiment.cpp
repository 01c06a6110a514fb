#include "fedsim/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "fedsim/checkpoint.hpp"
#include "fedsim/error.hpp"
#include "json.hpp"

namespace fedsim {

namespace {

using ordered_json = nlohmann::ordered_json;

Dataset load_source(const DataSection& data, Rng& rng) {
  if (const auto* s = std::get_if<SyntheticSource>(&data.source)) {
    return generate_synthetic(s->spec, rng);
  }
  if (const auto* c = std::get_if<CsvSource>(&data.source)) return load_csv(c->path);
  const auto& idx = std::get<IdxSource>(data.source);
  return load_idx(idx.images, idx.labels);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json number_or_null(std::optional<double> v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

std::string run_name(const ComparedRun& r) {
  return r.label + "/seed_" + std::to_string(r.seed);
}

}  // namespace

PreparedData prepare_data(const DataSection& data, std::uint64_t seed) {
  Rng data_rng(mix_seed(seed, {stream::kData}));
  Dataset full = load_source(data, data_rng);
  full.validate();

  Rng split_rng(mix_seed(seed, {stream::kSplit}));
  PreparedData out;
  out.split = split_holdout(full, data.validation_fraction, data.rehearsal_fraction, split_rng);

  Rng part_rng(mix_seed(seed, {stream::kPartition}));
  auto clients = partition(out.split.train, data.partition, part_rng);

  Rng noise_rng(mix_seed(seed, {stream::kNoise}));
  auto noisy = inject_label_noise(std::move(clients), data.noise, noise_rng);
  out.clients = std::move(noisy.clients);
  out.noisy_clients = std::move(noisy.noisy_ids);
  out.input_dim = full.features.cols();
  out.num_classes = full.num_classes;
  return out;
}

std::string partition_manifest_json(std::span<const Dataset> clients) {
  ordered_json doc = ordered_json::object();
  for (std::size_t k = 0; k < clients.size(); ++k) {
    doc[std::to_string(k)] = clients[k].source_index;
  }
  return doc.dump() + "\n";
}

void write_partition_manifest(const std::filesystem::path& path,
                              std::span<const Dataset> clients) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, partition_manifest_json(clients));
}

std::optional<std::uint64_t> rounds_to_target(std::span<const RoundMetrics> history,
                                              StopMetric metric, double target) {
  const EarlyStop stop{metric, target};
  for (const auto& m : history) {
    if (stop.reached(m.val_acc, m.val_loss)) return m.round;
  }
  return std::nullopt;
}

RunReport run_experiment(const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  RunReport report;
  report.out_dir = opts.out_dir.empty() ? std::filesystem::path(cfg.output_dir) : opts.out_dir;
  const auto& dir = report.out_dir;
  try {
    const auto metrics_path = dir / "metrics.jsonl";
    if (std::filesystem::exists(metrics_path) && !opts.force) {
      throw ConfigError("run directory " + dir.string() +
                        " already holds a run; pass --force to overwrite");
    }
    std::filesystem::create_directories(dir);
    write_text(dir / "config.json", serialize_config(cfg));

    const auto t0 = std::chrono::steady_clock::now();
    PreparedData data = prepare_data(cfg.data, cfg.federation.seed);
    const Architecture arch = cfg.architecture(data.input_dim, data.num_classes);
    Federation fed(cfg.federation, arch, std::move(data.clients), data.split.validation,
                   data.split.rehearsal, cfg.strategy);
    ServerState state = fed.initial_state();

    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string());
    std::size_t failures = 0;
    report.history = fed.run_training(state, [&](const RoundOutcome& o) {
      metrics << o.metrics.to_json_line() << '\n';
      metrics.flush();
      failures += o.failed_clients.size();
      if (!o.failed_clients.empty()) {
        log << "round " << o.metrics.round << ": " << o.failed_clients.size()
            << " client(s) failed\n";
      }
    });
    if (!metrics) throw std::runtime_error("write failed: " + metrics_path.string());
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();

    save_checkpoint(dir / "checkpoint.json", state);
    if (const auto* rl = fed.rl_state()) {
      save_agent_checkpoint(dir / "agent_checkpoint.json", rl->agent, state.round);
    }

    const auto& h = report.history;
    const bool early = cfg.federation.early_stop && !h.empty() &&
                       cfg.federation.early_stop->reached(h.back().val_acc, h.back().val_loss);
    const bool complete = h.size() == cfg.federation.max_rounds || early;

    ordered_json summary;
    summary["label"] = cfg.label;
    summary["seed"] = cfg.federation.seed;
    summary["strategy"] = strategy_name(cfg.strategy);
    summary["status"] = complete ? (early ? "target_reached" : "completed") : "incomplete";
    summary["rounds"] = h.size();
    summary["final_val_loss"] = h.empty() ? ordered_json(nullptr) : ordered_json(h.back().val_loss);
    summary["final_val_acc"] = h.empty() ? ordered_json(nullptr) : ordered_json(h.back().val_acc);
    summary["metric"] = to_string(cfg.eval.metric);
    summary["target"] = number_or_null(cfg.eval.target);
    std::optional<std::uint64_t> hit;
    if (cfg.eval.target) hit = rounds_to_target(h, cfg.eval.metric, *cfg.eval.target);
    summary["rounds_to_target"] = hit ? ordered_json(*hit) : ordered_json(nullptr);
    summary["failed_client_results"] = failures;
    summary["noisy_clients"] = data.noisy_clients;
    summary["wall_ms"] = cfg.federation.deterministic ? 0 : wall_ms;
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    report.exit_status = complete ? 0 : 1;
    if (!complete) log << "run stopped after " << h.size() << " rounds without completing\n";
  } catch (const std::exception& e) {
    report.exit_status = 1;
    report.error = e.what();
    log << "error: " << e.what() << '\n';
  }
  return report;
}

std::vector<RoundMetrics> read_metrics(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw std::runtime_error("cannot open " + jsonl.string());
  std::vector<RoundMetrics> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(RoundMetrics::from_json_line(line));
    } catch (const std::exception& e) {
      throw ParseError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Comparison compare_runs(std::span<const std::filesystem::path> dirs, StopMetric metric,
                        double target) {
  if (dirs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");
  Comparison c;
  c.metric = metric;
  c.target = target;
  for (const auto& dir : dirs) {
    const auto summary_path = dir / "summary.json";
    const auto metrics_path = dir / "metrics.jsonl";
    if (!std::filesystem::exists(summary_path) || !std::filesystem::exists(metrics_path)) {
      throw std::runtime_error("run " + dir.string() + " is missing or incomplete");
    }
    ComparedRun r;
    r.dir = dir;
    const auto summary = nlohmann::json::parse(read_text(summary_path));
    const auto status = summary.value("status", std::string{});
    if (status != "completed" && status != "target_reached") {
      throw std::runtime_error("run " + dir.string() + " is incomplete (status '" + status + "')");
    }
    r.label = summary.value("label", dir.filename().string());
    r.seed = summary.value("seed", std::uint64_t{0});
    r.history = read_metrics(metrics_path);
    if (r.history.empty()) throw std::runtime_error("run " + dir.string() + " has no rounds");
    r.rounds = rounds_to_target(r.history, metric, target);
    c.runs.push_back(std::move(r));
  }

  for (std::size_t i = 0; i < c.runs.size(); ++i) {
    for (std::size_t j = 0; j < c.runs.size(); ++j) {
      if (i == j || !c.runs[i].rounds || !c.runs[j].rounds) continue;
      c.ratios.push_back({run_name(c.runs[i]), run_name(c.runs[j]),
                          static_cast<double>(*c.runs[i].rounds) /
                              static_cast<double>(*c.runs[j].rounds)});
    }
  }

  std::map<std::string, std::vector<const ComparedRun*>> by_label;
  std::vector<std::string> order;
  for (const auto& r : c.runs) {
    if (by_label.find(r.label) == by_label.end()) order.push_back(r.label);
    by_label[r.label].push_back(&r);
  }
  for (const auto& label : order) {
    LabelMedian m{label, by_label[label].size(), 0, std::nullopt};
    std::vector<double> hits;
    for (const auto* r : by_label[label]) {
      if (r->rounds) hits.push_back(static_cast<double>(*r->rounds));
    }
    m.reached = hits.size();
    if (!hits.empty()) m.median_rounds = median(hits);
    c.medians.push_back(m);
  }
  for (const auto& a : c.medians) {
    for (const auto& b : c.medians) {
      if (&a == &b || !a.median_rounds || !b.median_rounds) continue;
      c.label_ratios.push_back({a.label, b.label, *a.median_rounds / *b.median_rounds});
    }
  }
  return c;
}

std::string format_comparison(const Comparison& c) {
  std::ostringstream out;
  out << "metric " << to_string(c.metric) << ", target " << c.target << "\n\n";
  out << std::left << std::setw(28) << "run" << std::setw(10) << "rounds" << "final\n";
  for (const auto& r : c.runs) {
    const auto& last = r.history.back();
    const double final = c.metric == StopMetric::kValAcc ? last.val_acc : last.val_loss;
    out << std::setw(28) << run_name(r) << std::setw(10)
        << (r.rounds ? std::to_string(*r.rounds) : std::string("-")) << fmt(final) << '\n';
  }
  if (!c.ratios.empty()) {
    out << "\npairwise rounds ratio (row / column)\n";
    for (const auto& s : c.ratios) {
      out << "  " << s.numerator << " / " << s.denominator << " = " << fmt(s.ratio, 3) << '\n';
    }
  }
  if (c.medians.size() < c.runs.size()) {
    out << "\nper-label median rounds\n";
    for (const auto& m : c.medians) {
      out << "  " << std::setw(20) << m.label << m.reached << "/" << m.runs << " reached, median "
          << (m.median_rounds ? fmt(*m.median_rounds, 1) : std::string("-")) << '\n';
    }
    for (const auto& s : c.label_ratios) {
      out << "  " << s.numerator << " / " << s.denominator << " = " << fmt(s.ratio, 3) << '\n';
    }
  }
  return out.str();
}

std::string comparison_csv(const Comparison& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "kind,name,other,value\n";
  for (const auto& r : c.runs) {
    out << "rounds," << run_name(r) << ",,";
    if (r.rounds) out << *r.rounds;
    out << '\n';
  }
  for (const auto& s : c.ratios) {
    out << "ratio," << s.numerator << ',' << s.denominator << ',' << s.ratio << '\n';
  }
  for (const auto& m : c.medians) {
    out << "median," << m.label << ",,";
    if (m.median_rounds) out << *m.median_rounds;
    out << '\n';
  }
  for (const auto& s : c.label_ratios) {
    out << "label_ratio," << s.numerator << ',' << s.denominator << ',' << s.ratio << '\n';
  }
  return out.str();
}

std::string curves_csv(const Comparison& c) {
  std::ostringstream out;
  out << std::setprecision(17) << "round";
  std::size_t longest = 0;
  for (const auto& r : c.runs) {
    out << ',' << run_name(r);
    longest = std::max(longest, r.history.size());
  }
  out << '\n';
  for (std::size_t i = 0; i < longest; ++i) {
    out << i + 1;
    for (const auto& r : c.runs) {
      out << ',';
      if (i < r.history.size()) {
        out << (c.metric == StopMetric::kValAcc ? r.history[i].val_acc : r.history[i].val_loss);
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fedsim
