#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

// Everything a run needs before the first round: held-out splits, client
// stores and the ground-truth list of noisy clients.
struct PreparedData {
  HoldoutSplit split;
  std::vector<Dataset> clients;
  std::vector<std::size_t> noisy_clients;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
};

// Pure function of the data section and the seed.
PreparedData prepare_data(const DataSection& data, std::uint64_t seed);

// {"<client id>": [source example indices], ...}
std::string partition_manifest_json(std::span<const Dataset> clients);
void write_partition_manifest(const std::filesystem::path& path, std::span<const Dataset> clients);

// First 1-based round whose metric reaches the target (>= for accuracy, <=
// for loss).
std::optional<std::uint64_t> rounds_to_target(std::span<const RoundMetrics> history,
                                              StopMetric metric, double target);

struct RunOptions {
  std::filesystem::path out_dir;
  bool force = false;
};

struct RunReport {
  int exit_status = 0;
  std::vector<RoundMetrics> history;
  std::filesystem::path out_dir;
  std::string error;
};

// Executes one run and writes config.json, metrics.jsonl, summary.json,
// checkpoint.json (and agent_checkpoint.json for the RL strategy) into the
// output directory. Diagnostics go to `log`.
RunReport run_experiment(const RunConfig& cfg, const RunOptions& opts, std::ostream& log);

std::vector<RoundMetrics> read_metrics(const std::filesystem::path& jsonl);

struct ComparedRun {
  std::filesystem::path dir;
  std::string label;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> rounds;
  std::vector<RoundMetrics> history;
};

struct SpeedupRatio {
  std::string numerator;
  std::string denominator;
  double ratio = 0.0;  // rounds(numerator) / rounds(denominator)
};

struct LabelMedian {
  std::string label;
  std::size_t runs = 0;
  std::size_t reached = 0;
  std::optional<double> median_rounds;  // over runs that reached the target
};

struct Comparison {
  StopMetric metric = StopMetric::kValAcc;
  double target = 0.0;
  std::vector<ComparedRun> runs;
  std::vector<SpeedupRatio> ratios;      // every pair of runs that reached the target
  std::vector<LabelMedian> medians;      // one per label
  std::vector<SpeedupRatio> label_ratios;  // between label medians
};

Comparison compare_runs(std::span<const std::filesystem::path> dirs, StopMetric metric,
                        double target);

std::string format_comparison(const Comparison& c);
std::string comparison_csv(const Comparison& c);
// round, then one metric column per run; blank once a run has stopped.
std::string curves_csv(const Comparison& c);

double median(std::vector<double> values);

}  // namespace fedsim
