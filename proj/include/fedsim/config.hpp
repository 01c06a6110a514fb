#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/dga.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

struct SyntheticSource {
  SyntheticSpec spec;
  bool operator==(const SyntheticSource&) const = default;
};

struct CsvSource {
  std::string path;
  bool operator==(const CsvSource&) const = default;
};

struct IdxSource {
  std::string images;
  std::string labels;
  bool operator==(const IdxSource&) const = default;
};

using DataSource = std::variant<SyntheticSource, CsvSource, IdxSource>;

struct DataSection {
  DataSource source = SyntheticSource{};
  double validation_fraction = 0.1;
  double rehearsal_fraction = 0.1;
  PartitionSpec partition;
  NoiseSpec noise;
  bool operator==(const DataSection&) const = default;
};

struct ModelSection {
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::kReLU;
  bool operator==(const ModelSection&) const = default;
};

struct EvalSection {
  StopMetric metric = StopMetric::kValAcc;
  std::optional<double> target;
  bool early_stop = true;  // stop at the first round that reaches the target
  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  std::string label;  // defaults to the strategy name
  DataSection data;
  ModelSection model;
  FederationConfig federation;
  StrategyConfig strategy = UniformStrategy{};
  EvalSection eval;
  std::string output_dir = "runs/default";
  bool deterministic = true;

  // Input/output widths come from the loaded data.
  Architecture architecture(std::size_t input_dim, std::size_t classes) const;
  bool operator==(const RunConfig&) const = default;
};

// Parses and validates a JSON run configuration. Unknown keys are rejected.
// Syntax errors carry the line and column; semantic errors name the field.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Full configuration with every default written out.
std::string serialize_config(const RunConfig& cfg);

std::string to_string(StopMetric m);
StopMetric stop_metric_from_string(const std::string& name);

}  // namespace fedsim
