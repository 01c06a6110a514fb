#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Labeled examples. `groups` is either empty or holds one key per row (the
// speaker-id analog). `source_index` maps each row back to the dataset it was
// first loaded or generated as.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::int64_t> groups;
  std::vector<std::size_t> source_index;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  bool has_groups() const { return !groups.empty(); }

  Dataset subset(std::span<const std::size_t> rows) const;
  Batch as_batch() const { return Batch{features, labels}; }
  Batch batch(std::span<const std::size_t> rows) const;

  void validate() const;
};

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dims = 20;
  std::size_t examples = 10000;
  double cluster_spread = 1.0;  // std-dev of each class cluster
  double center_scale = 1.0;    // std-dev of the class centers
  std::size_t speakers = 100;   // number of round-robin group keys

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

// Gaussian class clusters. Class sizes differ by at most one.
Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng);

struct PartitionSpec {
  enum class Kind { kIid, kLabelSkew, kGrouped, kGroupedIid };

  Kind kind = Kind::kIid;
  std::size_t clients = 1;     // unused for kGrouped
  double concentration = 1.0;  // Dirichlet parameter for kLabelSkew

  void validate() const;
  bool operator==(const PartitionSpec&) const = default;
};

// Row indices of `dataset` per client. Disjoint and exhaustive.
using PartitionIndices = std::vector<std::vector<std::size_t>>;

PartitionIndices partition_indices(const Dataset& dataset, const PartitionSpec& spec, Rng& rng);
std::vector<Dataset> partition(const Dataset& dataset, const PartitionSpec& spec, Rng& rng);

struct NoiseSpec {
  double noisy_client_fraction = 0.0;
  double label_flip_prob = 0.0;

  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

struct NoisyClients {
  std::vector<Dataset> clients;
  std::vector<std::size_t> noisy_ids;  // sorted; evaluation metadata only
};

// Picks ceil(fraction * K) clients and flips each of their labels with the
// given probability to a uniformly chosen different class.
NoisyClients inject_label_noise(std::vector<Dataset> clients, const NoiseSpec& spec, Rng& rng);

struct HoldoutSplit {
  Dataset train;
  Dataset validation;
  Dataset rehearsal;
};

// Carves validation and rehearsal sets off a shuffled copy before any client
// partitioning happens.
HoldoutSplit split_holdout(const Dataset& dataset, double validation_fraction,
                           double rehearsal_fraction, Rng& rng);

enum class DataFormat { kCsv, kIdx };

// CSV: header row, a "label" column, an optional "group" column, every other
// column a numeric feature. IDX: `path` is the image file; the label file is
// passed separately.
Dataset load_csv(const std::filesystem::path& path);
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                     const std::filesystem::path& idx_labels = {});

}  // namespace fedsim
