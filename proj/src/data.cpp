#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fedsim/error.hpp"

namespace fedsim {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = features.gather_rows(rows);
  out.num_classes = num_classes;
  out.labels.reserve(rows.size());
  out.source_index.reserve(rows.size());
  for (auto r : rows) {
    out.labels.push_back(labels[r]);
    out.source_index.push_back(source_index.empty() ? r : source_index[r]);
    if (has_groups()) out.groups.push_back(groups[r]);
  }
  return out;
}

Batch Dataset::batch(std::span<const std::size_t> rows) const {
  Batch b{features.gather_rows(rows), {}};
  b.labels.reserve(rows.size());
  for (auto r : rows) b.labels.push_back(labels[r]);
  return b;
}

void Dataset::validate() const {
  if (features.rows() != labels.size()) throw DimensionError("features and labels misaligned");
  if (has_groups() && groups.size() != labels.size()) {
    throw DimensionError("group keys and labels misaligned");
  }
  if (!source_index.empty() && source_index.size() != labels.size()) {
    throw DimensionError("source indices and labels misaligned");
  }
  if (num_classes == 0) throw DimensionError("dataset has no classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DimensionError("label " + std::to_string(y) + " outside class range");
    }
  }
}

void SyntheticSpec::validate() const {
  if (classes < 1 || dims < 1 || examples < 1 || speakers < 1) {
    throw ConfigError("synthetic dataset counts must all be at least 1");
  }
  if (!(cluster_spread >= 0.0) || !(center_scale >= 0.0)) {
    throw ConfigError("synthetic dataset spreads must be non-negative");
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(spec.classes, spec.dims);
  for (auto& v : centers.values()) v = spec.center_scale * normal(rng);

  std::vector<int> labels(spec.examples);
  for (std::size_t i = 0; i < spec.examples; ++i) {
    labels[i] = static_cast<int>(i % spec.classes);
  }
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset ds;
  ds.num_classes = spec.classes;
  ds.features = Matrix(spec.examples, spec.dims);
  ds.groups.resize(spec.examples);
  ds.source_index.resize(spec.examples);
  for (std::size_t i = 0; i < spec.examples; ++i) {
    auto row = ds.features.row(i);
    auto c = centers.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t d = 0; d < spec.dims; ++d) row[d] = c[d] + spec.cluster_spread * normal(rng);
    ds.groups[i] = static_cast<std::int64_t>(i % spec.speakers);
    ds.source_index[i] = i;
  }
  ds.labels = std::move(labels);
  return ds;
}

void PartitionSpec::validate() const {
  if (kind != Kind::kGrouped && clients < 1) throw ConfigError("partition needs at least 1 client");
  if (kind == Kind::kLabelSkew && !(concentration > 0.0 && std::isfinite(concentration))) {
    throw ConfigError("label-skew concentration must be positive and finite");
  }
}

namespace {

std::vector<std::size_t> shuffled_range(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

PartitionIndices split_iid(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) {
    throw ConfigError("cannot split " + std::to_string(n) + " examples into " +
                      std::to_string(k) + " non-empty clients");
  }
  auto idx = shuffled_range(n, rng);
  PartitionIndices parts(k);
  std::size_t pos = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t len = n / k + (c < n % k ? 1 : 0);
    parts[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

std::vector<double> sample_dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every draw underflowed (tiny alpha); put all mass on one random client.
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

PartitionIndices split_label_skew(const Dataset& ds, std::size_t k, double alpha, Rng& rng) {
  if (k > ds.size()) {
    throw ConfigError("cannot split " + std::to_string(ds.size()) + " examples into " +
                      std::to_string(k) + " non-empty clients");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    PartitionIndices parts(k);
    for (auto members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      const auto p = sample_dirichlet(k, alpha, rng);
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < k; ++c) {
        cum += p[c];
        std::size_t end = c + 1 == k ? members.size()
                                     : std::min(members.size(), static_cast<std::size_t>(std::llround(
                                                                    cum * static_cast<double>(members.size()))));
        end = std::max(end, start);
        parts[c].insert(parts[c].end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                        members.begin() + static_cast<std::ptrdiff_t>(end));
        start = end;
      }
    }
    const bool all_non_empty =
        std::all_of(parts.begin(), parts.end(), [](const auto& p) { return !p.empty(); });
    if (all_non_empty) {
      for (auto& p : parts) std::sort(p.begin(), p.end());
      return parts;
    }
  }
  throw ConfigError("label-skew partition left a client empty after " +
                    std::to_string(kMaxAttempts) + " draws; lower the client count or raise "
                    "the concentration");
}

std::map<std::int64_t, std::vector<std::size_t>> rows_by_group(const Dataset& ds) {
  if (!ds.has_groups()) throw ConfigError("grouped partition requires group keys");
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.groups[i]].push_back(i);
  return groups;
}

}  // namespace

PartitionIndices partition_indices(const Dataset& dataset, const PartitionSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case PartitionSpec::Kind::kIid:
      return split_iid(dataset.size(), spec.clients, rng);
    case PartitionSpec::Kind::kLabelSkew:
      return split_label_skew(dataset, spec.clients, spec.concentration, rng);
    case PartitionSpec::Kind::kGrouped: {
      PartitionIndices parts;
      for (auto& [key, rows] : rows_by_group(dataset)) parts.push_back(std::move(rows));
      return parts;
    }
    case PartitionSpec::Kind::kGroupedIid: {
      auto groups = rows_by_group(dataset);
      if (spec.clients > groups.size()) {
        throw ConfigError("cannot assign " + std::to_string(groups.size()) + " groups to " +
                          std::to_string(spec.clients) + " non-empty clients");
      }
      std::vector<const std::vector<std::size_t>*> order;
      for (auto& [key, rows] : groups) order.push_back(&rows);
      std::shuffle(order.begin(), order.end(), rng);
      PartitionIndices parts(spec.clients);
      for (std::size_t g = 0; g < order.size(); ++g) {
        auto& dst = parts[g % spec.clients];
        dst.insert(dst.end(), order[g]->begin(), order[g]->end());
      }
      for (auto& p : parts) std::sort(p.begin(), p.end());
      return parts;
    }
  }
  throw ConfigError("unknown partition kind");
}

std::vector<Dataset> partition(const Dataset& dataset, const PartitionSpec& spec, Rng& rng) {
  auto parts = partition_indices(dataset, spec, rng);
  std::vector<Dataset> clients;
  clients.reserve(parts.size());
  for (const auto& rows : parts) clients.push_back(dataset.subset(rows));
  return clients;
}

void NoiseSpec::validate() const {
  if (!(noisy_client_fraction >= 0.0 && noisy_client_fraction <= 1.0)) {
    throw ConfigError("noisy_client_fraction must lie in [0, 1]");
  }
  if (!(label_flip_prob >= 0.0 && label_flip_prob <= 1.0)) {
    throw ConfigError("label_flip_prob must lie in [0, 1]");
  }
}

NoisyClients inject_label_noise(std::vector<Dataset> clients, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  NoisyClients out;
  const std::size_t k = clients.size();
  const auto count = static_cast<std::size_t>(
      std::ceil(spec.noisy_client_fraction * static_cast<double>(k) - 1e-9));
  if (count > 0) {
    auto order = shuffled_range(k, rng);
    out.noisy_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.noisy_ids.begin(), out.noisy_ids.end());
  }
  std::bernoulli_distribution flip(spec.label_flip_prob);
  for (auto id : out.noisy_ids) {
    auto& ds = clients[id];
    if (ds.num_classes < 2) continue;
    std::uniform_int_distribution<int> other(0, static_cast<int>(ds.num_classes) - 2);
    for (auto& y : ds.labels) {
      if (!flip(rng)) continue;
      const int r = other(rng);
      y = r >= y ? r + 1 : r;
    }
  }
  out.clients = std::move(clients);
  return out;
}

HoldoutSplit split_holdout(const Dataset& dataset, double validation_fraction,
                           double rehearsal_fraction, Rng& rng) {
  if (!(validation_fraction >= 0.0) || !(rehearsal_fraction >= 0.0) ||
      validation_fraction + rehearsal_fraction >= 1.0) {
    throw ConfigError("validation and rehearsal fractions must be non-negative and sum below 1");
  }
  const auto n = dataset.size();
  auto idx = shuffled_range(n, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  const auto n_reh = static_cast<std::size_t>(std::llround(rehearsal_fraction * static_cast<double>(n)));
  auto take = [&](std::size_t from, std::size_t len) {
    std::vector<std::size_t> rows(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                  idx.begin() + static_cast<std::ptrdiff_t>(from + len));
    std::sort(rows.begin(), rows.end());
    return dataset.subset(rows);
  };
  HoldoutSplit split;
  split.validation = take(0, n_val);
  split.rehearsal = take(n_val, n_reh);
  split.train = take(n_val + n_reh, n - n_val - n_reh);
  return split;
}

}  // namespace fedsim
