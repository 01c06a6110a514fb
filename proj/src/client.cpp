#include "fedsim/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

// Draws batches by walking a shuffled permutation, reshuffling each epoch.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::size_t batch_size, Rng& rng)
      : order_(n), batch_size_(std::min(batch_size, n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> rows;
    rows.reserve(batch_size_);
    while (rows.size() < batch_size_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  Rng& rng_;
};

double l2_norm(const ParameterVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

}  // namespace

ClientOutcome client_train(std::size_t client_id, const ParameterVector& seed_params,
                           const Architecture& arch, const Dataset& data,
                           const ClientTrainConfig& cfg) {
  ClientOutcome outcome;
  outcome.client_id = client_id;
  if (data.empty()) {
    outcome.status = ClientOutcome::Status::kSkipped;
    outcome.reason = "empty dataset";
    return outcome;
  }
  if (cfg.steps == 0) throw ConfigError("client steps must be at least 1");
  if (cfg.batch_size == 0) throw ConfigError("client batch size must be at least 1");

  Rng rng(cfg.seed);
  BatchCursor cursor(data.size(), cfg.batch_size, rng);
  ParameterVector params = seed_params;
  std::optional<ParameterVector> velocity;
  std::vector<double> losses;
  std::vector<double> norms;
  std::size_t seen = 0;

  try {
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const auto rows = cursor.next();
      const Batch batch = data.batch(rows);
      auto [loss, grad] = backward(from_params(arch, params), batch);
      losses.push_back(loss);
      norms.push_back(l2_norm(grad));
      auto next = sgd_step(params, grad, cfg.optimizer, velocity);
      params = std::move(next.params);
      velocity = std::move(next.velocity);
      seen += rows.size();
    }
    for (double v : params.values) {
      if (!std::isfinite(v)) throw NumericError("non-finite parameter after local training");
    }
  } catch (const NumericError& e) {
    outcome.status = ClientOutcome::Status::kFailed;
    outcome.reason = e.what();
    return outcome;
  }

  const auto steps = static_cast<double>(cfg.steps);
  ClientResult r;
  r.client_id = client_id;
  r.train_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / steps;
  r.grad_mag_mean = std::accumulate(norms.begin(), norms.end(), 0.0) / steps;
  double var = 0.0;
  for (double n : norms) var += (n - r.grad_mag_mean) * (n - r.grad_mag_mean);
  r.grad_mag_var = var / steps;
  r.examples_seen = seen;
  r.dataset_size = data.size();
  r.final_params = std::move(params);
  if (!std::isfinite(r.train_loss)) {
    outcome.status = ClientOutcome::Status::kFailed;
    outcome.reason = "non-finite training loss";
    return outcome;
  }
  outcome.result = std::move(r);
  return outcome;
}

PseudoGradient pseudo_gradient(std::size_t client_id, const ParameterVector& seed_params,
                               const ParameterVector& final_params) {
  if (seed_params.size() != final_params.size()) {
    throw LengthError("seed and final parameter lengths differ");
  }
  PseudoGradient g{client_id, ParameterVector::zeros_like(seed_params)};
  for (std::size_t i = 0; i < seed_params.size(); ++i) {
    g.values[i] = seed_params[i] - final_params[i];
  }
  return g;
}

}  // namespace fedsim
