#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

struct ClientTrainConfig {
  std::size_t steps = 1;  // local optimizer steps per round
  std::size_t batch_size = 32;
  SgdConfig optimizer;
  std::uint64_t seed = 0;  // per (run, round, client)
};

// The only thing a client sends back to the server. No raw examples.
struct ClientResult {
  std::size_t client_id = 0;
  ParameterVector final_params;
  double train_loss = 0.0;  // mean batch loss over the local steps
  double grad_mag_mean = 0.0;
  double grad_mag_var = 0.0;  // population variance of per-step gradient L2 norms
  std::size_t examples_seen = 0;
  std::size_t dataset_size = 0;
};

struct ClientOutcome {
  enum class Status { kOk, kSkipped, kFailed };

  std::size_t client_id = 0;
  Status status = Status::kOk;
  std::optional<ClientResult> result;
  std::string reason;

  bool ok() const { return status == Status::kOk; }
};

// Runs `cfg.steps` SGD steps from `seed_params` on mini-batches drawn from
// `data`. Optimizer state (momentum) never outlives the call. An empty
// dataset yields kSkipped; a non-finite loss or parameter yields kFailed.
ClientOutcome client_train(std::size_t client_id, const ParameterVector& seed_params,
                           const Architecture& arch, const Dataset& data,
                           const ClientTrainConfig& cfg);

struct PseudoGradient {
  std::size_t client_id = 0;
  ParameterVector values;
};

// seed - final: the displacement a descent step should follow.
PseudoGradient pseudo_gradient(std::size_t client_id, const ParameterVector& seed_params,
                               const ParameterVector& final_params);

}  // namespace fedsim
