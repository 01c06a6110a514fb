#pragma once

#include <cstdint>
#include <optional>
#include <variant>

#include "fedsim/nn.hpp"

namespace fedsim {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;

  void validate() const;
  bool operator==(const SgdConfig&) const = default;
};

struct SgdResult {
  ParameterVector params;
  std::optional<ParameterVector> velocity;  // set only when momentum > 0
};

// momentum == 0: w - lr * g.  Otherwise v' = m * v + g, w' = w - lr * v';
// a missing velocity counts as zero.
SgdResult sgd_step(const ParameterVector& params, const ParameterVector& grad,
                   const SgdConfig& cfg,
                   const std::optional<ParameterVector>& velocity = std::nullopt);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  ParameterVector m;
  ParameterVector v;
  std::uint64_t t = 0;

  static AdamState fresh(std::size_t n);
  bool operator==(const AdamState&) const = default;
};

struct AdamResult {
  ParameterVector params;
  AdamState state;
};

AdamResult adam_step(const ParameterVector& params, const ParameterVector& grad,
                     const AdamState& state, const AdamConfig& cfg);

// In-place variant for hot loops; same arithmetic as adam_step.
void adam_update(ParameterVector& params, const ParameterVector& grad, AdamState& state,
                 const AdamConfig& cfg);

// Server-side optimizer with its persistent state. Exactly one step per
// federation round.
class ServerOptimizer {
 public:
  struct Sgd {
    SgdConfig cfg;
    std::optional<ParameterVector> velocity;
    bool operator==(const Sgd&) const = default;
  };
  struct Adam {
    AdamConfig cfg;
    AdamState state;
    bool operator==(const Adam&) const = default;
  };

  ServerOptimizer() = default;
  static ServerOptimizer sgd(SgdConfig cfg);
  static ServerOptimizer adam(AdamConfig cfg, std::size_t num_params);

  ParameterVector step(const ParameterVector& params, const ParameterVector& grad);

  std::uint64_t steps_taken() const { return steps_; }
  void set_steps_taken(std::uint64_t n) { steps_ = n; }
  const std::variant<Sgd, Adam>& impl() const { return impl_; }
  std::variant<Sgd, Adam>& impl() { return impl_; }

  bool operator==(const ServerOptimizer&) const = default;

 private:
  std::variant<Sgd, Adam> impl_;
  std::uint64_t steps_ = 0;
};

}  // namespace fedsim
