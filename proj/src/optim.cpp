#include "fedsim/optim.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

void check_lengths(const ParameterVector& params, const ParameterVector& grad) {
  if (params.size() != grad.size()) {
    throw LengthError("gradient length " + std::to_string(grad.size()) +
                      " does not match parameter length " + std::to_string(params.size()));
  }
}

void check_finite(const ParameterVector& grad) {
  for (double g : grad.values) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  }
}

}  // namespace

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("adam learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

SgdResult sgd_step(const ParameterVector& params, const ParameterVector& grad,
                   const SgdConfig& cfg, const std::optional<ParameterVector>& velocity) {
  check_lengths(params, grad);
  check_finite(grad);
  SgdResult out{params, std::nullopt};
  if (cfg.momentum == 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.params[i] -= cfg.learning_rate * grad[i];
    }
    return out;
  }
  ParameterVector v = velocity ? *velocity : ParameterVector::zeros_like(grad);
  check_lengths(params, v);
  for (std::size_t i = 0; i < params.size(); ++i) {
    v[i] = cfg.momentum * v[i] + grad[i];
    out.params[i] -= cfg.learning_rate * v[i];
  }
  out.velocity = std::move(v);
  return out;
}

AdamState AdamState::fresh(std::size_t n) {
  return AdamState{ParameterVector(std::vector<double>(n, 0.0)),
                   ParameterVector(std::vector<double>(n, 0.0)), 0};
}

void adam_update(ParameterVector& params, const ParameterVector& grad, AdamState& state,
                 const AdamConfig& cfg) {
  check_lengths(params, grad);
  check_lengths(params, state.m);
  check_lengths(params, state.v);
  check_finite(grad);
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

AdamResult adam_step(const ParameterVector& params, const ParameterVector& grad,
                     const AdamState& state, const AdamConfig& cfg) {
  AdamResult out{params, state};
  adam_update(out.params, grad, out.state, cfg);
  return out;
}

ServerOptimizer ServerOptimizer::sgd(SgdConfig cfg) {
  cfg.validate();
  ServerOptimizer opt;
  opt.impl_ = Sgd{cfg, std::nullopt};
  return opt;
}

ServerOptimizer ServerOptimizer::adam(AdamConfig cfg, std::size_t num_params) {
  cfg.validate();
  ServerOptimizer opt;
  opt.impl_ = Adam{cfg, AdamState::fresh(num_params)};
  return opt;
}

ParameterVector ServerOptimizer::step(const ParameterVector& params,
                                      const ParameterVector& grad) {
  ParameterVector next = std::visit(
      [&](auto& s) -> ParameterVector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sgd>) {
          auto r = sgd_step(params, grad, s.cfg, s.velocity);
          s.velocity = std::move(r.velocity);
          return std::move(r.params);
        } else {
          ParameterVector p = params;
          adam_update(p, grad, s.state, s.cfg);
          return p;
        }
      },
      impl_);
  ++steps_;
  return next;
}

}  // namespace fedsim
