#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include "d2s/tensor.hpp"

namespace d2s {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; never folded into the gradient
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step_count = 0;

  explicit AdamState(std::size_t n = 0) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

// Bias-corrected Adam with decoupled weight decay. A non-finite gradient
// aborts before any state is touched.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::invalid_argument("shape mismatch: params " + std::to_string(params.size()) +
                                ", grads " + std::to_string(grads.size()) + ", moments " +
                                std::to_string(state.first_moment.size()));
  }
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!all_finite(grads)) throw NumericalError("non-finite gradient");

  state.step_count += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.first_moment[i] = cfg.beta1 * state.first_moment[i] + (1.0 - cfg.beta1) * g;
    state.second_moment[i] = cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.first_moment[i] / b1t;
    const double v_hat = state.second_moment[i] / b2t;
    params[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
  }
}

// Cosine annealing from lr0 at t=0 down to lr_min at t=T.
inline double cosine_lr(std::uint64_t t, std::uint64_t total_steps, double lr0, double lr_min) {
  if (total_steps == 0) throw std::invalid_argument("total steps must be positive");
  if (lr0 < lr_min) throw std::invalid_argument("lr0 must be >= lr_min");
  if (t > total_steps) throw std::invalid_argument("step beyond horizon");
  const double frac = static_cast<double>(t) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace d2s
