#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "crosstill/tensor.hpp"

namespace crosstill {

struct OptimizerConfig {
  double learning_rate = 2e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// A trainable tensor handle plus whether decoupled weight decay applies to it.
template <class T>
struct TrainableParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
};

/// Linear warmup from 0 over warmup_fraction * total_steps, constant afterwards.
inline double scheduled_learning_rate(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
  const double warmup_steps = cfg.warmup_fraction * static_cast<double>(total_steps);
  if (warmup_steps > 0.0 && static_cast<double>(step) < warmup_steps)
    return cfg.learning_rate * static_cast<double>(step) / warmup_steps;
  return cfg.learning_rate;
}

template <class T>
struct OptimizerState {
  OptimizerConfig config;
  std::size_t total_steps = 0;
  std::size_t step = 0;  // completed updates
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::size_t total, const std::vector<TrainableParam<T>>& params)
      : config(cfg), total_steps(total) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.tensor.numel(), T(0));
      second_moment.emplace_back(p.tensor.numel(), T(0));
    }
  }

  /// Rate applied by the next update.
  double current_learning_rate() const { return scheduled_learning_rate(config, step + 1, total_steps); }
};

/// One AdamW update (decoupled weight decay) using each parameter's grad buffer.
template <class T>
void adamw_step(std::vector<TrainableParam<T>>& params, OptimizerState<T>& state) {
  CROSSTILL_EXPECT(state.first_moment.size() == params.size(),
                   "adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                       " tensors, got " + std::to_string(params.size()));
  CROSSTILL_EXPECT(state.step < state.total_steps, "adamw_step: step " + std::to_string(state.step) +
                                                       " exceeds planned total " + std::to_string(state.total_steps));
  const std::size_t t = state.step + 1;
  const double lr = scheduled_learning_rate(state.config, t, state.total_steps);
  const auto& c = state.config;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& tensor = params[p].tensor;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    CROSSTILL_EXPECT(m.size() == tensor.numel(), "adamw_step: moment buffer shape mismatch for " + params[p].name);
    auto w = tensor.data();
    auto g = tensor.grad();
    const T decay_factor = params[p].decay ? static_cast<T>(1.0 - lr * c.weight_decay) : T(1);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(c.beta1) * m[i] + static_cast<T>(1.0 - c.beta1) * g[i];
      v[i] = static_cast<T>(c.beta2) * v[i] + static_cast<T>(1.0 - c.beta2) * g[i] * g[i];
      const T m_hat = m[i] / static_cast<T>(bias1);
      const T v_hat = v[i] / static_cast<T>(bias2);
      w[i] = w[i] * decay_factor - static_cast<T>(lr) * m_hat / (std::sqrt(v_hat) + static_cast<T>(c.eps));
    }
  }
  state.step = t;
}

}  // namespace crosstill
