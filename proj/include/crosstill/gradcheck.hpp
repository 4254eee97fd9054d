#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "crosstill/rng.hpp"
#include "crosstill/tensor.hpp"

namespace crosstill {

struct GradCheckEntry {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> per_param;
  double max_relative_error() const {
    double worst = 0.0;
    for (const auto& e : per_param) worst = std::max(worst, e.max_relative_error);
    return worst;
  }
};

template <class T>
struct BasicNamedTensor {
  std::string name;
  Tensor<T> tensor;
};

using NamedTensor = BasicNamedTensor<double>;

/// Compare the analytic gradient of `loss_fn` with central differences.
///
/// `loss_fn` must rebuild its graph from the current parameter values on every
/// call. Up to `samples` coordinates per tensor are probed (all of them when the
/// tensor is smaller). Error per coordinate is
/// |analytic - cd| / max(|analytic|, |cd|, 1e-12).
template <class T, class LossFn>
GradCheckResult finite_diff_check(const LossFn& loss_fn, std::vector<BasicNamedTensor<T>> params, double h,
                                  std::size_t samples = 20, std::uint64_t seed = 0) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Tensor<T> loss = loss_fn();
  const T reference = loss.item();
  backward(loss);
  CROSSTILL_EXPECT(loss_fn().item() == reference, "finite_diff_check: loss function is not deterministic");

  Rng rng(seed);
  GradCheckResult result;
  for (auto& p : params) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    std::vector<std::size_t> coords(p.tensor.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > samples) {
      rng.shuffle(coords);
      coords.resize(samples);
    }
    GradCheckEntry entry{p.name, coords.size(), 0.0};
    auto values = p.tensor.data();
    for (std::size_t idx : coords) {
      const T saved = values[idx];
      auto eval_at = [&](double offset) {
        values[idx] = static_cast<T>(saved + offset);
        const double actual = static_cast<double>(values[idx]) - static_cast<double>(saved);
        const double f = loss_fn().item();
        values[idx] = saved;
        return std::pair{actual, f};
      };
      double cd;
      if constexpr (sizeof(T) >= 8) {
        // Fourth-order central stencil.
        const double f2 = eval_at(2 * h).second, f1 = eval_at(h).second;
        const double m1 = eval_at(-h).second, m2 = eval_at(-2 * h).second;
        cd = (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h);
      } else {
        // Reduced precision: plain central difference over the representable step.
        const auto [up_step, up] = eval_at(h);
        const auto [down_step, down] = eval_at(-h);
        cd = (up - down) / (up_step - down_step);
      }
      const double denom = std::max({std::abs(analytic[idx]), std::abs(cd), 1e-12});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(analytic[idx] - cd) / denom);
    }
    result.per_param.push_back(entry);
  }
  return result;
}

}  // namespace crosstill
