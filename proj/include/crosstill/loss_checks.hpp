#pragma once

// Finite-difference verification of every training objective on random inputs.

#include <string>
#include <vector>

#include "crosstill/gradcheck.hpp"
#include "crosstill/losses.hpp"

namespace crosstill {

inline const std::vector<std::string>& checked_losses() {
  static const std::vector<std::string> names = {"stage1", "stage2", "stage3", "mcl",
                                                 "kd",     "stage4", "bool",   "ce"};
  return names;
}

struct LossCheckCase {
  std::string loss;
  std::size_t n = 0;
  std::size_t d = 0;
  double max_relative_error = 0.0;
};

/// Default central-difference step per width.
template <class T>
constexpr double default_fd_step() {
  return sizeof(T) >= 8 ? 1e-4 : 1e-2;
}

template <class T>
Tensor<T> random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>::from(Shape{rows, cols}, std::move(v));
}

/// Max relative error of the named loss on one random N x D instance. The
/// tensors checked are the ones a training step differentiates (the trained
/// model's outputs); teacher and frozen reference inputs are constants.
template <class T>
double check_loss_gradient(const std::string& loss, std::size_t n, std::size_t d, std::uint64_t seed,
                           double h = default_fd_step<T>(), std::size_t samples = 20) {
  Rng rng = Rng(seed).split(n * 131 + d);
  auto a = random_tensor<T>(rng, n, d);
  auto b = random_tensor<T>(rng, n, d);
  auto c = random_tensor<T>(rng, n, d);
  auto e = random_tensor<T>(rng, n, d);
  using NT = BasicNamedTensor<T>;
  if (loss == "stage1" || loss == "kd")
    return finite_diff_check<T>([&] { return loss_anchor_align(a, b, c).total; },
                                {NT{"out_src", b}, NT{"out_tgt", c}}, h, samples, seed)
        .max_relative_error();
  if (loss == "stage2" || loss == "stage3")
    return finite_diff_check<T>([&] { return loss_pairwise_align(a, b, c, e).total; },
                                {NT{"out_src", b}, NT{"out_tgt", e}}, h,
                                samples, seed)
        .max_relative_error();
  if (loss == "mcl")
    return finite_diff_check<T>([&] { return loss_mcl(a, b, c).total; },
                                {NT{"student_src", b}, NT{"student_tgt", c}}, h, samples, seed)
        .max_relative_error();
  if (loss == "stage4")
    return finite_diff_check<T>([&] { return loss_stage4(a, b, c).total; },
                                {NT{"student_src", b}, NT{"student_tgt", c}}, h, samples, seed)
        .max_relative_error();
  if (loss == "bool")
    return finite_diff_check<T>([&] { return loss_bool(b, c).total; },
                                {NT{"student_src", b}, NT{"student_tgt", c}}, h, samples, seed)
        .max_relative_error();
  if (loss == "ce") {
    CeLossConfig cfg;
    return finite_diff_check<T>([&] { return loss_ce(a, b, c, cfg).total; },
                                {NT{"student_src", b}, NT{"student_tgt", c}}, h, samples, seed)
        .max_relative_error();
  }
  throw ConfigError("unknown loss '" + loss + "'");
}

/// Grid N in {1,2,4}, D in {4,8} for each requested loss ("all" expands).
template <class T>
std::vector<LossCheckCase> check_loss_gradients(const std::string& loss, std::uint64_t seed = 0,
                                                double h = default_fd_step<T>()) {
  std::vector<std::string> names;
  if (loss == "all") names = checked_losses();
  else names = {loss};
  std::vector<LossCheckCase> out;
  for (const auto& name : names)
    for (std::size_t n : {1, 2, 4})
      for (std::size_t d : {4, 8}) out.push_back({name, n, d, check_loss_gradient<T>(name, n, d, seed, h)});
  return out;
}

}  // namespace crosstill
