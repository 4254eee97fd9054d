#pragma once

// Training objectives for the four distillation stages and the contrastive
// ablations. All inputs are [N, D] sentence-embedding matrices, row i of the
// source/target inputs being a parallel pair.

#include <map>
#include <string>

#include "crosstill/ops.hpp"

namespace crosstill {

template <class T>
struct LossValue {
  Tensor<T> total;
  std::map<std::string, T> components;

  T value() const { return total.item(); }
};

enum class TeacherWeightMode { literal, softmax_normalized };

struct CeLossConfig {
  double temperature = 0.05;
  TeacherWeightMode teacher_weight_mode = TeacherWeightMode::literal;
};

namespace detail {

template <class T>
void expect_batch(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  CROSSTILL_EXPECT(a.rank() == 2 && a.shape() == b.shape(),
                   std::string(op) + ": expected equal [N,D] inputs, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

// sum over all coordinates of (a - b)^2
template <class T>
Tensor<T> squared_distance(const Tensor<T>& a, const Tensor<T>& b) {
  return sum(square(sub(a, b)));
}

}  // namespace detail

/// (1/N) sum_i [ mse(anchor_i, src_i) + mse(anchor_i, tgt_i) ], mse averaging over
/// the D coordinates. Stage-1 objective; with the teacher as anchor it is also
/// the stage-4 distillation term.
template <class T>
LossValue<T> loss_anchor_align(const Tensor<T>& anchor_src, const Tensor<T>& out_src, const Tensor<T>& out_tgt) {
  detail::expect_batch(anchor_src, out_src, "loss_anchor_align");
  detail::expect_batch(anchor_src, out_tgt, "loss_anchor_align");
  const T inv = T(1) / static_cast<T>(anchor_src.numel());
  auto total = scale(add(detail::squared_distance(anchor_src, out_src), detail::squared_distance(anchor_src, out_tgt)), inv);
  LossValue<T> out{total, {}};
  out.components["align"] = total.item();
  return out;
}

/// (1/N) sum_i [ mse(ref_src_i, out_src_i) + mse(out_tgt_i, ref_tgt_i) ].
/// Stage 2 (embedding outputs) and stage 3 (sentence outputs).
template <class T>
LossValue<T> loss_pairwise_align(const Tensor<T>& ref_src, const Tensor<T>& out_src, const Tensor<T>& ref_tgt,
                                 const Tensor<T>& out_tgt) {
  detail::expect_batch(ref_src, out_src, "loss_pairwise_align");
  detail::expect_batch(ref_tgt, out_tgt, "loss_pairwise_align");
  detail::expect_batch(ref_src, ref_tgt, "loss_pairwise_align");
  const T inv = T(1) / static_cast<T>(ref_src.numel());
  auto total = scale(add(detail::squared_distance(ref_src, out_src), detail::squared_distance(out_tgt, ref_tgt)), inv);
  LossValue<T> out{total, {}};
  out.components["align"] = total.item();
  return out;
}

/// Multilingual contrastive loss: mean over the full N x N grid of
/// (cos(teacher_i, teacher_j) - cos(student_src_i, student_tgt_j))^2.
template <class T>
LossValue<T> loss_mcl(const Tensor<T>& teacher_src, const Tensor<T>& student_src, const Tensor<T>& student_tgt) {
  detail::expect_batch(student_src, student_tgt, "loss_mcl");
  CROSSTILL_EXPECT(teacher_src.rank() == 2 && teacher_src.dim(0) == student_src.dim(0),
                   "loss_mcl: teacher batch " + shape_str(teacher_src.shape()) + " vs student " +
                       shape_str(student_src.shape()));
  const std::size_t n = student_src.dim(0);
  auto teacher_grid = cosine_grid(teacher_src, teacher_src);
  auto student_grid = cosine_grid(student_src, student_tgt);
  auto total = scale(sum(square(sub(teacher_grid, student_grid))), T(1) / static_cast<T>(n * n));
  LossValue<T> out{total, {}};
  out.components["mcl"] = total.item();
  return out;
}

/// Hard-label variant: the teacher grid is replaced by the identity matrix.
template <class T>
LossValue<T> loss_bool(const Tensor<T>& student_src, const Tensor<T>& student_tgt) {
  detail::expect_batch(student_src, student_tgt, "loss_bool");
  const std::size_t n = student_src.dim(0);
  auto labels = Tensor<T>::zeros(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) labels.data()[i * n + i] = T(1);
  auto student_grid = cosine_grid(student_src, student_tgt);
  auto total = scale(sum(square(sub(labels, student_grid))), T(1) / static_cast<T>(n * n));
  LossValue<T> out{total, {}};
  out.components["bool"] = total.item();
  return out;
}

/// Temperature-scaled cross-entropy:
/// -sum_i sum_j w(i,j) * log softmax_j( cos(student_src_i, student_tgt_.) / tau ),
/// where w is the raw teacher cosine (literal) or its row softmax at tau.
template <class T>
LossValue<T> loss_ce(const Tensor<T>& teacher_src, const Tensor<T>& student_src, const Tensor<T>& student_tgt,
                     const CeLossConfig& cfg) {
  if (!(cfg.temperature > 0.0))
    throw ConfigError("loss_ce: temperature must be positive, got " + std::to_string(cfg.temperature));
  detail::expect_batch(student_src, student_tgt, "loss_ce");
  CROSSTILL_EXPECT(teacher_src.rank() == 2 && teacher_src.dim(0) == student_src.dim(0),
                   "loss_ce: teacher batch size mismatch");
  const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
  auto weights = cosine_grid(teacher_src, teacher_src);
  if (cfg.teacher_weight_mode == TeacherWeightMode::softmax_normalized) weights = softmax_rows(scale(weights, inv_tau));
  auto log_probs = log_softmax_rows(scale(cosine_grid(student_src, student_tgt), inv_tau));
  auto total = scale(sum(mul(weights, log_probs)), T(-1));
  LossValue<T> out{total, {}};
  out.components["ce"] = total.item();
  return out;
}

/// Stage-4 total: contrastive term l1 plus teacher distillation term l2.
template <class T>
LossValue<T> loss_stage4(const Tensor<T>& teacher_src, const Tensor<T>& student_src, const Tensor<T>& student_tgt) {
  CROSSTILL_EXPECT(teacher_src.shape() == student_src.shape(),
                   "loss_stage4: teacher and student dimensions must match, got " + shape_str(teacher_src.shape()) +
                       " vs " + shape_str(student_src.shape()));
  auto l1 = loss_mcl(teacher_src, student_src, student_tgt);
  auto l2 = loss_anchor_align(teacher_src, student_src, student_tgt);
  LossValue<T> out{add(l1.total, l2.total), {}};
  out.components["l1"] = l1.value();
  out.components["l2"] = l2.value();
  return out;
}

}  // namespace crosstill
