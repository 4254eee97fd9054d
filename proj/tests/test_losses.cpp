#include <cmath>

#include <gtest/gtest.h>

#include "crosstill/loss_checks.hpp"
#include "crosstill/losses.hpp"
#include "oracles.hpp"

using namespace crosstill;
using T64 = Tensor<double>;

namespace {

T64 rand_mat(Rng& rng, std::size_t n, std::size_t d) { return random_tensor<double>(rng, n, d); }

oracle::Matrix M(const T64& t) { return oracle::to_matrix(t.values(), t.dim(0), t.dim(1)); }

T64 mat(std::size_t n, std::size_t d, std::vector<double> v) { return T64::from({n, d}, std::move(v)); }

// Apply the same random orthogonal matrix (Gram-Schmidt on a Gaussian draw) to every row.
T64 rotate_rows(const T64& x, Rng& rng) {
  const std::size_t d = x.dim(1);
  std::vector<std::vector<double>> q(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (auto& v : q[i]) v = rng.normal();
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += q[i][j] * q[k][j];
      for (std::size_t j = 0; j < d; ++j) q[i][j] -= dot * q[k][j];
    }
    double norm = 0;
    for (double v : q[i]) norm += v * v;
    for (auto& v : q[i]) v /= std::sqrt(norm);
  }
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[r * d + i] += q[i][j] * x.values()[r * d + j];
  return T64::from(x.shape(), out);
}

}  // namespace

TEST(LossOracles, AllLossesMatchLoopReferences) {
  Rng rng(2024);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.below(5), d = 1 + rng.below(8);
    auto t = rand_mat(rng, n, d), s = rand_mat(rng, n, d), g = rand_mat(rng, n, d), u = rand_mat(rng, n, d);
    const double tau = 0.05 + rng.uniform();
    EXPECT_NEAR(loss_anchor_align(t, s, g).value(), oracle::anchor_align(M(t), M(s), M(g)), 1e-7);
    EXPECT_NEAR(loss_pairwise_align(t, s, u, g).value(), oracle::pairwise_align(M(t), M(s), M(u), M(g)), 1e-7);
    EXPECT_NEAR(loss_mcl(t, s, g).value(), oracle::mcl(M(t), M(s), M(g)), 1e-7);
    EXPECT_NEAR(loss_bool(s, g).value(), oracle::hard_label(M(s), M(g)), 1e-7);
    for (auto mode : {TeacherWeightMode::literal, TeacherWeightMode::softmax_normalized}) {
      const double ref = oracle::cross_entropy(M(t), M(s), M(g), tau, mode == TeacherWeightMode::softmax_normalized);
      EXPECT_NEAR(loss_ce(t, s, g, CeLossConfig{tau, mode}).value(), ref, 1e-7 * std::max(1.0, std::abs(ref)));
    }
    EXPECT_NEAR(loss_stage4(t, s, g).value(), oracle::mcl(M(t), M(s), M(g)) + oracle::anchor_align(M(t), M(s), M(g)),
                1e-7);
  }
}

TEST(LossOracles, CrossEntropyAtDefaultTemperature) {
  Rng rng(5);
  auto t = rand_mat(rng, 3, 6), s = rand_mat(rng, 3, 6), g = rand_mat(rng, 3, 6);
  EXPECT_NEAR(loss_ce(t, s, g, CeLossConfig{}).value(), oracle::cross_entropy(M(t), M(s), M(g), 0.05, false), 1e-7);
}

TEST(AnchorAlign, HandExample) {
  EXPECT_DOUBLE_EQ(loss_anchor_align(mat(1, 1, {0}), mat(1, 1, {1}), mat(1, 1, {2})).value(), 5.0);
}

TEST(AnchorAlign, FixedPointAndShapeCheck) {
  Rng rng(1);
  auto a = rand_mat(rng, 3, 4);
  EXPECT_EQ(loss_anchor_align(a, a, a).value(), 0.0);
  EXPECT_THROW(loss_anchor_align(a, rand_mat(rng, 3, 5), a), ContractViolation);
  EXPECT_THROW(loss_anchor_align(a, a, rand_mat(rng, 2, 4)), ContractViolation);
}

TEST(PairwiseAlign, FixedPointAndSymmetry) {
  Rng rng(2);
  auto rs = rand_mat(rng, 2, 4), os = rand_mat(rng, 2, 4), rt = rand_mat(rng, 2, 4), ot = rand_mat(rng, 2, 4);
  EXPECT_EQ(loss_pairwise_align(rs, rs, rt, rt).value(), 0.0);
  EXPECT_NEAR(loss_pairwise_align(rs, os, rt, ot).value(), loss_pairwise_align(rt, ot, rs, os).value(), 1e-15);
  EXPECT_THROW(loss_pairwise_align(rs, os, rand_mat(rng, 3, 4), ot), ContractViolation);
}

TEST(Mcl, ZeroWhenStudentGridMatchesTeacher) {
  Rng rng(3);
  auto t = rand_mat(rng, 4, 6);
  EXPECT_NEAR(loss_mcl(t, t, t).value(), 0.0, 1e-15);
}

TEST(Mcl, SinglePairReducesToCosineGap) {
  Rng rng(4);
  auto t = rand_mat(rng, 1, 5), s = rand_mat(rng, 1, 5), g = rand_mat(rng, 1, 5);
  const double c = oracle::cosine(s.values(), g.values());
  EXPECT_NEAR(loss_mcl(t, s, g).value(), (1 - c) * (1 - c), 1e-14);
}

TEST(Mcl, RotationInvariance) {
  Rng rng(6);
  auto t = rand_mat(rng, 4, 5), s = rand_mat(rng, 4, 5), g = rand_mat(rng, 4, 5);
  const double base = loss_mcl(t, s, g).value();
  // Source and target students share one rotation; the teacher gets its own.
  Rng student_rot(99), student_rot_copy(99), teacher_rot(7);
  auto rt = rotate_rows(t, teacher_rot);
  auto rs = rotate_rows(s, student_rot);
  auto rg = rotate_rows(g, student_rot_copy);
  EXPECT_NEAR(loss_mcl(rt, rs, rg).value(), base, 1e-12);
  EXPECT_NEAR(loss_mcl(rt, s, g).value(), base, 1e-12);
}

TEST(Mcl, PositiveRescalingInvariance) {
  Rng rng(8);
  auto t = rand_mat(rng, 3, 4), s = rand_mat(rng, 3, 4), g = rand_mat(rng, 3, 4);
  const double base = loss_mcl(t, s, g).value();
  auto scaled = [&](T64 x) {
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      const double k = 0.1 + 10 * rng.uniform();
      for (std::size_t c = 0; c < x.dim(1); ++c) x.values()[r * x.dim(1) + c] *= k;
    }
    return x;
  };
  EXPECT_NEAR(loss_mcl(scaled(t.clone()), scaled(s.clone()), scaled(g.clone())).value(), base, 1e-12);
}

TEST(Mcl, TeacherMayHaveOtherWidth) {
  Rng rng(9);
  auto t = rand_mat(rng, 3, 7), s = rand_mat(rng, 3, 4), g = rand_mat(rng, 3, 4);
  EXPECT_NEAR(loss_mcl(t, s, g).value(), oracle::mcl(M(t), M(s), M(g)), 1e-12);
  EXPECT_THROW(loss_mcl(rand_mat(rng, 2, 7), s, g), ContractViolation);
}

TEST(Bool, IdentityGridIsFixedPoint) {
  auto e = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_NEAR(loss_bool(e, e).value(), 0.0, 1e-15);
}

TEST(Bool, SingleOrthogonalPairScoresOne) {
  EXPECT_NEAR(loss_bool(mat(1, 2, {1, 0}), mat(1, 2, {0, 1})).value(), 1.0, 1e-15);
}

TEST(CrossEntropy, SinglePairLiteralIsZero) {
  Rng rng(10);
  auto t = rand_mat(rng, 1, 4), s = rand_mat(rng, 1, 4), g = rand_mat(rng, 1, 4);
  EXPECT_NEAR(loss_ce(t, s, g, CeLossConfig{}).value(), 0.0, 1e-15);
}

TEST(CrossEntropy, UniformStudentRow) {
  Rng rng(11);
  auto t = rand_mat(rng, 4, 3);
  // Every student cosine equals 1: each softmax row is uniform over 4 candidates.
  auto s = mat(4, 2, {1, 1, 1, 1, 1, 1, 1, 1});
  const auto tm = M(t);
  double expected = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) expected -= oracle::cosine(tm[i], tm[j]) * std::log(0.25);
  EXPECT_NEAR(loss_ce(t, s, s, CeLossConfig{}).value(), expected, 1e-12);
}

TEST(CrossEntropy, NonPositiveTemperatureIsConfigError) {
  Rng rng(12);
  auto a = rand_mat(rng, 2, 3);
  EXPECT_THROW(loss_ce(a, a, a, CeLossConfig{0.0}), ConfigError);
  EXPECT_THROW(loss_ce(a, a, a, CeLossConfig{-0.1}), ConfigError);
}

TEST(Stage4, BreakdownSumsToTotal) {
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    auto t = rand_mat(rng, 3, 4), s = rand_mat(rng, 3, 4), g = rand_mat(rng, 3, 4);
    auto v = loss_stage4(t, s, g);
    EXPECT_NEAR(v.value() - v.components.at("l1") - v.components.at("l2"), 0.0, 1e-7);
  }
  auto t = rand_mat(rng, 2, 4);
  EXPECT_NEAR(loss_stage4(t, t, t).value(), 0.0, 1e-15);
}

TEST(Stage4, RequiresMatchingTeacherWidth) {
  Rng rng(14);
  EXPECT_THROW(loss_stage4(rand_mat(rng, 2, 5), rand_mat(rng, 2, 4), rand_mat(rng, 2, 4)), ContractViolation);
}

TEST(MseFamily, NonNegative) {
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    auto a = rand_mat(rng, 3, 4), b = rand_mat(rng, 3, 4), c = rand_mat(rng, 3, 4);
    EXPECT_GE(loss_anchor_align(a, b, c).value(), 0.0);
    EXPECT_GE(loss_pairwise_align(a, b, c, a).value(), 0.0);
    EXPECT_GE(loss_mcl(a, b, c).value(), 0.0);
    EXPECT_GE(loss_bool(b, c).value(), 0.0);
  }
}

TEST(LossGradients, EveryLossPassesAt64Bit) {
  for (const auto& name : checked_losses()) {
    auto cases = check_loss_gradients<double>(name, 0, default_fd_step<double>());
    for (const auto& c : cases) EXPECT_LE(c.max_relative_error, 1e-6) << name << " N=" << c.n << " D=" << c.d;
  }
}

TEST(LossGradients, ReducedPrecisionWithinLooseTolerance) {
  auto cases = check_loss_gradients<float>("all", 0, default_fd_step<float>());
  for (const auto& c : cases) EXPECT_LE(c.max_relative_error, 5e-2) << c.loss << " N=" << c.n << " D=" << c.d;
}
