#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "crosstill/gradcheck.hpp"
#include "crosstill/losses.hpp"
#include "crosstill/ops.hpp"
#include "crosstill/optim.hpp"
#include "crosstill/rng.hpp"

using namespace crosstill;
using T64 = Tensor<double>;

namespace {

T64 random64(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return T64::from(std::move(shape), std::move(v));
}

// Probes every coordinate with a fourth-order stencil. The denominator has an
// absolute floor so exactly-zero gradients (masked or unused entries) compare
// against round-off rather than dividing by it.
template <class F>
double max_fd_error(F&& loss, std::vector<T64> inputs, double h = 1e-4) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  double worst = 0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      auto f = [&](double off) {
        v[i] = saved + off;
        const double r = loss().item();
        v[i] = saved;
        return r;
      };
      const double cd = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
      worst = std::max(worst, std::abs(analytic[i] - cd) / std::max({std::abs(analytic[i]), std::abs(cd), 1e-3}));
    }
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(T64::from({2, 3}, std::vector<double>(5)), ContractViolation);
  auto t = T64::from({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.grad().size(), t.numel());
}

TEST(Backward, SumOfSquares) {
  auto x = T64::from({3}, {1, 2, 3}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, CosineWithItselfHasZeroGradient) {
  auto x = T64::from({4}, {0.3, -1.2, 2.0, 0.7}, true);
  auto loss = cosine(x, x);
  EXPECT_NEAR(loss.item(), 1.0, 1e-15);
  backward(loss);
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = T64::from({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(square(x)), ContractViolation);
}

TEST(Backward, UnreachableParametersKeepZeroGradient) {
  auto x = T64::from({2}, {1, 2}, true);
  auto y = T64::from({2}, {3, 4}, true);
  backward(sum(square(x)));
  for (double g : y.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  auto x = T64::from({2}, {1, 2}, true);
  backward(add(sum(x), sum(scale(x, 3.0))));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 4.0);
}

TEST(Backward, NonFiniteForwardNamesPrimitive) {
  auto x = T64::from({2}, {1.0, -1.0}, true);
  try {
    log(x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.primitive(), "log");
  }
}

TEST(Backward, NonFiniteGradientNamesPrimitive) {
  auto x = T64::from({1}, {std::numeric_limits<double>::denorm_min()}, true);
  auto loss = sum(log(x));
  ASSERT_TRUE(std::isfinite(loss.item()));
  try {
    backward(loss);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.primitive(), "log");
  }
}

TEST(Backward, NoGradGuardSkipsGraph) {
  auto x = T64::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = sum(square(x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, MatmulValues) {
  auto a = T64::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = T64::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  EXPECT_EQ(c.values(), (std::vector<double>{58, 64, 139, 154}));
}

TEST(Ops, BlockedKernelsMatchNaiveProduct) {
  Rng rng(3);
  for (std::size_t m : {1, 3, 4, 7, 9}) {
    auto a = random64(rng, {m, 5});
    auto b = random64(rng, {5, 6});
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < 5; ++p) s += a.values()[i * 5 + p] * b.values()[p * 6 + j];
        EXPECT_NEAR(c.values()[i * 6 + j], s, 1e-12);
      }
  }
}

TEST(Ops, SoftmaxRowsSumToOneAndSurviveLargeLogits) {
  auto a = T64::from({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  auto p = softmax_rows(a);
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += p.values()[i * 3 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, CosineExamples) {
  auto c = [](std::vector<double> x, std::vector<double> y) {
    return cosine_similarity<double>(x, y);
  };
  EXPECT_NEAR(c({1, 2}, {1, 2}), 1.0, 1e-15);
  EXPECT_NEAR(c({1, 2}, {-1, -2}), -1.0, 1e-15);
  EXPECT_NEAR(c({1, 0}, {0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(c({1, 2}, {2, 1}), 0.8, 1e-15);
}

TEST(Ops, CosineClampCountsZeroVectors) {
  const auto before = cosine_clamp_count().load();
  auto zero = T64::from({1, 3}, {0, 0, 0});
  auto other = T64::from({1, 3}, {1, 2, 3});
  auto g = cosine_grid(zero, other);
  EXPECT_EQ(g.item(), 0.0);
  EXPECT_GT(cosine_clamp_count().load(), before);
}

TEST(Ops, MaskedMeanRejectsFullyMaskedRow) {
  auto x = T64::from({2, 1}, {1, 2});
  std::vector<std::uint8_t> mask{0, 0};
  EXPECT_THROW(masked_mean(x, mask, 1, 2), ContractViolation);
}

TEST(Ops, AttentionIgnoresMaskedKeys) {
  Rng rng(5);
  auto q = random64(rng, {4, 4});
  auto k = random64(rng, {4, 4});
  auto v = random64(rng, {4, 4});
  std::vector<std::uint8_t> mask{1, 1, 1, 0};
  auto base = attention(q, k, v, mask, 1, 4, 2);
  // Perturb the masked key/value row: unmasked query outputs must not move.
  auto k2 = k.clone();
  auto v2 = v.clone();
  for (std::size_t d = 0; d < 4; ++d) {
    k2.values()[12 + d] += 10.0;
    v2.values()[12 + d] -= 7.0;
  }
  auto moved = attention(q, k2, v2, mask, 1, 4, 2);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(base.values()[i], moved.values()[i]);
}

// Finite-difference checks of each primitive at 64-bit.

TEST(PrimitiveGradients, Elementwise) {
  Rng rng(11);
  auto a = random64(rng, {3, 4});
  auto b = random64(rng, {3, 4});
  EXPECT_LE(max_fd_error([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return mean(square(tanh(a))); }, {a}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return sum(gelu(a)); }, {a}), 1e-6);
  auto pos = T64::from({4}, {0.5, 1.5, 2.0, 3.0});
  EXPECT_LE(max_fd_error([&] { return sum(log(pos)); }, {pos}), 1e-6);
}

TEST(PrimitiveGradients, MatmulTransposeLinear) {
  Rng rng(12);
  auto a = random64(rng, {3, 4});
  auto b = random64(rng, {4, 5});
  auto w = random64(rng, {4, 2});
  auto bias = random64(rng, {2});
  EXPECT_LE(max_fd_error([&] { return sum(square(matmul(a, b))); }, {a, b}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return sum(square(transpose(b))); }, {b}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return sum(square(linear(a, w, bias))); }, {a, w, bias}), 1e-6);
}

TEST(PrimitiveGradients, GatherAccumulatesRepeatedRows) {
  Rng rng(13);
  auto table = random64(rng, {5, 3});
  std::vector<std::int32_t> ids{1, 3, 1, 1, 0};
  EXPECT_LE(max_fd_error([&] { return sum(square(gather_rows(table, std::span<const std::int32_t>(ids)))); }, {table}),
            1e-6);
}

TEST(PrimitiveGradients, SoftmaxAndLayerNorm) {
  Rng rng(14);
  auto a = random64(rng, {3, 5});
  auto w = random64(rng, {3, 5});
  auto gamma = random64(rng, {5});
  auto beta = random64(rng, {5});
  EXPECT_LE(max_fd_error([&] { return sum(mul(softmax_rows(a), w)); }, {a}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return sum(mul(log_softmax_rows(a), w)); }, {a}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return sum(mul(layer_norm(a, gamma, beta, 1e-5), w)); }, {a, gamma, beta}), 1e-6);
}

TEST(PrimitiveGradients, CosineAndMaskedMean) {
  Rng rng(15);
  auto a = random64(rng, {3, 4});
  auto b = random64(rng, {2, 4});
  auto w = random64(rng, {3, 2});
  EXPECT_LE(max_fd_error([&] { return sum(mul(cosine_grid(a, b), w)); }, {a, b}), 1e-6);
  auto x = random64(rng, {6, 4});
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0};
  EXPECT_LE(max_fd_error([&] { return sum(square(masked_mean(x, mask, 2, 3))); }, {x}), 1e-6);
}

TEST(PrimitiveGradients, MaskedAttention) {
  Rng rng(16);
  auto q = random64(rng, {6, 4});
  auto k = random64(rng, {6, 4});
  auto v = random64(rng, {6, 4});
  auto w = random64(rng, {6, 4});
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  EXPECT_LE(max_fd_error([&] { return sum(mul(attention(q, k, v, mask, 2, 3, 2), w)); }, {q, k, v}), 1e-6);
}

// Optimizer.

TEST(AdamW, WarmupIsLinear) {
  OptimizerConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.warmup_fraction = 0.1;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(cfg, 5, 100), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(cfg, 0, 100), 0.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(cfg, 10, 100), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(cfg, 60, 100), 1.0);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  auto w = T64::from({3}, {1, -2, 3}, true);
  std::vector<TrainableParam<double>> params{{"w", w, true}};
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState<double> state(cfg, 10, params);
  w.zero_grad();
  adamw_step(params, state);
  EXPECT_EQ(w.values(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, ScalarStepMatchesHandComputation) {
  auto w = T64::from({1}, {0.5}, true);
  std::vector<TrainableParam<double>> params{{"w", w, true}};
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.warmup_fraction = 0.0;
  cfg.weight_decay = 0.01;
  OptimizerState<double> state(cfg, 10, params);
  w.grad()[0] = 1.0;
  adamw_step(params, state);
  // m_hat = 1, v_hat = 1 after bias correction.
  const double expected = 0.5 * (1 - 0.1 * 0.01) - 0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(w.item(), expected, 1e-15);
}

TEST(AdamW, ZeroLearningRateLeavesParamsUnchanged) {
  Rng rng(1);
  auto w = random64(rng, {4, 4});
  w.set_requires_grad(true);
  const auto before = w.values();
  std::vector<TrainableParam<double>> params{{"w", w, true}};
  OptimizerConfig cfg;
  cfg.learning_rate = 0.0;
  OptimizerState<double> state(cfg, 5, params);
  for (int s = 0; s < 5; ++s) {
    for (auto& g : w.grad()) g = rng.normal();
    adamw_step(params, state);
  }
  EXPECT_EQ(w.values(), before);
}

TEST(AdamW, NoDecayOnExemptParams) {
  auto w = T64::from({1}, {2.0}, true);
  std::vector<TrainableParam<double>> params{{"bias", w, false}};
  OptimizerConfig cfg;
  cfg.warmup_fraction = 0.0;
  cfg.weight_decay = 0.5;
  OptimizerState<double> state(cfg, 2, params);
  adamw_step(params, state);
  EXPECT_EQ(w.item(), 2.0);
}

TEST(AdamW, RejectsStepsBeyondPlan) {
  auto w = T64::from({1}, {1.0}, true);
  std::vector<TrainableParam<double>> params{{"w", w, true}};
  OptimizerState<double> state(OptimizerConfig{}, 1, params);
  adamw_step(params, state);
  EXPECT_THROW(adamw_step(params, state), ContractViolation);
}

TEST(AdamW, RejectsMismatchedState) {
  auto w = T64::from({2}, {1.0, 2.0}, true);
  std::vector<TrainableParam<double>> params{{"w", w, true}};
  OptimizerState<double> state(OptimizerConfig{}, 4, params);
  params.push_back({"extra", T64::from({1}, {0.0}, true), true});
  EXPECT_THROW(adamw_step(params, state), ContractViolation);
}

// Finite-difference checker.

TEST(FiniteDiff, QuadraticIsExactAcrossSteps) {
  Rng rng(21);
  auto x = random64(rng, {5});
  auto c = random64(rng, {5});
  for (double h : {1e-6, 1e-5, 1e-4, 1e-3}) {
    auto r = finite_diff_check<double>([&] { return sum(square(sub(x, c))); }, {NamedTensor{"x", x}}, h);
    EXPECT_LE(r.max_relative_error(), 1e-8) << "h=" << h;
  }
}

TEST(FiniteDiff, MclBatch) {
  Rng rng(22);
  auto t = random64(rng, {4, 8});
  auto s = random64(rng, {4, 8});
  auto g = random64(rng, {4, 8});
  auto r = finite_diff_check<double>([&] { return loss_mcl(t, s, g).total; },
                                     {NamedTensor{"src", s}, NamedTensor{"tgt", g}}, 1e-4);
  EXPECT_LE(r.max_relative_error(), 1e-6);
  for (const auto& e : r.per_param) EXPECT_EQ(e.coordinates, 20u);
}

TEST(FiniteDiff, CrossEntropyBatch) {
  Rng rng(23);
  auto t = random64(rng, {4, 8});
  auto s = random64(rng, {4, 8});
  auto g = random64(rng, {4, 8});
  auto r = finite_diff_check<double>([&] { return loss_ce(t, s, g, CeLossConfig{}).total; },
                                     {NamedTensor{"src", s}, NamedTensor{"tgt", g}}, 1e-4);
  EXPECT_LE(r.max_relative_error(), 1e-6);
}

TEST(FiniteDiff, DetectsNonDeterministicLoss) {
  auto x = T64::from({2}, {1, 2});
  int calls = 0;
  auto loss = [&] {
    ++calls;
    return scale(sum(square(x)), static_cast<double>(calls));
  };
  EXPECT_THROW(finite_diff_check<double>(loss, {NamedTensor{"x", x}}, 1e-4), ContractViolation);
}

// Rng.

TEST(Rng, SameSeedSameSequence) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(99), d(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c.normal(), d.normal());
}

TEST(Rng, SplitStreamsDiffer) {
  Rng base(5);
  Rng s1 = base.split(1), s2 = base.split(2);
  EXPECT_NE(s1.next_u64(), s2.next_u64());
  EXPECT_EQ(Rng(5).split(1).next_u64(), Rng(5).split(1).next_u64());
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng r(8);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  Rng r(9);
  double s = 0, ss = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}
