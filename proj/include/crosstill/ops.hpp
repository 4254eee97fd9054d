#pragma once

// Differentiable primitives over Tensor<T>. Each function computes its forward
// value eagerly and registers a closure that accumulates input gradients.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "crosstill/tensor.hpp"

namespace crosstill {

/// Clamp applied to cosine denominators ||x||*||y||.
inline constexpr double kCosineEps = 1e-12;

/// Number of cosine evaluations that hit the denominator clamp (diagnostic).
inline std::atomic<std::size_t>& cosine_clamp_count() {
  static std::atomic<std::size_t> count{0};
  return count;
}

namespace kernel {

// C[m,n] (+)= A[m,k] * B[k,n]; four rows of C share each load of B's row.
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = bp[j];
        c0[j] += s0 * bv;
        c1[j] += s1 * bv;
        c2[j] += s2 * bv;
        c3[j] += s3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = ai[p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]; four rows of A/B per pass over C.
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* __restrict b0 = b + i * n;
    const T* __restrict b1 = b0 + n;
    const T* __restrict b2 = b1 + n;
    const T* __restrict b3 = b2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s0 * b0[j] + s1 * b1[j] + s2 * b2[j] + s3 * b3[j];
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * k;
    const T* __restrict bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = ai[p];
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s * bi[j];
    }
  }
}

template <class T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* a) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const std::vector<T> bt = transposed(n, k, b);
  gemm_nn(m, k, n, a, bt.data(), c);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace kernel

namespace detail {

template <class T>
void expect_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  CROSSTILL_EXPECT(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                               shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void expect_rank2(const Tensor<T>& a, const char* op) {
  CROSSTILL_EXPECT(a.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [a, s](std::span<const T> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
  return make_result<T>("square", a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * a.data()[i] * g[i];
  });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  return make_result<T>("log", a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.data()[i];
  });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto result_values = out;
  return make_result<T>("tanh", a.shape(), std::move(out), {a},
                        [a, y = std::move(result_values)](std::span<const T> g) mutable {
                          auto ga = a.grad();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
                        });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  return make_result<T>("gelu", a.shape(), std::move(out), {a}, [a, inv_sqrt2](std::span<const T> g) mutable {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = a.data()[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  return make_result<T>("sum", Shape{1}, {s}, {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad();
    for (auto& x : ga) x += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  CROSSTILL_EXPECT(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Masked average over the positions of each sequence.
/// x: [N*L, H] token states, mask: N*L flags; returns [N, H].
template <class T>
Tensor<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> mask, std::size_t rows,
                      std::size_t cols) {
  detail::expect_rank2(x, "masked_mean");
  CROSSTILL_EXPECT(x.dim(0) == rows * cols && mask.size() == rows * cols,
                   "masked_mean: token states do not match mask " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  const std::size_t h = x.dim(1);
  std::vector<T> inv_count(rows);
  std::vector<T> out(rows * h, T(0));
  for (std::size_t n = 0; n < rows; ++n) {
    std::size_t count = 0;
    for (std::size_t l = 0; l < cols; ++l) {
      if (!mask[n * cols + l]) continue;
      ++count;
      const T* src = x.data().data() + (n * cols + l) * h;
      for (std::size_t d = 0; d < h; ++d) out[n * h + d] += src[d];
    }
    CROSSTILL_EXPECT(count > 0, "masked_mean: row " + std::to_string(n) + " is fully masked");
    inv_count[n] = T(1) / static_cast<T>(count);
    for (std::size_t d = 0; d < h; ++d) out[n * h + d] *= inv_count[n];
  }
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return make_result<T>("masked_mean", Shape{rows, h}, std::move(out), {x},
                        [x, mask_copy = std::move(mask_copy), inv_count, rows, cols, h](std::span<const T> g) mutable {
                          auto gx = x.grad();
                          for (std::size_t n = 0; n < rows; ++n)
                            for (std::size_t l = 0; l < cols; ++l) {
                              if (!mask_copy[n * cols + l]) continue;
                              T* dst = gx.data() + (n * cols + l) * h;
                              for (std::size_t d = 0; d < h; ++d) dst[d] += g[n * h + d] * inv_count[n];
                            }
                        });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  CROSSTILL_EXPECT(numel(shape) == a.numel(),
                   "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result<T>("reshape", std::move(shape), a.values(), {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::expect_rank2(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  return make_result<T>("transpose", Shape{c, r}, kernel::transposed(r, c, a.data().data()), {a},
                        [a, r, c](std::span<const T> g) mutable {
                          auto ga = a.grad();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                        });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank2(a, "matmul");
  detail::expect_rank2(b, "matmul");
  CROSSTILL_EXPECT(a.dim(1) == b.dim(0),
                   "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  kernel::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b},
                        [a, b, m, k, n](std::span<const T> g) mutable {
                          if (a.requires_grad()) kernel::gemm_nt(m, n, k, g.data(), b.data().data(), a.grad().data());
                          if (b.requires_grad()) kernel::gemm_tn(m, k, n, a.data().data(), g.data(), b.grad().data());
                        });
}

/// x[m,in] * weight[in,out] + bias[out]. Pass an undefined bias to omit it.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  detail::expect_rank2(x, "linear");
  detail::expect_rank2(weight, "linear");
  CROSSTILL_EXPECT(x.dim(1) == weight.dim(0),
                   "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  std::vector<T> out(m * n, T(0));
  const bool has_bias = bias.defined();
  if (has_bias) {
    CROSSTILL_EXPECT(bias.numel() == n, "linear: bias size " + std::to_string(bias.numel()));
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
  }
  kernel::gemm_nn(m, k, n, x.data().data(), weight.data().data(), out.data());
  auto backward = [x, weight, bias, has_bias, m, k, n](std::span<const T> g) mutable {
    if (x.requires_grad()) kernel::gemm_nt(m, n, k, g.data(), weight.data().data(), x.grad().data());
    if (weight.requires_grad()) kernel::gemm_tn(m, k, n, x.data().data(), g.data(), weight.grad().data());
    if (has_bias && bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  };
  if (has_bias) return make_result<T>("linear", Shape{m, n}, std::move(out), {x, weight, bias}, std::move(backward));
  return make_result<T>("linear", Shape{m, n}, std::move(out), {x, weight}, std::move(backward));
}

/// Row lookup: table[V,H] gathered at ids -> [len(ids), H].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  detail::expect_rank2(table, "gather_rows");
  const std::size_t v = table.dim(0), h = table.dim(1);
  std::vector<T> out(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CROSSTILL_EXPECT(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
                     "gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v));
    const T* src = table.data().data() + static_cast<std::size_t>(ids[i]) * h;
    std::copy(src, src + h, out.begin() + i * h);
  }
  std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
  return make_result<T>("gather_rows", Shape{ids.size(), h}, std::move(out), {table},
                        [table, id_copy = std::move(id_copy), h](std::span<const T> g) mutable {
                          auto gt = table.grad();
                          for (std::size_t i = 0; i < id_copy.size(); ++i) {
                            T* dst = gt.data() + static_cast<std::size_t>(id_copy[i]) * h;
                            for (std::size_t d = 0; d < h; ++d) dst[d] += g[i * h + d];
                          }
                        });
}

// ---------------------------------------------------------------- normalization

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  detail::expect_rank2(a, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = a.data().data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += out[i * n + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto probs = out;
  return make_result<T>("softmax_rows", a.shape(), std::move(out), {a},
                        [a, p = std::move(probs), m, n](std::span<const T> g) mutable {
                          auto ga = a.grad();
                          for (std::size_t i = 0; i < m; ++i) {
                            const T inner = kernel::dot(g.data() + i * n, p.data() + i * n, n);
                            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += p[i * n + j] * (g[i * n + j] - inner);
                          }
                        });
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  detail::expect_rank2(a, "log_softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  std::vector<T> probs(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = a.data().data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = row[j] - lse;
      probs[i * n + j] = std::exp(out[i * n + j]);
    }
  }
  return make_result<T>("log_softmax_rows", a.shape(), std::move(out), {a},
                        [a, p = std::move(probs), m, n](std::span<const T> g) mutable {
                          auto ga = a.grad();
                          for (std::size_t i = 0; i < m; ++i) {
                            T gsum = 0;
                            for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
                            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - p[i * n + j] * gsum;
                          }
                        });
}

/// Layer normalization over the last dimension of x[m,c].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::expect_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), c = x.dim(1);
  CROSSTILL_EXPECT(gamma.numel() == c && beta.numel() == c, "layer_norm: affine size mismatch");
  std::vector<T> out(m * c), xhat(m * c), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), m, c](std::span<const T> g) mutable {
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto gg = gamma.grad();
          auto gbeta = beta.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += g[i * c + j] * xhat[i * c + j];
              gbeta[j] += g[i * c + j];
            }
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad();
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::size_t i = 0; i < m; ++i) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dy = g[i * c + j] * gamma.data()[j];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat[i * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            const T dy = g[i * c + j] * gamma.data()[j];
            gx[i * c + j] += rstd[i] * (dy - inv_c * sum_dy - xhat[i * c + j] * inv_c * sum_dy_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------- attention

/// Multi-head scaled dot-product self-attention over padded sequences.
/// q, k, v: [N*L, H]; mask: N*L flags (0 = padding, excluded as a key).
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::span<const std::uint8_t> mask, std::size_t rows, std::size_t cols,
                    std::size_t heads) {
  detail::expect_same_shape(q, k, "attention");
  detail::expect_same_shape(q, v, "attention");
  const std::size_t h = q.dim(1);
  CROSSTILL_EXPECT(q.dim(0) == rows * cols && mask.size() == rows * cols, "attention: mask/shape mismatch");
  CROSSTILL_EXPECT(heads > 0 && h % heads == 0, "attention: hidden size not divisible by heads");
  const std::size_t dh = h / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> probs(rows * heads * cols * cols, T(0));
  std::vector<T> out(rows * cols * h, T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  std::vector<T> scores(cols);
  for (std::size_t n = 0; n < rows; ++n) {
    const std::uint8_t* mrow = mask.data() + n * cols;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < cols; ++i) {
        const T* qi = qd + (n * cols + i) * h + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
          if (!mrow[j]) continue;
          scores[j] = kernel::dot(qi, kd + (n * cols + j) * h + off, dh) * scale_factor;
          mx = std::max(mx, scores[j]);
        }
        T* p = probs.data() + ((n * heads + hd) * cols + i) * cols;
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          if (!mrow[j]) continue;
          p[j] = std::exp(scores[j] - mx);
          total += p[j];
        }
        T* oi = out.data() + (n * cols + i) * h + off;
        for (std::size_t j = 0; j < cols; ++j) {
          if (!mrow[j]) continue;
          p[j] /= total;
          const T* vj = vd + (n * cols + j) * h + off;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  }
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return make_result<T>(
      "attention", q.shape(), std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), mask_copy = std::move(mask_copy), rows, cols, heads, h, dh,
       scale_factor](std::span<const T> g) mutable {
        std::vector<T> dq(q.numel(), T(0)), dk(k.numel(), T(0)), dv(v.numel(), T(0));
        std::vector<T> dp(cols);
        const T* qd = q.data().data();
        const T* kd = k.data().data();
        const T* vd = v.data().data();
        for (std::size_t n = 0; n < rows; ++n) {
          const std::uint8_t* mrow = mask_copy.data() + n * cols;
          for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t off = hd * dh;
            for (std::size_t i = 0; i < cols; ++i) {
              const T* p = probs.data() + ((n * heads + hd) * cols + i) * cols;
              const T* gi = g.data() + (n * cols + i) * h + off;
              T inner = 0;
              for (std::size_t j = 0; j < cols; ++j) {
                if (!mrow[j]) continue;
                const std::size_t rj = (n * cols + j) * h + off;
                dp[j] = kernel::dot(gi, vd + rj, dh);
                inner += p[j] * dp[j];
                for (std::size_t d = 0; d < dh; ++d) dv[rj + d] += p[j] * gi[d];
              }
              const std::size_t ri = (n * cols + i) * h + off;
              for (std::size_t j = 0; j < cols; ++j) {
                if (!mrow[j]) continue;
                const T ds = p[j] * (dp[j] - inner) * scale_factor;
                const std::size_t rj = (n * cols + j) * h + off;
                for (std::size_t d = 0; d < dh; ++d) {
                  dq[ri + d] += ds * kd[rj + d];
                  dk[rj + d] += ds * qd[ri + d];
                }
              }
            }
          }
        }
        auto accumulate = [](const Tensor<T>& t, const std::vector<T>& d) {
          if (!t.requires_grad()) return;
          auto gt = t.grad();
          for (std::size_t i = 0; i < d.size(); ++i) gt[i] += d[i];
        };
        accumulate(q, dq);
        accumulate(k, dk);
        accumulate(v, dv);
      });
}

// ---------------------------------------------------------------- cosine

namespace detail {

template <class T>
std::vector<T> row_norms(const Tensor<T>& a) {
  const std::size_t m = a.dim(0), d = a.dim(1);
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = a.data().data() + i * d;
    norms[i] = std::sqrt(kernel::dot(r, r, d));
  }
  return norms;
}

// Gradient of cos(x, y) = x.y / max(|x||y|, eps) with respect to x.
template <class T>
void cosine_grad_x(const T* x, const T* y, std::size_t d, T nx, T ny, T cos, T g, T* out) {
  const T denom = nx * ny;
  if (denom > static_cast<T>(kCosineEps)) {
    const T a = g / denom;
    const T b = g * cos / (nx * nx);
    for (std::size_t k = 0; k < d; ++k) out[k] += a * y[k] - b * x[k];
  } else {
    const T a = g / static_cast<T>(kCosineEps);
    for (std::size_t k = 0; k < d; ++k) out[k] += a * y[k];
  }
}

template <class T>
T cosine_value(const T* x, const T* y, std::size_t d, T nx, T ny) {
  T denom = nx * ny;
  if (!(denom > static_cast<T>(kCosineEps))) {
    denom = static_cast<T>(kCosineEps);
    cosine_clamp_count().fetch_add(1, std::memory_order_relaxed);
  }
  return kernel::dot(x, y, d) / denom;
}

}  // namespace detail

/// All-pairs cosine similarity: a[N,D], b[M,D] -> [N,M].
template <class T>
Tensor<T> cosine_grid(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank2(a, "cosine_grid");
  detail::expect_rank2(b, "cosine_grid");
  CROSSTILL_EXPECT(a.dim(1) == b.dim(1), "cosine_grid: dimension mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  auto na = detail::row_norms(a);
  auto nb = detail::row_norms(b);
  std::vector<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = detail::cosine_value(a.data().data() + i * d, b.data().data() + j * d, d, na[i], nb[j]);
  auto cos = out;
  return make_result<T>("cosine_grid", Shape{n, m}, std::move(out), {a, b},
                        [a, b, na = std::move(na), nb = std::move(nb), cos = std::move(cos), n, m,
                         d](std::span<const T> g) mutable {
                          const T* ad = a.data().data();
                          const T* bd = b.data().data();
                          T* ga = a.requires_grad() ? a.grad().data() : nullptr;
                          T* gb = b.requires_grad() ? b.grad().data() : nullptr;
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) {
                              const T gij = g[i * m + j];
                              if (gij == T(0)) continue;
                              if (ga) detail::cosine_grad_x(ad + i * d, bd + j * d, d, na[i], nb[j], cos[i * m + j], gij, ga + i * d);
                              if (gb) detail::cosine_grad_x(bd + j * d, ad + i * d, d, nb[j], na[i], cos[i * m + j], gij, gb + j * d);
                            }
                        });
}

/// Row-paired cosine similarity: a[N,D], b[N,D] -> [N].
template <class T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank2(a, "cosine_rows");
  detail::expect_same_shape(a, b, "cosine_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  auto na = detail::row_norms(a);
  auto nb = detail::row_norms(b);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = detail::cosine_value(a.data().data() + i * d, b.data().data() + i * d, d, na[i], nb[i]);
  auto cos = out;
  return make_result<T>("cosine_rows", Shape{n}, std::move(out), {a, b},
                        [a, b, na = std::move(na), nb = std::move(nb), cos = std::move(cos), n,
                         d](std::span<const T> g) mutable {
                          const T* ad = a.data().data();
                          const T* bd = b.data().data();
                          T* ga = a.requires_grad() ? a.grad().data() : nullptr;
                          T* gb = b.requires_grad() ? b.grad().data() : nullptr;
                          for (std::size_t i = 0; i < n; ++i) {
                            if (ga) detail::cosine_grad_x(ad + i * d, bd + i * d, d, na[i], nb[i], cos[i], g[i], ga + i * d);
                            if (gb) detail::cosine_grad_x(bd + i * d, ad + i * d, d, nb[i], na[i], cos[i], g[i], gb + i * d);
                          }
                        });
}

/// Cosine of two vectors (any shape with equal element count) as a scalar tensor.
template <class T>
Tensor<T> cosine(const Tensor<T>& x, const Tensor<T>& y) {
  CROSSTILL_EXPECT(x.numel() == y.numel(), "cosine: length mismatch");
  return cosine_rows(reshape(x, Shape{1, x.numel()}), reshape(y, Shape{1, y.numel()}));
}

/// Plain-value cosine for evaluation code paths (no graph), clamped to [-1, 1].
template <class T>
T cosine_similarity(std::span<const T> x, std::span<const T> y) {
  CROSSTILL_EXPECT(x.size() == y.size(), "cosine_similarity: length mismatch");
  const T nx = std::sqrt(kernel::dot(x.data(), x.data(), x.size()));
  const T ny = std::sqrt(kernel::dot(y.data(), y.data(), y.size()));
  return std::clamp(detail::cosine_value(x.data(), y.data(), x.size(), nx, ny), T(-1), T(1));
}

}  // namespace crosstill
