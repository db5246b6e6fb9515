// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dirnet/tensor.hpp"

namespace dirnet {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t r, const char* op, const char* name) {
  if (x.rank() != r)
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(r) +
                     ", got " + shape_str(x.shape()));
}

/// Elementwise op y = f(x) with dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  bool rec = should_record(x);
  auto out = make_output<T>(x.shape(), rec);
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  if (rec) {
    record<T>([x, out, df]() mutable {
      if (!x.has_grad()) return;
      auto gx = x.grad();
      auto gy = out.grad();
      auto xv = x.data();
      auto yv = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

/// Elementwise op y = f(a, b) on equal shapes, partials da(a,b,y), db(a,b,y).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  require_same(a.shape(), b.shape(), name);
  bool rec = should_record(a, b);
  auto out = make_output<T>(a.shape(), rec);
  auto av = a.data();
  auto bv = b.data();
  auto yv = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) yv[i] = f(av[i], bv[i]);
  if (rec) {
    record<T>([a, b, out, da, db]() mutable {
      auto gy = out.grad();
      auto av = a.data();
      auto bv = b.data();
      auto yv = out.data();
      if (a.has_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * da(av[i], bv[i], yv[i]);
      }
      if (b.has_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * db(av[i], bv[i], yv[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

/// Elementwise product.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "hadamard", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) || v != v ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Hard clamp; the gradient is zero where the input lies outside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

/// Huber loss with unit transition, elementwise on a - b.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& a, const Tensor<T>& b) {
  auto f = [](T x, T y) {
    T d = std::abs(x - y);
    return d < T(1) ? T(0.5) * d * d : d - T(0.5);
  };
  auto da = [](T x, T y, T) {
    T d = x - y;
    return std::abs(d) < T(1) ? d : (d > 0 ? T(1) : T(-1));
  };
  auto db = [da](T x, T y, T out) { return -da(x, y, out); };
  return detail::binary(a, b, "smooth_l1", f, da, db);
}

template <typename T>
Tensor<T> squared_diff(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "squared_diff", [](T x, T y) { return (x - y) * (x - y); },
      [](T x, T y, T) { return T(2) * (x - y); }, [](T x, T y, T) { return T(2) * (y - x); });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{1}, rec);
  T acc = 0;
  for (T v : x.data()) acc += v;
  out[0] = acc;
  if (rec) {
    detail::record<T>([x, out]() mutable {
      if (!x.has_grad()) return;
      T g = out.grad()[0];
      for (auto& gx : x.grad()) gx += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Weighted sum  sum_i w_i x_i  with constant weights.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& w) {
  detail::require(w.size() == x.numel(), "weighted_sum: weight count " + std::to_string(w.size()) +
                                             " vs numel " + std::to_string(x.numel()));
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{1}, rec);
  T acc = 0;
  auto xv = x.data();
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * xv[i];
  out[0] = acc;
  if (rec) {
    detail::record<T>([x, out, w]() mutable {
      if (!x.has_grad()) return;
      T g = out.grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(std::move(shape), rec);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (rec) {
    detail::record<T>([x, out]() mutable {
      if (!x.has_grad()) return;
      auto gx = x.grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

/// Columns [begin, end) of an N x K matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols", "input");
  std::size_t n = x.dim(0), k = x.dim(1);
  detail::require(begin < end && end <= k, "slice_cols: range [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") outside width " +
                                               std::to_string(k));
  std::size_t w = end - begin;
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{n, w}, rec);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * k + begin + j];
  if (rec) {
    detail::record<T>([x, out, n, k, w, begin]() mutable {
      if (!x.has_grad()) return;
      auto gx = x.grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * k + begin + j] += gy[i * w + j];
    });
  }
  return out;
}

/// Picks x[i, idx[i]] from an N x K matrix, giving a length-N vector.
template <typename T>
Tensor<T> select_cols(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  detail::require_rank(x, 2, "select_cols", "input");
  std::size_t n = x.dim(0), k = x.dim(1);
  detail::require(idx.size() == n, "select_cols: index count must equal row count");
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{n}, rec);
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(idx[i] < k, "select_cols: column index out of range");
    out[i] = x[i * k + idx[i]];
  }
  if (rec) {
    detail::record<T>([x, out, idx, k]() mutable {
      if (!x.has_grad()) return;
      for (std::size_t i = 0; i < idx.size(); ++i) x.grad()[i * k + idx[i]] += out.grad()[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// y = x W^T + b with x: N x I, W: O x I, b: O (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 2, "linear", "input");
  detail::require_rank(w, 2, "linear", "weight");
  std::size_t n = x.dim(0), in = x.dim(1), o = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " != weight in-dim " +
                     std::to_string(w.dim(1)));
  if (b.defined() && b.numel() != o)
    throw ShapeError("linear: bias length " + std::to_string(b.numel()) + " != out-dim " +
                     std::to_string(o));
  bool rec = b.defined() ? detail::should_record(x, w, b) : detail::should_record(x, w);
  auto out = detail::make_output<T>(Shape{n, o}, rec);
  detail::CMapRM<T> X(x.ptr(), n, in);
  detail::CMapRM<T> W(w.ptr(), o, in);
  detail::MapRM<T> Y(out.ptr(), n, o);
  Y.noalias() = X * W.transpose();
  if (b.defined())
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) Y(i, j) += b[j];
  if (rec) {
    detail::record<T>([x, w, b, out, n, in, o]() mutable {
      detail::CMapRM<T> G(out.grad().data(), n, o);
      if (x.has_grad()) {
        detail::MapRM<T> GX(x.grad().data(), n, in);
        GX.noalias() += G * detail::CMapRM<T>(w.ptr(), o, in);
      }
      if (w.has_grad()) {
        detail::MapRM<T> GW(w.grad().data(), o, in);
        GW.noalias() += G.transpose() * detail::CMapRM<T>(x.ptr(), n, in);
      }
      if (b.defined() && b.has_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j) gb[j] += G(i, j);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/**
 * 2-D convolution, NCHW input and OIKK weights, lowered to one GEMM over the
 * whole batch. `bias` may be an undefined tensor.
 */
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 4, "conv2d", "input");
  detail::require_rank(w, 4, "conv2d", "weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c)
    throw ShapeError("conv2d: input channels " + std::to_string(c) + " != weight in-channels " +
                     std::to_string(w.dim(1)));
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * pad < k) throw ShapeError("conv2d: height " + std::to_string(h) + " too small for kernel");
  if (wd + 2 * pad < k) throw ShapeError("conv2d: width " + std::to_string(wd) + " too small for kernel");
  if (bias.defined() && bias.numel() != o)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                     " != out-channels " + std::to_string(o));
  const std::size_t ho = conv_out_extent(h, k, stride, pad);
  const std::size_t wo = conv_out_extent(wd, k, stride, pad);
  const std::size_t p = ho * wo;
  const std::size_t rows = c * k * k;
  const std::size_t cols = n * p;

  // col[(ci*k + ki)*k + kj][ni*p + oh*wo + ow]
  auto col = std::make_shared<detail::MatRM<T>>(rows, cols);
  const T* xp = x.ptr();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col->data() + ((ci * k + ki) * k + kj) * cols;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* plane = xp + (ni * c + ci) * h * wd;
          T* dst = row + ni * p;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(h)) {
              std::fill(dst + oh * wo, dst + (oh + 1) * wo, T(0));
              continue;
            }
            for (std::size_t ow = 0; ow < wo; ++ow) {
              long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              dst[oh * wo + ow] =
                  (iw < 0 || iw >= static_cast<long>(wd)) ? T(0) : plane[ih * wd + iw];
            }
          }
        }
      }

  bool rec = bias.defined() ? detail::should_record(x, w, bias) : detail::should_record(x, w);
  auto out = detail::make_output<T>(Shape{n, o, ho, wo}, rec);
  detail::MatRM<T> y = detail::CMapRM<T>(w.ptr(), o, rows) * (*col);
  T* op = out.ptr();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oi = 0; oi < o; ++oi) {
      T b = bias.defined() ? bias[oi] : T(0);
      const T* src = y.data() + oi * cols + ni * p;
      T* dst = op + (ni * o + oi) * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + b;
    }

  if (rec) {
    detail::record<T>([=]() mutable {
      detail::MatRM<T> gy(o, cols);
      const T* go = out.grad().data();
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t oi = 0; oi < o; ++oi)
          std::copy(go + (ni * o + oi) * p, go + (ni * o + oi + 1) * p,
                    gy.data() + oi * cols + ni * p);
      if (w.has_grad()) {
        detail::MapRM<T> gw(w.grad().data(), o, rows);
        gw.noalias() += gy * col->transpose();
      }
      if (bias.defined() && bias.has_grad()) {
        auto gb = bias.grad();
        for (std::size_t oi = 0; oi < o; ++oi) gb[oi] += gy.row(oi).sum();
      }
      if (x.has_grad()) {
        detail::MatRM<T> gcol = detail::CMapRM<T>(w.ptr(), o, rows).transpose() * gy;
        T* gx = x.grad().data();
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
              const T* row = gcol.data() + ((ci * k + ki) * k + kj) * cols;
              for (std::size_t ni = 0; ni < n; ++ni) {
                T* plane = gx + (ni * c + ci) * h * wd;
                const T* src = row + ni * p;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                  long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
                  if (ih < 0 || ih >= static_cast<long>(h)) continue;
                  for (std::size_t ow = 0; ow < wo; ++ow) {
                    long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
                    if (iw >= 0 && iw < static_cast<long>(wd)) plane[ih * wd + iw] += src[oh * wo + ow];
                  }
                }
              }
            }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class NormMode { train, eval };

/// Per-channel affine normalization with running statistics.
template <typename T>
struct BatchNormState {
  std::size_t channels = 0;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;  // never tracked
  Tensor<T> running_var;   // never tracked, strictly positive
  T momentum = T(0.1);
  T eps = T(1e-5);
  NormMode mode = NormMode::train;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t c)
      : channels(c),
        gamma(Shape{c}, T(1)),
        beta(Shape{c}, T(0)),
        running_mean(Shape{c}, T(0)),
        running_var(Shape{c}, T(1)) {}
};

/// Normalizes an (N, C, ...) tensor per channel. Train mode uses batch
/// statistics and updates the running estimates; eval mode uses the latter.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& st) {
  if (x.rank() != 4 && x.rank() != 2)
    throw ShapeError("batchnorm2d: input must be (N,C,H,W) or (N,C), got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (c != st.channels)
    throw ShapeError("batchnorm2d: input channels " + std::to_string(c) + " != state channels " +
                     std::to_string(st.channels));
  const std::size_t m = n * hw;
  const bool train = st.mode == NormMode::train;
  if (train && m < 2)
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel (N*H*W = " +
                     std::to_string(m) + ")");

  std::vector<T> mu(c), invstd(c);
  if (train) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      double s = 0;
      for (std::size_t ni = 0; ni < n; ++ni) {
        const T* src = x.ptr() + (ni * c + ci) * hw;
        for (std::size_t q = 0; q < hw; ++q) s += src[q];
      }
      double mean = s / static_cast<double>(m);
      double ss = 0;
      for (std::size_t ni = 0; ni < n; ++ni) {
        const T* src = x.ptr() + (ni * c + ci) * hw;
        for (std::size_t q = 0; q < hw; ++q) {
          double d = src[q] - mean;
          ss += d * d;
        }
      }
      double var = ss / static_cast<double>(m);
      mu[ci] = static_cast<T>(mean);
      invstd[ci] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(st.eps)));
      double unbiased = ss / static_cast<double>(m - 1);
      st.running_mean[ci] = (T(1) - st.momentum) * st.running_mean[ci] + st.momentum * static_cast<T>(mean);
      st.running_var[ci] = (T(1) - st.momentum) * st.running_var[ci] + st.momentum * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ci = 0; ci < c; ++ci) {
      mu[ci] = st.running_mean[ci];
      invstd[ci] = T(1) / std::sqrt(st.running_var[ci] + st.eps);
    }
  }

  Tensor<T> gamma = st.gamma, beta = st.beta;
  bool rec = detail::should_record(x, gamma, beta);
  auto out = detail::make_output<T>(x.shape(), rec);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::size_t off = (ni * c + ci) * hw;
      for (std::size_t q = 0; q < hw; ++q) {
        T xh = (x[off + q] - mu[ci]) * invstd[ci];
        (*xhat)[off + q] = xh;
        out[off + q] = gamma[ci] * xh + beta[ci];
      }
    }

  if (rec) {
    detail::record<T>([=]() mutable {
      auto gy = out.grad();
      for (std::size_t ci = 0; ci < c; ++ci) {
        T sg = 0, sgx = 0;
        for (std::size_t ni = 0; ni < n; ++ni) {
          std::size_t off = (ni * c + ci) * hw;
          for (std::size_t q = 0; q < hw; ++q) {
            sg += gy[off + q];
            sgx += gy[off + q] * (*xhat)[off + q];
          }
        }
        if (gamma.has_grad()) gamma.grad()[ci] += sgx;
        if (beta.has_grad()) beta.grad()[ci] += sg;
        if (!x.has_grad()) continue;
        auto gx = x.grad();
        T g = gamma[ci] * invstd[ci];
        T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t ni = 0; ni < n; ++ni) {
          std::size_t off = (ni * c + ci) * hw;
          for (std::size_t q = 0; q < hw; ++q) {
            if (train)
              gx[off + q] += g * (gy[off + q] - inv_m * sg - (*xhat)[off + q] * inv_m * sgx);
            else
              gx[off + q] += g * gy[off + q];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial rearrangement and pooling
// ---------------------------------------------------------------------------

namespace detail {

// Index map for pixel shuffle: for each output element, its source in the input.
inline std::vector<std::size_t> shuffle_index(std::size_t n, std::size_t c, std::size_t h,
                                              std::size_t w, std::size_t r) {
  // Output (n, c, h*r, w*r); input (n, c*r*r, h, w).
  std::vector<std::size_t> idx(n * c * h * r * w * r);
  std::size_t oh = h * r, ow = w * r, ic = c * r * r;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          std::size_t i = y % r, j = x % r;
          std::size_t src_c = ci * r * r + i * r + j;
          idx[((ni * c + ci) * oh + y) * ow + x] = ((ni * ic + src_c) * h + y / r) * w + x / r;
        }
  return idx;
}

/// out[i] = in[idx[i]], gradient scattered back.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape shape, std::shared_ptr<std::vector<std::size_t>> idx) {
  bool rec = should_record(x);
  auto out = make_output<T>(std::move(shape), rec);
  for (std::size_t i = 0; i < idx->size(); ++i) out[i] = x[(*idx)[i]];
  if (rec) {
    record<T>([x, out, idx]() mutable {
      if (!x.has_grad()) return;
      auto gx = x.grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += gy[i];
    });
  }
  return out;
}

}  // namespace detail

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r) with
/// out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  detail::require_rank(x, 4, "pixel_shuffle", "input");
  if (r == 0 || x.dim(1) % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channel count " + std::to_string(x.dim(1)) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  std::size_t n = x.dim(0), c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
  auto idx = std::make_shared<std::vector<std::size_t>>(detail::shuffle_index(n, c, h, w, r));
  return detail::gather(x, Shape{n, c, h * r, w * r}, idx);
}

/// Inverse of pixel_shuffle: (N, C, H*r, W*r) -> (N, C*r*r, H, W).
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t r) {
  detail::require_rank(x, 4, "space_to_depth", "input");
  if (r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0)
    throw ShapeError("space_to_depth: spatial extent " + shape_str(x.shape()) +
                     " not divisible by r = " + std::to_string(r));
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
  auto fwd = detail::shuffle_index(n, c, h, w, r);
  auto idx = std::make_shared<std::vector<std::size_t>>(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) (*idx)[fwd[i]] = i;
  return detail::gather(x, Shape{n, c * r * r, h, w}, idx);
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank(x, 4, "upsample_nearest", "input");
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t oh = h * factor, ow = w * factor;
  auto idx = std::make_shared<std::vector<std::size_t>>(n * c * oh * ow);
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        (*idx)[(nc * oh + y) * ow + xx] = (nc * h + y / factor) * w + xx / factor;
  return detail::gather(x, Shape{n, c, oh, ow}, idx);
}

/// Maps C_in channels to C_out by averaging consecutive groups (C_in > C_out)
/// or tiling (C_in < C_out). Requires one to divide the other.
template <typename T>
Tensor<T> channel_adapt(const Tensor<T>& x, std::size_t c_out) {
  detail::require_rank(x, 4, "channel_adapt", "input");
  std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c == c_out) return x;
  if (c % c_out != 0 && c_out % c != 0)
    throw ShapeError("channel_adapt: " + std::to_string(c) + " and " + std::to_string(c_out) +
                     " channels are not multiples");
  if (c_out > c) {
    auto idx = std::make_shared<std::vector<std::size_t>>(n * c_out * hw);
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t q = 0; q < hw; ++q)
          (*idx)[(ni * c_out + co) * hw + q] = (ni * c + co % c) * hw + q;
    return detail::gather(x, Shape{n, c_out, x.dim(2), x.dim(3)}, idx);
  }
  std::size_t g = c / c_out;
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{n, c_out, x.dim(2), x.dim(3)}, rec);
  T inv = T(1) / static_cast<T>(g);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t q = 0; q < hw; ++q) {
        T acc = 0;
        for (std::size_t k = 0; k < g; ++k) acc += x[(ni * c + co * g + k) * hw + q];
        out[(ni * c_out + co) * hw + q] = acc * inv;
      }
  if (rec) {
    detail::record<T>([=]() mutable {
      if (!x.has_grad()) return;
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t co = 0; co < c_out; ++co)
          for (std::size_t q = 0; q < hw; ++q) {
            T gv = out.grad()[(ni * c_out + co) * hw + q] * inv;
            for (std::size_t k = 0; k < g; ++k) x.grad()[(ni * c + co * g + k) * hw + q] += gv;
          }
    });
  }
  return out;
}

/// (N, C, H, W) -> (N, C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank(x, 4, "global_avg_pool", "input");
  std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  bool rec = detail::should_record(x);
  auto out = detail::make_output<T>(Shape{n, c}, rec);
  T inv = T(1) / static_cast<T>(hw);
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc = 0;
    for (std::size_t q = 0; q < hw; ++q) acc += x[i * hw + q];
    out[i] = acc * inv;
  }
  if (rec) {
    detail::record<T>([x, out, n, c, hw, inv]() mutable {
      if (!x.has_grad()) return;
      for (std::size_t i = 0; i < n * c; ++i) {
        T g = out.grad()[i] * inv;
        for (std::size_t q = 0; q < hw; ++q) x.grad()[i * hw + q] += g;
      }
    });
  }
  return out;
}

/// Max pooling, square window, no padding.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  detail::require_rank(x, 4, "max_pool2d", "input");
  if (k == 0 || stride == 0 || x.dim(2) < k || x.dim(3) < k)
    throw ShapeError("max_pool2d: window " + std::to_string(k) + " does not fit " +
                     shape_str(x.shape()));
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t ho = conv_out_extent(h, k, stride, 0), wo = conv_out_extent(w, k, stride, 0);
  auto arg = std::make_shared<std::vector<std::size_t>>(n * c * ho * wo);
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        std::size_t best = (nc * h + oh * stride) * w + ow * stride;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            std::size_t src = (nc * h + oh * stride + i) * w + ow * stride + j;
            if (x[src] > x[best]) best = src;
          }
        (*arg)[(nc * ho + oh) * wo + ow] = best;
      }
  return detail::gather(x, Shape{n, c, ho, wo}, arg);
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_temperature(T tau) {
  if (!(tau > T(0))) throw std::invalid_argument("softmax temperature must be positive");
}

template <typename T>
std::pair<std::size_t, std::size_t> rows_cols(const Tensor<T>& z, const char* op) {
  if (z.rank() == 1) return {1, z.dim(0)};
  if (z.rank() == 2) return {z.dim(0), z.dim(1)};
  throw ShapeError(std::string(op) + ": logits must be rank 1 or 2, got " + shape_str(z.shape()));
}

}  // namespace detail

/// Row-wise softmax(z / tau), stabilised by max subtraction.
template <typename T>
Tensor<T> softmax_temperature(const Tensor<T>& z, T tau) {
  detail::check_temperature(tau);
  auto [n, k] = detail::rows_cols(z, "softmax_temperature");
  bool rec = detail::should_record(z);
  auto out = detail::make_output<T>(z.shape(), rec);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += (out[i * k + j] = std::exp((z[i * k + j] - mx) / tau));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= s;
  }
  if (rec) {
    detail::record<T>([z, out, n, k, tau]() mutable {
      if (!z.has_grad()) return;
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += out.grad()[i * k + j] * out[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          z.grad()[i * k + j] += out[i * k + j] * (out.grad()[i * k + j] - dot) / tau;
      }
    });
  }
  return out;
}

/// Row-wise log(softmax(z / tau)).
template <typename T>
Tensor<T> log_softmax_temperature(const Tensor<T>& z, T tau) {
  detail::check_temperature(tau);
  auto [n, k] = detail::rows_cols(z, "log_softmax_temperature");
  bool rec = detail::should_record(z);
  auto out = detail::make_output<T>(z.shape(), rec);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j] / tau);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[i * k + j] / tau - mx);
    T lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = z[i * k + j] / tau - lse;
  }
  if (rec) {
    detail::record<T>([z, out, n, k, tau]() mutable {
      if (!z.has_grad()) return;
      for (std::size_t i = 0; i < n; ++i) {
        T gs = 0;
        for (std::size_t j = 0; j < k; ++j) gs += out.grad()[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          z.grad()[i * k + j] += (out.grad()[i * k + j] - std::exp(out[i * k + j]) * gs) / tau;
      }
    });
  }
  return out;
}

}  // namespace dirnet
