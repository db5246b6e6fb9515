// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dirnet/layers.hpp"
#include "dirnet/ops.hpp"
#include "dirnet/optim.hpp"
#include "gradcheck.hpp"

namespace dirnet {
namespace {

using testing::grad_check;
using TD = Tensor<double>;

TD random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  TD t(std::move(s));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Values bounded away from zero so kinks are never straddled by +-h.
TD away_from_zero(Shape s, Rng& rng) {
  TD t(std::move(s));
  for (auto& v : t.data()) v = (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.05, 1.0);
  return t;
}

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = uniform(rng, -1, 1);
  return w;
}

constexpr double kPrimTol = 1e-4;
constexpr int kTrials = 10;

TEST(Tensor, RejectsZeroExtentAndMismatchedValues) {
  EXPECT_THROW(TD(Shape{2, 0}), ShapeError);
  EXPECT_THROW(TD(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  TD t(Shape{2, 3});
  EXPECT_EQ(t.numel(), 6u);
}

TEST(Backward, SquareAtThreeGivesSix) {
  TD x(Shape{1}, 3.0);
  x.set_tracked(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(square(x));
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_TRUE(tape.empty());
}

TEST(Backward, HadamardSumGradientsSwapInputs) {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  a.set_tracked(true);
  b.set_tracked(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(hadamard(a, b));
  backward(loss);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_DOUBLE_EQ(a.grad()[i], b[i]);
    EXPECT_DOUBLE_EQ(b.grad()[i], a[i]);
  }
}

TEST(Backward, RejectsNonScalarNonFiniteAndEmptyTape) {
  TD x(Shape{2}, 1.0);
  x.set_tracked(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = relu(x);
  EXPECT_THROW(backward(y), ShapeError);
  auto bad = scale(sum(x), std::numeric_limits<double>::infinity());
  EXPECT_THROW(backward(bad), std::domain_error);
  Tape<double> empty;
  TD c(Shape{1}, 1.0);
  EXPECT_THROW(empty.backward(c), std::logic_error);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  TD x(Shape{2}, 1.0);
  x.set_tracked(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> ng;
    auto y = relu(x);
    EXPECT_FALSE(y.tracked());
  }
  EXPECT_TRUE(tape.empty());
}

TEST(Conv2d, OutputExtentFormula) {
  EXPECT_EQ(conv_out_extent(8, 3, 1, 1), 8u);
  EXPECT_EQ(conv_out_extent(8, 3, 2, 1), 4u);
  EXPECT_EQ(conv_out_extent(7, 3, 2, 1), 4u);
  EXPECT_EQ(conv_out_extent(9, 1, 2, 0), 5u);
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  Rng rng(2);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  TD w(Shape{3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  TD b(Shape{3});
  auto y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, ZeroInputGivesBroadcastBias) {
  TD x(Shape{1, 2, 4, 4});
  Rng rng(3);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  TD b(Shape{3}, std::vector<double>{0.5, -1.0, 2.0});
  auto y = conv2d(x, w, b, 1, 1);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t q = 0; q < 16; ++q) EXPECT_DOUBLE_EQ(y[o * 16 + q], b[o]);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 7, 6}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  const std::size_t stride = 2, pad = 1;
  auto y = conv2d(x, w, b, stride, pad);
  std::size_t ho = conv_out_extent(7, 3, stride, pad), wo = conv_out_extent(6, 3, stride, pad);
  ASSERT_EQ(y.shape(), (Shape{2, 4, ho, wo}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj) {
                long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                long q = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (r < 0 || r >= 7 || q < 0 || q >= 6) continue;
                acc += w[((o * 3 + c) * 3 + ki) * 3 + kj] * x[((n * 3 + c) * 7 + r) * 6 + q];
              }
          EXPECT_NEAR(y[((n * 4 + o) * ho + i) * wo + j], acc, 1e-12);
        }
}

TEST(Conv2d, RejectsChannelMismatchNamingDimension) {
  TD x(Shape{1, 3, 4, 4});
  TD w(Shape{2, 4, 3, 3});
  try {
    conv2d(x, w, TD(), 1, 1);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(100 + trial);
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    std::size_t stride = 1 + trial % 2;
    auto y0 = conv2d(x, w, b, stride, 1);
    auto wts = random_weights(y0.numel(), rng);
    auto r = grad_check({x, w, b}, [&] { return weighted_sum(conv2d(x, w, b, stride, 1), wts); });
    EXPECT_LT(r.max_rel, kPrimTol) << "trial " << trial;
  }
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  // Each channel already has zero mean and unit (biased) variance.
  TD x(Shape{2, 1, 1, 2}, std::vector<double>{1, -1, 1, -1});
  BatchNormState<double> st(1);
  auto y = batchnorm2d(x, st);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  TD x(Shape{3, 2, 2, 2}, 4.0);
  BatchNormState<double> st(2);
  st.beta[0] = 0.25;
  st.beta[1] = -0.5;
  auto y = batchnorm2d(x, st);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t q = 0; q < 4; ++q) EXPECT_DOUBLE_EQ(y[(n * 2 + c) * 4 + q], st.beta[c]);
}

TEST(BatchNorm, TrainModeMomentsAndRunningUpdate) {
  Rng rng(5);
  auto x = random_tensor({4, 3, 3, 3}, rng, -2, 3);
  BatchNormState<double> st(3);
  st.gamma[1] = 2.0;
  st.beta[1] = 0.5;
  auto y = batchnorm2d(x, st);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, m2 = 0, xm = 0, xm2 = 0;
    const double cnt = 36;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t q = 0; q < 9; ++q) {
        double v = y[(n * 3 + c) * 9 + q], xv = x[(n * 3 + c) * 9 + q];
        m += v;
        m2 += v * v;
        xm += xv;
        xm2 += xv * xv;
      }
    m /= cnt;
    double var = m2 / cnt - m * m;
    xm /= cnt;
    double xvar = xm2 / cnt - xm * xm;
    EXPECT_NEAR(m, st.beta[c], 1e-9);
    EXPECT_NEAR(var, st.gamma[c] * st.gamma[c] * xvar / (xvar + 1e-5), 1e-9);
    EXPECT_NEAR(st.running_mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(st.running_var[c], 0.9 + 0.1 * xvar * cnt / (cnt - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalModeIsDeterministicAffine) {
  Rng rng(6);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  BatchNormState<double> st(2);
  st.running_mean[0] = 0.3;
  st.running_var[0] = 2.0;
  st.gamma[1] = -1.5;
  st.mode = NormMode::eval;
  auto y1 = batchnorm2d(x, st);
  auto y2 = batchnorm2d(x, st);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(y1[i], y2[i]);
    std::size_t c = (i / 9) % 2;
    double expect = st.gamma[c] * (x[i] - st.running_mean[c]) / std::sqrt(st.running_var[c] + 1e-5) + st.beta[c];
    EXPECT_NEAR(y1[i], expect, 1e-12);
  }
  EXPECT_DOUBLE_EQ(st.running_mean[0], 0.3);
}

TEST(BatchNorm, RejectsSingleValuePerChannelInTrainMode) {
  TD x(Shape{1, 2, 1, 1}, 1.0);
  BatchNormState<double> st(2);
  EXPECT_THROW(batchnorm2d(x, st), ShapeError);
  st.mode = NormMode::eval;
  EXPECT_NO_THROW(batchnorm2d(x, st));
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(200 + trial);
    auto x = random_tensor({3, 2, 3, 3}, rng, -2, 2);
    BatchNormState<double> st(2);
    st.gamma = random_tensor({2}, rng, 0.5, 1.5);
    st.beta = random_tensor({2}, rng);
    auto wts = random_weights(x.numel(), rng);
    auto r = grad_check({x, st.gamma, st.beta}, [&] { return weighted_sum(batchnorm2d(x, st), wts); });
    EXPECT_LT(r.max_rel, kPrimTol) << "trial " << trial;
  }
}

TEST(PixelShuffle, ShapeLaw) {
  TD x(Shape{1, 4, 2, 2});
  EXPECT_EQ(pixel_shuffle(x, 2).shape(), (Shape{1, 1, 4, 4}));
  EXPECT_THROW(pixel_shuffle(TD(Shape{1, 3, 2, 2}), 2), ShapeError);
}

TEST(PixelShuffle, SinglePixelFormsGrid) {
  TD x(Shape{1, 4, 1, 1}, std::vector<double>{10, 20, 30, 40});
  auto y = pixel_shuffle(x, 2);
  EXPECT_EQ(y.data()[0], 10);
  EXPECT_EQ(y.data()[1], 20);
  EXPECT_EQ(y.data()[2], 30);
  EXPECT_EQ(y.data()[3], 40);
}

TEST(PixelShuffle, IndexFormula) {
  Rng rng(7);
  const std::size_t n = 2, c = 3, h = 2, w = 3, r = 2;
  auto x = random_tensor({n, c * r * r, h, w}, rng);
  auto y = pixel_shuffle(x, r);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t hi = 0; hi < h; ++hi)
        for (std::size_t wi = 0; wi < w; ++wi)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) {
              double out = y[((ni * c + ci) * h * r + hi * r + i) * w * r + wi * r + j];
              double in = x[((ni * c * r * r + ci * r * r + i * r + j) * h + hi) * w + wi];
              EXPECT_EQ(out, in);
            }
}

TEST(PixelShuffle, InverseIsIdentityOverRandomShapes) {
  Rng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t r = 1 + uniform_index(rng, 3);
    std::size_t n = 1 + uniform_index(rng, 3), c = 1 + uniform_index(rng, 4);
    std::size_t h = 1 + uniform_index(rng, 4), w = 1 + uniform_index(rng, 4);
    auto x = random_tensor({n, c * r * r, h, w}, rng);
    auto back = space_to_depth(pixel_shuffle(x, r), r);
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
    auto y = random_tensor({n, c, h * r, w * r}, rng);
    auto fwd = pixel_shuffle(space_to_depth(y, r), r);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(fwd[i], y[i]);
  }
}

TEST(Softmax, SymmetricLogitsGiveHalf) {
  for (double tau : {0.1, 1.0, 7.0}) {
    auto p = softmax_temperature(TD(Shape{2}, 0.0), tau);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
  }
}

TEST(Softmax, StableForHugeLogitsAndRejectsBadTemperature) {
  auto p = softmax_temperature(TD(Shape{2}, std::vector<double>{1000, 0}), 1.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_TRUE(std::isfinite(p[1]));
  EXPECT_THROW(softmax_temperature(TD(Shape{2}), 0.0), std::invalid_argument);
  EXPECT_THROW(softmax_temperature(TD(Shape{2}), -1.0), std::invalid_argument);
  EXPECT_THROW(log_softmax_temperature(TD(Shape{2}), 0.0), std::invalid_argument);
}

TEST(Softmax, LogSoftmaxMatchesLogOfSoftmax) {
  Rng rng(9);
  auto z = random_tensor({3, 4}, rng, -5, 5);
  auto p = softmax_temperature(z, 0.7);
  auto lp = log_softmax_temperature(z, 0.7);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(lp[i], std::log(p[i]), 1e-12);
}

TEST(Elementwise, HadamardWithOnesIsIdentity) {
  Rng rng(10);
  auto f = random_tensor({2, 3, 4, 4}, rng);
  auto y = hadamard(f, TD(f.shape(), 1.0));
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(y[i], f[i]);
}

TEST(Elementwise, LinearMatchesDefinition) {
  TD x(Shape{1, 2}, std::vector<double>{1, 2});
  TD w(Shape{2, 2}, std::vector<double>{1, 0, 3, -1});
  TD b(Shape{2}, std::vector<double>{0.5, 0});
  auto y = linear(x, w, b);
  EXPECT_DOUBLE_EQ(y[0], 1.5);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Elementwise, PoolingDefinitions) {
  TD x(Shape{1, 1, 2, 4}, std::vector<double>{1, 5, 2, 0, 3, 4, -1, 7});
  auto g = global_avg_pool(x);
  EXPECT_DOUBLE_EQ(g[0], 21.0 / 8);
  auto m = max_pool2d(x, 2, 2);
  EXPECT_EQ(m.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(m[0], 5);
  EXPECT_DOUBLE_EQ(m[1], 7);
}

TEST(Elementwise, FiniteOutputsOnFiniteInputs) {
  Rng rng(11);
  auto x = random_tensor({4, 8}, rng, -800, 800);
  for (const auto& y : {relu(x), sigmoid(x), clamp(x, -10.0, 10.0), softmax_temperature(x, 0.05),
                        log_softmax_temperature(x, 0.05), smooth_l1(x, TD(x.shape()))}) {
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

struct UnaryCase {
  const char* name;
  std::function<TD(const TD&)> f;
};

TEST(Elementwise, ReluPropagatesNan) {
  TD x(Shape{3}, std::vector<double>{-1.0, std::numeric_limits<double>::quiet_NaN(), 2.0});
  auto y = relu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_TRUE(std::isnan(y[1]));
  EXPECT_EQ(y[2], 2.0);
}

TEST(Gradients, UnaryPrimitives) {
  std::vector<UnaryCase> cases{
      {"relu", [](const TD& x) { return relu(x); }},
      {"sigmoid", [](const TD& x) { return sigmoid(x); }},
      {"exp", [](const TD& x) { return exp(x); }},
      {"square", [](const TD& x) { return square(x); }},
      {"clamp", [](const TD& x) { return clamp(x, -0.5, 0.5); }},
      {"scale", [](const TD& x) { return scale(x, -2.5); }},
      {"add_scalar", [](const TD& x) { return add_scalar(x, 3.0); }},
      {"reshape", [](const TD& x) { return reshape(x, Shape{x.numel()}); }},
      {"slice_cols", [](const TD& x) { return slice_cols(x, 1, 3); }},
      {"select_cols", [](const TD& x) { return select_cols(x, {0, 3, 1}); }},
      {"softmax", [](const TD& x) { return softmax_temperature(x, 0.6); }},
      {"log_softmax", [](const TD& x) { return log_softmax_temperature(x, 1.7); }},
      {"sum", [](const TD& x) { return sum(x); }},
      {"mean", [](const TD& x) { return mean(x); }},
  };
  for (const auto& c : cases) {
    for (int trial = 0; trial < kTrials; ++trial) {
      Rng rng(300 + trial);
      auto x = away_from_zero({3, 4}, rng);
      // Keep clamp inputs away from its bounds too.
      if (std::string(c.name) == "clamp")
        for (auto& v : x.data())
          if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 1.3;
      auto w = random_weights(c.f(x).numel(), rng);
      auto r = grad_check({x}, [&] { return weighted_sum(c.f(x), w); });
      EXPECT_LT(r.max_rel, kPrimTol) << c.name << " trial " << trial;
    }
  }
}

TEST(Gradients, BinaryPrimitives) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(400 + trial);
    auto a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
    auto w = random_weights(15, rng);
    EXPECT_LT(grad_check({a, b}, [&] { return weighted_sum(add(a, b), w); }).max_rel, kPrimTol);
    EXPECT_LT(grad_check({a, b}, [&] { return weighted_sum(sub(a, b), w); }).max_rel, kPrimTol);
    EXPECT_LT(grad_check({a, b}, [&] { return weighted_sum(hadamard(a, b), w); }).max_rel, kPrimTol);
    EXPECT_LT(grad_check({a, b}, [&] { return weighted_sum(squared_diff(a, b), w); }).max_rel, kPrimTol);
    // smooth-L1 in both regimes, never at |d| = 1.
    auto c = random_tensor({3, 5}, rng);
    for (std::size_t i = 0; i < 15; ++i) c[i] = a[i] + (i % 2 ? 0.4 : 2.5) * (c[i] < 0 ? -1 : 1);
    EXPECT_LT(grad_check({a, c}, [&] { return weighted_sum(smooth_l1(a, c), w); }).max_rel, kPrimTol);
  }
}

TEST(Gradients, LinearAndPooling) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(500 + trial);
    auto x = random_tensor({4, 6}, rng), w = random_tensor({3, 6}, rng), b = random_tensor({3}, rng);
    auto wl = random_weights(12, rng);
    EXPECT_LT(grad_check({x, w, b}, [&] { return weighted_sum(linear(x, w, b), wl); }).max_rel, kPrimTol);
    auto m = random_tensor({2, 3, 4, 4}, rng);
    auto wg = random_weights(6, rng);
    EXPECT_LT(grad_check({m}, [&] { return weighted_sum(global_avg_pool(m), wg); }).max_rel, kPrimTol);
    auto wm = random_weights(2 * 3 * 2 * 2, rng);
    EXPECT_LT(grad_check({m}, [&] { return weighted_sum(max_pool2d(m, 2, 2), wm); }).max_rel, kPrimTol);
  }
}

TEST(Gradients, SpatialRearrangements) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(600 + trial);
    auto x = random_tensor({2, 8, 2, 3}, rng);
    auto w1 = random_weights(x.numel(), rng);
    EXPECT_LT(grad_check({x}, [&] { return weighted_sum(pixel_shuffle(x, 2), w1); }).max_rel, kPrimTol);
    auto y = random_tensor({2, 2, 4, 4}, rng);
    auto w2 = random_weights(y.numel(), rng);
    EXPECT_LT(grad_check({y}, [&] { return weighted_sum(space_to_depth(y, 2), w2); }).max_rel, kPrimTol);
    auto w3 = random_weights(x.numel() * 4, rng);
    EXPECT_LT(grad_check({x}, [&] { return weighted_sum(upsample_nearest(x, 2), w3); }).max_rel, kPrimTol);
    auto w4 = random_weights(2 * 2 * 6, rng);
    EXPECT_LT(grad_check({x}, [&] { return weighted_sum(channel_adapt(x, 2), w4); }).max_rel, kPrimTol);
    auto w5 = random_weights(2 * 16 * 6, rng);
    EXPECT_LT(grad_check({x}, [&] { return weighted_sum(channel_adapt(x, 16), w5); }).max_rel, kPrimTol);
  }
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamMoments<double> m;
  adam_step<double>(p, g, m, 1e-3, 1);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  const double lr = 1e-2, eps = 1e-8;
  for (double g0 : {3.0, -0.25, 1e-3}) {
    std::vector<double> p{0.5}, g{g0};
    AdamMoments<double> m;
    adam_step<double>(p, g, m, lr, 1);
    EXPECT_NEAR(p[0], 0.5 - lr * g0 / (std::abs(g0) + eps), 1e-15);
  }
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(12);
    std::vector<double> p(5), g(5);
    AdamMoments<double> m;
    for (auto& v : p) v = uniform(rng, -1, 1);
    for (int s = 1; s <= 20; ++s) {
      for (std::size_t i = 0; i < 5; ++i) g[i] = std::sin(p[i] * s);
      adam_step<double>(p, g, m, 1e-2, s);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsShapeMismatch) {
  std::vector<double> p{1.0, 2.0}, g{1.0};
  AdamMoments<double> m;
  EXPECT_THROW(adam_step<double>(p, g, m, 1e-3, 1), ShapeError);
}

}  // namespace
}  // namespace dirnet
