// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "dirnet/uncertainty.hpp"
#include "gradcheck.hpp"

namespace dirnet {
namespace {

using testing::grad_check;
using TD = Tensor<double>;

// Golden-section search; f is assumed unimodal on [lo, hi].
double argmin_1d(const std::function<double(double)>& f, double lo, double hi) {
  const double g = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  for (int i = 0; i < 200; ++i) {
    if (f(c) < f(d)) b = d;
    else a = c;
    c = b - g * (b - a);
    d = a + g * (b - a);
  }
  return (a + b) / 2;
}

TEST(VarianceHead, ZeroWeightsGiveUnitVariance) {
  Rng rng(31);
  VarianceHead<double> head(16, 12, rng);
  for (auto* t : {&head.fc1.weight, &head.fc1.bias, &head.fc2.weight, &head.fc2.bias})
    for (auto& v : t->data()) v = 0;
  TD latent(Shape{3, 16}, 0.7);
  auto v = head(latent);
  EXPECT_EQ(v.alpha2d.shape(), (Shape{3, 42}));
  EXPECT_EQ(v.alpha3d.shape(), (Shape{3, 63}));
  EXPECT_EQ(v.f.shape(), (Shape{3, 6}));
  for (double a : v.alpha2d.data()) EXPECT_EQ(a, 0.0);
  for (double a : v.alpha3d.data()) EXPECT_EQ(a, 0.0);
}

TEST(VarianceHead, OutputsStayInsideClamp) {
  Rng rng(32);
  VarianceHead<double> head(16, 12, rng);
  TD latent(Shape{8, 16});
  for (auto& v : latent.data()) v = uniform(rng, -200, 200);
  auto v = head(latent);
  bool hit = false;
  for (const auto* t : {&v.alpha2d, &v.alpha3d})
    for (double a : t->data()) {
      EXPECT_GE(a, -kAlphaClamp);
      EXPECT_LE(a, kAlphaClamp);
      hit |= std::abs(a) == kAlphaClamp;
    }
  EXPECT_TRUE(hit);
  for (double x : v.f.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(VarianceHead, FeatureDiffersForDifferentLatents) {
  Rng rng(33);
  VarianceHead<double> head(16, 12, rng);
  TD a(Shape{1, 16}), b(Shape{1, 16});
  for (auto& v : a.data()) v = uniform(rng, 0, 1);
  for (std::size_t i = 0; i < 16; ++i) b[i] = a[i] * (i % 2 ? 0.2 : 1.0);
  auto fa = head(a).f, fb = head(b).f;
  bool differs = false;
  for (std::size_t i = 0; i < fa.numel(); ++i) differs |= fa[i] != fb[i];
  EXPECT_TRUE(differs);
}

TEST(VarLoss3D, WorkedExamples) {
  EXPECT_DOUBLE_EQ(var_loss_3d_value(4, 0), 2.0);
  EXPECT_NEAR(var_loss_3d_value(4, std::log(4.0)), 0.5 + std::log(4.0) / 2, 1e-12);
  EXPECT_NEAR(var_loss_3d_value(4, std::log(4.0)), 1.193, 1e-3);
  TD e(Shape{1, 2}, std::vector<double>{4, 4}), a(Shape{1, 2}, std::vector<double>{0, std::log(4.0)});
  EXPECT_NEAR(var_loss_3d(e, a).item(), (2.0 + var_loss_3d_value(4, std::log(4.0))) / 2, 1e-12);
}

TEST(VarLoss2D, WorkedExamples) {
  EXPECT_DOUBLE_EQ(var_loss_2d_value(1, 0), 0.5);
  TD l(Shape{2, 1}, std::vector<double>{1, 1.5}), a(Shape{2, 1}, std::vector<double>{0, 1});
  EXPECT_NEAR(var_loss_2d(l, a).item(), (0.5 + var_loss_2d_value(1.5, 1)) / 2, 1e-12);
}

TEST(VarLoss3D, StationaryPointIsLogError) {
  Rng rng(34);
  for (int t = 0; t < 50; ++t) {
    double e = std::exp(uniform(rng, -6, 6));
    double a = argmin_1d([&](double x) { return var_loss_3d_value(e, x); }, -kAlphaClamp, kAlphaClamp);
    EXPECT_NEAR(a, std::log(e), 1e-3) << "e = " << e;
  }
}

TEST(VarLoss2D, StationaryPointIsLogTwoLMinusOne) {
  EXPECT_NEAR(argmin_1d([](double x) { return var_loss_2d_value(1.5, x); }, -kAlphaClamp, kAlphaClamp),
              std::log(2.0), 1e-3);
  Rng rng(35);
  for (int t = 0; t < 50; ++t) {
    double l = 0.5 + std::exp(uniform(rng, -5, 5));
    double a = argmin_1d([&](double x) { return var_loss_2d_value(l, x); }, -kAlphaClamp, kAlphaClamp);
    EXPECT_NEAR(a, std::log(2 * l - 1), 1e-3) << "l = " << l;
  }
}

TEST(VarLoss2D, SmallLossDecreasesToTheClamp) {
  const double l = 0.25;
  double prev = var_loss_2d_value(l, kAlphaClamp);
  for (double a = kAlphaClamp - 0.01; a >= -kAlphaClamp; a -= 0.01) {
    double v = var_loss_2d_value(l, a);
    ASSERT_LT(v, prev) << "alpha " << a;
    prev = v;
  }
  // Through the head, the clamped alpha is where the minimum sits.
  TD ll(Shape{1, 1}, 0.25);
  EXPECT_LT(var_loss_2d(ll, TD(Shape{1, 1}, -kAlphaClamp)).item(), var_loss_2d(ll, TD(Shape{1, 1}, -9.0)).item());
}

TEST(VarLoss, GradientsMatchFiniteDifferences) {
  Rng rng(36);
  TD e(Shape{3, 63}), l(Shape{3, 42}), a3(Shape{3, 63}), a2(Shape{3, 42});
  for (auto& v : e.data()) v = uniform(rng, 0, 3);
  for (auto& v : l.data()) v = uniform(rng, 0, 3);
  for (auto& v : a3.data()) v = uniform(rng, -3, 3);
  for (auto& v : a2.data()) v = uniform(rng, -3, 3);
  EXPECT_LT(grad_check({e, a3}, [&] { return var_loss_3d(e, a3); }).max_rel, 1e-6);
  EXPECT_LT(grad_check({l, a2}, [&] { return var_loss_2d(l, a2); }).max_rel, 1e-6);
}

TEST(VarLoss3D, ErrorGradientScalesByExpMinusAlpha) {
  for (double alpha : {-2.0, 0.0, 1.5, 4.0}) {
    TD e(Shape{1, 1}, 2.0), a(Shape{1, 1}, alpha);
    e.set_tracked(true);
    e.zero_grad();
    {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      auto loss = var_loss_3d(e, a);
      backward(loss);
    }
    EXPECT_NEAR(e.grad()[0], std::exp(-alpha) / 2, 1e-12);
  }
}

TEST(VarLoss3D, MatchesDiracLimitOfGaussianKl) {
  // KL(N(y, s_gt^2) || N(y_hat, e^alpha)) + log s_gt + 1/2 tends to the loss as s_gt -> 0.
  auto kl = [](double e, double alpha, double s_gt) {
    double var = std::exp(alpha);
    return 0.5 * alpha - std::log(s_gt) + (s_gt * s_gt + e) / (2 * var) - 0.5;
  };
  Rng rng(37);
  for (int t = 0; t < 20; ++t) {
    double e = uniform(rng, 0, 5), alpha = uniform(rng, -3, 3);
    double prev = 1e9;
    for (double s : {1e-1, 1e-2, 1e-3}) {
      double gap = std::abs(kl(e, alpha, s) + std::log(s) + 0.5 - var_loss_3d_value(e, alpha));
      EXPECT_LT(gap, prev);
      EXPECT_NEAR(gap, s * s * std::exp(-alpha) / 2, 1e-12);
      prev = gap;
    }
  }
}

TEST(MeanVariance, Examples) {
  std::vector<double> zeros(42, 0.0);
  EXPECT_EQ(mean_variance<double>(zeros), 1.0);
  std::vector<double> a{0.0, std::log(3.0)};
  EXPECT_NEAR(mean_variance<double>(a), 2.0, 1e-12);
  std::vector<float> f{0.0f, 0.0f};
  EXPECT_EQ(mean_variance<float>(f), 1.0);
  EXPECT_THROW(mean_variance<double>(std::span<const double>{}), std::invalid_argument);
}

TEST(MeanVariance, MonotoneInEachEntry) {
  Rng rng(38);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(42);
    for (auto& v : a) v = uniform(rng, -10, 10);
    double base = mean_variance<double>(a);
    a[uniform_index(rng, 42)] += 0.1;
    EXPECT_GT(mean_variance<double>(a), base);
  }
}

TEST(Heatmap, PeakAtRoundedJointAndGaussianFalloff) {
  std::vector<double> j2d(42), a2d(42);
  Rng rng(39);
  for (auto& v : j2d) v = uniform(rng, 4, 28);
  for (int j = 0; j < kNumJoints; ++j) {
    a2d[2 * j] = std::log(2.0);
    a2d[2 * j + 1] = std::log(6.0);
  }
  auto maps = confidence_heatmap(j2d, a2d, 32);
  ASSERT_EQ(maps.size(), 21u);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& m = maps[j];
    int cx = static_cast<int>(std::round(j2d[2 * j])), cy = static_cast<int>(std::round(j2d[2 * j + 1]));
    EXPECT_EQ(m.at(cx, cy), 1.0);
    for (double v : m.pixels) EXPECT_LE(v, 1.0);
    int x = std::min(cx + 3, 31), y = std::max(cy - 2, 0);
    double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    EXPECT_NEAR(m.at(x, y), std::exp(-d2 / (2 * 4.0)), 1e-12);
  }
  EXPECT_THROW(confidence_heatmap(std::vector<double>(40), a2d, 32), std::invalid_argument);
}

TEST(Heatmap, LargerVarianceWidensHalfMaximum) {
  auto half_radius = [](double alpha) {
    std::vector<double> j2d(42, 16.0), a2d(42, alpha);
    auto m = confidence_heatmap(j2d, a2d, 32)[0];
    int r = 0;
    while (16 + r + 1 < 32 && m.at(16 + r + 1, 16) >= 0.5) ++r;
    return r;
  };
  for (double a = -1; a < 4; a += 0.5) EXPECT_LE(half_radius(a), half_radius(a + 0.5));
  EXPECT_LT(half_radius(0), half_radius(3));
}

TEST(Heatmap, PgmRoundTrip) {
  GrayImage img{3, 2, {0.0, 0.5, 1.0, 0.25, 2.0, -1.0}};
  auto path = (std::filesystem::temp_directory_path() / "dirnet_test.pgm").string();
  write_pgm(img, path);
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  int w, h, maxval;
  is >> magic >> w >> h >> maxval;
  is.get();
  std::vector<unsigned char> px(6);
  is.read(reinterpret_cast<char*>(px.data()), 6);
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 3);
  EXPECT_EQ(h, 2);
  EXPECT_EQ(maxval, 255);
  EXPECT_EQ(px, (std::vector<unsigned char>{0, 128, 255, 64, 255, 0}));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dirnet
