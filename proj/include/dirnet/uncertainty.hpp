// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirnet/layers.hpp"
#include "dirnet/skeleton.hpp"

namespace dirnet {

inline constexpr int kAlpha2D = 2 * kNumJoints;  // 42
inline constexpr int kAlpha3D = 3 * kNumJoints;  // 63
inline constexpr double kAlphaClamp = 10.0;

/// Variance head output for a batch.
template <typename T>
struct VarianceEstimate {
  Tensor<T> f;         // N x fc_width/2, first-layer features (gate input)
  Tensor<T> alpha2d;   // N x 42, log px^2
  Tensor<T> alpha3d;   // N x 63, log unit^2
};

/// Two-layer log-variance predictor.
template <typename T>
struct VarianceHead {
  Linear<T> fc1, fc2;

  VarianceHead() = default;
  VarianceHead(std::size_t latent, std::size_t fc_width, Rng& rng)
      : fc1(latent, fc_width / 2, rng), fc2(fc_width / 2, kAlpha2D + kAlpha3D, rng) {}

  std::size_t feature_width() const { return fc1.out_features(); }

  VarianceEstimate<T> operator()(const Tensor<T>& latent) const {
    VarianceEstimate<T> v;
    v.f = relu(fc1(latent));
    auto alpha = clamp(fc2(v.f), T(-kAlphaClamp), T(kAlphaClamp));
    v.alpha2d = slice_cols(alpha, 0, kAlpha2D);
    v.alpha3d = slice_cols(alpha, kAlpha2D, kAlpha2D + kAlpha3D);
    return v;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// Mean over coordinates of exp(-a)/2 * e + a/2 (e: squared errors).
template <typename T>
Tensor<T> var_loss_3d(const Tensor<T>& e, const Tensor<T>& alpha) {
  auto terms = detail::binary(
      e, alpha, "var_loss_3d", [](T ev, T a) { return std::exp(-a) * T(0.5) * ev + T(0.5) * a; },
      [](T, T a, T) { return T(0.5) * std::exp(-a); },
      [](T ev, T a, T) { return T(0.5) - T(0.5) * std::exp(-a) * ev; });
  return mean(terms);
}

/// Mean over coordinates of exp(-a) * (l - 1/2) + a/2 (l: smooth-L1 losses).
template <typename T>
Tensor<T> var_loss_2d(const Tensor<T>& l, const Tensor<T>& alpha) {
  auto terms = detail::binary(
      l, alpha, "var_loss_2d", [](T lv, T a) { return std::exp(-a) * (lv - T(0.5)) + T(0.5) * a; },
      [](T, T a, T) { return std::exp(-a); },
      [](T lv, T a, T) { return T(0.5) - std::exp(-a) * (lv - T(0.5)); });
  return mean(terms);
}

/// Scalar forms used for analysis and tests.
inline double var_loss_3d_value(double e, double alpha) {
  return std::exp(-alpha) * 0.5 * e + 0.5 * alpha;
}
inline double var_loss_2d_value(double l, double alpha) {
  return std::exp(-alpha) * (l - 0.5) + 0.5 * alpha;
}

/// Average variance: mean of exp(alpha).
template <typename R>
double mean_variance(std::span<const R> alpha) {
  if (alpha.empty()) throw std::invalid_argument("mean_variance: empty alpha vector");
  double s = 0;
  for (R a : alpha) s += std::exp(static_cast<double>(a));
  return s / static_cast<double>(alpha.size());
}

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // [0,1]

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/**
 * Per-joint isotropic Gaussian heatmaps centred at the predicted 2D joints,
 * peak-normalised to 1. `alpha2d` holds the 42 per-coordinate log-variances;
 * a joint's variance is the mean of its two coordinate variances.
 */
inline std::vector<GrayImage> confidence_heatmap(std::span<const double> j2d,
                                                 std::span<const double> alpha2d, int size) {
  if (j2d.size() != kAlpha2D || alpha2d.size() != kAlpha2D)
    throw std::invalid_argument("confidence_heatmap: expected 42 coordinates and 42 log-variances");
  std::vector<GrayImage> maps;
  for (int j = 0; j < kNumJoints; ++j) {
    double var = 0.5 * (std::exp(alpha2d[2 * j]) + std::exp(alpha2d[2 * j + 1]));
    double cx = std::round(j2d[2 * j]), cy = std::round(j2d[2 * j + 1]);
    GrayImage img{size, size, std::vector<double>(static_cast<std::size_t>(size) * size)};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img.pixels[static_cast<std::size_t>(y) * size + x] = std::exp(-d2 / (2.0 * var));
      }
    maps.push_back(std::move(img));
  }
  return maps;
}

/// Writes a binary PGM (P5, maxval 255).
inline void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.pixels) {
    auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(b));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace dirnet
