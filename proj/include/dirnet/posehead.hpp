// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "dirnet/layers.hpp"
#include "dirnet/skeleton.hpp"

namespace dirnet {

inline constexpr double kBetaMin = 0.5;
inline constexpr double kBetaMax = 2.0;
inline constexpr double kLogScaleClamp = 8.0;

/// Decoded pose, shape and camera of one sample.
struct PoseParams {
  std::array<double, kNumTheta> theta{};
  std::array<double, kNumBones> beta{};
  std::array<double, 3> rot{};  // axis-angle
  std::array<double, 2> t{};    // pixels
  double s = 1.0;               // pixels per model unit

  PoseParams() { beta.fill(1.0); }

  /// Inverse of the raw parameterization (beta = 1 + raw, s = exp(raw)).
  std::array<double, kPoseDim> to_raw() const {
    std::array<double, kPoseDim> r{};
    for (int i = 0; i < kNumTheta; ++i) r[kThetaOffset + i] = theta[i];
    for (int i = 0; i < kNumBones; ++i) r[kBetaOffset + i] = beta[i] - 1.0;
    for (int i = 0; i < 3; ++i) r[kRotOffset + i] = rot[i];
    r[kTransOffset] = t[0];
    r[kTransOffset + 1] = t[1];
    r[kScaleOffset] = std::log(s);
    return r;
  }

  /// Flat layout as stored in datasets: theta | beta | rot | t | s.
  std::array<double, kPoseDim> to_vector() const {
    auto v = to_raw();
    for (int i = 0; i < kNumBones; ++i) v[kBetaOffset + i] = beta[i];
    v[kScaleOffset] = s;
    return v;
  }

  static PoseParams from_vector(std::span<const double> v) {
    PoseParams p;
    for (int i = 0; i < kNumTheta; ++i) p.theta[i] = v[kThetaOffset + i];
    for (int i = 0; i < kNumBones; ++i) p.beta[i] = v[kBetaOffset + i];
    for (int i = 0; i < 3; ++i) p.rot[i] = v[kRotOffset + i];
    p.t = {v[kTransOffset], v[kTransOffset + 1]};
    p.s = v[kScaleOffset];
    return p;
  }

  /// Applies the network output parameterization: beta = clamp(1 + raw),
  /// s = exp(raw) with the raw log-scale clamped.
  static PoseParams from_raw(std::span<const double> r) {
    PoseParams p;
    for (int i = 0; i < kNumTheta; ++i) p.theta[i] = r[kThetaOffset + i];
    for (int i = 0; i < kNumBones; ++i)
      p.beta[i] = std::clamp(1.0 + r[kBetaOffset + i], kBetaMin, kBetaMax);
    for (int i = 0; i < 3; ++i) p.rot[i] = r[kRotOffset + i];
    p.t = {r[kTransOffset], r[kTransOffset + 1]};
    p.s = std::exp(std::clamp(r[kScaleOffset], -kLogScaleClamp, kLogScaleClamp));
    return p;
  }

  Mat3<double> rotation() const { return rotation_from_axis_angle(rot[0], rot[1], rot[2]); }
};

/// 21 x 3 joint positions, flattened row-major.
using Joints3D = std::array<double, 3 * kNumJoints>;
/// 21 x 2 pixel positions, flattened row-major.
using Joints2D = std::array<double, 2 * kNumJoints>;

inline Joints3D forward_kinematics(const PoseParams& p) {
  auto pos = forward_kinematics<double>(p.theta.data(), p.beta.data());
  Joints3D out{};
  for (int j = 0; j < kNumJoints; ++j) {
    out[3 * j] = pos[j].x;
    out[3 * j + 1] = pos[j].y;
    out[3 * j + 2] = pos[j].z;
  }
  return out;
}

/// J2D = s * Pi * R * J3D + t for all joints.
inline Joints2D project_weak_perspective(std::span<const double> j3d, const Mat3<double>& r,
                                         std::array<double, 2> t, double s) {
  Joints2D out{};
  for (int j = 0; j < kNumJoints; ++j) {
    auto q = project_point<double>({j3d[3 * j], j3d[3 * j + 1], j3d[3 * j + 2]}, r, t[0], t[1], s);
    out[2 * j] = q[0];
    out[2 * j + 1] = q[1];
  }
  return out;
}

/// Per-sample pose losses: smooth-L1 averaged over 2D coordinates, squared
/// Euclidean error averaged over joints.
struct PoseLoss {
  double l2d = 0;
  double l3d = 0;
};

inline double smooth_l1_value(double d) {
  d = std::abs(d);
  return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

inline PoseLoss pose_loss(std::span<const double> pred2d, std::span<const double> pred3d,
                          std::span<const double> gt2d, std::span<const double> gt3d) {
  PoseLoss l;
  for (int i = 0; i < 2 * kNumJoints; ++i) l.l2d += smooth_l1_value(pred2d[i] - gt2d[i]);
  l.l2d /= 2 * kNumJoints;
  for (int i = 0; i < 3 * kNumJoints; ++i) {
    double d = pred3d[i] - gt3d[i];
    l.l3d += d * d;
  }
  l.l3d /= kNumJoints;
  return l;
}

struct RegularizerWeights {
  double theta = 1e-3;
  double beta = 1e-2;
};

/// w_theta * |theta|^2 + w_beta * |beta - 1|^2
inline double regularizer(const PoseParams& p, const RegularizerWeights& w = {}) {
  double a = 0, b = 0;
  for (double v : p.theta) a += v * v;
  for (double v : p.beta) b += (v - 1.0) * (v - 1.0);
  return w.theta * a + w.beta * b;
}

// ---------------------------------------------------------------------------
// Differentiable batch versions
// ---------------------------------------------------------------------------

template <typename T>
struct DecodedPose {
  Tensor<T> j3d;  // N x 63
  Tensor<T> j2d;  // N x 42
};

namespace detail {

using PoseDual = Dual<double, kPoseDim>;

/// Joint outputs (63 3D then 42 2D) of one raw pose vector, generic scalar.
template <typename S>
std::array<S, 5 * kNumJoints> decode_generic(const std::array<S, kPoseDim>& raw) {
  std::array<S, kNumBones> beta;
  for (int i = 0; i < kNumBones; ++i) beta[i] = S(1) + raw[kBetaOffset + i];
  auto pos = forward_kinematics<S>(raw.data() + kThetaOffset, beta.data());
  auto r = rotation_from_axis_angle<S>(raw[kRotOffset], raw[kRotOffset + 1], raw[kRotOffset + 2]);
  using std::exp;
  S s = exp(raw[kScaleOffset]);
  std::array<S, 5 * kNumJoints> out;
  for (int j = 0; j < kNumJoints; ++j) {
    out[3 * j] = pos[j].x;
    out[3 * j + 1] = pos[j].y;
    out[3 * j + 2] = pos[j].z;
    auto q = project_point<S>(pos[j], r, raw[kTransOffset], raw[kTransOffset + 1], s);
    out[63 + 2 * j] = q[0];
    out[63 + 2 * j + 1] = q[1];
  }
  return out;
}

}  // namespace detail

/**
 * Raw head outputs (N x 46) to joints via forward kinematics and the
 * weak-perspective camera. Clamped entries (beta, log-scale) pass no
 * gradient outside their range. The backward pass uses per-sample
 * Jacobians from forward-mode duals.
 */
template <typename T>
DecodedPose<T> decode_pose(const Tensor<T>& raw) {
  if (raw.rank() != 2 || raw.dim(1) != static_cast<std::size_t>(kPoseDim))
    throw ShapeError("decode_pose: expected (N," + std::to_string(kPoseDim) + "), got " +
                     shape_str(raw.shape()));
  const std::size_t n = raw.dim(0);
  const bool rec = detail::should_record(raw);
  DecodedPose<T> out{detail::make_output<T>(Shape{n, 63}, rec), detail::make_output<T>(Shape{n, 42}, rec)};
  constexpr int kOut = 5 * kNumJoints;
  auto jac = rec ? std::make_shared<std::vector<double>>(n * kOut * kPoseDim) : nullptr;

  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kPoseDim> r;
    std::array<bool, kPoseDim> live;
    for (int k = 0; k < kPoseDim; ++k) {
      r[k] = static_cast<double>(raw[i * kPoseDim + k]);
      live[k] = true;
    }
    for (int b = 0; b < kNumBones; ++b) {
      double v = r[kBetaOffset + b];
      double c = std::clamp(v, kBetaMin - 1.0, kBetaMax - 1.0);
      live[kBetaOffset + b] = (v == c);
      r[kBetaOffset + b] = c;
    }
    {
      double v = r[kScaleOffset];
      double c = std::clamp(v, -kLogScaleClamp, kLogScaleClamp);
      live[kScaleOffset] = (v == c);
      r[kScaleOffset] = c;
    }
    std::array<double, kOut> y;
    if (rec) {
      std::array<detail::PoseDual, kPoseDim> rd;
      for (int k = 0; k < kPoseDim; ++k)
        rd[k] = live[k] ? detail::PoseDual::variable(r[k], k) : detail::PoseDual(r[k]);
      auto yd = detail::decode_generic(rd);
      double* J = jac->data() + i * kOut * kPoseDim;
      for (int o = 0; o < kOut; ++o) {
        y[o] = yd[o].v;
        for (int k = 0; k < kPoseDim; ++k) J[o * kPoseDim + k] = yd[o].d[k];
      }
    } else {
      y = detail::decode_generic(r);
    }
    for (int o = 0; o < 63; ++o) out.j3d[i * 63 + o] = static_cast<T>(y[o]);
    for (int o = 0; o < 42; ++o) out.j2d[i * 42 + o] = static_cast<T>(y[63 + o]);
  }

  if (rec) {
    Tensor<T> j3d = out.j3d, j2d = out.j2d;
    detail::record<T>([raw, j3d, j2d, jac, n]() mutable {
      if (!raw.has_grad()) return;
      auto g = raw.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* J = jac->data() + i * kOut * kPoseDim;
        for (int o = 0; o < kOut; ++o) {
          double go = o < 63 ? static_cast<double>(j3d.grad()[i * 63 + o])
                             : static_cast<double>(j2d.grad()[i * 42 + (o - 63)]);
          if (go == 0.0) continue;
          for (int k = 0; k < kPoseDim; ++k)
            g[i * kPoseDim + k] += static_cast<T>(go * J[o * kPoseDim + k]);
        }
      }
    });
  }
  return out;
}

/// Two fully connected layers from the refiner latent to the raw pose vector.
template <typename T>
struct PoseHead {
  Linear<T> fc1, fc2;

  PoseHead() = default;
  PoseHead(std::size_t latent, std::size_t width, Rng& rng)
      : fc1(latent, width, rng), fc2(width, kPoseDim, rng) {}

  /// Sets the output bias so an all-zero hidden layer predicts the given
  /// camera (translation in pixels, scale in pixels per unit).
  void set_camera_prior(double tx, double ty, double s) {
    fc2.bias[kTransOffset] = static_cast<T>(tx);
    fc2.bias[kTransOffset + 1] = static_cast<T>(ty);
    fc2.bias[kScaleOffset] = static_cast<T>(std::log(s));
  }

  /// Raw pose vector N x 46.
  Tensor<T> operator()(const Tensor<T>& latent) const { return fc2(relu(fc1(latent))); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// Batched pose losses and regularizer for one loop.
template <typename T>
struct PoseLossTerms {
  Tensor<T> l2d_coords;  // N x 42 smooth-L1 per coordinate
  Tensor<T> e3d_coords;  // N x 63 squared error per coordinate
  Tensor<T> l2d;         // scalar
  Tensor<T> l3d;         // scalar
  Tensor<T> reg;         // scalar
};

template <typename T>
PoseLossTerms<T> pose_loss_terms(const Tensor<T>& raw, const DecodedPose<T>& pred,
                                 const Tensor<T>& gt2d, const Tensor<T>& gt3d,
                                 const RegularizerWeights& w = {}) {
  const T n = static_cast<T>(raw.dim(0));
  PoseLossTerms<T> t;
  t.l2d_coords = smooth_l1(pred.j2d, gt2d);
  t.e3d_coords = squared_diff(pred.j3d, gt3d);
  t.l2d = mean(t.l2d_coords);
  t.l3d = scale(sum(t.e3d_coords), T(1) / (n * T(kNumJoints)));
  auto theta = slice_cols(raw, kThetaOffset, kThetaOffset + kNumTheta);
  auto beta_dev = clamp(slice_cols(raw, kBetaOffset, kBetaOffset + kNumBones), T(kBetaMin - 1.0),
                        T(kBetaMax - 1.0));
  t.reg = add(scale(sum(square(theta)), static_cast<T>(w.theta) / n),
              scale(sum(square(beta_dev)), static_cast<T>(w.beta) / n));
  return t;
}

}  // namespace dirnet
