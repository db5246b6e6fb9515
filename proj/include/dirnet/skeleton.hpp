// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string_view>

#include "dirnet/dual.hpp"

namespace dirnet {

inline constexpr int kNumJoints = 21;
inline constexpr int kNumBones = 20;
inline constexpr int kNumTheta = 20;  // articulated DOF
/// Raw pose vector layout: theta | beta | axis-angle R | t | s.
inline constexpr int kThetaOffset = 0;
inline constexpr int kBetaOffset = kThetaOffset + kNumTheta;
inline constexpr int kRotOffset = kBetaOffset + kNumBones;
inline constexpr int kTransOffset = kRotOffset + 3;
inline constexpr int kScaleOffset = kTransOffset + 2;
inline constexpr int kPoseDim = kScaleOffset + 1;  // 46

template <typename S>
struct Vec3 {
  S x{}, y{}, z{};
};

template <typename S>
Vec3<S> operator+(const Vec3<S>& a, const Vec3<S>& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
template <typename S>
Vec3<S> operator-(const Vec3<S>& a, const Vec3<S>& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }

/// Row-major 3x3 matrix.
template <typename S>
struct Mat3 {
  std::array<S, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {S(1), S(0), S(0), S(0), S(1), S(0), S(0), S(0), S(1)};
    return r;
  }
  S& operator()(int i, int j) { return m[i * 3 + j]; }
  const S& operator()(int i, int j) const { return m[i * 3 + j]; }
};

template <typename S>
Mat3<S> operator*(const Mat3<S>& a, const Mat3<S>& b) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
  return r;
}

template <typename S>
Vec3<S> operator*(const Mat3<S>& a, const Vec3<S>& v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z, a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

template <typename S>
Mat3<S> transpose(const Mat3<S>& a) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
  return r;
}

/// Rotation by `angle` about a fixed unit axis (Rodrigues).
template <typename S>
Mat3<S> axis_rotation(const Vec3<double>& a, const S& angle) {
  using std::cos;
  using std::sin;
  S c = cos(angle), s = sin(angle);
  S omc = S(1) - c;
  Mat3<S> r;
  r(0, 0) = c + omc * (a.x * a.x);
  r(0, 1) = omc * (a.x * a.y) - s * a.z;
  r(0, 2) = omc * (a.x * a.z) + s * a.y;
  r(1, 0) = omc * (a.y * a.x) + s * a.z;
  r(1, 1) = c + omc * (a.y * a.y);
  r(1, 2) = omc * (a.y * a.z) - s * a.x;
  r(2, 0) = omc * (a.z * a.x) - s * a.y;
  r(2, 1) = omc * (a.z * a.y) + s * a.x;
  r(2, 2) = c + omc * (a.z * a.z);
  return r;
}

/// Axis-angle 3-vector to rotation matrix, smooth through the origin.
template <typename S>
Mat3<S> rotation_from_axis_angle(const S& rx, const S& ry, const S& rz) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  S t2 = rx * rx + ry * ry + rz * rz;
  S a, b;
  if (value_of(t2) < 1e-12) {
    a = S(1) - t2 * (1.0 / 6.0);
    b = S(0.5) - t2 * (1.0 / 24.0);
  } else {
    S t = sqrt(t2);
    a = sin(t) / t;
    b = (S(1) - cos(t)) / t2;
  }
  // R = I + a K + b (r r^T - t2 I)
  Mat3<S> r;
  S diag = S(1) - b * t2;
  r(0, 0) = diag + b * (rx * rx);
  r(1, 1) = diag + b * (ry * ry);
  r(2, 2) = diag + b * (rz * rz);
  r(0, 1) = b * (rx * ry) - a * rz;
  r(1, 0) = b * (rx * ry) + a * rz;
  r(0, 2) = b * (rx * rz) + a * ry;
  r(2, 0) = b * (rx * rz) - a * ry;
  r(1, 2) = b * (ry * rz) - a * rx;
  r(2, 1) = b * (ry * rz) + a * rx;
  return r;
}

/// Rotation matrix to axis-angle via the quaternion (robust near pi).
inline Vec3<double> axis_angle_from_rotation(const Mat3<double>& r) {
  double tr = r(0, 0) + r(1, 1) + r(2, 2);
  double w, x, y, z;
  if (tr > 0) {
    double s = std::sqrt(tr + 1.0) * 2;
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  if (w < 0) { w = -w; x = -x; y = -y; z = -z; }
  double n = std::sqrt(x * x + y * y + z * z);
  if (n < 1e-15) return {0, 0, 0};
  double angle = 2.0 * std::atan2(n, w);
  return {x / n * angle, y / n * angle, z / n * angle};
}

/// One articulated degree of freedom: a rotation about `axis` at `joint`.
struct DofSpec {
  int joint;
  Vec3<double> axis;
};

/**
 * Fixed 21-joint hand: wrist, then thumb, index, middle, ring and pinky with
 * four joints each (base, two interphalangeal, tip). Model units put the
 * middle fingertip about one unit from the wrist; fingers point along +y
 * with the thumb on +x and the palm in the z = 0 plane.
 *
 * Bone b connects joint b+1 to its parent and is scaled by beta[b]. Each
 * finger carries four DOF: abduction about the palm normal and flexion at
 * its base joint, then flexion at the two interphalangeal joints.
 */
struct Skeleton {
  std::array<std::string_view, kNumJoints> names;
  std::array<int, kNumJoints> parent;
  std::array<Vec3<double>, kNumJoints> offset;  // rest bone vector from parent; wrist zero
  std::array<DofSpec, kNumTheta> dofs;

  Vec3<double> rest_position(int j) const {
    Vec3<double> p{};
    // Same summation order as forward_kinematics so the rest pose is exact.
    std::array<Vec3<double>, kNumJoints> pos{};
    for (int k = 1; k <= j; ++k) pos[k] = pos[parent[k]] + offset[k];
    p = pos[j];
    return p;
  }

  double rest_length(int bone) const {
    const auto& o = offset[bone + 1];
    return std::sqrt(o.x * o.x + o.y * o.y + o.z * o.z);
  }
};

inline const Skeleton& hand_skeleton() {
  static const Skeleton sk = [] {
    Skeleton s{};
    s.names = {"wrist",      "thumb_cmc",  "thumb_mcp",  "thumb_ip",   "thumb_tip",
               "index_mcp",  "index_pip",  "index_dip",  "index_tip",  "middle_mcp",
               "middle_pip", "middle_dip", "middle_tip", "ring_mcp",   "ring_pip",
               "ring_dip",   "ring_tip",   "pinky_mcp",  "pinky_pip",  "pinky_dip",
               "pinky_tip"};
    s.offset = {{{0, 0, 0},
                 {0.12, 0.10, 0}, {0.10, 0.10, 0}, {0.07, 0.09, 0}, {0.05, 0.08, 0},
                 {0.09, 0.40, 0}, {0.02, 0.20, 0}, {0.01, 0.12, 0}, {0.01, 0.09, 0},
                 {0.00, 0.42, 0}, {0.00, 0.22, 0}, {0.00, 0.14, 0}, {0.00, 0.10, 0},
                 {-0.08, 0.39, 0}, {-0.015, 0.20, 0}, {-0.01, 0.13, 0}, {-0.01, 0.09, 0},
                 {-0.16, 0.34, 0}, {-0.03, 0.16, 0}, {-0.02, 0.10, 0}, {-0.015, 0.08, 0}}};
    s.parent[0] = -1;
    for (int f = 0; f < 5; ++f) {
      int base = 1 + 4 * f;
      s.parent[base] = 0;
      for (int k = 1; k < 4; ++k) s.parent[base + k] = base + k - 1;
      // Flexion axis: in-palm direction perpendicular to the finger.
      Vec3<double> dir{};
      for (int k = 1; k < 4; ++k) dir = dir + s.offset[base + k];
      double n = std::hypot(dir.x, dir.y);
      Vec3<double> flex{dir.y / n, -dir.x / n, 0};
      Vec3<double> normal{0, 0, 1};
      s.dofs[4 * f + 0] = {base, normal};
      s.dofs[4 * f + 1] = {base, flex};
      s.dofs[4 * f + 2] = {base + 1, flex};
      s.dofs[4 * f + 3] = {base + 2, flex};
    }
    return s;
  }();
  return sk;
}

/// Joint positions from articulation angles and bone scales (model frame,
/// wrist at the origin, no global rotation).
template <typename S>
std::array<Vec3<S>, kNumJoints> forward_kinematics(const S* theta, const S* beta,
                                                   const Skeleton& sk = hand_skeleton()) {
  std::array<Mat3<S>, kNumJoints> local;
  for (auto& m : local) m = Mat3<S>::identity();
  for (int d = 0; d < kNumTheta; ++d) {
    const auto& dof = sk.dofs[d];
    local[dof.joint] = local[dof.joint] * axis_rotation<S>(dof.axis, theta[d]);
  }
  std::array<Mat3<S>, kNumJoints> global;
  std::array<Vec3<S>, kNumJoints> pos;
  global[0] = Mat3<S>::identity();
  pos[0] = {S(0), S(0), S(0)};
  for (int j = 1; j < kNumJoints; ++j) {
    int p = sk.parent[j];
    const auto& o = sk.offset[j];
    const S& b = beta[j - 1];
    Vec3<S> bone{b * o.x, b * o.y, b * o.z};
    pos[j] = pos[p] + global[p] * bone;
    global[j] = global[p] * local[j];
  }
  return pos;
}

/// Weak-perspective projection s * Pi * R * X + t of one point.
template <typename S>
std::array<S, 2> project_point(const Vec3<S>& x, const Mat3<S>& r, const S& tx, const S& ty,
                               const S& s) {
  Vec3<S> c = r * x;
  return {s * c.x + tx, s * c.y + ty};
}

}  // namespace dirnet
