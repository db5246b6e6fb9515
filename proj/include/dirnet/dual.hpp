// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

namespace dirnet {

/// Forward-mode dual number carrying N partial derivatives.
template <typename T, int N>
struct Dual {
  T v{};
  std::array<T, N> d{};

  Dual() = default;
  Dual(T value) : v(value) {}  // NOLINT: constants convert implicitly

  static Dual variable(T value, int index) {
    Dual x(value);
    x.d[index] = T(1);
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
};

template <typename T, int N>
Dual<T, N> operator+(Dual<T, N> a, const Dual<T, N>& b) { return a += b; }
template <typename T, int N>
Dual<T, N> operator-(Dual<T, N> a, const Dual<T, N>& b) { return a -= b; }
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = -a.v;
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}

template <typename T, int N>
Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r;
  r.v = a.v * b.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}

template <typename T, int N>
Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r;
  r.v = a.v / b.v;
  T inv = T(1) / b.v;
  for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
  return r;
}

// Mixed scalar forms.
template <typename T, int N>
Dual<T, N> operator*(T s, Dual<T, N> a) {
  a.v *= s;
  for (auto& x : a.d) x *= s;
  return a;
}
template <typename T, int N>
Dual<T, N> operator*(Dual<T, N> a, T s) { return s * a; }
template <typename T, int N>
Dual<T, N> operator+(Dual<T, N> a, T s) {
  a.v += s;
  return a;
}
template <typename T, int N>
Dual<T, N> operator+(T s, Dual<T, N> a) { return a + s; }
template <typename T, int N>
Dual<T, N> operator-(Dual<T, N> a, T s) {
  a.v -= s;
  return a;
}
template <typename T, int N>
Dual<T, N> operator-(T s, const Dual<T, N>& a) { return -a + s; }

template <typename T, int N>
bool operator<(const Dual<T, N>& a, const Dual<T, N>& b) { return a.v < b.v; }
template <typename T, int N>
bool operator<(const Dual<T, N>& a, T b) { return a.v < b; }

namespace detail {
template <typename T, int N>
Dual<T, N> chain(const Dual<T, N>& a, T value, T deriv) {
  Dual<T, N> r;
  r.v = value;
  for (int i = 0; i < N; ++i) r.d[i] = deriv * a.d[i];
  return r;
}
}  // namespace detail

template <typename T, int N>
Dual<T, N> sin(const Dual<T, N>& a) { return detail::chain(a, std::sin(a.v), std::cos(a.v)); }
template <typename T, int N>
Dual<T, N> cos(const Dual<T, N>& a) { return detail::chain(a, std::cos(a.v), -std::sin(a.v)); }
template <typename T, int N>
Dual<T, N> exp(const Dual<T, N>& a) {
  T e = std::exp(a.v);
  return detail::chain(a, e, e);
}
template <typename T, int N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
  T s = std::sqrt(a.v);
  return detail::chain(a, s, T(0.5) / s);
}

/// Value part of a plain scalar or a dual.
template <typename T>
T value_of(T x) { return x; }
template <typename T, int N>
T value_of(const Dual<T, N>& x) { return x.v; }

}  // namespace dirnet
