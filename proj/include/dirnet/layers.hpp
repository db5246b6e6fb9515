// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dirnet/ops.hpp"
#include "dirnet/optim.hpp"
#include "dirnet/rng.hpp"

namespace dirnet {

/// He-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void he_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(uniform(rng, -bound, bound));
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // O x I x K x K
  Tensor<T> bias;    // undefined when the conv feeds a normalization
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, bool with_bias, Rng& rng)
      : weight(Shape{out, in, k, k}), stride(stride_), pad(k / 2) {
    he_uniform(weight, in * k * k, rng);
    if (with_bias) bias = Tensor<T>(Shape{out});
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // O x I
  Tensor<T> bias;    // O

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) : weight(Shape{out, in}), bias(Shape{out}) {
    he_uniform(weight, in, rng);
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/**
 * One BatchNorm state per loop iteration at a single normalization site.
 * Entry l is used exactly when the network runs iteration l.
 */
template <typename T>
class BNBank {
 public:
  BNBank() = default;
  BNBank(std::size_t channels, std::size_t entries) : channels_(channels) { resize(entries); }

  std::size_t size() const { return states_.size(); }
  std::size_t channels() const { return channels_; }

  BatchNormState<T>& at(std::size_t l) {
    if (l >= states_.size())
      throw std::out_of_range("BN bank has " + std::to_string(states_.size()) +
                              " entries, iteration " + std::to_string(l) + " requested");
    return states_[l];
  }
  const BatchNormState<T>& at(std::size_t l) const {
    return const_cast<BNBank*>(this)->at(l);
  }

  /// Grows with freshly initialised entries (gamma 1, beta 0, mean 0, var 1)
  /// or truncates.
  void resize(std::size_t entries) {
    while (states_.size() < entries) {
      BatchNormState<T> st(channels_);
      st.mode = mode_;
      states_.push_back(std::move(st));
    }
    states_.resize(entries);
  }

  void set_mode(NormMode m) {
    mode_ = m;
    for (auto& s : states_) s.mode = m;
  }

  Tensor<T> operator()(const Tensor<T>& x, std::size_t l) { return batchnorm2d(x, at(l)); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < states_.size(); ++l) {
      out.push_back({prefix + "." + std::to_string(l) + ".gamma", states_[l].gamma});
      out.push_back({prefix + "." + std::to_string(l) + ".beta", states_[l].beta});
    }
  }
  void collect_buffers(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < states_.size(); ++l) {
      out.push_back({prefix + "." + std::to_string(l) + ".running_mean", states_[l].running_mean});
      out.push_back({prefix + "." + std::to_string(l) + ".running_var", states_[l].running_var});
    }
  }

 private:
  std::size_t channels_ = 0;
  NormMode mode_ = NormMode::train;
  std::vector<BatchNormState<T>> states_;
};

/// Sets tracking on every tensor of a parameter list.
template <typename T>
void set_tracked(ParamList<T>& params, bool on) {
  for (auto& p : params) p.tensor.set_tracked(on);
}

template <typename T>
std::size_t count_elements(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace dirnet
