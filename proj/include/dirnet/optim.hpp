// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dirnet/tensor.hpp"

namespace dirnet {

/// A named parameter tensor, the unit of optimisation and serialisation.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers of one parameter.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/**
 * One Adam update of `params` in place.
 * `step` is the 1-based step count used for bias correction.
 */
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state, double lr,
               long step, const AdamHyper& h = {}) {
  if (grads.size() != params.size())
    throw ShapeError("adam_step: gradient length " + std::to_string(grads.size()) +
                     " != parameter length " + std::to_string(params.size()));
  if (state.m.empty()) state.m.assign(params.size(), T(0));
  if (state.v.empty()) state.v.assign(params.size(), T(0));
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: moment buffers do not match parameter length");
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    params[i] -= step_size * state.m[i] / (std::sqrt(state.v[i]) * inv_sqrt_bc2 + eps);
  }
}

enum class OptimizerKind { adam, sgd };

/// A set of parameters sharing one learning rate.
template <typename T>
struct ParamGroup {
  std::string name;
  ParamList<T> params;
  double lr = 1e-3;
};

/**
 * Adam (or plain SGD) over parameter groups. Gradients are read from each
 * tracked tensor and zeroed after the step; untracked tensors are skipped.
 */
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<ParamGroup<T>> groups, OptimizerKind kind = OptimizerKind::adam,
            AdamHyper hyper = {})
      : groups_(std::move(groups)), kind_(kind), hyper_(hyper) {
    for (auto& g : groups_)
      for (auto& p : g.params) moments_.emplace_back(p.name, AdamMoments<T>{});
  }

  void step() {
    ++step_;
    std::size_t k = 0;
    for (auto& g : groups_)
      for (auto& p : g.params) {
        auto& mom = moments_[k++].second;
        if (!p.tensor.tracked()) continue;
        if (kind_ == OptimizerKind::adam) {
          adam_step<T>(p.tensor.data(), p.tensor.grad(), mom, g.lr, step_, hyper_);
        } else {
          auto d = p.tensor.data();
          auto gr = p.tensor.grad();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] -= static_cast<T>(g.lr) * gr[i];
        }
        p.tensor.zero_grad();
      }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params)
        if (p.tensor.has_grad()) p.tensor.zero_grad();
  }

  long steps() const { return step_; }
  void set_steps(long s) { step_ = s; }
  OptimizerKind kind() const { return kind_; }
  std::vector<ParamGroup<T>>& groups() { return groups_; }
  std::vector<std::pair<std::string, AdamMoments<T>>>& moments() { return moments_; }
  const std::vector<std::pair<std::string, AdamMoments<T>>>& moments() const { return moments_; }

 private:
  std::vector<ParamGroup<T>> groups_;
  OptimizerKind kind_;
  AdamHyper hyper_;
  std::vector<std::pair<std::string, AdamMoments<T>>> moments_;
  long step_ = 0;
};

}  // namespace dirnet
