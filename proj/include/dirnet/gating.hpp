// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "dirnet/layers.hpp"

namespace dirnet {

enum class GateAction : int { exit = 0, cont = 1 };

inline const char* to_string(GateAction a) { return a == GateAction::exit ? "EXIT" : "CONTINUE"; }

/// Heuristic exit: continue only while the average variance exceeds tau_var
/// and the loop cap has not been reached.
inline GateAction threshold_gate(double mean_var, double tau_var, int l, int l_max) {
  if (l >= l_max) return GateAction::exit;
  return mean_var > tau_var ? GateAction::cont : GateAction::exit;
}

struct GateDecision {
  GateAction action = GateAction::exit;
  double log_prob = 0;
  int loop = 0;
  std::array<double, 2> probs{0.5, 0.5};  // {EXIT, CONTINUE}
  bool forced = false;                    // exit imposed by the loop cap
};

enum class GateMode { sample, argmax };

/// Two-layer policy over {EXIT, CONTINUE} with a softmax temperature.
template <typename T>
struct GatePolicy {
  Linear<T> fc1, fc2;
  double tau = 1.0;

  static constexpr std::size_t kHidden = 32;

  GatePolicy() = default;
  GatePolicy(std::size_t feature_width, Rng& rng, double tau_gate = 1.0)
      : fc1(feature_width, kHidden, rng), fc2(kHidden, 2, rng), tau(tau_gate) {
    if (!(tau > 0)) throw std::invalid_argument("tau_gate must be positive");
  }

  bool defined() const { return fc1.weight.defined(); }

  /// Raw logits N x 2.
  Tensor<T> logits(const Tensor<T>& f) const { return fc2(relu(fc1(f))); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// Decision for one sample from its feature row f_l (1 x F or F).
template <typename T>
GateDecision gate_decide(const Tensor<T>& f, const GatePolicy<T>& policy, Rng& rng, GateMode mode,
                         int loop = 0) {
  NoGradScope<T> no_grad;
  Tensor<T> row = f.rank() == 1 ? reshape(f, Shape{1, f.numel()}) : f;
  if (row.dim(0) != 1) throw ShapeError("gate_decide: expects a single feature row");
  for (T v : row.data())
    if (!std::isfinite(static_cast<double>(v))) throw std::domain_error("gate_decide: non-finite feature");
  auto p = softmax_temperature(policy.logits(row), static_cast<T>(policy.tau));
  GateDecision d;
  d.loop = loop;
  d.probs = {static_cast<double>(p[0]), static_cast<double>(p[1])};
  if (mode == GateMode::argmax) {
    d.action = d.probs[1] > d.probs[0] ? GateAction::cont : GateAction::exit;
  } else {
    d.action = uniform01(rng) < d.probs[0] ? GateAction::exit : GateAction::cont;
  }
  d.log_prob = std::log(std::max(d.probs[static_cast<int>(d.action)], 1e-300));
  return d;
}

enum class CostMode { cumulative, marginal };

/// r = -lambda * (L2D + L3D) - cost, cost = l * gflops (cumulative) or
/// gflops for any l > 0 (marginal).
inline double reward(double l2d, double l3d, int l, double per_loop_gflops, double lambda,
                     CostMode mode = CostMode::cumulative) {
  double cost = mode == CostMode::cumulative ? l * per_loop_gflops : (l > 0 ? per_loop_gflops : 0.0);
  return -lambda * (l2d + l3d) - cost;
}

/// One gating step of an episode.
struct TrajectoryStep {
  std::vector<double> f;  // gate input at this loop
  GateDecision decision;
  double reward = 0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool terminal = false;

  /// At most one EXIT, and only as the last step; length <= l_max + 1.
  bool valid(int l_max) const {
    if (steps.size() > static_cast<std::size_t>(l_max) + 1) return false;
    for (std::size_t i = 0; i + 1 < steps.size(); ++i)
      if (steps[i].decision.action == GateAction::exit) return false;
    return true;
  }
};

/// One row per step: sample,loop,action,p_exit,p_continue,log_prob,forced,reward.
inline void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& trs,
                                   const std::vector<std::size_t>& sample_ids) {
  if (sample_ids.size() != trs.size())
    throw std::invalid_argument("write_trajectories_csv: one sample id per trajectory");
  os << "sample,loop,action,p_exit,p_continue,log_prob,forced,reward\n";
  for (std::size_t i = 0; i < trs.size(); ++i)
    for (const auto& st : trs[i].steps)
      os << sample_ids[i] << ',' << st.decision.loop << ',' << to_string(st.decision.action) << ','
         << st.decision.probs[0] << ',' << st.decision.probs[1] << ',' << st.decision.log_prob << ','
         << (st.decision.forced ? 1 : 0) << ',' << st.reward << '\n';
}

/// Running mean of rewards subtracted before the policy gradient.
struct RewardBaseline {
  double value = 0;
  bool initialised = false;
  double momentum = 0.99;
};

/**
 * Vanilla policy gradient: ascends mean over steps of
 * (r - b) * grad log pi(a | f) with one Adam step on the gate weights. Steps
 * with a forced exit carry no gradient. The baseline is updated after use.
 */
template <typename T>
void policy_gradient_update(const std::vector<Trajectory>& batch, GatePolicy<T>& policy,
                            Optimizer<T>& opt, RewardBaseline& baseline) {
  if (batch.empty()) throw std::invalid_argument("policy_gradient_update: empty batch");
  std::vector<const TrajectoryStep*> steps;
  double reward_sum = 0;
  for (const auto& tr : batch)
    for (const auto& st : tr.steps) {
      reward_sum += st.reward;
      if (!st.decision.forced) steps.push_back(&st);
    }
  std::size_t total = 0;
  for (const auto& tr : batch) total += tr.steps.size();
  if (total == 0) throw std::invalid_argument("policy_gradient_update: no steps");
  if (!baseline.initialised) {
    baseline.value = reward_sum / static_cast<double>(total);
    baseline.initialised = true;
  }
  if (!steps.empty()) {
    const std::size_t width = steps.front()->f.size();
    Tensor<T> f(Shape{steps.size(), width});
    std::vector<std::size_t> actions(steps.size());
    std::vector<T> weights(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i]->f.size() != width) throw ShapeError("policy_gradient_update: ragged features");
      for (std::size_t k = 0; k < width; ++k) f[i * width + k] = static_cast<T>(steps[i]->f[k]);
      actions[i] = static_cast<std::size_t>(steps[i]->decision.action);
      // Minimise -(r - b) log pi, averaged over trajectories.
      weights[i] = static_cast<T>(-(steps[i]->reward - baseline.value) / static_cast<double>(batch.size()));
    }
    Tape<T> tape;
    {
      TapeScope<T> scope(tape);
      auto logp = select_cols(log_softmax_temperature(policy.logits(f), static_cast<T>(policy.tau)), actions);
      auto loss = weighted_sum(logp, weights);
      if (tape.empty()) {
        tape.clear();
      } else {
        backward(loss);
      }
    }
    opt.step();
  }
  baseline.value = baseline.momentum * baseline.value +
                   (1.0 - baseline.momentum) * reward_sum / static_cast<double>(total);
}

}  // namespace dirnet
