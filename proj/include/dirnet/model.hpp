// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dirnet/backbone.hpp"
#include "dirnet/gating.hpp"
#include "dirnet/posehead.hpp"
#include "dirnet/uncertainty.hpp"

namespace dirnet {

/// Everything one loop produces for a batch.
template <typename T>
struct LoopOutput {
  RefineOutput<T> refined;
  Tensor<T> raw_pose;  // N x 46
  DecodedPose<T> pose;
  VarianceEstimate<T> var;
};

/// Default camera scale prior as a fraction of the input size (pixels per
/// model unit); matches the synthetic generator's default range centre.
inline constexpr double kDefaultScaleFraction = 0.32;

/**
 * The full network: IR9 backbone, pose predictor, variance head and gate.
 * Parameters are grouped as fe / rf / amg / pose / var / gate.
 */
template <typename T>
class DIRNet {
 public:
  DIRNet() = default;
  DIRNet(const IR9Config& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    backbone_ = IR9<T>(cfg, rng);
    const auto d = static_cast<std::size_t>(cfg.latent_dim());
    const auto w = static_cast<std::size_t>(cfg.fc_width);
    pose_ = PoseHead<T>(d, w, rng);
    var_ = VarianceHead<T>(d, w, rng);
    gate_ = GatePolicy<T>(var_.feature_width(), rng);
    double h = cfg.input_size;
    pose_.set_camera_prior(h / 2, h / 2, kDefaultScaleFraction * h);
  }

  const IR9Config& config() const { return backbone_.config(); }
  IR9<T>& backbone() { return backbone_; }
  PoseHead<T>& pose_head() { return pose_; }
  VarianceHead<T>& var_head() { return var_; }
  GatePolicy<T>& gate() { return gate_; }
  const GatePolicy<T>& gate() const { return gate_; }

  LoopOutput<T> heads(RefineOutput<T> r) {
    LoopOutput<T> out;
    out.raw_pose = pose_(r.latent);
    out.pose = decode_pose(out.raw_pose);
    out.var = var_(detach_var_input_ ? r.latent.detach() : r.latent);
    out.refined = std::move(r);
    return out;
  }

  /// All loops 0..l_stop (no gating).
  std::vector<LoopOutput<T>> forward(const Tensor<T>& x, std::size_t l_stop) {
    std::vector<LoopOutput<T>> outs;
    for (auto& r : backbone_.forward_loop(x, l_stop)) outs.push_back(heads(std::move(r)));
    return outs;
  }

  void set_mode(NormMode m) { backbone_.set_mode(m); }

  /// When set, the variance head reads a detached copy of the latent so its
  /// loss does not reach the backbone.
  void set_detach_var_input(bool on) { detach_var_input_ = on; }
  bool detach_var_input() const { return detach_var_input_; }
  void set_l_max(int l) { backbone_.set_l_max(l); }

  ParamList<T> group(const std::string& name) const {
    ParamList<T> out;
    if (name == "fe") return backbone_.fe_params();
    if (name == "rf") return backbone_.rf_params();
    if (name == "amg") return backbone_.amg_params();
    if (name == "pose") pose_.collect(out, "pose");
    else if (name == "var") var_.collect(out, "var");
    else if (name == "gate") gate_.collect(out, "gate");
    else throw std::invalid_argument("unknown parameter group " + name);
    return out;
  }

  static const std::vector<std::string>& group_names() {
    static const std::vector<std::string> names{"fe", "rf", "amg", "pose", "var", "gate"};
    return names;
  }

  /// Every learnable tensor in a fixed order.
  ParamList<T> parameters() const {
    ParamList<T> out;
    for (const auto& g : group_names()) {
      auto p = group(g);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  /// Learnable tensors outside the gate.
  ParamList<T> network_parameters() const {
    ParamList<T> out;
    for (const auto& g : group_names()) {
      if (g == "gate") continue;
      auto p = group(g);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  ParamList<T> buffers() const { return backbone_.buffers(); }

  /// Parameters followed by buffers: the full serialisable state.
  ParamList<T> state() const {
    auto out = parameters();
    auto b = buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }

 private:
  IR9<T> backbone_;
  PoseHead<T> pose_;
  VarianceHead<T> var_;
  GatePolicy<T> gate_;
  bool detach_var_input_ = false;
};

}  // namespace dirnet
