// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dirnet/backbone.hpp"
#include "dirnet/gating.hpp"
#include "dirnet/skeleton.hpp"
#include "dirnet/uncertainty.hpp"

namespace dirnet {

/// One accounted layer. Counting rules (per sample):
///   conv    2 * K^2 * Cin * Cout * Hout * Wout   (bias not counted)
///   linear  2 * in * out
///   BN, activations, residual add, Hadamard, pooling, clamp, softmax and
///   channel averaging: one per output element
///   pixel shuffle, nearest upsampling, channel tiling: zero
struct FlopEntry {
  std::string component;  // fe | rf | amg | pose | var | gate
  std::string layer;
  std::uint64_t flops = 0;
};

struct FlopsTable {
  std::vector<FlopEntry> entries;
  std::uint64_t fe = 0;            // once per image
  std::uint64_t loop_base = 0;     // RF + heads, every loop
  std::uint64_t refine_extra = 0;  // attention generation + Hadamard, loops l > 0
  std::uint64_t per_loop = 0;      // cost of one more loop = loop_base + refine_extra
  std::vector<std::uint64_t> cumulative;  // total cost when exiting at loop l

  std::uint64_t component(const std::string& c) const {
    std::uint64_t s = 0;
    for (const auto& e : entries)
      if (e.component == c) s += e.flops;
    return s;
  }

  /// Fixed cost paid by every sample (FE plus loop 0).
  std::uint64_t fixed() const { return fe + loop_base; }

  /// Average cost for a given average loop count.
  double average(double avg_loops) const {
    return static_cast<double>(fixed()) + avg_loops * static_cast<double>(per_loop);
  }
};

namespace detail {

class FlopWalker {
 public:
  explicit FlopWalker(FlopsTable& t) : t_(t) {}

  void conv(const std::string& comp, const std::string& name, std::uint64_t k, std::uint64_t cin,
            std::uint64_t cout, std::uint64_t ho, std::uint64_t wo) {
    add(comp, name, 2 * k * k * cin * cout * ho * wo);
  }
  void linear(const std::string& comp, const std::string& name, std::uint64_t in, std::uint64_t out) {
    add(comp, name, 2 * in * out);
  }
  void elementwise(const std::string& comp, const std::string& name, std::uint64_t n) {
    add(comp, name, n);
  }
  void add(const std::string& comp, const std::string& name, std::uint64_t f) {
    t_.entries.push_back({comp, name, f});
  }

 private:
  FlopsTable& t_;
};

}  // namespace detail

/// Per-component and per-loop FLOPs for one sample.
inline FlopsTable count_flops(const IR9Config& cfg) {
  cfg.validate();
  FlopsTable t;
  detail::FlopWalker w(t);
  const std::uint64_t c = static_cast<std::uint64_t>(cfg.base_channels);
  std::uint64_t size = static_cast<std::uint64_t>(cfg.input_size) / 2;

  w.conv("fe", "stem.conv", 3, 3, c, size, size);
  w.elementwise("fe", "stem.bn", c * size * size);
  w.elementwise("fe", "stem.relu", c * size * size);

  std::uint64_t in = c;
  for (int p = 1; p <= 4; ++p) {
    const std::string comp = p >= cfg.loop_point ? "rf" : "fe";
    const std::string ph = "phase" + std::to_string(p);
    const std::uint64_t out = static_cast<std::uint64_t>(cfg.phase_channels(p));
    size /= 2;
    const std::uint64_t elems = out * size * size;
    w.conv(comp, ph + ".conv1", 3, in, out, size, size);
    w.elementwise(comp, ph + ".bn1", elems);
    w.elementwise(comp, ph + ".relu1", elems);
    w.conv(comp, ph + ".conv2", 3, out, out, size, size);
    w.elementwise(comp, ph + ".bn2", elems);
    w.conv(comp, ph + ".shortcut", 1, in, out, size, size);
    w.elementwise(comp, ph + ".bn_sc", elems);
    w.elementwise(comp, ph + ".add", elems);
    w.elementwise(comp, ph + ".relu2", elems);
    in = out;
  }
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.latent_dim());
  w.elementwise("rf", "global_avg_pool", d);

  const std::uint64_t fw = static_cast<std::uint64_t>(cfg.fc_width);
  w.linear("pose", "pose.fc1", d, fw);
  w.elementwise("pose", "pose.relu", fw);
  w.linear("pose", "pose.fc2", fw, kPoseDim);
  w.linear("var", "var.fc1", d, fw / 2);
  w.elementwise("var", "var.relu", fw / 2);
  w.linear("var", "var.fc2", fw / 2, kAlpha2D + kAlpha3D);
  w.elementwise("var", "var.clamp", kAlpha2D + kAlpha3D);
  w.linear("gate", "gate.fc1", fw / 2, GatePolicy<float>::kHidden);
  w.elementwise("gate", "gate.relu", GatePolicy<float>::kHidden);
  w.linear("gate", "gate.fc2", GatePolicy<float>::kHidden, 2);
  w.elementwise("gate", "gate.softmax", 2);

  const std::uint64_t s_fe = static_cast<std::uint64_t>(cfg.fe_extent());
  const std::uint64_t c_fe = static_cast<std::uint64_t>(cfg.fe_channels());
  std::uint64_t r = static_cast<std::uint64_t>(cfg.deep_extent());
  if (cfg.amg_mode == AmgMode::attention) {
    std::uint64_t ch = d;
    for (int k = 0; k < cfg.amg_steps(); ++k) {
      r *= 2;
      const std::string name = "amg.conv" + std::to_string(k);
      w.conv("amg", name, 3, ch / 4, ch / 2, r, r);
      w.elementwise("amg", name + ".relu", (ch / 2) * r * r);
      ch /= 2;
    }
    w.conv("amg", "amg.out", 1, ch, c_fe, r, r);
    w.elementwise("amg", "amg.sigmoid", c_fe * r * r);
    w.elementwise("amg", "hadamard", c_fe * s_fe * s_fe);
  } else if (cfg.amg_mode == AmgMode::direct_upsample) {
    r *= 2;
    const std::uint64_t shuffled = d / 4;
    if (shuffled > c_fe) w.elementwise("amg", "channel_average", c_fe * r * r);
    w.elementwise("amg", "sigmoid", c_fe * s_fe * s_fe);
    w.elementwise("amg", "hadamard", c_fe * s_fe * s_fe);
  }

  t.fe = t.component("fe");
  t.loop_base = t.component("rf") + t.component("pose") + t.component("var") + t.component("gate");
  t.refine_extra = t.component("amg");
  t.per_loop = t.loop_base + t.refine_extra;
  const int lm = cfg.effective_l_max();
  for (int l = 0; l <= lm; ++l)
    t.cumulative.push_back(t.fixed() + static_cast<std::uint64_t>(l) * t.per_loop);
  return t;
}

}  // namespace dirnet
