// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirnet/layers.hpp"

namespace dirnet {

/// How attention maps for iterations l > 0 are produced.
enum class AmgMode { attention, direct_upsample, none };

inline const char* to_string(AmgMode m) {
  switch (m) {
    case AmgMode::attention: return "attention";
    case AmgMode::direct_upsample: return "direct_upsample";
    case AmgMode::none: return "none";
  }
  return "?";
}

inline AmgMode amg_mode_from_string(const std::string& s) {
  if (s == "attention") return AmgMode::attention;
  if (s == "direct_upsample") return AmgMode::direct_upsample;
  if (s == "none") return AmgMode::none;
  throw std::invalid_argument("amg_mode: unknown value '" + s + "'");
}

/// Architecture hyperparameters of the iterative ResNet9.
struct IR9Config {
  int input_size = 64;     // square, divisible by 32
  int base_channels = 8;   // C; phases use C, 2C, 4C, 8C
  int loop_point = 3;      // 1..4, split after downsampling stage k
  int l_max = 2;
  int fc_width = 128;
  int num_joints = 21;
  AmgMode amg_mode = AmgMode::attention;

  void validate() const {
    if (input_size <= 0 || input_size % 32 != 0)
      throw std::invalid_argument("input_size must be a positive multiple of 32, got " +
                                  std::to_string(input_size));
    if (loop_point < 1 || loop_point > 4)
      throw std::invalid_argument("loop_point must be in {1,2,3,4}, got " + std::to_string(loop_point));
    if (l_max < 0) throw std::invalid_argument("l_max must be >= 0");
    if (base_channels <= 0) throw std::invalid_argument("base_channels must be positive");
    if (fc_width < 2 || fc_width % 2 != 0)
      throw std::invalid_argument("fc_width must be an even number >= 2");
    if (num_joints != 21) throw std::invalid_argument("num_joints must be 21 (fixed skeleton)");
    if (amg_mode == AmgMode::attention) {
      long ch = 8L * base_channels;
      for (int k = 0; k < amg_steps(); ++k) {
        if (ch % 4 != 0 || (ch / 4) < 1)
          throw std::invalid_argument("base_channels " + std::to_string(base_channels) +
                                      " incompatible with pixel-shuffle decoder at loop_point " +
                                      std::to_string(loop_point));
        ch = ch / 2;
      }
    }
  }

  /// Channels of phase p (1..4) output.
  int phase_channels(int p) const { return base_channels << (p - 1); }
  /// Channels of the feature map handed from FE to RF.
  int fe_channels() const { return loop_point == 1 ? base_channels : phase_channels(loop_point - 1); }
  /// Spatial extent of the FE feature map.
  int fe_extent() const { return input_size >> loop_point; }
  /// Spatial extent of the deepest (pre-pool) RF map.
  int deep_extent() const { return input_size / 32; }
  int latent_dim() const { return 8 * base_channels; }
  /// Number of [pixel_shuffle, conv] stages in the attention decoder.
  int amg_steps() const { return 5 - loop_point; }
  /// Loop cap after accounting for amg_mode none.
  int effective_l_max() const { return amg_mode == AmgMode::none ? 0 : l_max; }
};

/// Basic residual block with per-iteration normalization banks.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, shortcut;
  BNBank<T> bn1, bn2, bn_sc;

  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, std::size_t bank, Rng& rng)
      : conv1(in, out, 3, stride, false, rng),
        conv2(out, out, 3, 1, false, rng),
        bn1(out, bank),
        bn2(out, bank) {
    if (stride != 1 || in != out) {
      shortcut = Conv2d<T>(in, out, 1, stride, false, rng);
      bn_sc = BNBank<T>(out, bank);
    }
  }

  bool has_shortcut() const { return shortcut.weight.defined(); }

  Tensor<T> operator()(const Tensor<T>& x, std::size_t l) {
    auto h = relu(bn1(conv1(x), l));
    h = bn2(conv2(h), l);
    auto sc = has_shortcut() ? bn_sc(shortcut(x), l) : x;
    return relu(add(h, sc));
  }

  void banks(std::vector<BNBank<T>*>& out) {
    out.push_back(&bn1);
    out.push_back(&bn2);
    if (has_shortcut()) out.push_back(&bn_sc);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    bn1.collect(out, prefix + ".bn1");
    conv2.collect(out, prefix + ".conv2");
    bn2.collect(out, prefix + ".bn2");
    if (has_shortcut()) {
      shortcut.collect(out, prefix + ".shortcut");
      bn_sc.collect(out, prefix + ".bn_sc");
    }
  }
  void collect_buffers(ParamList<T>& out, const std::string& prefix) const {
    bn1.collect_buffers(out, prefix + ".bn1");
    bn2.collect_buffers(out, prefix + ".bn2");
    if (has_shortcut()) bn_sc.collect_buffers(out, prefix + ".bn_sc");
  }
};

/// Result of one Refiner pass.
template <typename T>
struct RefineOutput {
  Tensor<T> premap;  // N x 8C x R x R, deepest features before pooling
  Tensor<T> latent;  // N x 8C
};

/**
 * Iterative ResNet9: a Feature Extractor run once, a Refiner re-run per loop
 * with its own normalization entries, and an Attention Map Generator that
 * turns the previous loop's deepest features into a [0,1] gate over the FE
 * output.
 *
 * Layer ledger: stem (3x3/2 conv, BN, ReLU) then four residual phases of
 * stride 2 with C, 2C, 4C, 8C channels and a global average pool. Loop
 * point k puts the stem and phases 1..k-1 into FE and the rest into RF.
 */
template <typename T>
class IR9 {
 public:
  IR9() = default;
  IR9(const IR9Config& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = static_cast<std::size_t>(cfg.base_channels);
    const std::size_t bank = static_cast<std::size_t>(cfg.l_max) + 1;
    stem_ = Conv2d<T>(3, c, 3, 2, false, rng);
    stem_bn_ = BNBank<T>(c, 1);
    std::size_t in = c;
    for (int p = 1; p <= 4; ++p) {
      std::size_t out = static_cast<std::size_t>(cfg.phase_channels(p));
      phases_.emplace_back(in, out, 2, in_refiner(p) ? bank : 1, rng);
      in = out;
    }
    if (cfg.amg_mode == AmgMode::attention) {
      std::size_t ch = static_cast<std::size_t>(cfg.latent_dim());
      for (int k = 0; k < cfg.amg_steps(); ++k) {
        amg_convs_.emplace_back(ch / 4, ch / 2, 3, 1, true, rng);
        ch /= 2;
      }
      amg_out_ = Conv2d<T>(ch, static_cast<std::size_t>(cfg.fe_channels()), 1, 1, true, rng);
    }
  }

  const IR9Config& config() const { return cfg_; }

  /// True when phase p (1..4) belongs to the Refiner.
  bool in_refiner(int p) const { return p >= cfg_.loop_point; }

  /// Image batch N x 3 x H x H -> FE feature map N x C_fe x S x S.
  Tensor<T> extract_features(const Tensor<T>& x) {
    const auto h = static_cast<std::size_t>(cfg_.input_size);
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != h || x.dim(3) != h)
      throw ShapeError("extract_features: expected (N,3," + std::to_string(h) + "," +
                       std::to_string(h) + "), got " + shape_str(x.shape()));
    auto f = relu(stem_bn_(stem_(x), 0));
    for (int p = 1; p < cfg_.loop_point; ++p) f = phases_[p - 1](f, 0);
    return f;
  }

  /// Hadamard product of features and an attention map of identical shape.
  static Tensor<T> apply_attention(const Tensor<T>& f, const Tensor<T>& m) {
    if (f.shape() != m.shape())
      throw ShapeError("apply_attention: feature " + shape_str(f.shape()) + " vs map " +
                       shape_str(m.shape()));
    return hadamard(f, m);
  }

  /// Runs the Refiner on (possibly attention-augmented) FE features using
  /// normalization entry l.
  RefineOutput<T> refine(const Tensor<T>& f_in, std::size_t l) {
    if (l > static_cast<std::size_t>(cfg_.l_max))
      throw std::out_of_range("refine: iteration " + std::to_string(l) + " exceeds l_max " +
                              std::to_string(cfg_.l_max));
    const auto s = static_cast<std::size_t>(cfg_.fe_extent());
    if (f_in.rank() != 4 || f_in.dim(1) != static_cast<std::size_t>(cfg_.fe_channels()) ||
        f_in.dim(2) != s || f_in.dim(3) != s)
      throw ShapeError("refine: unexpected feature shape " + shape_str(f_in.shape()));
    Tensor<T> h = f_in;
    for (int p = cfg_.loop_point; p <= 4; ++p) h = phases_[p - 1](h, l);
    return {h, global_avg_pool(h)};
  }

  /// Attention map for the next iteration from the deepest pre-pool map.
  Tensor<T> generate_attention(const Tensor<T>& premap) {
    const auto r = static_cast<std::size_t>(cfg_.deep_extent());
    if (premap.rank() != 4 || premap.dim(1) != static_cast<std::size_t>(cfg_.latent_dim()) ||
        premap.dim(2) != r || premap.dim(3) != r)
      throw ShapeError("generate_attention: unexpected map shape " + shape_str(premap.shape()));
    switch (cfg_.amg_mode) {
      case AmgMode::attention: {
        Tensor<T> h = premap;
        for (auto& conv : amg_convs_) h = relu(conv(pixel_shuffle(h, 2)));
        return sigmoid(amg_out_(h));
      }
      case AmgMode::direct_upsample: {
        // Parameter-free: shuffle once, match channels, upsample to FE size.
        auto h = channel_adapt(pixel_shuffle(premap, 2), static_cast<std::size_t>(cfg_.fe_channels()));
        std::size_t factor = static_cast<std::size_t>(cfg_.fe_extent()) / h.dim(2);
        if (factor > 1) h = upsample_nearest(h, factor);
        return sigmoid(h);
      }
      case AmgMode::none: break;
    }
    throw std::logic_error("generate_attention called with amg_mode none");
  }

  /// Latents for loops 0..l_stop (l_stop capped to 0 when amg_mode is none).
  std::vector<RefineOutput<T>> forward_loop(const Tensor<T>& x, std::size_t l_stop) {
    if (l_stop > static_cast<std::size_t>(cfg_.l_max))
      throw std::out_of_range("forward_loop: l_stop exceeds l_max");
    if (cfg_.amg_mode == AmgMode::none) l_stop = 0;
    auto f = extract_features(x);
    std::vector<RefineOutput<T>> outs;
    outs.push_back(refine(f, 0));
    for (std::size_t l = 1; l <= l_stop; ++l) {
      auto m = generate_attention(outs.back().premap);
      outs.push_back(refine(apply_attention(f, m), l));
    }
    return outs;
  }

  void set_mode(NormMode m) {
    for (auto* b : all_banks()) b->set_mode(m);
  }

  /// Grows (or shrinks) every Refiner bank to l_max + 1 entries; new entries
  /// start fresh.
  void set_l_max(int l_max) {
    if (l_max < 0) throw std::invalid_argument("l_max must be >= 0");
    cfg_.l_max = l_max;
    for (int p = cfg_.loop_point; p <= 4; ++p) {
      std::vector<BNBank<T>*> banks;
      phases_[p - 1].banks(banks);
      for (auto* b : banks) b->resize(static_cast<std::size_t>(l_max) + 1);
    }
  }

  std::vector<BNBank<T>*> refiner_banks() {
    std::vector<BNBank<T>*> out;
    for (int p = cfg_.loop_point; p <= 4; ++p) phases_[p - 1].banks(out);
    return out;
  }

  std::vector<BNBank<T>*> fe_banks() {
    std::vector<BNBank<T>*> out{&stem_bn_};
    for (int p = 1; p < cfg_.loop_point; ++p) phases_[p - 1].banks(out);
    return out;
  }

  std::vector<BNBank<T>*> all_banks() {
    std::vector<BNBank<T>*> out{&stem_bn_};
    for (auto& ph : phases_) ph.banks(out);
    return out;
  }

  ParamList<T> fe_params() const {
    ParamList<T> out;
    stem_.collect(out, "fe.stem");
    stem_bn_.collect(out, "fe.stem_bn");
    for (int p = 1; p < cfg_.loop_point; ++p)
      phases_[p - 1].collect(out, "fe.phase" + std::to_string(p));
    return out;
  }

  ParamList<T> rf_params() const {
    ParamList<T> out;
    for (int p = cfg_.loop_point; p <= 4; ++p)
      phases_[p - 1].collect(out, "rf.phase" + std::to_string(p));
    return out;
  }

  ParamList<T> amg_params() const {
    ParamList<T> out;
    for (std::size_t k = 0; k < amg_convs_.size(); ++k)
      amg_convs_[k].collect(out, "amg.conv" + std::to_string(k));
    if (amg_out_.weight.defined()) amg_out_.collect(out, "amg.out");
    return out;
  }

  /// Running statistics of every normalization site (not trained by gradient).
  ParamList<T> buffers() const {
    ParamList<T> out;
    stem_bn_.collect_buffers(out, "fe.stem_bn");
    for (int p = 1; p <= 4; ++p)
      phases_[p - 1].collect_buffers(out, std::string(in_refiner(p) ? "rf" : "fe") + ".phase" +
                                              std::to_string(p));
    return out;
  }

  // Direct access for tests and FLOP accounting.
  const std::vector<ResidualBlock<T>>& phases() const { return phases_; }
  std::vector<Conv2d<T>>& amg_convs() { return amg_convs_; }
  Conv2d<T>& amg_out() { return amg_out_; }

 private:
  IR9Config cfg_;
  Conv2d<T> stem_;
  BNBank<T> stem_bn_;
  std::vector<ResidualBlock<T>> phases_;
  std::vector<Conv2d<T>> amg_convs_;
  Conv2d<T> amg_out_;
};

}  // namespace dirnet
