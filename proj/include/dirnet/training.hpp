// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirnet/flops.hpp"
#include "dirnet/inference.hpp"
#include "dirnet/json_util.hpp"
#include "dirnet/model.hpp"

namespace dirnet {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline void to_json(json& j, const IR9Config& c) {
  j = json{{"input_size", c.input_size}, {"base_channels", c.base_channels}, {"loop_point", c.loop_point},
           {"l_max", c.l_max},           {"fc_width", c.fc_width},           {"num_joints", c.num_joints},
           {"amg_mode", to_string(c.amg_mode)}};
}

inline void from_json(const json& j, IR9Config& c) {
  StrictReader r(j, "model");
  r.read("input_size", c.input_size);
  r.read("base_channels", c.base_channels);
  r.read("loop_point", c.loop_point);
  r.read("l_max", c.l_max);
  r.read("fc_width", c.fc_width);
  r.read("num_joints", c.num_joints);
  std::string mode = to_string(c.amg_mode);
  r.read("amg_mode", mode);
  try {
    c.amg_mode = amg_mode_from_string(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model.") + e.what());
  }
  r.finish();
}

enum class Protocol { e2e, progressive };

inline const char* to_string(Protocol p) { return p == Protocol::e2e ? "e2e" : "progressive"; }

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "e2e") return Protocol::e2e;
  if (s == "progressive") return Protocol::progressive;
  throw ConfigError("train.protocol: unknown value '" + s + "' (e2e, progressive)");
}

struct LossWeights {
  double gamma_2d = 1.0;
  double gamma_3d = 1.0;
  double gamma_var = 1.0;
};

/// Optimisation settings. The loop count comes from the model config.
struct TrainConfig {
  Protocol protocol = Protocol::progressive;
  double lr = 1e-3;
  int epochs_initial = 50;
  int epochs_per_loop = 20;
  int batch_size = 32;
  LossWeights weights;
  RegularizerWeights reg;
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamHyper adam;
  // Feed the variance losses detached copies of the pose errors, so they
  // train the variance head only.
  bool detach_var_errors = true;
  // Feed the variance head a detached latent, so its loss leaves the
  // backbone and pose head untouched.
  bool detach_var_input = true;
  bool early_stop = false;
  int patience = 5;
  // Restore the epoch with the lowest final-loop validation 3D error at the
  // end of each phase.
  bool keep_best = false;
  std::uint64_t seed = 7;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (epochs_initial <= 0) throw ConfigError("train.epochs_initial must be positive");
    if (epochs_per_loop <= 0) throw ConfigError("train.epochs_per_loop must be positive");
    if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (batch statistics)");
    if (!(weights.gamma_2d > 0) || !(weights.gamma_3d > 0) || !(weights.gamma_var > 0))
      throw ConfigError("train.gamma_* must be positive");
    if (reg.theta < 0 || reg.beta < 0) throw ConfigError("train.reg_* must be non-negative");
    if (patience <= 0) throw ConfigError("train.patience must be positive");
  }

  /// Epoch budget for a given loop cap; identical for both protocols.
  int total_epochs(int l_max) const { return epochs_initial + epochs_per_loop * l_max; }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"protocol", to_string(c.protocol)},
           {"lr", c.lr},
           {"epochs_initial", c.epochs_initial},
           {"epochs_per_loop", c.epochs_per_loop},
           {"batch_size", c.batch_size},
           {"gamma_2d", c.weights.gamma_2d},
           {"gamma_3d", c.weights.gamma_3d},
           {"gamma_var", c.weights.gamma_var},
           {"reg_theta", c.reg.theta},
           {"reg_beta", c.reg.beta},
           {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
           {"adam_beta1", c.adam.beta1},
           {"adam_beta2", c.adam.beta2},
           {"adam_eps", c.adam.eps},
           {"detach_var_errors", c.detach_var_errors},
           {"detach_var_input", c.detach_var_input},
           {"early_stop", c.early_stop},
           {"patience", c.patience},
           {"keep_best", c.keep_best},
           {"seed", c.seed}};
}

inline void from_json(const json& j, TrainConfig& c) {
  StrictReader r(j, "train");
  std::string proto = to_string(c.protocol);
  r.read("protocol", proto);
  c.protocol = protocol_from_string(proto);
  r.read("lr", c.lr);
  r.read("epochs_initial", c.epochs_initial);
  r.read("epochs_per_loop", c.epochs_per_loop);
  r.read("batch_size", c.batch_size);
  r.read("gamma_2d", c.weights.gamma_2d);
  r.read("gamma_3d", c.weights.gamma_3d);
  r.read("gamma_var", c.weights.gamma_var);
  r.read("reg_theta", c.reg.theta);
  r.read("reg_beta", c.reg.beta);
  std::string opt = c.optimizer == OptimizerKind::adam ? "adam" : "sgd";
  r.read("optimizer", opt);
  if (opt == "adam") c.optimizer = OptimizerKind::adam;
  else if (opt == "sgd") c.optimizer = OptimizerKind::sgd;
  else throw ConfigError("train.optimizer: unknown value '" + opt + "' (adam, sgd)");
  r.read("adam_beta1", c.adam.beta1);
  r.read("adam_beta2", c.adam.beta2);
  r.read("adam_eps", c.adam.eps);
  r.read("detach_var_errors", c.detach_var_errors);
  r.read("detach_var_input", c.detach_var_input);
  r.read("early_stop", c.early_stop);
  r.read("patience", c.patience);
  r.read("keep_best", c.keep_best);
  r.read("seed", c.seed);
  r.finish();
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Scalar loss terms of one loop for a batch.
template <typename T>
struct LoopLoss {
  Tensor<T> l2d, l3d, var, reg;
};

template <typename T>
LoopLoss<T> loop_loss(const LoopOutput<T>& o, const Tensor<T>& gt2d, const Tensor<T>& gt3d,
                      const RegularizerWeights& w = {}, bool detach_var_errors = true) {
  auto terms = pose_loss_terms(o.raw_pose, o.pose, gt2d, gt3d, w);
  Tensor<T> l2c = detach_var_errors ? terms.l2d_coords.detach() : terms.l2d_coords;
  Tensor<T> e3c = detach_var_errors ? terms.e3d_coords.detach() : terms.e3d_coords;
  return {terms.l2d, terms.l3d, add(var_loss_2d(l2c, o.var.alpha2d), var_loss_3d(e3c, o.var.alpha3d)),
          terms.reg};
}

/// Sum over loops of g2d L2D + g3d L3D + gvar Lvar, plus each loop's regularizer.
template <typename T>
Tensor<T> total_loss(const std::vector<LoopLoss<T>>& loops, const LossWeights& g = {}) {
  if (loops.empty()) throw std::invalid_argument("total_loss: no loops");
  Tensor<T> acc;
  for (const auto& l : loops) {
    auto t = add(add(scale(l.l2d, static_cast<T>(g.gamma_2d)), scale(l.l3d, static_cast<T>(g.gamma_3d))),
                 add(scale(l.var, static_cast<T>(g.gamma_var)), l.reg));
    acc = acc.defined() ? add(acc, t) : t;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-loop means of validation metrics.
struct ValidationSummary {
  std::vector<double> err2d, err3d, l2d, l3d;
};

inline ValidationSummary summarize(const PredictionCache& c) {
  const std::size_t loops = static_cast<std::size_t>(c.l_stop) + 1;
  ValidationSummary s{std::vector<double>(loops), std::vector<double>(loops), std::vector<double>(loops),
                      std::vector<double>(loops)};
  for (const auto& smp : c.loops)
    for (std::size_t l = 0; l < loops; ++l) {
      s.err2d[l] += smp[l].err2d;
      s.err3d[l] += smp[l].err3d;
      s.l2d[l] += smp[l].l2d;
      s.l3d[l] += smp[l].l3d;
    }
  const double n = static_cast<double>(std::max<std::size_t>(1, c.size()));
  for (auto* v : {&s.err2d, &s.err3d, &s.l2d, &s.l3d})
    for (auto& x : *v) x /= n;
  return s;
}

inline json to_json(const ValidationSummary& s) {
  return json{{"err2d", s.err2d}, {"err3d", s.err3d}, {"l2d", s.l2d}, {"l3d", s.l3d}};
}

struct TrainOutcome {
  json log = json::array();
  std::unique_ptr<Optimizer<float>> optimizer;  // state of the last phase
  Rng rng;
};

namespace detail {

inline std::vector<std::vector<float>> snapshot(const ParamList<float>& state) {
  std::vector<std::vector<float>> out;
  for (const auto& p : state) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

inline void restore(ParamList<float>& state, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < state.size(); ++i)
    std::copy(snap[i].begin(), snap[i].end(), state[i].tensor.data().begin());
}

struct Phase {
  int l_prog;  // loops trained this phase: 0..l_prog
  int epochs;
  bool freeze_fe;
  double lr_scale;  // applied to every group except AMG
};

inline std::vector<Phase> schedule(const TrainConfig& cfg, int l_max) {
  std::vector<Phase> ph;
  if (cfg.protocol == Protocol::e2e) {
    ph.push_back({l_max, cfg.total_epochs(l_max), false, 1.0});
  } else {
    for (int l = 0; l <= l_max; ++l)
      ph.push_back({l, l == 0 ? cfg.epochs_initial : cfg.epochs_per_loop, l > 0, std::pow(10.0, -l)});
  }
  return ph;
}

}  // namespace detail

/**
 * Trains the network (not the gate) under either protocol. Every batch runs
 * all loops of the current phase and minimises the summed per-loop loss.
 * Deterministic for a fixed config and dataset.
 */
inline TrainOutcome train_network(DIRNet<float>& model, const TrainConfig& cfg, const Dataset& ds,
                                  const std::vector<std::size_t>& train_idx,
                                  const std::vector<std::size_t>& val_idx,
                                  const std::function<void(const json&)>& on_epoch = {}) {
  cfg.validate();
  if (train_idx.size() < 2) throw std::invalid_argument("train_network: need at least two training samples");
  if (ds.image_size() != model.config().input_size)
    throw std::invalid_argument("train_network: dataset image size " + std::to_string(ds.image_size()) +
                                " != model input size " + std::to_string(model.config().input_size));
  const int l_max = model.config().effective_l_max();
  TrainOutcome out;
  out.rng = Rng(cfg.seed);
  model.set_detach_var_input(cfg.detach_var_input);
  const auto phases = detail::schedule(cfg, l_max);
  int global_epoch = 0;

  for (std::size_t pi = 0; pi < phases.size(); ++pi) {
    const auto& ph = phases[pi];
    if (cfg.protocol == Protocol::progressive) model.set_l_max(ph.l_prog);

    auto net = model.network_parameters();
    set_tracked(net, true);
    auto gate = model.group("gate");
    set_tracked(gate, false);
    if (ph.freeze_fe) {
      auto fe = model.group("fe");
      set_tracked(fe, false);
    }
    std::vector<ParamGroup<float>> groups;
    json lrs = json::object();
    for (const auto& g : DIRNet<float>::group_names()) {
      if (g == "gate") continue;
      double lr = cfg.lr * (g == "amg" ? 1.0 : ph.lr_scale);
      groups.push_back({g, model.group(g), lr});
      lrs[g] = lr;
    }
    out.optimizer = std::make_unique<Optimizer<float>>(std::move(groups), cfg.optimizer, cfg.adam);

    auto set_train_mode = [&] {
      model.set_mode(NormMode::train);
      if (ph.freeze_fe)
        for (auto* b : model.backbone().fe_banks()) b->set_mode(NormMode::eval);
    };

    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::vector<float>> best_state;
    const std::size_t loops = static_cast<std::size_t>(ph.l_prog) + 1;

    for (int ep = 0; ep < ph.epochs; ++ep, ++global_epoch) {
      std::vector<std::size_t> order = train_idx;
      shuffle(order.begin(), order.end(), out.rng);
      std::vector<std::array<double, 4>> acc(loops, {0, 0, 0, 0});
      double total_acc = 0;
      std::size_t batches = 0;
      set_train_mode();
      for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
        std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
        if (hi - lo < 2) break;
        auto bt = make_batch(ds, std::span<const std::size_t>(order).subspan(lo, hi - lo));
        Tape<float> tape;
        TapeScope<float> scope(tape);
        auto outs = model.forward(bt.x, static_cast<std::size_t>(ph.l_prog));
        std::vector<LoopLoss<float>> ll;
        for (const auto& o : outs) ll.push_back(loop_loss(o, bt.gt2d, bt.gt3d, cfg.reg, cfg.detach_var_errors));
        auto loss = total_loss(ll, cfg.weights);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
          std::ostringstream os;
          os << "non-finite loss in phase " << pi << " epoch " << ep << " batch " << batches << ":";
          for (std::size_t l = 0; l < ll.size(); ++l)
            os << " loop" << l << "{l2d=" << ll[l].l2d.item() << " l3d=" << ll[l].l3d.item()
               << " var=" << ll[l].var.item() << " reg=" << ll[l].reg.item() << "}";
          throw TrainingDiverged(os.str());
        }
        backward(loss);
        out.optimizer->step();
        for (std::size_t l = 0; l < ll.size(); ++l) {
          acc[l][0] += ll[l].l2d.item();
          acc[l][1] += ll[l].l3d.item();
          acc[l][2] += ll[l].var.item();
          acc[l][3] += ll[l].reg.item();
        }
        total_acc += lv;
        ++batches;
      }

      json rec{{"phase", pi}, {"l_prog", ph.l_prog}, {"epoch", ep}, {"global_epoch", global_epoch}, {"lr", lrs}};
      json per_loop = json::array();
      for (std::size_t l = 0; l < loops; ++l)
        per_loop.push_back({{"l2d", acc[l][0] / batches},
                            {"l3d", acc[l][1] / batches},
                            {"var", acc[l][2] / batches},
                            {"reg", acc[l][3] / batches}});
      rec["train"] = {{"loss", total_acc / batches}, {"per_loop", per_loop}};

      bool stop = false;
      if (!val_idx.empty()) {
        auto cache = predict_loops(model, ds, val_idx, ph.l_prog);
        auto sm = summarize(cache);
        rec["val"] = to_json(sm);
        double metric = sm.err3d.back();
        if (metric < best) {
          best = metric;
          since_best = 0;
          if (cfg.keep_best) best_state = detail::snapshot(model.state());
        } else if (++since_best >= cfg.patience && cfg.early_stop) {
          stop = true;
          rec["early_stop"] = true;
        }
      }
      out.log.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (stop) break;
    }
    if (cfg.keep_best && !best_state.empty()) {
      auto st = model.state();
      detail::restore(st, best_state);
    }
  }
  model.set_mode(NormMode::eval);
  auto all = model.parameters();
  set_tracked(all, false);
  return out;
}

inline TrainOutcome train_end_to_end(DIRNet<float>& model, const TrainConfig& cfg, const Dataset& ds,
                                     const std::vector<std::size_t>& train_idx,
                                     const std::vector<std::size_t>& val_idx,
                                     const std::function<void(const json&)>& on_epoch = {}) {
  if (cfg.protocol != Protocol::e2e) throw ConfigError("train_end_to_end: protocol must be e2e");
  return train_network(model, cfg, ds, train_idx, val_idx, on_epoch);
}

inline TrainOutcome train_progressive(DIRNet<float>& model, const TrainConfig& cfg, const Dataset& ds,
                                      const std::vector<std::size_t>& train_idx,
                                      const std::vector<std::size_t>& val_idx,
                                      const std::function<void(const json&)>& on_epoch = {}) {
  if (cfg.protocol != Protocol::progressive) throw ConfigError("train_progressive: protocol must be progressive");
  return train_network(model, cfg, ds, train_idx, val_idx, on_epoch);
}

// ---------------------------------------------------------------------------
// Gate training
// ---------------------------------------------------------------------------

struct GateTrainConfig {
  double lambda = 10.0;
  CostMode cost = CostMode::cumulative;
  double tau_gate = 1.0;          // temperature while collecting trajectories
  double lr = 1e-3;
  int epochs = 20;
  int batch = 32;                 // trajectories per update
  double per_loop_gflops = -1.0;  // negative: take it from the FLOPs table
  std::uint64_t seed = 11;

  void validate() const {
    if (lambda < 0) throw ConfigError("gate.lambda must be non-negative");
    if (!(tau_gate > 0)) throw ConfigError("gate.tau_gate must be positive");
    if (!(lr > 0)) throw ConfigError("gate.lr must be positive");
    if (epochs <= 0) throw ConfigError("gate.epochs must be positive");
    if (batch <= 0) throw ConfigError("gate.batch must be positive");
  }
};

inline void to_json(json& j, const GateTrainConfig& c) {
  j = json{{"lambda", c.lambda},
           {"cost", c.cost == CostMode::cumulative ? "cumulative" : "marginal"},
           {"tau_gate", c.tau_gate},
           {"lr", c.lr},
           {"epochs", c.epochs},
           {"batch", c.batch},
           {"per_loop_gflops", c.per_loop_gflops},
           {"seed", c.seed}};
}

inline void from_json(const json& j, GateTrainConfig& c) {
  StrictReader r(j, "gate");
  r.read("lambda", c.lambda);
  std::string cost = c.cost == CostMode::cumulative ? "cumulative" : "marginal";
  r.read("cost", cost);
  if (cost == "cumulative") c.cost = CostMode::cumulative;
  else if (cost == "marginal") c.cost = CostMode::marginal;
  else throw ConfigError("gate.cost: unknown value '" + cost + "' (cumulative, marginal)");
  r.read("tau_gate", c.tau_gate);
  r.read("lr", c.lr);
  r.read("epochs", c.epochs);
  r.read("batch", c.batch);
  r.read("per_loop_gflops", c.per_loop_gflops);
  r.read("seed", c.seed);
  r.finish();
}

/// FNV-1a over the raw bytes of every tensor, in order.
inline std::uint64_t state_digest(const ParamList<float>& state) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : state) {
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
    const auto* b = reinterpret_cast<const unsigned char*>(p.tensor.ptr());
    for (std::size_t i = 0; i < p.tensor.numel() * sizeof(float); ++i) h = (h ^ b[i]) * 0x100000001b3ull;
  }
  return h;
}

/// Samples one episode for a cached sample: gate decisions from loop 0 until
/// EXIT, with the exit forced at the loop cap.
inline Trajectory rollout(const std::vector<LoopRecord>& loops, const GatePolicy<float>& policy, Rng& rng,
                          GateMode mode) {
  const int l_max = static_cast<int>(loops.size()) - 1;
  Trajectory tr;
  for (int l = 0; l <= l_max; ++l) {
    TrajectoryStep st;
    st.f.assign(loops[l].f.begin(), loops[l].f.end());
    if (l == l_max) {
      st.decision.action = GateAction::exit;
      st.decision.loop = l;
      st.decision.forced = true;
      st.decision.probs = {1.0, 0.0};
    } else {
      Tensor<float> f(Shape{1, loops[l].f.size()}, std::vector<float>(loops[l].f.begin(), loops[l].f.end()));
      st.decision = gate_decide(f, policy, rng, mode, l);
    }
    tr.steps.push_back(std::move(st));
    if (tr.steps.back().decision.action == GateAction::exit) break;
  }
  tr.terminal = true;
  return tr;
}

inline int exit_loop(const Trajectory& tr) { return static_cast<int>(tr.steps.size()) - 1; }

struct GateTrainOutcome {
  json log = json::array();
  std::unique_ptr<Optimizer<float>> optimizer;
  RewardBaseline baseline;
  Rng rng;
  std::uint64_t network_digest_before = 0;
  std::uint64_t network_digest_after = 0;
  std::vector<Trajectory> last_epoch;  // trajectories sampled in the final epoch
  std::vector<std::size_t> last_epoch_samples;
};

/**
 * On-policy policy-gradient training of `policy` over cached per-loop
 * predictions. Each episode's return is the reward at its exit loop,
 * credited to every decision of the episode.
 */
inline GateTrainOutcome train_gate_cached(GatePolicy<float>& policy, const PredictionCache& cache,
                                          const GateTrainConfig& cfg, double per_loop_gflops,
                                          const std::function<void(const json&)>& on_epoch = {}) {
  cfg.validate();
  if (cache.size() == 0) throw std::invalid_argument("train_gate: empty training set");
  GateTrainOutcome out;
  const int l_max = cache.l_stop;
  policy.tau = cfg.tau_gate;
  ParamList<float> gp;
  policy.collect(gp, "gate");
  set_tracked(gp, true);
  out.optimizer = std::make_unique<Optimizer<float>>(std::vector<ParamGroup<float>>{{"gate", gp, cfg.lr}});
  out.rng = Rng(cfg.seed);

  std::vector<std::size_t> order(cache.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    shuffle(order.begin(), order.end(), out.rng);
    double ret_sum = 0, loops_sum = 0;
    std::vector<int> hist(static_cast<std::size_t>(l_max) + 1, 0);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch)) {
      std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch));
      std::vector<Trajectory> batch;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        Rng srng(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(ep) + 1), cache.indices[i]));
        auto tr = rollout(cache.loops[i], policy, srng, GateMode::sample);
        const int le = exit_loop(tr);
        const auto& rec = cache.loops[i][static_cast<std::size_t>(le)];
        const double g = reward(rec.l2d, rec.l3d, le, per_loop_gflops, cfg.lambda, cfg.cost);
        for (auto& st : tr.steps) st.reward = g;
        ret_sum += g;
        loops_sum += le;
        ++hist[static_cast<std::size_t>(le)];
        if (ep + 1 == cfg.epochs) {
          out.last_epoch.push_back(tr);
          out.last_epoch_samples.push_back(cache.indices[i]);
        }
        batch.push_back(std::move(tr));
      }
      policy_gradient_update(batch, policy, *out.optimizer, out.baseline);
    }
    const double n = static_cast<double>(order.size());
    json rec{{"epoch", ep},
             {"mean_return", ret_sum / n},
             {"avg_loops", loops_sum / n},
             {"exit_histogram", hist},
             {"baseline", out.baseline.value}};
    out.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  set_tracked(gp, false);
  return out;
}

/// Trains only the gate of a trained network; every other parameter stays
/// bit-identical.
inline GateTrainOutcome train_gate(DIRNet<float>& model, const GateTrainConfig& cfg, const Dataset& ds,
                                   const std::vector<std::size_t>& train_idx,
                                   const std::function<void(const json&)>& on_epoch = {}) {
  cfg.validate();
  if (train_idx.empty()) throw std::invalid_argument("train_gate: empty training set");
  auto net = model.network_parameters();
  set_tracked(net, false);
  const std::uint64_t before = state_digest(model.network_parameters());
  const double gflops = cfg.per_loop_gflops >= 0 ? cfg.per_loop_gflops
                                                 : static_cast<double>(count_flops(model.config()).per_loop) / 1e9;
  auto cache = predict_loops(model, ds, train_idx, model.config().effective_l_max());
  auto out = train_gate_cached(model.gate(), cache, cfg, gflops, on_epoch);
  out.network_digest_before = before;
  out.network_digest_after = state_digest(model.network_parameters());
  if (out.network_digest_after != out.network_digest_before)
    throw std::logic_error("train_gate modified network parameters");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'D', 'I', 'R', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Serialisable training state: model tensors, optimizer moments, log and RNG.
struct Checkpoint {
  IR9Config config;
  json meta = json::object();
  json log = json::array();
  std::string rng_state;
  bool has_gate = false;
  std::string optimizer_kind = "none";
  long optimizer_steps = 0;
  std::vector<NamedBlob> tensors;  // parameters then buffers
  std::vector<NamedBlob> moments;  // "m:<name>" / "v:<name>"
};

inline std::string rng_to_string(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng r;
  if (s.empty()) return r;
  std::istringstream is(s);
  is >> r;
  if (!is) throw std::runtime_error("checkpoint: malformed RNG state");
  return r;
}

inline Checkpoint make_checkpoint(const DIRNet<float>& model, const Optimizer<float>* opt, const json& log,
                                  const Rng* rng, bool has_gate, json meta = json::object()) {
  Checkpoint c;
  c.config = model.config();
  c.meta = std::move(meta);
  c.log = log;
  c.has_gate = has_gate;
  if (rng) c.rng_state = rng_to_string(*rng);
  for (const auto& p : model.state())
    c.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  if (opt) {
    c.optimizer_kind = opt->kind() == OptimizerKind::adam ? "adam" : "sgd";
    c.optimizer_steps = opt->steps();
    for (const auto& [name, m] : opt->moments()) {
      if (m.m.empty()) continue;
      c.moments.push_back({"m:" + name, Shape{m.m.size()}, m.m});
      c.moments.push_back({"v:" + name, Shape{m.v.size()}, m.v});
    }
  }
  return c;
}

/// Rebuilds the model and copies every tensor; names and shapes must match.
inline DIRNet<float> model_from_checkpoint(const Checkpoint& c) {
  DIRNet<float> m(c.config, 0);
  std::map<std::string, const NamedBlob*> by_name;
  for (const auto& b : c.tensors) by_name[b.name] = &b;
  auto st = m.state();
  if (st.size() != c.tensors.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(st.size()) + " tensors, found " +
                             std::to_string(c.tensors.size()));
  for (auto& p : st) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
    if (it->second->shape != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " + shape_str(it->second->shape) +
                               " vs " + shape_str(p.tensor.shape()));
    std::copy(it->second->data.begin(), it->second->data.end(), p.tensor.data().begin());
  }
  m.set_mode(NormMode::eval);
  return m;
}

inline json checkpoint_header(const Checkpoint& c) {
  json tens = json::array(), moms = json::array();
  for (const auto& b : c.tensors) tens.push_back({{"name", b.name}, {"shape", b.shape}});
  for (const auto& b : c.moments) moms.push_back({{"name", b.name}, {"shape", b.shape}});
  return json{{"format", "DIRN"},
              {"model", c.config},
              {"meta", c.meta},
              {"log", c.log},
              {"rng_state", c.rng_state},
              {"has_gate", c.has_gate},
              {"optimizer", {{"kind", c.optimizer_kind}, {"steps", c.optimizer_steps}}},
              {"tensors", tens},
              {"moments", moms}};
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  std::uint32_t ver = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&ver), 4);
  os << checkpoint_header(c).dump() << '\n';
  for (const auto* list : {&c.tensors, &c.moments})
    for (const auto& b : *list)
      os.write(reinterpret_cast<const char*>(b.data.data()), static_cast<std::streamsize>(b.data.size() * 4));
  if (!os) throw std::runtime_error("write failed: " + path);
}

/// Header only, for inspection.
inline json read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  std::uint32_t ver = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&ver), 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint (bad magic)");
  if (ver != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(ver));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": missing header");
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": malformed header: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  json h = read_checkpoint_header(path);
  is.ignore(8);
  std::string line;
  std::getline(is, line);
  Checkpoint c;
  try {
    c.config = h.at("model").get<IR9Config>();
    c.meta = h.at("meta");
    c.log = h.at("log");
    c.rng_state = h.at("rng_state").get<std::string>();
    c.has_gate = h.at("has_gate").get<bool>();
    c.optimizer_kind = h.at("optimizer").at("kind").get<std::string>();
    c.optimizer_steps = h.at("optimizer").at("steps").get<long>();
    for (const auto& t : h.at("tensors")) c.tensors.push_back({t.at("name"), t.at("shape").get<Shape>(), {}});
    for (const auto& t : h.at("moments")) c.moments.push_back({t.at("name"), t.at("shape").get<Shape>(), {}});
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": malformed header: " + e.what());
  }
  for (auto* list : {&c.tensors, &c.moments})
    for (auto& b : *list) {
      b.data.resize(shape_numel(b.shape));
      is.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(b.data.size() * 4));
      if (!is) throw std::runtime_error(path + ": truncated at tensor " + b.name);
    }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes");
  return c;
}

/// Restores optimizer moments saved by make_checkpoint into `opt`.
inline void restore_optimizer(Optimizer<float>& opt, const Checkpoint& c) {
  std::map<std::string, const NamedBlob*> by_name;
  for (const auto& b : c.moments) by_name[b.name] = &b;
  for (auto& [name, m] : opt.moments()) {
    auto mi = by_name.find("m:" + name), vi = by_name.find("v:" + name);
    if (mi == by_name.end() || vi == by_name.end()) continue;
    m.m = mi->second->data;
    m.v = vi->second->data;
  }
  opt.set_steps(c.optimizer_steps);
}

}  // namespace dirnet
