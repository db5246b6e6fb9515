// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "dirnet/eval.hpp"
#include "dirnet/json_util.hpp"
#include "dirnet/synthdata.hpp"
#include "dirnet/training.hpp"

namespace dirnet {

struct EvalConfig {
  GateSpec gate;
  int batch = 64;
};

inline void to_json(json& j, const EvalConfig& c) {
  j = to_json(c.gate);
  j["batch"] = c.batch;
}

inline void from_json(const json& j, EvalConfig& c) {
  StrictReader r(j, "eval");
  std::string kind = to_string(c.gate.kind);
  r.read("kind", kind);
  c.gate.kind = gate_kind_from_string(kind);
  r.read("tau_var", c.gate.tau_var);
  r.read("tau_gate", c.gate.tau_gate);
  std::string mode = c.gate.mode == GateMode::sample ? "sample" : "argmax";
  r.read("mode", mode);
  if (mode == "sample") c.gate.mode = GateMode::sample;
  else if (mode == "argmax") c.gate.mode = GateMode::argmax;
  else throw ConfigError("eval.mode: unknown value '" + mode + "' (sample, argmax)");
  r.read("seed", c.gate.seed);
  r.read("batch", c.batch);
  r.finish();
}

/// Everything a run needs, resolved before execution.
struct RunConfig {
  GenConfig gen;
  IR9Config model;
  TrainConfig train;
  GateTrainConfig gate;
  EvalConfig eval;
  int jobs = 1;

  void validate() const {
    gen.validate();
    try {
      model.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
    train.validate();
    gate.validate();
    if (!(eval.gate.tau_gate > 0)) throw ConfigError("eval.tau_gate must be positive");
    if (eval.batch <= 0) throw ConfigError("eval.batch must be positive");
    if (jobs <= 0) throw ConfigError("jobs must be positive");
    if (gen.image_size != model.input_size)
      throw ConfigError("model.input_size (" + std::to_string(model.input_size) + ") must equal gen.image_size (" +
                        std::to_string(gen.image_size) + ")");
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"gen", c.gen}, {"model", c.model}, {"train", c.train}, {"gate", c.gate}, {"eval", c.eval},
           {"jobs", c.jobs}};
}

namespace detail {

// The per-section readers start from a default-constructed value, so merging
// reads each section on top of the current one.
template <typename S>
void merge_section(S& cur, const json* j) {
  if (!j) return;
  json base = cur;
  for (auto it = j->begin(); it != j->end(); ++it) base[it.key()] = it.value();
  cur = base.get<S>();
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j, RunConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  StrictReader r(j, "config");
  try {
    detail::merge_section(base.gen, r.sub("gen"));
    detail::merge_section(base.model, r.sub("model"));
    detail::merge_section(base.train, r.sub("train"));
    detail::merge_section(base.gate, r.sub("gate"));
    detail::merge_section(base.eval, r.sub("eval"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  r.read("jobs", base.jobs);
  r.finish();
  return base;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Stage a command-line `--seed` applies to.
enum class SeedTarget { gen, train, gate, eval };

/// Command-line overrides; unset members leave the config untouched.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> tau_var, tau_gate, lambda;
  std::optional<int> loop_point, l_max, jobs;
  std::optional<std::string> amg_mode, protocol, gate;
};

inline void apply_overrides(RunConfig& c, const Overrides& o, SeedTarget target) {
  if (o.seed) {
    switch (target) {
      case SeedTarget::gen: c.gen.seed = *o.seed; break;
      case SeedTarget::train: c.train.seed = *o.seed; break;
      case SeedTarget::gate: c.gate.seed = *o.seed; break;
      case SeedTarget::eval: c.eval.gate.seed = *o.seed; break;
    }
  }
  if (o.tau_var) c.eval.gate.tau_var = *o.tau_var;
  if (o.tau_gate) {
    if (target == SeedTarget::gate) c.gate.tau_gate = *o.tau_gate;
    else c.eval.gate.tau_gate = *o.tau_gate;
  }
  if (o.lambda) c.gate.lambda = *o.lambda;
  if (o.loop_point) c.model.loop_point = *o.loop_point;
  if (o.l_max) c.model.l_max = *o.l_max;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.amg_mode) {
    try {
      c.model.amg_mode = amg_mode_from_string(*o.amg_mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--amg-mode: ") + e.what());
    }
  }
  if (o.protocol) c.train.protocol = protocol_from_string(*o.protocol);
  if (o.gate) c.eval.gate.kind = gate_kind_from_string(*o.gate);
}

/// Defaults, then the optional file, then command-line overrides.
inline RunConfig resolve_config(const std::optional<std::string>& file, const Overrides& o, SeedTarget target) {
  RunConfig c;
  if (file) c = parse_run_config(read_json_file(*file), c);
  apply_overrides(c, o, target);
  c.validate();
  return c;
}

}  // namespace dirnet
