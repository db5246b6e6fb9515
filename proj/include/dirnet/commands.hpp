// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dirnet/config.hpp"
#include "dirnet/eval.hpp"
#include "dirnet/flops.hpp"
#include "dirnet/hash.hpp"
#include "dirnet/synthdata.hpp"
#include "dirnet/training.hpp"
#include "dirnet/uncertainty.hpp"

namespace dirnet {

// Implementations of the command-line subcommands. Each writes its artifacts
// and reports progress on `log`.

inline IndexRange split_range(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.split.train;
  if (split == "val") return ds.split.val;
  if (split == "test") return ds.split.test;
  if (split == "all") return {0, ds.size()};
  throw ConfigError("--split: unknown value '" + split + "' (train, val, test, all)");
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline void cmd_gen_data(const RunConfig& cfg, const std::string& out, std::ostream& log) {
  json resolved = cfg;
  resolved.erase("jobs");
  json extra{{"resolved_config", resolved}, {"inputs", json::object()}};
  generate_dataset(cfg.gen, out, cfg.jobs, extra);
  log << "wrote " << cfg.gen.count << " samples to " << out << " (" << git_blob_hash_file(out) << ")\n";
}

inline Dataset load_checked(const std::string& data, int input_size) {
  Dataset ds = load_dataset(data);
  if (ds.image_size() != input_size)
    throw ConfigError(data + ": image size " + std::to_string(ds.image_size()) + " does not match model.input_size " +
                      std::to_string(input_size));
  return ds;
}

inline void cmd_train(const RunConfig& cfg, const std::string& data, const std::string& out,
                      const std::optional<std::string>& log_path, std::ostream& log) {
  Dataset ds = load_checked(data, cfg.model.input_size);
  DIRNet<float> model(cfg.model, cfg.train.seed);
  auto tr = range_indices(ds.split.train), va = range_indices(ds.split.val);
  auto res = train_network(model, cfg.train, ds, tr, va, [&](const json& r) {
    log << "phase " << r["phase"] << " epoch " << r["epoch"] << " loss " << r["train"]["loss"].get<double>();
    if (r.contains("val"))
      log << " val err2d " << r["val"]["err2d"].back().get<double>() << " err3d "
          << r["val"]["err3d"].back().get<double>();
    log << '\n';
  });
  json meta{{"resolved_config", cfg}, {"inputs", {{"data", git_blob_hash_file(data)}}}};
  save_checkpoint(make_checkpoint(model, res.optimizer.get(), res.log, &res.rng, false, meta), out);
  if (log_path) write_text_file(*log_path, json{{"resolved_config", cfg}, {"log", res.log}}.dump(2) + "\n");
  log << "wrote " << out << '\n';
}

inline void cmd_train_gate(const RunConfig& cfg, const std::string& ckpt, const std::string& data,
                           const std::string& out, const std::optional<std::string>& trajectories,
                           std::ostream& log) {
  Checkpoint c = load_checkpoint(ckpt);
  DIRNet<float> model = model_from_checkpoint(c);
  Dataset ds = load_checked(data, c.config.input_size);
  auto res = train_gate(model, cfg.gate, ds, range_indices(ds.split.train), [&](const json& r) {
    log << "gate epoch " << r["epoch"] << " return " << r["mean_return"].get<double>() << " avg loops "
        << r["avg_loops"].get<double>() << '\n';
  });
  json meta{{"resolved_config", cfg},
            {"network", c.meta},
            {"inputs", {{"checkpoint", git_blob_hash_file(ckpt)}, {"data", git_blob_hash_file(data)}}}};
  json log_all{{"network", c.log}, {"gate", res.log}};
  save_checkpoint(make_checkpoint(model, res.optimizer.get(), log_all, &res.rng, true, meta), out);
  if (trajectories) {
    std::ostringstream csv;
    write_trajectories_csv(csv, res.last_epoch, res.last_epoch_samples);
    write_text_file(*trajectories, csv.str());
  }
  log << "wrote " << out << '\n';
}

struct LoadedEval {
  Checkpoint ckpt;
  DIRNet<float> model;
  Dataset ds;
  PredictionCache cache;
  FlopsTable flops;
};

inline LoadedEval load_for_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& data,
                                const std::string& split) {
  Checkpoint c = load_checkpoint(ckpt);
  DIRNet<float> model = model_from_checkpoint(c);
  Dataset ds = load_checked(data, c.config.input_size);
  auto cache = predict_loops(model, ds, range_indices(split_range(ds, split)), c.config.effective_l_max(),
                             static_cast<std::size_t>(cfg.eval.batch), cfg.jobs);
  auto fl = count_flops(c.config);
  return {std::move(c), std::move(model), std::move(ds), std::move(cache), std::move(fl)};
}

inline const GatePolicy<float>* gate_of(const LoadedEval& e, GateKind kind) {
  if (kind != GateKind::learned) return nullptr;
  if (!e.ckpt.has_gate) throw ConfigError("learned gate requested but the checkpoint has no trained gate");
  return &e.model.gate();
}

/// Per loop: Spearman correlation between mean predicted 2D variance and
/// mean 2D joint error.
inline std::vector<double> variance_error_correlation(const PredictionCache& cache) {
  std::vector<double> out;
  for (int l = 0; l <= cache.l_stop; ++l) {
    std::vector<double> v, e;
    for (const auto& s : cache.loops) {
      v.push_back(s[static_cast<std::size_t>(l)].mean_var2d);
      e.push_back(s[static_cast<std::size_t>(l)].err2d);
    }
    out.push_back(cache.size() >= 2 ? spearman(v, e) : 0.0);
  }
  return out;
}

inline json cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& data, const std::string& split,
                     const std::optional<std::string>& out, const std::optional<std::string>& heatmap_dir,
                     int heatmap_count, std::ostream& log) {
  auto e = load_for_eval(cfg, ckpt, data, split);
  auto rep = evaluate(e.cache, e.flops, cfg.eval.gate, gate_of(e, cfg.eval.gate.kind),
                      AucRanges::for_image(e.ckpt.config.input_size));
  json j{{"format", "dirnet-eval"},
         {"resolved_config", cfg},
         {"model", e.ckpt.config},
         {"inputs", {{"checkpoint", git_blob_hash_file(ckpt)}, {"data", git_blob_hash_file(data)}}},
         {"split", split},
         {"samples", e.cache.size()},
         {"report", to_json(rep)},
         {"per_loop_loss", to_json(per_loop_report(e.cache))},
         {"spearman_var_err2d", variance_error_correlation(e.cache)}};
  if (heatmap_dir) {
    std::filesystem::create_directories(*heatmap_dir);
    const int h = e.ckpt.config.input_size;
    for (int i = 0; i < heatmap_count && i < static_cast<int>(e.cache.size()); ++i) {
      const auto& rec = e.cache.loops[static_cast<std::size_t>(i)][static_cast<std::size_t>(rep.exits[static_cast<std::size_t>(i)])];
      std::vector<double> j2d(rec.j2d.begin(), rec.j2d.end()), a2d(rec.alpha2d.begin(), rec.alpha2d.end());
      auto maps = confidence_heatmap(j2d, a2d, h);
      GrayImage sum{h, h, std::vector<double>(static_cast<std::size_t>(h) * h, 0.0)};
      for (const auto& m : maps)
        for (std::size_t k = 0; k < sum.pixels.size(); ++k) sum.pixels[k] = std::max(sum.pixels[k], m.pixels[k]);
      std::ostringstream name;
      name << *heatmap_dir << "/sample_" << std::setw(5) << std::setfill('0') << e.cache.indices[static_cast<std::size_t>(i)]
           << ".pgm";
      write_pgm(sum, name.str());
    }
  }
  if (out) write_text_file(*out, j.dump(2) + "\n");
  log << "avg loops " << rep.avg_loops << "  auc3d " << rep.auc3d << "  auc2d " << rep.auc2d << "  err2d "
      << rep.err2d_exit << " px  avg GFLOPs " << rep.avg_gflops << '\n';
  return j;
}

inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& ckpt, const std::string& data,
                                       const std::string& split, SweepKnob knob, std::vector<double> values,
                                       const std::string& out, std::ostream& log) {
  std::sort(values.begin(), values.end());
  auto e = load_for_eval(cfg, ckpt, data, split);
  auto kind = knob == SweepKnob::tau_var ? GateKind::threshold : GateKind::learned;
  auto rows = tradeoff_sweep(e.cache, e.flops, knob, values, cfg.eval.gate, gate_of(e, kind),
                             AucRanges::for_image(e.ckpt.config.input_size));
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text_file(out, csv.str());
  json side{{"format", "dirnet-sweep"},
            {"resolved_config", cfg},
            {"knob", knob == SweepKnob::tau_var ? "tau_var" : "tau_gate"},
            {"values", values},
            {"split", split},
            {"inputs", {{"checkpoint", git_blob_hash_file(ckpt)}, {"data", git_blob_hash_file(data)}}},
            {"csv", git_blob_hash_file(out)}};
  write_text_file(out + ".json", side.dump(2) + "\n");
  log << csv.str();
  return rows;
}

inline std::string format_flops(const FlopsTable& t) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "comp" << std::setw(28) << "layer" << std::right << std::setw(14) << "flops"
     << '\n';
  for (const auto& e : t.entries)
    os << std::left << std::setw(8) << e.component << std::setw(28) << e.layer << std::right << std::setw(14)
       << e.flops << '\n';
  os << "fe            " << t.fe << '\n'
     << "loop_base     " << t.loop_base << '\n'
     << "refine_extra  " << t.refine_extra << '\n'
     << "per_loop      " << t.per_loop << '\n';
  for (std::size_t l = 0; l < t.cumulative.size(); ++l) os << "exit@" << l << "        " << t.cumulative[l] << '\n';
  return os.str();
}

inline json to_json(const FlopsTable& t) {
  json entries = json::array();
  for (const auto& e : t.entries) entries.push_back({{"component", e.component}, {"layer", e.layer}, {"flops", e.flops}});
  return json{{"entries", entries},
              {"fe", t.fe},
              {"loop_base", t.loop_base},
              {"refine_extra", t.refine_extra},
              {"per_loop", t.per_loop},
              {"cumulative", t.cumulative}};
}

inline std::string skeleton_dump() {
  const auto& sk = hand_skeleton();
  std::ostringstream os;
  os << "joint  name          parent  rest position\n";
  for (int j = 0; j < kNumJoints; ++j) {
    auto p = sk.rest_position(j);
    os << std::setw(5) << j << "  " << std::left << std::setw(12) << sk.names[j] << std::right << std::setw(8)
       << sk.parent[j] << "  (" << p.x << ", " << p.y << ", " << p.z << ")\n";
  }
  return os.str();
}

/// Header of a dataset or checkpoint, by magic.
inline json inspect_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) == 0) {
    json h = read_checkpoint_header(path);
    h["content_hash"] = git_blob_hash_file(path);
    return h;
  }
  if (std::memcmp(magic, kDatasetMagic, 4) == 0) {
    std::uint32_t ver = 0;
    is.read(reinterpret_cast<char*>(&ver), 4);
    std::string line;
    std::getline(is, line);
    json h = json::parse(line);
    h["content_hash"] = git_blob_hash_file(path);
    return h;
  }
  throw std::runtime_error(path + ": unrecognised file (neither dataset nor checkpoint)");
}

}  // namespace dirnet
