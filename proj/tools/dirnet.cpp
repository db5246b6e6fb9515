// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

// dirnet: data generation, training, gating and evaluation from the shell.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dirnet/commands.hpp"

namespace {

using namespace dirnet;

struct Common {
  std::optional<std::string> config;
  Overrides ov;
};

void add_model_flags(CLI::App* c, Common& cm) {
  c->add_option("--loop-point", cm.ov.loop_point, "Backbone phase where the refiner starts (1-4)");
  c->add_option("--l-max", cm.ov.l_max, "Maximum refinement loop index");
  c->add_option("--amg-mode", cm.ov.amg_mode, "amg | direct_upsample | none");
}

void add_common(CLI::App* c, Common& cm) {
  c->add_option("--config", cm.config, "JSON run config")->check(CLI::ExistingFile);
  c->add_option("--seed", cm.ov.seed, "Seed of this stage");
  c->add_option("--jobs", cm.ov.jobs, "Worker threads for generation and evaluation");
}

void add_gate_flags(CLI::App* c, Common& cm) {
  c->add_option("--gate", cm.ov.gate, "full | threshold | learned");
  c->add_option("--tau-var", cm.ov.tau_var, "Variance threshold (px^2)");
  c->add_option("--tau-gate", cm.ov.tau_gate, "Gate softmax temperature");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic iterative refinement for hand keypoint estimation"};
  app.require_subcommand(1);

  Common gen_c, train_c, gate_c, eval_c, sweep_c, flops_c;
  std::string out, data, ckpt, split = "val", knob = "tau_var";
  std::optional<std::string> log_path, heatmaps;
  int heatmap_count = 8;
  std::vector<double> values;
  bool as_json = false, skeleton = false, full = false;
  std::vector<std::string> inspect_paths;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset");
  add_common(gen, gen_c);
  gen->add_option("--out", out, "Dataset file")->required();

  auto* train = app.add_subcommand("train", "Train the network");
  add_common(train, train_c);
  add_model_flags(train, train_c);
  train->add_option("--protocol", train_c.ov.protocol, "progressive | e2e");
  train->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Checkpoint file")->required();
  train->add_option("--log", log_path, "Also write the training log as JSON");

  auto* tgate = app.add_subcommand("train-gate", "Train the exit gate on a trained network");
  add_common(tgate, gate_c);
  tgate->add_option("--lambda", gate_c.ov.lambda, "Weight of the loss in the reward");
  tgate->add_option("--tau-gate", gate_c.ov.tau_gate, "Softmax temperature while training");
  tgate->add_option("--ckpt", ckpt, "Trained network checkpoint")->required()->check(CLI::ExistingFile);
  tgate->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  tgate->add_option("--out", out, "Output checkpoint")->required();
  tgate->add_option("--trajectories", log_path, "CSV of the final epoch's sampled trajectories");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint under an exit policy");
  add_common(ev, eval_c);
  add_gate_flags(ev, eval_c);
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train | val | test | all");
  ev->add_option("--out", log_path, "Report JSON");
  ev->add_option("--heatmaps", heatmaps, "Directory for confidence heatmaps (PGM)");
  ev->add_option("--heatmap-count", heatmap_count, "Samples to render heatmaps for");

  auto* sw = app.add_subcommand("sweep", "Accuracy/compute trade-off over a gating knob");
  add_common(sw, sweep_c);
  add_gate_flags(sw, sweep_c);
  sw->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sw->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  sw->add_option("--split", split, "train | val | test | all");
  sw->add_option("--knob", knob, "tau_var | tau_gate");
  sw->add_option("--values", values, "Knob values")->required()->delimiter(',');
  sw->add_option("--out", out, "CSV file (a .json sidecar records config and inputs)")->required();

  auto* fl = app.add_subcommand("flops", "Print the FLOPs table of a model config");
  fl->add_option("--config", flops_c.config, "JSON run config")->check(CLI::ExistingFile);
  add_model_flags(fl, flops_c);
  fl->add_flag("--json", as_json, "Emit JSON");

  auto* ins = app.add_subcommand("inspect", "Print a dataset or checkpoint header");
  ins->add_option("files", inspect_paths, "Dataset or checkpoint files");
  ins->add_flag("--skeleton", skeleton, "Dump the hand skeleton");
  ins->add_flag("--full", full, "Include the training log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      auto cfg = resolve_config(gen_c.config, gen_c.ov, SeedTarget::gen);
      cmd_gen_data(cfg, out, std::cerr);
    } else if (*train) {
      auto cfg = resolve_config(train_c.config, train_c.ov, SeedTarget::train);
      cmd_train(cfg, data, out, log_path, std::cerr);
    } else if (*tgate) {
      auto cfg = resolve_config(gate_c.config, gate_c.ov, SeedTarget::gate);
      cmd_train_gate(cfg, ckpt, data, out, log_path, std::cerr);
    } else if (*ev) {
      auto cfg = resolve_config(eval_c.config, eval_c.ov, SeedTarget::eval);
      auto j = cmd_eval(cfg, ckpt, data, split, log_path, heatmaps, heatmap_count, std::cerr);
      if (!log_path) std::cout << j.dump(2) << '\n';
    } else if (*sw) {
      auto cfg = resolve_config(sweep_c.config, sweep_c.ov, SeedTarget::eval);
      cmd_sweep(cfg, ckpt, data, split, sweep_knob_from_string(knob), values, out, std::cerr);
    } else if (*fl) {
      auto cfg = resolve_config(flops_c.config, flops_c.ov, SeedTarget::train);
      auto t = count_flops(cfg.model);
      std::cout << (as_json ? to_json(t).dump(2) + "\n" : format_flops(t));
    } else if (*ins) {
      if (skeleton) std::cout << skeleton_dump();
      for (const auto& p : inspect_paths) {
        json h = inspect_file(p);
        if (!full) h.erase("log");
        std::cout << p << ":\n" << h.dump(2) << '\n';
      }
      if (!skeleton && inspect_paths.empty()) throw ConfigError("inspect: give a file or --skeleton");
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
