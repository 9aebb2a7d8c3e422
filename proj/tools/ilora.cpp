// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// ilora <command> --config <path> --out <dir> --seed <u64>

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ilora/commands.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kDivergence = 3, kGate = 4 };

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "flat JSON config");
  if (needs_config) opt->required();
  cmd->add_option("--out", c.out, "run directory (must not exist)")->required();
  cmd->add_option("--seed", c.seed, "seed for every random stream");
}

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  return ilora::read_json(path);
}

}  // namespace

int main(int argc, char** argv) {
  ilora::tune_allocator();
  CLI::App app{"Intrinsic recovery with low-rank adapters on toy generative models"};
  app.require_subcommand(1);

  Common common;
  std::vector<CLI::App*> plain;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"forge-data", "render a synthetic scene dataset"},
           {"pretrain", "pretrain a diffusion, GAN or VQ backbone"},
           {"train-lora", "train intrinsic adapters on a frozen backbone"},
           {"train-baseline", "linear probe or full fine-tune baseline"},
           {"ablate", "one-axis sweep (rank, budget, selector, steps, cfg_scale)"},
           {"correlate", "pretraining quality against recovery error"}}) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    plain.push_back(cmd);
  }

  auto* eval = app.add_subcommand("evaluate", "score a backbone + adapters, or a constant predictor");
  add_common(eval, common);
  std::optional<int> steps;
  std::optional<double> cfg_scale;
  bool single = false, multi = false, no_condition = false, align = false;
  eval->add_option("--steps", steps, "sampling steps (multi-step mode)");
  eval->add_option("--cfg-scale", cfg_scale, "guidance scale (multi-step mode)");
  auto* single_flag = eval->add_flag("--single-step", single, "one forward pass at t=1");
  eval->add_flag("--multi-step", multi, "guided DDIM from the condition image")->excludes(single_flag);
  eval->add_flag("--no-condition", no_condition, "zero the condition image (multi-step)");
  eval->add_flag("--align-affine", align, "per-image scale and shift before scoring");

  auto* report = app.add_subcommand("report", "summarize run directories");
  std::vector<std::string> runs;
  std::string report_out;
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", report_out, "report directory")->required();

  auto* e2e = app.add_subcommand("e2e", "one-command reproduction");
  std::string preset = "quick";
  std::string e2e_out;
  std::uint64_t e2e_seed = 0;
  e2e->add_option("--preset", preset, "quick or findings");
  e2e->add_option("--out", e2e_out, "output directory")->required();
  e2e->add_option("--seed", e2e_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      ilora::cmd_report(dirs, report_out);
    } else if (e2e->parsed()) {
      ilora::cmd_end_to_end(ilora::parse_preset(preset), e2e_out, e2e_seed);
    } else {
      ilora::CommandRequest request;
      request.out = common.out;
      request.seed = common.seed;
      request.config = load_config(common.config);
      if (eval->parsed()) {
        request.command = "evaluate";
        if (steps) request.config["sample_steps"] = *steps;
        if (cfg_scale) request.config["cfg_scale"] = *cfg_scale;
        if (single) request.config["mode"] = "single";
        if (multi) request.config["mode"] = "multi";
        if (no_condition) request.config["no_condition"] = true;
        if (align) request.config["align_affine"] = true;
      } else {
        for (auto* cmd : plain) {
          if (cmd->parsed()) request.command = cmd->get_name();
        }
      }
      ilora::run_command(request);
    }
  } catch (const ilora::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ilora::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kConfig;
  } catch (const ilora::DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDivergence;
  } catch (const ilora::GateError& e) {
    std::fprintf(stderr, "invariant gate failed: %s\n", e.what());
    return kGate;
  }
  return kOk;
}
