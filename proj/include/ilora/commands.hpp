// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// The commands behind the `ilora` tool. Each command reads a flat JSON
// config, writes a fresh run directory and echoes the full config (defaults
// included) into it as config.json. Apart from run.json and the timings in
// log.jsonl / resources.json, every artifact is a pure function of
// (config, seed).

#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ilora/experiments.hpp"

namespace ilora {

/// Typed access to a flat JSON config that remembers every key it served.
class ConfigReader {
 public:
  explicit ConfigReader(nlohmann::json config);

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!config_.contains(key) || config_.at(key).is_null()) {
      echo_[key] = fallback;
      return fallback;
    }
    try {
      T v = config_.at(key).get<T>();
      echo_[key] = v;
      return v;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
  }
  std::string require(const std::string& key);
  bool has(const std::string& key) const { return config_.contains(key); }

  /// Throws ConfigError naming the first key nobody asked for.
  void finish() const;
  /// The config as consumed, defaults filled in.
  const nlohmann::json& echo() const { return echo_; }

 private:
  nlohmann::json config_;
  nlohmann::json echo_ = nlohmann::json::object();
  std::set<std::string> seen_;
};

/// Creates `dir`, refusing to reuse an existing non-empty directory.
void create_run_dir(const std::filesystem::path& dir);
void write_text(const std::filesystem::path& path, const std::string& text);
/// Two-space indented JSON plus a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct CommandRequest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;  // report: run directories
};

/// Dispatches to the command named in `request`. Errors surface as
/// ConfigError, DivergenceError, GateError or FormatError.
void run_command(const CommandRequest& request);

void cmd_forge_data(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_pretrain(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_train_lora(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_train_baseline(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_evaluate(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_ablate(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_correlate(ConfigReader& config, const std::filesystem::path& out, std::uint64_t seed);
void cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

enum class Preset { quick, findings };
Preset parse_preset(std::string_view text);

/// One-command reproduction. quick: forge, pretrain the diffusion UNet,
/// train normals and depth adapters, evaluate against constant baselines.
/// findings adds the budget and rank runs, baselines, the correlation study,
/// the multi-step pipeline and the GAN / VQ paths, and writes findings.json.
void cmd_end_to_end(Preset preset, const std::filesystem::path& out, std::uint64_t seed);

}  // namespace ilora
