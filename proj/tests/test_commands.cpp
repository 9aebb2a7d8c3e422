// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "ilora/commands.hpp"

using namespace ilora;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ilora_cmd_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ag::Matrix tile(float v, int res) { return ag::Matrix::Constant(3, res * res, v); }

void fake_run(const fs::path& dir, const std::string& kind, double value) {
  fs::create_directories(dir);
  EvalResult r;
  r.kind = parse_kind(kind);
  if (kind == "normal") {
    r.mean_deg = value;
    r.median_deg = value / 2;
    r.l1_x100 = value / 3;
  } else {
    r.rms = value;
    if (kind == "depth") r.delta_125 = 0.5;
  }
  r.n_pixels = 64;
  write_json(dir / "metrics.json", metrics_json(r, {"c0ffee", "", "d00d"}));
  write_ppm(tile_panel({{tile(0.5f, 4)}, {tile(-0.5f, 4)}}, 4), dir / "panel.ppm");
}

}  // namespace

TEST_CASE("panels tile row by row and survive a ppm round trip") {
  const auto p = tile_panel({{tile(-1, 4), tile(1, 4)}, {tile(0, 4)}}, 4);
  CHECK(p.width == 2 * 5 + 1);
  CHECK(p.height == 2 * 5 + 1);
  CHECK(p.data(0, 0) == 1.0f);                // border
  CHECK(p.data(0, 1 * p.width + 1) == -1.0f);  // first tile
  CHECK(p.data(0, 1 * p.width + 6) == 1.0f);   // second tile
  CHECK(p.data(0, 6 * p.width + 6) == -1.0f);  // padding for the short row

  const auto dir = temp_dir("ppm");
  fs::create_directories(dir);
  write_ppm(p, dir / "a.ppm");
  const auto back = read_ppm(dir / "a.ppm");
  CHECK(back.width == p.width);
  CHECK(back.height == p.height);
  CHECK((back.data - p.data).cwiseAbs().maxCoeff() <= 1.0f / 255.0f + 1e-6f);
  CHECK(slurp(dir / "a.ppm").rfind("P6\n11 11\n255\n", 0) == 0);
  CHECK_THROWS_AS(tile_panel({}, 4), ConfigError);
  CHECK_THROWS_AS(tile_panel({{tile(0, 3)}}, 4), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("ablation axes and values") {
  CHECK(parse_axis("cfg_scale") == AblationAxis::cfg_scale);
  CHECK_THROWS_AS(parse_axis("depth"), ConfigError);
  CHECK_NOTHROW(validate_ablation_values(AblationAxis::rank, {"2", "4", "8", "16", "32"}));
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::rank, {"3"}), ConfigError);
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::rank, {}), ConfigError);
  CHECK_NOTHROW(validate_ablation_values(AblationAxis::budget, {"250", "16000"}));
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::budget, {"500"}), ConfigError);
  CHECK_NOTHROW(validate_ablation_values(AblationAxis::selector, {"mid_block", "all_attn"}));
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::selector, {"gan_affine"}), ConfigError);
  CHECK_NOTHROW(validate_ablation_values(AblationAxis::steps, {"2", "50"}));
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::steps, {"100"}), ConfigError);
  CHECK_NOTHROW(validate_ablation_values(AblationAxis::cfg_scale, {"1", "13"}));
  CHECK_THROWS_AS(validate_ablation_values(AblationAxis::cfg_scale, {"2"}), ConfigError);
}

TEST_CASE("config reader echoes defaults and rejects strays") {
  ConfigReader c(json{{"rank", 4}, {"name", "x"}});
  CHECK(c.get("rank", 8) == 4);
  CHECK(c.get("steps", 100) == 100);
  CHECK(c.echo() == json{{"rank", 4}, {"steps", 100}});
  CHECK_THROWS_AS(c.finish(), ConfigError);
  CHECK(c.get<std::string>("name", "") == "x");
  CHECK_NOTHROW(c.finish());
  CHECK_THROWS_AS(c.get<std::string>("rank", ""), ConfigError);
  CHECK_THROWS_AS(c.require("data"), ConfigError);
  CHECK_THROWS_AS(ConfigReader(json::array()), ConfigError);
}

TEST_CASE("run directories are never reused") {
  const auto dir = temp_dir("rundir");
  CHECK_NOTHROW(create_run_dir(dir));
  CHECK_NOTHROW(create_run_dir(dir));  // still empty
  write_text(dir / "x", "1");
  CHECK_THROWS_AS(create_run_dir(dir), ConfigError);
  CHECK(slurp(dir / "x") == "1");
  fs::remove_all(dir);
}

TEST_CASE("commands reject bad requests before writing") {
  const auto dir = temp_dir("reject");
  CommandRequest r;
  r.command = "train-everything";
  r.out = dir / "out";
  CHECK_THROWS_AS(run_command(r), ConfigError);
  r.command = "forge-data";
  r.config = {{"n", 625}, {"colour", "red"}};
  CHECK_THROWS_AS(run_command(r), ConfigError);
  CHECK_FALSE(fs::exists(r.out));
  r.command = "report";
  r.config = json::object();
  CHECK_THROWS_AS(run_command(r), ConfigError);
  CHECK_THROWS_AS(parse_preset("slow"), ConfigError);
  CHECK(parse_preset("findings") == Preset::findings);
  fs::remove_all(dir);
}

TEST_CASE("report groups by kind and is byte-stable") {
  const auto dir = temp_dir("report");
  fake_run(dir / "n1", "normal", 20);
  fake_run(dir / "d1", "depth", 1.5);
  fake_run(dir / "n2", "normal", 30);
  const std::vector<fs::path> runs{dir / "n1", dir / "d1", dir / "n2"};
  cmd_report(runs, dir / "r1");
  cmd_report(runs, dir / "r2");
  for (const char* f : {"summary.txt", "summary.csv", "grid_normal.ppm", "grid_depth.ppm"}) {
    CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
  }
  const auto text = slurp(dir / "r1" / "summary.txt");
  CHECK(text.find("[normal]") < text.find("[depth]"));
  CHECK(text.find("n2") < text.find("[depth]"));
  CHECK(text.find("mean 20.00 deg") != std::string::npos);
  CHECK(slurp(dir / "r1" / "summary.csv").find("n1,normal,20.000000") != std::string::npos);
  const auto grid = read_ppm(dir / "r1" / "grid_normal.ppm");
  CHECK(grid.height == 2 * read_ppm(dir / "n1" / "panel.ppm").height);
  CHECK_THROWS_AS(cmd_report({}, dir / "r3"), ConfigError);
  CHECK_THROWS_AS(cmd_report(runs, dir / "r1"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("forge-data writes a self-describing run") {
  const auto dir = temp_dir("forge");
  CommandRequest r;
  r.command = "forge-data";
  r.config = {{"n", 40}};
  r.out = dir / "a";
  r.seed = 3;
  run_command(r);
  r.out = dir / "b";
  run_command(r);
  const auto cfg = read_json(dir / "a" / "config.json");
  CHECK(cfg.at("n") == 40);
  CHECK(cfg.at("resolution") == 32);
  CHECK(cfg.at("seed") == 3);
  const auto run = read_json(dir / "a" / "run.json");
  CHECK(run.at("command") == "forge-data");
  CHECK(run.at("artifacts").contains("manifest.json"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(load_dataset(dir / "a").samples.size() == 40);
  fs::remove_all(dir);
}
