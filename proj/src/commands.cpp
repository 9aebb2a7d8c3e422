// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "ilora/checkpoint.hpp"
#include "ilora/metrics.hpp"
#include "ilora/pretrain.hpp"

namespace ilora {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- config and files ---------------------------------------------------------

ConfigReader::ConfigReader(json config) : config_(std::move(config)) {
  if (config_.is_null()) config_ = json::object();
  if (!config_.is_object()) throw ConfigError("config must be a JSON object");
}

std::string ConfigReader::require(const std::string& key) {
  if (!config_.contains(key)) throw ConfigError("config key '" + key + "' is required");
  return get<std::string>(key, "");
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : config_.items()) {
    if (!seen_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

void create_run_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("no output directory given");
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw ConfigError("run directory " + dir.string() + " already exists; runs are never overwritten");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("short write to " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

std::string hex_of_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return to_hex(sha256(bytes));
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// config.json, then run.json listing every artifact with its digest.
void seal_run(const fs::path& out, ConfigReader& config, std::string_view command, std::uint64_t seed) {
  json echo = config.echo();
  echo["seed"] = seed;
  write_json(out / "config.json", echo);
  json artifacts = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) artifacts[f.filename().string()] = hex_of_file(f);
  write_json(out / "run.json", {{"command", command},
                                {"seed", seed},
                                {"config_hash", to_hex(sha256(echo.dump()))},
                                {"created", utc_timestamp()},
                                {"artifacts", artifacts}});
}

std::string config_hash(const ConfigReader& config, std::uint64_t seed) {
  json echo = config.echo();
  echo["seed"] = seed;
  return to_hex(sha256(echo.dump()));
}

Dataset dataset_from(ConfigReader& config) { return load_dataset(config.require("data")); }

std::unique_ptr<Backbone> backbone_from(ConfigReader& config) { return load_checkpoint(config.require("backbone")); }

template <typename T>
T* as(Backbone& b) {
  return dynamic_cast<T*>(&b);
}

TrainConfig train_config_from(ConfigReader& c, TrainConfig base, std::uint64_t seed) {
  base.kind = parse_kind(c.get<std::string>("kind", std::string(to_string(base.kind))));
  base.budget = c.get("budget", base.budget);
  base.rank = c.get("rank", base.rank);
  base.selector = parse_selector(c.get<std::string>("selector", std::string(to_string(base.selector))));
  base.learning_rate = c.get("learning_rate", base.learning_rate);
  base.batch_size = c.get("batch_size", base.batch_size);
  base.max_steps = c.get("max_steps", base.max_steps);
  base.distance = parse_distance(c.get<std::string>("distance", std::string(to_string(base.distance))));
  base.train_task_token = c.get("train_task_token", base.train_task_token);
  base.log_every = c.get("log_every", base.log_every);
  base.seed = seed;
  base.validate();
  return base;
}

std::vector<int> eval_indices(ConfigReader& c, const Dataset& ds, const std::string& fallback = "test") {
  auto idx = ds.split_indices(c.get<std::string>("split", fallback));
  const int limit = c.get("eval_limit", 0);
  if (limit < 0) throw ConfigError("eval_limit must be >= 0");
  if (limit > 0 && static_cast<int>(idx.size()) > limit) idx.resize(static_cast<std::size_t>(limit));
  if (idx.empty()) throw ConfigError("evaluation split is empty");
  return idx;
}

std::vector<int> first(const std::vector<int>& v, int n) {
  return {v.begin(), v.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(v.size()))};
}

void write_panel(const fs::path& path, const DensePredictor& predictor, const Dataset& ds,
                 const std::vector<int>& indices, IntrinsicKind kind) {
  const auto idx = first(indices, 4);
  write_ppm(tile_panel({rgb_tiles(ds, idx), target_tiles(ds, idx, kind), predict_tiles(predictor, ds, idx)},
                       ds.manifest.resolution),
            path);
}

json resources_json(std::string_view method, const TrainLog& log, std::size_t trainable) {
  return {{"method", method},
          {"steps", log.steps},
          {"steps_per_sec", log.steps_per_sec()},
          {"wall_ms", log.wall_ms},
          {"peak_mem_bytes", log.peak_mem_bytes},
          {"trainable_params", trainable}};
}

std::vector<std::string> value_strings(const json& values) {
  if (!values.is_array()) throw ConfigError("ablation values must be an array");
  std::vector<std::string> out;
  for (const auto& v : values) out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
  return out;
}

std::vector<Image> reference_images(const Dataset& ds, int n) {
  std::vector<int> idx = ds.split_indices("val");
  for (int i : ds.split_indices("test")) idx.push_back(i);
  if (static_cast<int>(idx.size()) < n) throw ConfigError("not enough held-out images for the quality proxy");
  idx.resize(static_cast<std::size_t>(n));
  return dataset_images(ds, idx);
}

/// Largest output deviation of fresh adapters from the base on `rgb`.
double identity_gap(UNet& net, const AdapterSet& set, const ag::Tensor& rgb, IntrinsicKind kind) {
  ag::NoGradGuard guard;
  const ag::Matrix with = dense_forward(net, rgb, kind).value();
  net.clear_slots();
  const ag::Matrix without = dense_forward(net, rgb, kind).value();
  attach(net, set);
  return (with - without).cwiseAbs().maxCoeff();
}

}  // namespace

// --- forge-data ---------------------------------------------------------------

void cmd_forge_data(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const int n = config.get("n", 625);
  const int resolution = config.get("resolution", 32);
  const auto difficulty = config.get<std::string>("difficulty", "standard");
  config.finish();
  if (difficulty != "standard" && difficulty != "easy") throw ConfigError("difficulty must be standard or easy");
  create_run_dir(out);
  const auto ds = forge_dataset(n, seed, resolution, difficulty == "easy" ? Difficulty::easy : Difficulty::standard);
  write_dataset(ds, out);
  seal_run(out, config, "forge-data", seed);
}

// --- pretrain -------------------------------------------------------------------

void cmd_pretrain(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  const auto family = config.get<std::string>("family", "diffusion");
  PretrainConfig pc;
  pc.steps = config.get("steps", pc.steps);
  pc.batch_size = config.get("batch_size", pc.batch_size);
  pc.learning_rate = config.get("learning_rate", pc.learning_rate);
  pc.checkpoint_steps = config.get("checkpoint_steps", pc.checkpoint_steps);
  pc.parameterization = parse_parameterization(config.get<std::string>("parameterization", "v"));
  pc.log_every = config.get("log_every", pc.log_every);
  pc.divergence_window = config.get("divergence_window", pc.divergence_window);
  pc.seed = seed;
  const json model_cfg = config.get("model", json::object());
  const int proxy_images = config.get("proxy_images", 64);
  const int sample_steps = config.get("sample_steps", 10);
  config.finish();
  if (proxy_images < 32) throw ConfigError("proxy_images must be >= 32");
  create_run_dir(out);

  const auto save = [&](int step, const Backbone& b) {
    save_checkpoint(b, out / ("ckpt_" + std::to_string(step) + ".ilck"));
  };
  const std::uint64_t init_seed = mix_seed(seed, 1);
  json summary{{"family", family}};
  PretrainReport report;
  if (family == "diffusion") {
    auto mc = UNetConfig::from_json(model_cfg);
    mc.resolution = ds.manifest.resolution;
    UNet net(mc, init_seed);
    const auto schedule = default_schedule(pc.parameterization);
    const auto reference = reference_images(ds, proxy_images);
    const std::uint64_t proxy_seed = mix_seed(seed, 2);
    const double init_proxy =
        quality_proxy(generate_images(net, schedule, proxy_images, sample_steps, proxy_seed), reference, proxy_seed).value;
    report = pretrain_diffusion(net, ds, pc, save);
    save_checkpoint(net, out / "model.ilck");
    summary["init_quality_proxy"] = init_proxy;
    summary["quality_proxy"] =
        quality_proxy(generate_images(net, schedule, proxy_images, sample_steps, proxy_seed), reference, proxy_seed).value;
  } else if (family == "gan") {
    auto mc = StyleConfig::from_json(model_cfg);
    mc.resolution = ds.manifest.resolution;
    StyleGenerator gen(mc, init_seed);
    const auto reference = reference_images(ds, proxy_images);
    const std::uint64_t proxy_seed = mix_seed(seed, 2);
    const double init_proxy = quality_proxy(generate_images(gen, proxy_images, proxy_seed), reference, proxy_seed).value;
    report = pretrain_gan(gen, ds, pc, save);
    save_checkpoint(gen, out / "model.ilck");
    summary["init_quality_proxy"] = init_proxy;
    summary["quality_proxy"] = quality_proxy(generate_images(gen, proxy_images, proxy_seed), reference, proxy_seed).value;
  } else if (family == "vq") {
    auto mc = VQConfig::from_json(model_cfg);
    mc.resolution = ds.manifest.resolution;
    VQAutoencoder vq(mc, init_seed);
    report = pretrain_vq(vq, ds, pc, save);
    save_checkpoint(vq, out / "model.ilck");
    summary["val_psnr"] = report.val_psnr;
    summary["mean_image_psnr"] = report.mean_image_psnr;
    summary["dead_codes"] = report.dead_codes;
  } else {
    throw ConfigError("unknown family '" + family + "' (diffusion, gan, vq)");
  }
  summary["steps"] = report.log.steps;
  summary["final_loss"] = report.log.final_loss;
  summary["warnings"] = report.warnings;
  report.log.write_jsonl(out / "log.jsonl");
  write_json(out / "pretrain.json", summary);
  write_json(out / "resources.json", resources_json("pretrain", report.log, 0));
  seal_run(out, config, "pretrain", seed);
}

// --- train-lora ---------------------------------------------------------------

void cmd_train_lora(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  auto backbone = backbone_from(config);
  const bool unet = as<UNet>(*backbone) != nullptr;
  const TargetSelector default_selector = unet                                  ? TargetSelector::all_attn
                                          : as<StyleGenerator>(*backbone) != nullptr ? TargetSelector::gan_affine
                                                                                     : TargetSelector::vq_decoder_attn;
  const TrainConfig defaults = unet ? TrainConfig::dense_defaults() : TrainConfig::generative_defaults(default_selector);
  const TrainConfig cfg = train_config_from(config, defaults, seed);
  const auto mode = config.get<std::string>("mode", "single");
  if (mode != "single" && mode != "multi") throw ConfigError("mode must be single or multi");
  const auto idx = eval_indices(config, ds);
  const int sample_steps = config.get("sample_steps", 10);
  const double cfg_scale = config.get("cfg_scale", 3.0);
  const int oracle_steps = config.get("oracle_steps", 1500);
  const int eval_latents = config.get("eval_latents", 64);
  config.finish();
  create_run_dir(out);

  std::vector<std::string> base_names;
  for (const auto& w : backbone->named_weights()) base_names.push_back(w.name);
  const std::string base_hash = to_hex(backbone->weights_hash(base_names));
  AdapterSet set;
  TrainLog log;
  EvalResult result;
  std::optional<EvalResult> constant;
  DensePredictor predictor;
  const NoiseSchedule schedule = default_schedule(Parameterization::v);
  CfgParams sampling;
  sampling.steps = sample_steps;
  sampling.scale = cfg_scale;

  if (auto* net = as<UNet>(*backbone)) {
    const std::vector<int> probe(idx.begin(), idx.begin() + std::min<std::ptrdiff_t>(4, std::ssize(idx)));
    if (mode == "multi") {
      net->extend_input_channels();
      const std::string cond_hash = to_hex(net->weights_hash({"in_conv.cond"}));
      set = inject(*net, cfg.selector, cfg.rank, mix_seed(cfg.seed, 7), cfg.kind);
      log = train_lora_multistep(*net, set, ds, cfg, schedule);
      if (to_hex(net->weights_hash({"in_conv.cond"})) != cond_hash) throw GateError("frozen condition weights moved");
      predictor = multi_step_predictor(*net, cfg.kind, schedule, sampling, mix_seed(seed, 3));
    } else {
      set = inject(*net, cfg.selector, cfg.rank, mix_seed(cfg.seed, 7), cfg.kind);
      const double gap = identity_gap(*net, set, image_batch(ds, probe), cfg.kind);
      if (gap > 1e-6) throw GateError("fresh adapters changed the output by " + std::to_string(gap));
      log = train_lora_dense(*net, set, ds, cfg);
      predictor = dense_predictor(*net, cfg.kind);
    }
    result = evaluate(predictor, ds, idx, cfg.kind);
    constant = evaluate(constant_predictor(ds, cfg.kind), ds, idx, cfg.kind);
    write_panel(out / "panel.ppm", predictor, ds, idx, cfg.kind);
  } else {
    OracleConfig oc;
    oc.steps = oracle_steps;
    oc.seed = mix_seed(seed, 4);
    const auto oracle = train_oracle_predictor(ds, cfg.kind, oc);
    set = inject(*backbone, cfg.selector, cfg.rank, mix_seed(cfg.seed, 7), cfg.kind);
    GenerativeEval ge;
    if (auto* gen = as<StyleGenerator>(*backbone)) {
      log = train_lora_generative(*gen, set, *oracle.oracle, cfg);
      ge = evaluate_generative(*gen, *oracle.oracle, cfg.kind, ds.manifest.codec, eval_latents, mix_seed(seed, 41));
    } else {
      auto& vq = dynamic_cast<VQAutoencoder&>(*backbone);
      log = train_lora_generative(vq, set, *oracle.oracle, ds, cfg);
      ge = evaluate_generative(vq, *oracle.oracle, cfg.kind, ds);
    }
    result = ge.adapted;
    constant = ge.constant;
    write_json(out / "oracle.json", metrics_json(oracle.val, {}));
  }
  backbone->clear_slots();
  if (to_hex(backbone->weights_hash(base_names)) != base_hash) {
    throw GateError("base weights moved during adapter training");
  }

  save_adapters(set, out / "adapters.ilra");
  log.write_jsonl(out / "log.jsonl");
  const Provenance prov{config_hash(config, seed), to_hex(set.hash()), to_hex(ds.manifest_hash())};
  write_json(out / "metrics.json", metrics_json(result, prov));
  if (constant) write_json(out / "constant.json", metrics_json(*constant, prov));
  json res = resources_json("lora", log, set.parameter_count());
  res["param_fraction"] = param_fraction(set, *backbone);
  write_json(out / "resources.json", res);
  seal_run(out, config, "train-lora", seed);
}

// --- train-baseline -------------------------------------------------------------

void cmd_train_baseline(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  auto backbone = backbone_from(config);
  auto* net = as<UNet>(*backbone);
  if (net == nullptr) throw ConfigError("baselines run on the diffusion unet");
  const auto method = config.get<std::string>("method", "linear_probe");
  const TrainConfig cfg = train_config_from(config, TrainConfig::dense_defaults(), seed);
  const auto idx = eval_indices(config, ds);
  config.finish();
  if (method != "linear_probe" && method != "full_finetune") {
    throw ConfigError("method must be linear_probe or full_finetune");
  }
  create_run_dir(out);
  const std::string base_hash = to_hex(net->weights_hash());
  const Provenance prov{config_hash(config, seed), "", to_hex(ds.manifest_hash())};
  if (method == "linear_probe") {
    const auto run = train_linear_probe(*net, ds, cfg);
    if (to_hex(net->weights_hash()) != base_hash) throw GateError("probe training moved the backbone");
    const auto predictor = probe_predictor(*net, *run.head, cfg.kind);
    write_json(out / "metrics.json", metrics_json(evaluate(predictor, ds, idx, cfg.kind), prov));
    write_panel(out / "panel.ppm", predictor, ds, idx, cfg.kind);
    run.log.write_jsonl(out / "log.jsonl");
    write_json(out / "resources.json", resources_json(method, run.log, run.head->parameter_count()));
  } else {
    const auto run = full_finetune(*net, ds, cfg);
    if (to_hex(run.model->weights_hash()) == base_hash) throw GateError("fine-tuning left the weights unchanged");
    const auto predictor = dense_predictor(*run.model, cfg.kind);
    write_json(out / "metrics.json", metrics_json(evaluate(predictor, ds, idx, cfg.kind), prov));
    write_panel(out / "panel.ppm", predictor, ds, idx, cfg.kind);
    save_checkpoint(*run.model, out / "model.ilck");
    run.log.write_jsonl(out / "log.jsonl");
    std::size_t trainable = 0;
    for (const auto& p : run.model->trainable_parameters()) trainable += static_cast<std::size_t>(p.value().size());
    write_json(out / "resources.json", resources_json(method, run.log, trainable));
  }
  seal_run(out, config, "train-baseline", seed);
}

// --- evaluate -----------------------------------------------------------------

void cmd_evaluate(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  const auto kind = parse_kind(config.get<std::string>("kind", "normal"));
  const auto predictor_kind = config.get<std::string>("predictor", "model");
  const auto mode = config.get<std::string>("mode", "single");
  const auto adapters_path = config.get<std::string>("adapters", "");
  const int steps = config.get("sample_steps", 10);
  const double scale = config.get("cfg_scale", 3.0);
  const bool no_condition = config.get("no_condition", false);
  const bool align = config.get("align_affine", false);
  const auto idx = eval_indices(config, ds);
  if (predictor_kind != "model" && predictor_kind != "constant") throw ConfigError("predictor must be model or constant");
  if (mode != "single" && mode != "multi") throw ConfigError("mode must be single or multi");
  std::unique_ptr<Backbone> backbone;
  if (predictor_kind == "model") backbone = backbone_from(config);
  config.finish();
  create_run_dir(out);

  Provenance prov{config_hash(config, seed), "", to_hex(ds.manifest_hash())};
  DensePredictor predictor;
  const NoiseSchedule schedule = default_schedule(Parameterization::v);
  if (predictor_kind == "constant") {
    predictor = constant_predictor(ds, kind);
  } else {
    auto* net = as<UNet>(*backbone);
    if (net == nullptr) throw ConfigError("evaluate runs dense predictors on the diffusion unet");
    if (mode == "multi") net->extend_input_channels();
    if (!adapters_path.empty()) {
      const auto set = load_adapters(adapters_path, *net, kind);
      attach(*net, set);
      prov.adapters_hash = to_hex(set.hash());
    }
    if (mode == "multi") {
      CfgParams p;
      p.steps = steps;
      p.scale = scale;
      predictor = multi_step_predictor(*net, kind, schedule, p, mix_seed(seed, 3), no_condition);
    } else {
      predictor = dense_predictor(*net, kind);
    }
  }
  write_json(out / "metrics.json", metrics_json(evaluate(predictor, ds, idx, kind, 16, align), prov));
  write_panel(out / "panel.ppm", predictor, ds, idx, kind);
  seal_run(out, config, "evaluate", seed);
}

// --- ablate ---------------------------------------------------------------------

void cmd_ablate(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  auto backbone = backbone_from(config);
  auto* net = as<UNet>(*backbone);
  if (net == nullptr) throw ConfigError("ablations run on the diffusion unet");
  const auto axis = parse_axis(config.require("axis"));
  const auto values = value_strings(config.get("values", json::array()));
  const TrainConfig cfg = train_config_from(config, TrainConfig::dense_defaults(), seed);
  AblationOptions options;
  options.split = config.get<std::string>("split", options.split);
  options.eval_limit = config.get("eval_limit", options.eval_limit);
  options.panel_images = config.get("panel_images", options.panel_images);
  options.sampling.steps = config.get("sample_steps", options.sampling.steps);
  options.sampling.scale = config.get("cfg_scale", options.sampling.scale);
  options.sample_seed = mix_seed(seed, 3);
  config.finish();
  validate_ablation_values(axis, values);
  create_run_dir(out);
  const auto table = ablate(axis, values, *net, ds, cfg, options);
  write_text(out / "ablation.csv", table.csv());
  write_text(out / "ablation.txt", table.text());
  write_ppm(table.panel, out / "panel.ppm");
  seal_run(out, config, "ablate", seed);
}

// --- correlate ------------------------------------------------------------------

void cmd_correlate(ConfigReader& config, const fs::path& out, std::uint64_t seed) {
  const Dataset ds = dataset_from(config);
  const json entries = config.get("checkpoints", json::array());
  TrainConfig defaults = TrainConfig::dense_defaults();
  const TrainConfig cfg = train_config_from(config, defaults, seed);
  CorrelationOptions options;
  options.proxy_images = config.get("proxy_images", options.proxy_images);
  options.sample_steps = config.get("sample_steps", options.sample_steps);
  options.split = config.get<std::string>("split", options.split);
  options.proxy_seed = mix_seed(seed, 2);
  const std::uint64_t control_seed = config.get<std::uint64_t>("control_seed", mix_seed(seed, 99));
  config.finish();
  if (!entries.is_array() || entries.size() < 3) throw ConfigError("correlate needs at least 3 checkpoints");
  std::vector<PretrainCheckpoint> checkpoints;
  for (const auto& e : entries) {
    PretrainCheckpoint c;
    const auto path = e.at("path").get<std::string>();
    c.pretrain_steps = e.at("steps").get<int>();
    c.name = e.value("name", fs::path(path).stem().string());
    auto model = load_checkpoint_as<UNet>(path);
    c.model = std::shared_ptr<const UNet>(model.release());
    checkpoints.push_back(std::move(c));
  }
  create_run_dir(out);
  const UNet control(checkpoints.front().model->config(), control_seed);
  const auto report = correlation_experiment(checkpoints, control, ds, cfg, options);
  write_text(out / "correlation.csv", report.csv());
  const auto& best = report.best_checkpoint();
  write_json(out / "correlation.json", {{"spearman", report.spearman},
                                        {"control_mean_deg", report.control().mean_deg},
                                        {"best_checkpoint", best.checkpoint},
                                        {"best_mean_deg", best.mean_deg},
                                        {"control_over_best", report.control().mean_deg / best.mean_deg}});
  seal_run(out, config, "correlate", seed);
}

// --- report ---------------------------------------------------------------------

namespace {

std::string run_name(const fs::path& dir) {
  const auto p = dir.lexically_normal();
  return p.has_filename() ? p.filename().string() : p.parent_path().filename().string();
}

std::string cell(const json& j, const char* key, int decimals = 4) {
  if (!j.contains(key) || j.at(key).is_null()) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, j.at(key).get<double>());
  return buf;
}

Panel stack_panels(const std::vector<Panel>& panels) {
  int width = 0, height = 0;
  for (const auto& p : panels) {
    width = std::max(width, p.width);
    height += p.height;
  }
  Panel out;
  out.width = width;
  out.height = height;
  out.data = ag::Matrix::Ones(3, static_cast<Eigen::Index>(width) * height);
  int y0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y) {
      out.data.middleCols(static_cast<Eigen::Index>(y0 + y) * width, p.width) =
          p.data.middleCols(static_cast<Eigen::Index>(y) * p.width, p.width);
    }
    y0 += p.height;
  }
  return out;
}

}  // namespace

void cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<std::string> kinds;
  std::map<std::string, std::vector<std::pair<std::string, json>>> by_kind;
  std::map<std::string, std::vector<Panel>> panels;
  for (const auto& dir : runs) {
    const auto metrics = read_json(dir / "metrics.json");
    const auto kind = metrics.at("kind").get<std::string>();
    if (!by_kind.contains(kind)) kinds.push_back(kind);
    by_kind[kind].emplace_back(run_name(dir), metrics);
    if (fs::exists(dir / "panel.ppm")) panels[kind].push_back(read_ppm(dir / "panel.ppm"));
  }
  create_run_dir(out);
  std::ostringstream text, csv;
  csv << "run,kind,mean_deg,median_deg,l1_x100,rms,delta_125,n_pixels,config_hash,adapters_hash,"
         "dataset_manifest_hash\n";
  for (const auto& kind : kinds) {
    text << "[" << kind << "]\n";
    for (const auto& [name, m] : by_kind[kind]) {
      const auto& prov = m.at("provenance");
      text << "  " << name << ":";
      if (kind == "normal") {
        text << " mean " << cell(m, "mean_deg", 2) << " deg, median " << cell(m, "median_deg", 2) << " deg, L1x100 "
             << cell(m, "l1_x100", 2);
      } else if (kind == "depth") {
        text << " rms " << cell(m, "rms") << ", delta<1.25 " << cell(m, "delta_125");
      } else {
        text << " rms " << cell(m, "rms");
      }
      text << "  [config " << prov.value("config_hash", "").substr(0, 12) << ", data "
           << prov.value("dataset_manifest_hash", "").substr(0, 12) << "]\n";
      csv << name << ',' << kind << ',' << cell(m, "mean_deg", 6) << ',' << cell(m, "median_deg", 6) << ','
          << cell(m, "l1_x100", 6) << ',' << cell(m, "rms", 6) << ',' << cell(m, "delta_125", 6) << ','
          << m.value("n_pixels", 0L) << ',' << prov.value("config_hash", "") << ',' << prov.value("adapters_hash", "")
          << ',' << prov.value("dataset_manifest_hash", "") << '\n';
    }
    if (!panels[kind].empty()) write_ppm(stack_panels(panels[kind]), out / ("grid_" + kind + ".ppm"));
  }
  write_text(out / "summary.txt", text.str());
  write_text(out / "summary.csv", csv.str());
}

// --- dispatch -------------------------------------------------------------------

void run_command(const CommandRequest& request) {
  const auto& c = request.command;
  if (c == "report") {
    std::vector<fs::path> runs = request.inputs;
    if (request.config.contains("runs")) {
      for (const auto& r : request.config.at("runs")) runs.emplace_back(r.get<std::string>());
    }
    cmd_report(runs, request.out);
    return;
  }
  ConfigReader config(request.config);
  if (c == "forge-data") cmd_forge_data(config, request.out, request.seed);
  else if (c == "pretrain") cmd_pretrain(config, request.out, request.seed);
  else if (c == "train-lora") cmd_train_lora(config, request.out, request.seed);
  else if (c == "train-baseline") cmd_train_baseline(config, request.out, request.seed);
  else if (c == "evaluate") cmd_evaluate(config, request.out, request.seed);
  else if (c == "ablate") cmd_ablate(config, request.out, request.seed);
  else if (c == "correlate") cmd_correlate(config, request.out, request.seed);
  else throw ConfigError("unknown command '" + c + "'");
}

// --- presets ----------------------------------------------------------------------

Preset parse_preset(std::string_view text) {
  if (text == "quick") return Preset::quick;
  if (text == "findings") return Preset::findings;
  throw ConfigError("unknown preset '" + std::string(text) + "' (quick, findings)");
}

namespace {

void stage(const std::string& command, json config, const fs::path& out, std::uint64_t seed) {
  CommandRequest r;
  r.command = command;
  r.config = std::move(config);
  r.out = out;
  r.seed = seed;
  run_command(r);
}

json lora_config(const fs::path& data, const fs::path& backbone, std::string_view kind) {
  return {{"data", data.string()},
          {"backbone", backbone.string()},
          {"kind", kind},
          {"budget", 500},
          {"rank", 8},
          {"learning_rate", kind == "depth" ? 2e-3 : 1e-3},
          {"batch_size", 4},
          {"max_steps", 1000},
          {"split", "test"}};
}

double metric(const fs::path& file, const char* key) {
  const auto j = read_json(file);
  if (!j.contains(key) || j.at(key).is_null()) throw GateError(file.string() + " lacks " + key);
  return j.at(key).get<double>();
}

/// Multi-step stage: one trained SD_aug-style adapter set, evaluated with
/// and without the condition image and at two step counts.
json multi_step_stage(const fs::path& data, const fs::path& backbone, const fs::path& out, std::uint64_t seed) {
  json cfg = lora_config(data, backbone, "normal");
  cfg["mode"] = "multi";
  cfg["max_steps"] = 3000;
  stage("train-lora", cfg, out / "train", seed);
  json result;
  const auto eval = [&](const std::string& name, int steps, bool no_condition) {
    json e{{"data", data.string()},           {"backbone", backbone.string()},
           {"adapters", (out / "train" / "adapters.ilra").string()},
           {"kind", "normal"},                {"mode", "multi"},
           {"sample_steps", steps},           {"cfg_scale", 3.0},
           {"no_condition", no_condition},    {"split", "test"}};
    stage("evaluate", e, out / name, seed);
    result[name] = metric(out / name / "metrics.json", "mean_deg");
  };
  eval("steps10", 10, false);
  eval("steps25", 25, false);
  eval("steps10_no_condition", 10, true);

  // CFG identity on the trained model: scale 1 against conditional-only DDIM.
  const Dataset ds = load_dataset(data);
  auto net = load_checkpoint_as<UNet>(backbone);
  net->extend_input_channels();
  attach(*net, load_adapters(out / "train" / "adapters.ilra", *net, IntrinsicKind::normal));
  const auto schedule = default_schedule(Parameterization::v);
  const auto idx = first(ds.split_indices("test"), 4);
  const auto rgb = image_batch(ds, idx);
  CfgParams one;
  one.scale = 1.0;
  one.steps = 10;
  const ag::Matrix guided = multi_step_encoded(*net, rgb, IntrinsicKind::normal, schedule, one, seed);
  const std::vector<TaskToken> tokens(idx.size(), TaskToken::normal);
  int null_calls = 0;
  const ModelFn conditional = [&](const ag::Matrix& x, int t, bool null) {
    null_calls += null ? 1 : 0;
    ag::NoGradGuard guard;
    return net->forward(ag::Tensor::constant(x, rgb.geom()), std::vector<int>(idx.size(), t), tokens, &rgb).value();
  };
  Rng rng(seed);
  ag::Matrix noise(3, rgb.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<float>(rng.normal());
  const ag::Matrix manual = ddim_sample(schedule, conditional, noise, one).cwiseMax(-1.0f).cwiseMin(1.0f);
  result["cfg1_max_abs_diff"] = (guided - manual).cwiseAbs().maxCoeff();
  result["cfg1_null_calls"] = null_calls;
  result["terminal_alpha_bar"] = schedule.alpha_bar[static_cast<std::size_t>(schedule.T)];
  return result;
}

}  // namespace

void cmd_end_to_end(Preset preset, const fs::path& out, std::uint64_t seed) {
  create_run_dir(out);
  const fs::path data = out / "data";
  const fs::path model = out / "pretrain" / "model.ilck";
  stage("forge-data", {{"n", 625}, {"resolution", 32}}, data, seed);
  stage("pretrain",
        {{"data", data.string()},
         {"family", "diffusion"},
         {"steps", 2000},
         {"batch_size", 8},
         {"learning_rate", 5e-4},
         {"checkpoint_steps", {250, 500, 1000}}},
        out / "pretrain", seed);
  std::vector<fs::path> runs;
  for (const char* kind : {"normal", "depth"}) {
    const std::string k = kind;
    stage("train-lora", lora_config(data, model, k), out / ("lora_" + k), seed);
    stage("evaluate", {{"data", data.string()}, {"kind", k}, {"predictor", "constant"}, {"split", "test"}},
          out / ("constant_" + k), seed);
    runs.push_back(out / ("lora_" + k));
    runs.push_back(out / ("constant_" + k));
  }
  if (preset == Preset::quick) {
    cmd_report(runs, out / "report");
    return;
  }

  json findings;
  findings["quick"] = {
      {"normal_mean_deg", metric(out / "lora_normal" / "metrics.json", "mean_deg")},
      {"constant_normal_mean_deg", metric(out / "constant_normal" / "metrics.json", "mean_deg")},
      {"depth_delta_125", metric(out / "lora_depth" / "metrics.json", "delta_125")},
      {"constant_depth_delta_125", metric(out / "constant_depth" / "metrics.json", "delta_125")}};

  // Data budget and rank, on a larger renderer set.
  const fs::path large = out / "data_large";
  stage("forge-data", {{"n", 5000}, {"resolution", 32}}, large, mix_seed(seed, 5));
  json budget;
  for (const auto& [name, b, r] : {std::tuple{"budget_250", 250, 8}, std::tuple{"budget_4000", 4000, 8},
                                   std::tuple{"budget_250_rank2", 250, 2}}) {
    json cfg = lora_config(large, model, "normal");
    cfg["budget"] = b;
    cfg["rank"] = r;
    stage("train-lora", cfg, out / name, seed);
    budget[name] = metric(out / name / "metrics.json", "mean_deg");
    runs.push_back(out / name);
  }
  budget["constant"] = metric(out / "budget_250" / "constant.json", "mean_deg");
  findings["budget"] = budget;

  // LoRA against the linear probe and full fine-tuning at budget 250.
  json baselines;
  {
    json cfg = lora_config(data, model, "normal");
    cfg["budget"] = 250;
    stage("train-lora", cfg, out / "lora_250", seed);
    runs.push_back(out / "lora_250");
    for (const char* method : {"linear_probe", "full_finetune"}) {
      json b = lora_config(data, model, "normal");
      b["budget"] = 250;
      b["method"] = method;
      b["learning_rate"] = 1e-4;
      stage("train-baseline", b, out / method, seed);
      runs.push_back(out / method);
    }
    for (const char* name : {"lora_250", "linear_probe", "full_finetune"}) {
      baselines[name] = {{"mean_deg", metric(out / name / "metrics.json", "mean_deg")},
                         {"steps_per_sec", metric(out / name / "resources.json", "steps_per_sec")},
                         {"peak_mem_bytes", metric(out / name / "resources.json", "peak_mem_bytes")}};
    }
  }
  findings["baselines"] = baselines;

  // Pretraining quality against recovery.
  {
    json cfg = lora_config(data, model, "normal");
    cfg.erase("split");
    cfg.erase("backbone");
    json list = json::array();
    for (int s : {250, 500, 1000}) {
      list.push_back({{"path", (out / "pretrain" / ("ckpt_" + std::to_string(s) + ".ilck")).string()}, {"steps", s}});
    }
    list.push_back({{"path", model.string()}, {"steps", 2000}});
    cfg["checkpoints"] = list;
    stage("correlate", cfg, out / "correlation", seed);
    findings["correlation"] = read_json(out / "correlation" / "correlation.json");
  }

  findings["multi_step"] = multi_step_stage(data, model, out / "multi_step", seed);

  // Rank sweep.
  {
    json cfg = lora_config(data, model, "normal");
    cfg.erase("split");
    cfg["axis"] = "rank";
    cfg["values"] = {2, 4, 8, 16, 32};
    stage("ablate", cfg, out / "ablate_rank", seed);
  }

  // GAN and VQ paths. A failure here is recorded, not fatal.
  for (const char* family : {"gan", "vq"}) {
    const std::string f = family;
    try {
      stage("pretrain", {{"data", data.string()}, {"family", f}, {"steps", 2000}}, out / ("pretrain_" + f), seed);
      stage("train-lora",
            {{"data", data.string()},
             {"backbone", (out / ("pretrain_" + f) / "model.ilck").string()},
             {"kind", "normal"},
             {"distance", "cos_plus_l1"},
             {"budget", 250}},
            out / ("lora_" + f), seed);
      findings[f] = {{"mean_deg", metric(out / ("lora_" + f) / "metrics.json", "mean_deg")},
                     {"constant_mean_deg", metric(out / ("lora_" + f) / "constant.json", "mean_deg")},
                     {"pretrain", read_json(out / ("pretrain_" + f) / "pretrain.json")}};
    } catch (const std::exception& e) {
      findings[f] = {{"error", e.what()}};
    }
  }

  write_json(out / "findings.json", findings);
  cmd_report(runs, out / "report");
}

}  // namespace ilora
