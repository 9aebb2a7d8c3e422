// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ilora/metrics.hpp"
#include "ilora/pretrain.hpp"

namespace ilora {

namespace {

std::string fixed(double v, int decimals = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fixed(const std::optional<double>& v, int decimals = 6) { return v ? fixed(*v, decimals) : ""; }

std::unique_ptr<UNet> clone_unet(const UNet& base) {
  if (base.has_slots()) throw ConfigError("experiment base model must not carry adapters");
  auto copy = base.clone();
  return std::unique_ptr<UNet>(static_cast<UNet*>(copy.release()));
}

std::vector<int> take(std::vector<int> v, int limit) {
  if (limit > 0 && static_cast<int>(v.size()) > limit) v.resize(static_cast<std::size_t>(limit));
  return v;
}

}  // namespace

// --- image panels -----------------------------------------------------------

Panel tile_panel(const std::vector<std::vector<ag::Matrix>>& rows, int resolution, int gap) {
  if (rows.empty()) throw ConfigError("tile_panel: no rows");
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  if (cols == 0) throw ConfigError("tile_panel: no tiles");
  const int R = resolution;
  Panel p;
  p.height = static_cast<int>(rows.size()) * (R + gap) + gap;
  p.width = static_cast<int>(cols) * (R + gap) + gap;
  p.data = ag::Matrix::Ones(3, static_cast<Eigen::Index>(p.height) * p.width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const int y0 = gap + static_cast<int>(i) * (R + gap);
      const int x0 = gap + static_cast<int>(j) * (R + gap);
      const bool present = j < rows[i].size();
      if (present && rows[i][j].cols() != R * R) throw ConfigError("tile_panel: tile size mismatch");
      for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
          const Eigen::Index dst = static_cast<Eigen::Index>(y0 + y) * p.width + x0 + x;
          if (present) {
            p.data.col(dst) = rows[i][j].col(y * R + x);
          } else {
            p.data.col(dst).setConstant(-1.0f);
          }
        }
      }
    }
  }
  return p;
}

void write_ppm(const Panel& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "P6\n" << panel.width << ' ' << panel.height << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(panel.data.size()));
  for (Eigen::Index p = 0; p < panel.data.cols(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp((panel.data(c, p) + 1.0f) * 0.5f, 0.0f, 1.0f);
      bytes[static_cast<std::size_t>(p * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to " + path.string());
}

Panel read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) throw FormatError(path.string() + ": not an 8-bit P6 file");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path.string() + ": truncated");
  Panel p;
  p.height = h;
  p.width = w;
  p.data.resize(3, static_cast<Eigen::Index>(w) * h);
  for (Eigen::Index i = 0; i < p.data.cols(); ++i) {
    for (int c = 0; c < 3; ++c) p.data(c, i) = bytes[static_cast<std::size_t>(i * 3 + c)] / 127.5f - 1.0f;
  }
  return p;
}

std::vector<ag::Matrix> predict_tiles(const DensePredictor& predictor, const Dataset& dataset,
                                      const std::vector<int>& indices) {
  if (indices.empty()) return {};
  ag::NoGradGuard guard;
  const ag::Matrix all = predictor(image_batch(dataset, indices));
  const int px = dataset.manifest.resolution * dataset.manifest.resolution;
  std::vector<ag::Matrix> out;
  for (std::size_t i = 0; i < indices.size(); ++i) out.push_back(all.middleCols(static_cast<Eigen::Index>(i) * px, px));
  return out;
}

std::vector<ag::Matrix> rgb_tiles(const Dataset& dataset, const std::vector<int>& indices) {
  std::vector<ag::Matrix> out;
  for (int i : indices) out.push_back(dataset.samples.at(static_cast<std::size_t>(i)).rgb.data);
  return out;
}

std::vector<ag::Matrix> target_tiles(const Dataset& dataset, const std::vector<int>& indices, IntrinsicKind kind) {
  std::vector<ag::Matrix> out;
  for (int i : indices) {
    const std::vector<int> one{i};
    out.push_back(target_batch(dataset, one, kind));
  }
  return out;
}

// --- correlation ------------------------------------------------------------

const CorrelationRow& CorrelationReport::control() const {
  for (const auto& r : rows) {
    if (r.is_control) return r;
  }
  throw ConfigError("correlation report has no control row");
}

const CorrelationRow& CorrelationReport::best_checkpoint() const {
  const CorrelationRow* best = nullptr;
  for (const auto& r : rows) {
    if (!r.is_control && (best == nullptr || r.mean_deg < best->mean_deg)) best = &r;
  }
  if (best == nullptr) throw ConfigError("correlation report has no checkpoint rows");
  return *best;
}

std::string CorrelationReport::csv() const {
  std::ostringstream out;
  out << "checkpoint,pretrain_steps,quality_proxy,mean_deg,is_control\n";
  for (const auto& r : rows) {
    out << r.checkpoint << ',' << r.pretrain_steps << ',' << fixed(r.quality_proxy) << ',' << fixed(r.mean_deg) << ','
        << (r.is_control ? 1 : 0) << '\n';
  }
  return out.str();
}

CorrelationReport correlation_experiment(const std::vector<PretrainCheckpoint>& checkpoints, const UNet& control,
                                         const Dataset& dataset, const TrainConfig& cfg,
                                         const CorrelationOptions& options) {
  if (checkpoints.size() < 3) throw ConfigError("correlation needs at least 3 checkpoints");
  if (cfg.kind != IntrinsicKind::normal) throw ConfigError("correlation tabulates normals (mean angular error)");
  cfg.validate();
  for (const auto& c : checkpoints) {
    if (!c.model) throw ConfigError("checkpoint " + c.name + " has no model");
    if (c.model->config_json() != control.config_json()) {
      throw ConfigError("checkpoint " + c.name + " differs in architecture from the control");
    }
  }
  std::vector<int> ref_idx = dataset.split_indices("val");
  for (int i : dataset.split_indices("test")) ref_idx.push_back(i);
  if (static_cast<int>(ref_idx.size()) < options.proxy_images) {
    throw ConfigError("correlation: not enough held-out images for the quality proxy");
  }
  ref_idx.resize(static_cast<std::size_t>(options.proxy_images));
  const auto reference = dataset_images(dataset, ref_idx);
  const auto eval_idx = dataset.split_indices(options.split);
  const auto schedule = default_schedule(Parameterization::v);

  CorrelationReport report;
  const auto measure = [&](const UNet& model, std::string name, int steps, bool is_control) {
    CorrelationRow row;
    row.checkpoint = std::move(name);
    row.pretrain_steps = steps;
    row.is_control = is_control;
    const auto generated = generate_images(model, schedule, options.proxy_images, options.sample_steps,
                                           options.proxy_seed);
    row.quality_proxy = quality_proxy(generated, reference, options.proxy_seed).value;
    auto net = clone_unet(model);
    run_lora_dense(*net, dataset, cfg);
    row.mean_deg = *evaluate(dense_predictor(*net, cfg.kind), dataset, eval_idx, cfg.kind).mean_deg;
    report.rows.push_back(row);
  };
  for (const auto& c : checkpoints) measure(*c.model, c.name, c.pretrain_steps, false);
  measure(control, "control", 0, true);

  std::vector<double> proxy, error;
  for (const auto& r : report.rows) {
    proxy.push_back(r.quality_proxy);
    error.push_back(r.mean_deg);
  }
  report.spearman = spearman(proxy, error);
  return report;
}

// --- ablation ---------------------------------------------------------------

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::rank: return "rank";
    case AblationAxis::budget: return "budget";
    case AblationAxis::selector: return "selector";
    case AblationAxis::steps: return "steps";
    case AblationAxis::cfg_scale: return "cfg_scale";
  }
  return "?";
}

AblationAxis parse_axis(std::string_view text) {
  for (auto a : {AblationAxis::rank, AblationAxis::budget, AblationAxis::selector, AblationAxis::steps,
                 AblationAxis::cfg_scale}) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown ablation axis '" + std::string(text) + "'");
}

namespace {

int parse_int(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError("'" + s + "' is not an integer");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError("'" + s + "' is not a number");
  return v;
}

template <typename T>
void require_in(const T& v, std::initializer_list<T> domain, AblationAxis axis, const std::string& raw) {
  if (std::find(domain.begin(), domain.end(), v) == domain.end()) {
    throw ConfigError("value " + raw + " outside the " + std::string(to_string(axis)) + " domain");
  }
}

}  // namespace

void validate_ablation_values(AblationAxis axis, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  for (const auto& v : values) {
    switch (axis) {
      case AblationAxis::rank: require_in(parse_int(v), {2, 4, 8, 16, 32}, axis, v); break;
      case AblationAxis::budget: require_in(parse_int(v), {250, 1000, 4000, 16000}, axis, v); break;
      case AblationAxis::selector: {
        const auto s = parse_selector(v);
        require_in(s,
                   {TargetSelector::all_attn, TargetSelector::cross_only, TargetSelector::self_only,
                    TargetSelector::up_blocks, TargetSelector::mid_block, TargetSelector::down_blocks},
                   axis, v);
        break;
      }
      case AblationAxis::steps: require_in(parse_int(v), {2, 5, 10, 15, 20, 25, 50}, axis, v); break;
      case AblationAxis::cfg_scale: require_in(parse_double(v), {1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0}, axis, v); break;
    }
  }
}

double constant_loss(const Dataset& dataset, const TrainConfig& cfg) {
  const auto subset = budget_subset(dataset, cfg.budget, cfg.seed);
  const Eigen::Vector3f c = constant_encoding(dataset, cfg.kind);
  const ag::Matrix target = target_batch(dataset, subset, cfg.kind);
  const ag::Matrix pred = c.replicate(1, target.cols());
  ag::NoGradGuard guard;
  return distance_loss(cfg.distance, ag::Tensor::constant(pred), target, mask_batch(dataset, subset)).value()(0, 0);
}

AblationTable ablate(AblationAxis axis, const std::vector<std::string>& values, const UNet& base,
                     const Dataset& dataset, const TrainConfig& cfg, const AblationOptions& options) {
  validate_ablation_values(axis, values);
  cfg.validate();
  AblationTable table;
  table.axis = axis;
  table.kind = cfg.kind;
  const auto eval_idx = take(dataset.split_indices(options.split), options.eval_limit);
  const auto panel_idx = take(eval_idx, options.panel_images);
  std::vector<std::vector<ag::Matrix>> rows{rgb_tiles(dataset, panel_idx), target_tiles(dataset, panel_idx, cfg.kind)};

  const auto finish_cell = [](AblationCell& cell) {
    if (!std::isfinite(cell.final_loss)) {
      cell.dnf = true;
      if (cell.note.empty()) cell.note = "non-finite loss";
    } else if (cell.final_loss > 2.0 * cell.baseline_loss) {
      cell.dnf = true;
      cell.note = "final loss above twice the baseline";
    }
  };

  if (axis == AblationAxis::steps || axis == AblationAxis::cfg_scale) {
    auto net = clone_unet(base);
    net->extend_input_channels();
    const auto schedule = default_schedule(Parameterization::v);
    auto set = inject(*net, cfg.selector, cfg.rank, mix_seed(cfg.seed, 7), cfg.kind);
    double final_loss = std::numeric_limits<double>::quiet_NaN(), baseline = 0;
    std::string note;
    try {
      const auto log = train_lora_multistep(*net, set, dataset, cfg, schedule);
      final_loss = log.final_loss;
      baseline = log.records.empty() ? final_loss : log.records.front().loss;
    } catch (const DivergenceError& e) {
      note = e.what();
    }
    for (const auto& v : values) {
      AblationCell cell;
      cell.value = v;
      cell.final_loss = final_loss;
      cell.baseline_loss = baseline;
      cell.note = note;
      cell.param_fraction = param_fraction(set, *net);
      finish_cell(cell);
      if (!cell.dnf) {
        CfgParams p = options.sampling;
        if (axis == AblationAxis::steps) p.steps = parse_int(v);
        else p.scale = parse_double(v);
        const auto predictor = multi_step_predictor(*net, cfg.kind, schedule, p, options.sample_seed);
        cell.result = evaluate(predictor, dataset, eval_idx, cfg.kind);
        rows.push_back(predict_tiles(predictor, dataset, panel_idx));
      } else {
        rows.emplace_back();
      }
      table.cells.push_back(std::move(cell));
    }
  } else {
    for (const auto& v : values) {
      TrainConfig c = cfg;
      if (axis == AblationAxis::rank) c.rank = parse_int(v);
      if (axis == AblationAxis::budget) c.budget = parse_int(v);
      if (axis == AblationAxis::selector) c.selector = parse_selector(v);
      AblationCell cell;
      cell.value = v;
      cell.baseline_loss = constant_loss(dataset, c);
      auto net = clone_unet(base);
      try {
        const auto run = run_lora_dense(*net, dataset, c);
        cell.final_loss = run.log.final_loss;
        cell.param_fraction = param_fraction(run.adapters, *net);
      } catch (const DivergenceError& e) {
        cell.final_loss = std::numeric_limits<double>::quiet_NaN();
        cell.note = e.what();
      }
      finish_cell(cell);
      if (!cell.dnf) {
        const auto predictor = dense_predictor(*net, c.kind);
        cell.result = evaluate(predictor, dataset, eval_idx, c.kind);
        rows.push_back(predict_tiles(predictor, dataset, panel_idx));
      } else {
        rows.emplace_back();
      }
      table.cells.push_back(std::move(cell));
    }
  }
  table.panel = tile_panel(rows, dataset.manifest.resolution);
  return table;
}

std::string AblationTable::csv() const {
  std::ostringstream out;
  out << "value,error,mean_deg,delta_125,param_fraction,final_loss,baseline_loss,status\n";
  for (const auto& c : cells) {
    out << c.value << ',' << (c.result ? fixed(c.result->headline()) : "") << ','
        << (c.result ? fixed(c.result->mean_deg) : "") << ',' << (c.result ? fixed(c.result->delta_125) : "") << ','
        << fixed(c.param_fraction, 8) << ',' << fixed(c.final_loss) << ',' << fixed(c.baseline_loss) << ','
        << (c.dnf ? "DNF" : "ok") << '\n';
  }
  return out.str();
}

std::string AblationTable::text() const {
  std::ostringstream out;
  out << "ablation over " << to_string(axis) << " (" << to_string(kind) << ")\n";
  for (const auto& c : cells) {
    out << "  " << c.value << ": ";
    if (c.dnf) {
      out << "DNF (" << c.note << ")";
    } else {
      out << (kind == IntrinsicKind::normal ? "mean " : "rms ") << fixed(c.result->headline(), 3);
      if (c.result->delta_125) out << ", delta<1.25 " << fixed(c.result->delta_125, 3);
      out << ", adapters " << format_percent(c.param_fraction);
    }
    out << '\n';
  }
  if (axis == AblationAxis::rank && kind == IntrinsicKind::normal) {
    out << "reference target (mean deg by rank): 2: 22.28, 4: 22.57, 8: 20.31, 16: 21.17, 32: 21.84\n";
  }
  return out.str();
}

}  // namespace ilora
