// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/recovery.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace ilora {

TrainConfig TrainConfig::dense_defaults() { return {}; }

TrainConfig TrainConfig::generative_defaults(TargetSelector selector) {
  TrainConfig c;
  c.selector = selector;
  c.learning_rate = 1e-3;
  c.batch_size = 1;
  c.max_steps = 4000;
  c.distance = DistanceMetric::cos_plus_l1;
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"budget", budget},
          {"rank", rank},
          {"selector", std::string(to_string(selector))},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_steps", max_steps},
          {"seed", seed},
          {"distance", std::string(to_string(distance))},
          {"kind", std::string(to_string(kind))},
          {"train_task_token", train_task_token},
          {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::set<std::string> known = {"budget",     "rank",     "selector", "learning_rate",
                                              "batch_size", "max_steps", "seed",     "distance",
                                              "kind",       "train_task_token", "log_every"};
  for (const auto& [key, value] : j.items()) {
    if (known.count(key) == 0) throw ConfigError("unknown train config key '" + key + "'");
  }
  TrainConfig c = base;
  try {
    c.budget = j.value("budget", c.budget);
    c.rank = j.value("rank", c.rank);
    if (j.contains("selector")) c.selector = parse_selector(j.at("selector").get<std::string>());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("distance")) c.distance = parse_distance(j.at("distance").get<std::string>());
    if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
    c.train_task_token = j.value("train_task_token", c.train_task_token);
    c.log_every = j.value("log_every", c.log_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

void TrainConfig::validate() const {
  if (budget < 1) throw ConfigError("budget must be >= 1");
  if (rank < 1) throw ConfigError("rank must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (distance == DistanceMetric::cos_plus_l1 && kind != IntrinsicKind::normal) {
    throw ConfigError("cos_plus_l1 applies to normals only");
  }
}

Digest TrainConfig::hash() const { return sha256(to_json().dump()); }

namespace {

void require_attached(const Backbone& b, const AdapterSet& adapters) {
  if (!b.has_slots()) throw ConfigError("no adapters attached to the backbone");
  if (adapters.backbone_fingerprint != b.fingerprint()) {
    throw ConfigError("adapter set belongs to another backbone (fingerprint mismatch)");
  }
  if (adapters.consumed) throw ConfigError("adapter set was already merged");
}

using ForwardFn = std::function<ag::Tensor(const ag::Tensor&)>;

TrainLog dense_loop(const ForwardFn& forward, const std::vector<ag::Tensor>& params, const Dataset& dataset,
                    const TrainConfig& cfg) {
  cfg.validate();
  const auto subset = budget_subset(dataset, cfg.budget, cfg.seed);
  BatchSampler sampler(subset, cfg.batch_size, mix_seed(cfg.seed, 11));
  ag::Adam opt(params, {.lr = static_cast<float>(cfg.learning_rate)});
  StepLogger logger(cfg.log_every);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    auto loss = distance_loss(cfg.distance, forward(image_batch(dataset, idx)), target_batch(dataset, idx, cfg.kind),
                              mask_batch(dataset, idx));
    const auto bytes = loss.backward();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    opt.step();
    opt.zero_grad();
  }
  return logger.finish();
}

Mask all_valid(Eigen::Index n) { return Mask::Constant(n, true); }

}  // namespace

ag::Tensor dense_forward(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind) {
  const auto b = static_cast<std::size_t>(rgb.geom().batch);
  return unet.forward(rgb, std::vector<int>(b, kDenseTimestep), std::vector<TaskToken>(b, task_token(kind)));
}

DensePredictor dense_predictor(const UNet& unet, IntrinsicKind kind) {
  return [&unet, kind](const ag::Tensor& rgb) { return dense_forward(unet, rgb, kind).value(); };
}

IntrinsicMap single_step_predict(const UNet& unet, const AdapterSet& adapters, const Image& image, IntrinsicKind kind,
                                 const CodecParams& codec) {
  if (adapters.kind != kind) {
    throw ConfigError("adapters were trained for " + std::string(to_string(adapters.kind)) + ", not " +
                      std::string(to_string(kind)));
  }
  if (adapters.backbone_fingerprint != unet.fingerprint()) throw ConfigError("adapters belong to another backbone");
  ag::NoGradGuard guard;
  const auto x = ag::Tensor::constant(image.data, ag::Geom{1, image.height, image.width});
  return decode_batch(dense_forward(unet, x, kind).value(), kind, image.height, codec).front();
}

TrainLog train_lora_dense(UNet& unet, AdapterSet& adapters, const Dataset& dataset, const TrainConfig& cfg) {
  require_attached(unet, adapters);
  if (adapters.kind != cfg.kind) throw ConfigError("adapter kind does not match the train config");
  auto params = adapter_parameters(unet);
  if (cfg.train_task_token) {
    unet.unfreeze_task_tokens();
    params.push_back(unet.param("task_tokens"));
    params.back().set_requires_grad(true);
  }
  auto log = dense_loop([&](const ag::Tensor& x) { return dense_forward(unet, x, cfg.kind); }, params, dataset, cfg);
  sync_from(unet, adapters);
  return log;
}

AdapterRun run_lora_dense(UNet& unet, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  AdapterRun run;
  run.adapters = inject(unet, cfg.selector, cfg.rank, mix_seed(cfg.seed, 7), cfg.kind);
  run.log = train_lora_dense(unet, run.adapters, dataset, cfg);
  return run;
}

// --- linear probe -----------------------------------------------------------

std::vector<ag::Tensor> probe_features(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind) {
  ag::NoGradGuard guard;
  unet.set_capture(true);
  dense_forward(unet, rgb, kind);
  auto features = unet.captured();
  unet.set_capture(false);
  return features;
}

ProbeHead::ProbeHead(const UNet& unet, std::uint64_t seed) {
  Rng rng(seed);
  const int r = unet.resolution();
  const auto features =
      probe_features(unet, ag::Tensor::constant(ag::Matrix::Zero(3, r * r), ag::Geom{1, r, r}), IntrinsicKind::normal);
  layers_ = static_cast<int>(features.size());
  for (int i = 0; i < layers_; ++i) {
    add_conv("probe." + std::to_string(i), 3, static_cast<int>(features[static_cast<std::size_t>(i)].rows()), 1, rng);
  }
}

ag::Tensor ProbeHead::forward(const std::vector<ag::Tensor>& features, int resolution) const {
  if (static_cast<int>(features.size()) != layers_) throw ConfigError("probe: feature count mismatch");
  ag::Tensor acc;
  for (int i = 0; i < layers_; ++i) {
    const auto& f = features[static_cast<std::size_t>(i)];
    auto h = conv("probe." + std::to_string(i), f, 1);
    if (f.geom().height != resolution) h = ag::upsample(h, resolution / f.geom().height);
    acc = i == 0 ? h : ag::add(acc, h);
  }
  return ag::scale(acc, 1.0f / float(layers_));
}

ProbeRun train_linear_probe(const UNet& unet, const Dataset& dataset, const TrainConfig& cfg) {
  ProbeRun run;
  run.head = std::make_unique<ProbeHead>(unet, mix_seed(cfg.seed, 8));
  run.head->set_trainable(true);
  const int r = unet.resolution();
  run.log = dense_loop(
      [&](const ag::Tensor& x) { return run.head->forward(probe_features(unet, x, cfg.kind), r); },
      run.head->trainable_parameters(), dataset, cfg);
  run.head->set_trainable(false);
  return run;
}

DensePredictor probe_predictor(const UNet& unet, const ProbeHead& head, IntrinsicKind kind) {
  return [&unet, &head, kind](const ag::Tensor& rgb) {
    return head.forward(probe_features(unet, rgb, kind), unet.resolution()).value();
  };
}

// --- full fine-tuning -------------------------------------------------------

FinetuneRun full_finetune(const UNet& base, const Dataset& dataset, const TrainConfig& cfg) {
  FinetuneRun run;
  run.model.reset(static_cast<UNet*>(base.clone().release()));
  if (cfg.train_task_token) run.model->unfreeze_task_tokens();
  run.model->set_trainable(true);
  const UNet& model = *run.model;
  run.log = dense_loop([&](const ag::Tensor& x) { return dense_forward(model, x, cfg.kind); },
                       run.model->trainable_parameters(), dataset, cfg);
  run.model->set_trainable(false);
  return run;
}

// --- generative -------------------------------------------------------------

TrainLog train_lora_generative(StyleGenerator& generator, AdapterSet& adapters, const OraclePredictor& oracle,
                               const TrainConfig& cfg) {
  cfg.validate();
  require_attached(generator, adapters);
  if (oracle.kind() != cfg.kind || adapters.kind != cfg.kind) throw ConfigError("oracle / adapter kind mismatch");
  const auto base = generator.clone();
  const auto& g0 = static_cast<const StyleGenerator&>(*base);
  // A fixed pool of `budget` latents plays the role of the labelled set.
  Rng rng(mix_seed(cfg.seed, 21));
  const ag::Matrix pool = generator.sample_z(cfg.budget, rng);
  std::vector<int> ids(static_cast<std::size_t>(cfg.budget));
  std::iota(ids.begin(), ids.end(), 0);
  BatchSampler sampler(ids, cfg.batch_size, mix_seed(cfg.seed, 22));
  ag::Adam opt(adapter_parameters(generator), {.lr = static_cast<float>(cfg.learning_rate)});
  StepLogger logger(cfg.log_every);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    ag::Matrix zm(pool.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) zm.col(static_cast<Eigen::Index>(i)) = pool.col(idx[i]);
    const auto z = ag::Tensor::constant(zm);
    ag::Matrix target;
    {
      ag::NoGradGuard guard;
      target = oracle.forward(g0.forward(z)).value();
    }
    auto loss = distance_loss(cfg.distance, generator.forward(z), target, all_valid(target.cols()));
    const auto bytes = loss.backward();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    opt.step();
    opt.zero_grad();
  }
  sync_from(generator, adapters);
  return logger.finish();
}

TrainLog train_lora_generative(VQAutoencoder& vq, AdapterSet& adapters, const OraclePredictor& oracle,
                               const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  require_attached(vq, adapters);
  if (oracle.kind() != cfg.kind || adapters.kind != cfg.kind) throw ConfigError("oracle / adapter kind mismatch");
  const auto base = vq.clone();
  const auto& v0 = static_cast<const VQAutoencoder&>(*base);
  BatchSampler sampler(budget_subset(dataset, cfg.budget, cfg.seed), cfg.batch_size, mix_seed(cfg.seed, 11));
  ag::Adam opt(adapter_parameters(vq), {.lr = static_cast<float>(cfg.learning_rate)});
  StepLogger logger(cfg.log_every);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    const int b = static_cast<int>(idx.size());
    const auto codes = v0.encode_indices(image_batch(dataset, idx));
    ag::Matrix target;
    {
      ag::NoGradGuard guard;
      target = oracle.forward(v0.decode_indices(codes, b)).value();
    }
    auto loss = distance_loss(cfg.distance, vq.decode_indices(codes, b), target, all_valid(target.cols()));
    const auto bytes = loss.backward();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    opt.step();
    opt.zero_grad();
  }
  sync_from(vq, adapters);
  return logger.finish();
}

namespace {

/// Normals: (0, 0, 1). Other kinds: the per-channel median of the targets.
Eigen::Vector3f target_constant(const ag::Matrix& targets, IntrinsicKind kind) {
  if (kind == IntrinsicKind::normal) return {0, 0, 1};
  Eigen::Vector3f c;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<float> v(static_cast<std::size_t>(targets.cols()));
    for (Eigen::Index i = 0; i < targets.cols(); ++i) v[static_cast<std::size_t>(i)] = targets(ch, i);
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    c(ch) = *mid;
  }
  return c;
}

GenerativeEval score(const ag::Matrix& pred, const ag::Matrix& target, IntrinsicKind kind, int resolution,
                     const CodecParams& codec) {
  const auto gt = decode_batch(target, kind, resolution, codec);
  GenerativeEval out;
  out.adapted = evaluate_maps(decode_batch(pred, kind, resolution, codec), gt);
  const ag::Matrix constant = target_constant(target, kind).replicate(1, target.cols());
  out.constant = evaluate_maps(decode_batch(constant, kind, resolution, codec), gt);
  return out;
}

}  // namespace

GenerativeEval evaluate_generative(const StyleGenerator& generator, const OraclePredictor& oracle, IntrinsicKind kind,
                                   const CodecParams& codec, int n, std::uint64_t seed) {
  ag::NoGradGuard guard;
  const auto base = generator.clone();
  Rng rng(seed);
  const auto z = ag::Tensor::constant(generator.sample_z(n, rng));
  const auto target = oracle.forward(static_cast<const StyleGenerator&>(*base).forward(z)).value();
  return score(generator.forward(z).value(), target, kind, generator.resolution(), codec);
}

GenerativeEval evaluate_generative(const VQAutoencoder& vq, const OraclePredictor& oracle, IntrinsicKind kind,
                                   const Dataset& dataset) {
  ag::NoGradGuard guard;
  const auto base = vq.clone();
  const auto& v0 = static_cast<const VQAutoencoder&>(*base);
  const auto val = dataset.split_indices("val");
  const int b = static_cast<int>(val.size());
  const auto codes = v0.encode_indices(image_batch(dataset, val));
  const auto target = oracle.forward(v0.decode_indices(codes, b)).value();
  return score(vq.decode_indices(codes, b).value(), target, kind, vq.resolution(), dataset.manifest.codec);
}

}  // namespace ilora
