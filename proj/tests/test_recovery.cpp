// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "ilora/pretrain.hpp"
#include "ilora/recovery.hpp"
#include "ilora/sd_aug.hpp"

using namespace ilora;

namespace {

UNetConfig small_unet() {
  UNetConfig c;
  c.resolution = 32;
  c.channels = {16, 16, 24};
  c.context_dim = 8;
  c.context_tokens = 2;
  c.time_dim = 16;
  return c;
}

const Dataset& data32() {
  static const Dataset ds = forge_dataset(625, 7, 32);
  return ds;
}

TrainConfig quick_cfg(int steps) {
  TrainConfig c = TrainConfig::dense_defaults();
  c.budget = 32;
  c.max_steps = steps;
  c.learning_rate = 1e-3;
  c.seed = 5;
  c.log_every = 5;
  return c;
}

std::set<std::string> slot_names(const Backbone& b) {
  std::set<std::string> s;
  for (const auto& [name, slot] : b.slots()) s.insert(name);
  return s;
}

ag::Matrix base_dense(const UNet& net, const ag::Tensor& rgb) {
  ag::NoGradGuard guard;
  return dense_forward(net, rgb, IntrinsicKind::normal).value();
}

}  // namespace

TEST_CASE("train config json") {
  TrainConfig c = TrainConfig::dense_defaults();
  c.budget = 123;
  c.rank = 2;
  c.selector = TargetSelector::cross_only;
  c.distance = DistanceMetric::cos_plus_l1;
  c.seed = 99;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(to_hex(back.hash()) == to_hex(c.hash()));

  auto j = c.to_json();
  j["learnig_rate"] = 0.1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);

  TrainConfig d = c;
  d.kind = IntrinsicKind::depth;
  CHECK_THROWS_AS(d.validate(), ConfigError);

  const auto g = TrainConfig::generative_defaults(TargetSelector::gan_affine);
  CHECK(g.learning_rate == 1e-3);
  CHECK(g.batch_size == 1);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.batch_size == 4);
}

TEST_CASE("budget subset") {
  const auto& ds = data32();
  const auto a = budget_subset(ds, 250, 3);
  const auto b = budget_subset(ds, 250, 3);
  CHECK(a == b);
  CHECK(a.size() == 250);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<int>(a.begin(), a.end()).size() == 250);
  CHECK(a.back() < ds.manifest.splits.train);
  CHECK(budget_subset(ds, 250, 4) != a);
  CHECK_THROWS_AS(budget_subset(ds, ds.manifest.splits.train + 1, 3), ConfigError);
}

TEST_CASE("dense lora moves only adapters") {
  const auto& ds = data32();
  UNet net(small_unet(), 3);
  const auto base_hash = to_hex(net.weights_hash());
  const std::vector<int> probe_idx{0, 1, 2};
  const auto rgb = image_batch(ds, probe_idx);
  const auto before = base_dense(net, rgb);

  auto cfg = quick_cfg(0);
  auto zero = run_lora_dense(net, ds, cfg);
  CHECK(zero.log.steps == 0);
  CHECK((base_dense(net, rgb) - before).cwiseAbs().maxCoeff() <= 1e-6f);
  net.clear_slots();

  cfg.max_steps = 20;
  auto run = run_lora_dense(net, ds, cfg);
  CHECK(run.log.steps == 20);
  CHECK(run.log.records.size() == 4);
  CHECK(std::isfinite(run.log.final_loss));
  CHECK(to_hex(net.weights_hash()) == base_hash);
  CHECK(slot_names(net).size() == 16);
  CHECK((base_dense(net, rgb) - before).cwiseAbs().maxCoeff() > 1e-6f);
  net.clear_slots();
  CHECK((base_dense(net, rgb) - before).cwiseAbs().maxCoeff() == 0.0f);

  UNet twin(small_unet(), 3);
  auto again = run_lora_dense(twin, ds, cfg);
  CHECK(to_hex(again.adapters.hash()) == to_hex(run.adapters.hash()));
  CHECK(again.log.final_loss == run.log.final_loss);
}

TEST_CASE("single step prediction") {
  const auto& ds = data32();
  UNet net(small_unet(), 3);
  auto set = inject(net, TargetSelector::all_attn, 4, 1, IntrinsicKind::normal);
  const auto& sample = ds.samples[0];
  const auto a = single_step_predict(net, set, sample.rgb, IntrinsicKind::normal, ds.manifest.codec);
  const auto b = single_step_predict(net, set, sample.rgb, IntrinsicKind::normal, ds.manifest.codec);
  CHECK(a.data == b.data);
  CHECK_THROWS_AS(single_step_predict(net, set, sample.rgb, IntrinsicKind::depth, ds.manifest.codec), ConfigError);
}

TEST_CASE("baselines") {
  const auto& ds = data32();
  UNet net(small_unet(), 3);
  const auto base_hash = to_hex(net.weights_hash());
  const auto cfg = quick_cfg(10);

  const auto probe = train_linear_probe(net, ds, cfg);
  CHECK(probe.head->parameter_count() > 0);
  CHECK(probe.head->layers() == 4);
  CHECK(probe.log.steps == 10);
  CHECK(to_hex(net.weights_hash()) == base_hash);
  const auto probe_pred = probe_predictor(net, *probe.head, IntrinsicKind::normal);
  const std::vector<int> idx{0, 1};
  CHECK(probe_pred(image_batch(ds, idx)).cols() == 2 * 32 * 32);

  const auto ft = full_finetune(net, ds, cfg);
  CHECK(ft.log.steps == 10);
  CHECK(to_hex(ft.model->weights_hash()) != base_hash);
  CHECK(to_hex(net.weights_hash()) == base_hash);
  CHECK(to_hex(ft.model->weights_hash({"task_tokens"})) == to_hex(net.weights_hash({"task_tokens"})));
}

TEST_CASE("dense lora beats the constant prediction on its own data") {
  const auto& ds = data32();
  UNet net(small_unet(), 3);
  auto cfg = quick_cfg(150);
  cfg.budget = 16;
  const auto run = run_lora_dense(net, ds, cfg);
  const auto pool = budget_subset(ds, cfg.budget, cfg.seed);
  const auto fit = evaluate(dense_predictor(net, IntrinsicKind::normal), ds, pool, IntrinsicKind::normal);
  const auto constant = evaluate(constant_predictor(ds, IntrinsicKind::normal), ds, pool, IntrinsicKind::normal);
  CHECK(*fit.mean_deg < *constant.mean_deg);
}

TEST_CASE("multi-step training") {
  const auto& ds = data32();
  UNet net(small_unet(), 3);
  const auto schedule = default_schedule(Parameterization::v);
  auto cfg = quick_cfg(1);

  {
    auto set = inject(net, TargetSelector::all_attn, 4, 2, IntrinsicKind::normal);
    CHECK_THROWS_AS(train_lora_multistep(net, set, ds, cfg, schedule), ConfigError);
    net.clear_slots();
  }
  net.extend_input_channels();
  const auto cond_hash = to_hex(net.weights_hash({"in_conv.cond"}));
  const auto eps_schedule = NoiseSchedule::scaled_linear(1000, 0.00085, 0.012, Parameterization::epsilon);

  // The step-1 loss is taken before the first update, so two fresh adapter
  // sets on identical bases report the base loss.
  auto set = inject(net, TargetSelector::all_attn, 4, 2, IntrinsicKind::normal);
  CHECK_THROWS_AS(train_lora_multistep(net, set, ds, cfg, eps_schedule), ConfigError);
  const auto init = train_lora_multistep(net, set, ds, cfg, schedule);
  UNet plain(small_unet(), 3);
  plain.extend_input_channels();
  auto zero_set = inject(plain, TargetSelector::all_attn, 4, 77, IntrinsicKind::normal);
  const auto base = train_lora_multistep(plain, zero_set, ds, cfg, schedule);
  CHECK(std::abs(init.final_loss - base.final_loss) <= 1e-6 * std::max(1.0, base.final_loss));

  net.clear_slots();
  set = inject(net, TargetSelector::all_attn, 4, 2, IntrinsicKind::normal);
  cfg.max_steps = 150;
  const auto log = train_lora_multistep(net, set, ds, cfg, schedule);
  CHECK(log.null_samples.size() == 150);
  int nulls = 0;
  for (int n : log.null_samples) nulls += n;
  // 600 draws at p = 0.1: mean 60, sd 7.35; 4.5 sd either side.
  CHECK(nulls >= 27);
  CHECK(nulls <= 93);
  CHECK(to_hex(net.weights_hash({"in_conv.cond"})) == cond_hash);

  const std::vector<int> idx{500, 501};
  const auto rgb = image_batch(ds, idx);
  CfgParams one;
  one.scale = 1.0;
  one.steps = 4;
  const auto guided = multi_step_encoded(net, rgb, IntrinsicKind::normal, schedule, one, 9);
  // Conditional-only sampling of the same start noise.
  const std::vector<TaskToken> tokens(2, TaskToken::normal);
  int null_calls = 0;
  const ModelFn cond = [&](const ag::Matrix& x, int t, bool null) {
    ag::NoGradGuard guard;
    null_calls += null ? 1 : 0;
    return net.forward(ag::Tensor::constant(x, rgb.geom()), std::vector<int>(2, t), tokens, &rgb).value();
  };
  Rng rng(9);
  ag::Matrix noise(3, rgb.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<float>(rng.normal());
  const ag::Matrix manual = ddim_sample(schedule, cond, noise, one).cwiseMax(-1.0f).cwiseMin(1.0f);
  CHECK(null_calls == 0);
  CHECK((guided - manual).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((multi_step_encoded(net, rgb, IntrinsicKind::normal, schedule, one, 9) - guided).cwiseAbs().maxCoeff() ==
        0.0f);
}

TEST_CASE("generative lora keeps the base generator") {
  const auto& ds = data32();
  StyleConfig sc;
  sc.resolution = 32;
  sc.z_dim = 8;
  sc.w_dim = 16;
  sc.channels = {16, 16, 16, 8};
  StyleGenerator gen(sc, 4);
  const OraclePredictor oracle(IntrinsicKind::normal, 6);
  Rng rng(1);
  const auto z = ag::Tensor::constant(gen.sample_z(4, rng));
  const auto rgb_before = [&] {
    ag::NoGradGuard guard;
    return gen.forward(z).value();
  }();
  const auto base_hash = to_hex(gen.weights_hash());

  auto cfg = TrainConfig::generative_defaults(TargetSelector::gan_affine);
  cfg.max_steps = 10;
  cfg.budget = 8;
  cfg.distance = DistanceMetric::cos_plus_l1;
  auto set = inject(gen, cfg.selector, 4, 3, cfg.kind);
  const auto log = train_lora_generative(gen, set, oracle, cfg);
  CHECK(log.steps == 10);
  CHECK(to_hex(gen.weights_hash()) == base_hash);
  gen.clear_slots();
  {
    ag::NoGradGuard guard;
    CHECK((gen.forward(z).value() - rgb_before).cwiseAbs().maxCoeff() == 0.0f);
  }

  VQConfig vc;
  vc.resolution = 32;
  vc.c0 = 16;
  vc.c1 = 16;
  vc.code_dim = 8;
  vc.codebook_size = 16;
  VQAutoencoder vq(vc, 8);
  const std::vector<int> idx{0, 1};
  const auto codes = vq.encode_indices(image_batch(ds, idx));
  const auto decoded = vq.decode_indices(codes, 2).value();
  auto vcfg = TrainConfig::generative_defaults(TargetSelector::vq_decoder_attn);
  vcfg.max_steps = 5;
  vcfg.budget = 8;
  vcfg.distance = DistanceMetric::cos_plus_l1;
  auto vset = inject(vq, vcfg.selector, 4, 3, vcfg.kind);
  train_lora_generative(vq, vset, oracle, ds, vcfg);
  CHECK((vq.decode_indices(codes, 2).value() - decoded).cwiseAbs().maxCoeff() > 0.0f);
  for (auto& [name, a] : vset.adapters) a.up.setZero();
  attach(vq, vset);
  CHECK((vq.decode_indices(codes, 2).value() - decoded).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("diffusion pretraining") {
  const auto& ds = data32();
  PretrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 8;
  cfg.learning_rate = 2e-3;
  cfg.seed = 11;
  cfg.log_every = 20;
  cfg.checkpoint_steps = {50, 100};
  std::vector<int> seen;
  UNet a(small_unet(), 1);
  const auto ra = pretrain_diffusion(a, ds, cfg, [&](int step, const Backbone&) { seen.push_back(step); });
  CHECK(seen == std::vector<int>{50, 100, 200});
  UNet b(small_unet(), 1);
  const auto rb = pretrain_diffusion(b, ds, cfg);
  CHECK(to_hex(a.weights_hash()) == to_hex(b.weights_hash()));
  CHECK(ra.log.final_loss == rb.log.final_loss);

  // Constant-predictor loss of the v target over uniform t, with the best
  // per-channel constant -E[s] mu_c.
  const auto schedule = default_schedule(Parameterization::v);
  double mean_ab = 0, mean_s = 0;
  for (int t = 1; t <= schedule.T; ++t) {
    mean_ab += schedule.alpha_bar[t];
    mean_s += std::sqrt(1.0 - schedule.alpha_bar[t]);
  }
  mean_ab /= schedule.T;
  mean_s /= schedule.T;
  const auto train = ds.split_indices("train");
  const ag::Matrix x = image_batch(ds, train).value();
  const double second = x.cast<double>().array().square().mean();
  const Eigen::Vector3d mu = x.cast<double>().rowwise().mean();
  const double v_constant = mean_ab + (1 - mean_ab) * second - mean_s * mean_s * mu.squaredNorm() / 3.0;
  CHECK(std::isfinite(ra.log.final_loss));
  CHECK(ra.log.final_loss < v_constant);

  cfg.parameterization = Parameterization::epsilon;
  UNet e(small_unet(), 1);
  const auto re = pretrain_diffusion(e, ds, cfg);
  CHECK(std::isfinite(re.log.final_loss));
  CHECK(re.log.final_loss < 1.0);

  const Dataset tiny = forge_dataset(100, 7, 32);
  UNet t(small_unet(), 1);
  CHECK_THROWS_AS(pretrain_diffusion(t, tiny, cfg), ConfigError);
}

TEST_CASE("vq pretraining") {
  const auto& ds = data32();
  VQConfig vc;
  vc.resolution = 32;
  vc.c0 = 16;
  vc.c1 = 16;
  vc.code_dim = 8;
  vc.codebook_size = 16;
  PretrainConfig cfg;
  cfg.steps = 150;
  cfg.learning_rate = 2e-3;
  cfg.seed = 2;
  VQAutoencoder a(vc, 1), b(vc, 1);
  const auto ra = pretrain_vq(a, ds, cfg);
  pretrain_vq(b, ds, cfg);
  CHECK(to_hex(a.weights_hash({"codebook"})) == to_hex(b.weights_hash({"codebook"})));
  CHECK(ra.val_psnr > ra.mean_image_psnr);
  CHECK(ra.dead_codes >= 0);
  CHECK(ra.dead_codes <= vc.codebook_size);
}

TEST_CASE("oracle predictor") {
  const Dataset ds = forge_dataset(250, 3, 32);
  OracleConfig cfg;
  cfg.steps = 250;
  cfg.seed = 4;
  const auto run = train_oracle_predictor(ds, IntrinsicKind::normal, cfg);
  const auto again = train_oracle_predictor(ds, IntrinsicKind::normal, cfg);
  CHECK(*run.val.mean_deg == *again.val.mean_deg);

  const std::vector<int> first{0, 1, 2, 3};
  const auto fit = evaluate(run.oracle->predictor(), ds, first, IntrinsicKind::normal);
  const auto constant = evaluate(constant_predictor(ds, IntrinsicKind::normal), ds, first, IntrinsicKind::normal);
  CHECK(*fit.mean_deg < *constant.mean_deg);

  const auto val = ds.split_indices("val");
  CHECK(*run.val.mean_deg < mean_inter_sample_angle(ds, val));
  CHECK(default_distance(IntrinsicKind::normal) == DistanceMetric::cos_plus_l1);
  CHECK(default_distance(IntrinsicKind::depth) == DistanceMetric::mse);

  const Dataset small = forge_dataset(100, 3, 32);
  CHECK_THROWS_AS(train_oracle_predictor(small, IntrinsicKind::normal, cfg), ConfigError);
}
