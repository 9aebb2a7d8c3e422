// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/evaluation.hpp"

#include <algorithm>

namespace ilora {

double EvalResult::headline() const {
  const auto& v = kind == IntrinsicKind::normal ? mean_deg : rms;
  if (!v) throw ConfigError("evaluation result has no headline metric");
  return *v;
}

EvalResult evaluate_maps(const std::vector<IntrinsicMap>& pred, const std::vector<IntrinsicMap>& gt) {
  if (pred.empty() || pred.size() != gt.size()) throw ConfigError("evaluate_maps: prediction / ground truth count");
  const IntrinsicKind kind = gt.front().kind;
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i].kind != kind || gt[i].kind != kind) throw ConfigError("evaluate_maps: mixed kinds");
    if (pred[i].data.cols() != gt[i].data.cols()) throw ConfigError("evaluate_maps: size mismatch");
    total += gt[i].data.cols();
  }
  const int ch = channel_count(kind);
  Eigen::MatrixXd p(ch, total), g(ch, total);
  Mask mask(total);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Eigen::Index n = gt[i].data.cols();
    p.middleCols(at, n) = pred[i].data.cast<double>();
    g.middleCols(at, n) = gt[i].data.cast<double>();
    mask.segment(at, n) = gt[i].mask;
    at += n;
  }
  EvalResult r;
  r.kind = kind;
  r.n_pixels = static_cast<long>(mask.count());
  switch (kind) {
    case IntrinsicKind::normal: {
      const auto a = angular_errors(p, g, mask);
      r.mean_deg = a.mean_deg;
      r.median_deg = a.median_deg;
      r.l1_x100 = l1_error_x100(p, g, mask);
      break;
    }
    case IntrinsicKind::depth: {
      const auto d = depth_metrics(p, g, mask);
      r.rms = d.rms;
      r.delta_125 = d.delta_125;
      break;
    }
    case IntrinsicKind::albedo:
    case IntrinsicKind::shading: r.rms = rms_error(p, g, mask); break;
  }
  return r;
}

std::vector<IntrinsicMap> decode_batch(const ag::Matrix& encoded, IntrinsicKind kind, int resolution,
                                       const CodecParams& codec) {
  const int px = resolution * resolution;
  if (encoded.rows() != 3 || encoded.cols() % px != 0) throw ConfigError("decode_batch: shape mismatch");
  std::vector<IntrinsicMap> out;
  for (Eigen::Index c = 0; c < encoded.cols(); c += px) {
    EncodedTarget e;
    e.kind = kind;
    e.height = e.width = resolution;
    e.codec = codec;
    e.data = encoded.middleCols(c, px);
    out.push_back(decode_intrinsic(e));
  }
  return out;
}

EvalResult evaluate(const DensePredictor& predictor, const Dataset& dataset, const std::vector<int>& indices,
                    IntrinsicKind kind, int batch_size, bool align) {
  if (indices.empty()) throw ConfigError("evaluate: no samples");
  std::vector<IntrinsicMap> pred, gt;
  ag::NoGradGuard guard;
  for (std::size_t begin = 0; begin < indices.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), begin + static_cast<std::size_t>(batch_size));
    const std::span<const int> idx(indices.data() + begin, end - begin);
    auto maps = decode_batch(predictor(image_batch(dataset, idx)), kind, dataset.manifest.resolution,
                             dataset.manifest.codec);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto& truth = dataset.samples.at(static_cast<std::size_t>(idx[i])).intrinsic(kind);
      maps[i].mask = truth.mask;
      if (align && kind != IntrinsicKind::normal) maps[i].data = align_affine(maps[i].data, truth.data, truth.mask);
      pred.push_back(std::move(maps[i]));
      gt.push_back(truth);
    }
  }
  return evaluate_maps(pred, gt);
}

Eigen::Vector3f constant_encoding(const Dataset& dataset, IntrinsicKind kind) {
  if (kind == IntrinsicKind::normal) return {0, 0, 1};
  const auto train = dataset.split_indices("train");
  const int ch = channel_count(kind);
  IntrinsicMap c;
  c.kind = kind;
  c.height = c.width = 1;
  c.mask = Mask::Constant(1, true);
  c.data.resize(ch, 1);
  if (kind == IntrinsicKind::depth) {
    std::vector<float> values;
    for (int i : train) {
      const auto& m = dataset.samples[static_cast<std::size_t>(i)].depth;
      for (int p = 0; p < m.pixels(); ++p) {
        if (m.mask(p)) values.push_back(m.data(0, p));
      }
    }
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    c.data(0, 0) = *mid;
  } else {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(ch);
    long n = 0;
    for (int i : train) {
      const auto& m = dataset.samples[static_cast<std::size_t>(i)].intrinsic(kind);
      for (int p = 0; p < m.pixels(); ++p) {
        if (!m.mask(p)) continue;
        sum += m.data.col(p).cast<double>();
        ++n;
      }
    }
    c.data = (sum / double(std::max(n, 1L))).cast<float>();
  }
  return encode_intrinsic(c, dataset.manifest.codec).data.col(0);
}

DensePredictor constant_predictor(const Dataset& dataset, IntrinsicKind kind) {
  const Eigen::Vector3f e = constant_encoding(dataset, kind);
  return [e](const ag::Tensor& rgb) -> ag::Matrix { return e.replicate(1, rgb.cols()); };
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace

nlohmann::json metrics_json(const EvalResult& r, const Provenance& p) {
  return {{"kind", std::string(to_string(r.kind))},
          {"mean_deg", opt(r.mean_deg)},
          {"median_deg", opt(r.median_deg)},
          {"l1_x100", opt(r.l1_x100)},
          {"rms", opt(r.rms)},
          {"delta_125", opt(r.delta_125)},
          {"n_pixels", r.n_pixels},
          {"provenance",
           {{"config_hash", p.config_hash},
            {"adapters_hash", p.adapters_hash},
            {"dataset_manifest_hash", p.dataset_manifest_hash}}}};
}

EvalResult eval_from_json(const nlohmann::json& j) {
  EvalResult r;
  r.kind = parse_kind(j.at("kind").get<std::string>());
  r.mean_deg = opt_from(j, "mean_deg");
  r.median_deg = opt_from(j, "median_deg");
  r.l1_x100 = opt_from(j, "l1_x100");
  r.rms = opt_from(j, "rms");
  r.delta_125 = opt_from(j, "delta_125");
  r.n_pixels = j.value("n_pixels", 0L);
  return r;
}

}  // namespace ilora
