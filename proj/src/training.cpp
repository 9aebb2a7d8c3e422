// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace ilora {

std::vector<int> budget_subset(const Dataset& dataset, int budget, std::uint64_t seed) {
  auto pool = dataset.split_indices("train");
  if (budget < 1 || budget > static_cast<int>(pool.size())) {
    throw ConfigError("budget " + std::to_string(budget) + " outside [1, " + std::to_string(pool.size()) +
                      "] (train split size)");
  }
  Rng rng(mix_seed(seed, 0xb0d6e7));
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  pool.resize(static_cast<std::size_t>(budget));
  std::sort(pool.begin(), pool.end());
  return pool;
}

ag::Tensor image_batch(const Dataset& dataset, std::span<const int> indices) {
  const int r = dataset.manifest.resolution, px = r * r;
  ag::Matrix m(3, static_cast<Eigen::Index>(indices.size()) * px);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    m.middleCols(static_cast<Eigen::Index>(i) * px, px) = dataset.samples.at(static_cast<std::size_t>(indices[i])).rgb.data;
  }
  return ag::Tensor::constant(std::move(m), ag::Geom{static_cast<int>(indices.size()), r, r});
}

ag::Matrix target_batch(const Dataset& dataset, std::span<const int> indices, IntrinsicKind kind) {
  const int px = dataset.manifest.resolution * dataset.manifest.resolution;
  ag::Matrix m(3, static_cast<Eigen::Index>(indices.size()) * px);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& map = dataset.samples.at(static_cast<std::size_t>(indices[i])).intrinsic(kind);
    m.middleCols(static_cast<Eigen::Index>(i) * px, px) = encode_intrinsic(map, dataset.manifest.codec).data;
  }
  return m;
}

Mask mask_batch(const Dataset& dataset, std::span<const int> indices) {
  const int px = dataset.manifest.resolution * dataset.manifest.resolution;
  Mask m(static_cast<Eigen::Index>(indices.size()) * px);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    m.segment(static_cast<Eigen::Index>(i) * px, px) =
        dataset.samples.at(static_cast<std::size_t>(indices[i])).normal.mask;
  }
  return m;
}

BatchSampler::BatchSampler(std::vector<int> pool, int batch_size, std::uint64_t seed)
    : pool_(std::move(pool)), batch_size_(batch_size), rng_(seed) {
  if (pool_.empty()) throw ConfigError("batch sampler: empty pool");
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  std::shuffle(pool_.begin(), pool_.end(), rng_.engine());
}

std::vector<int> BatchSampler::next() {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  while (static_cast<int>(out.size()) < batch_size_) {
    if (cursor_ == pool_.size()) {
      std::shuffle(pool_.begin(), pool_.end(), rng_.engine());
      cursor_ = 0;
    }
    out.push_back(pool_[cursor_++]);
  }
  return out;
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& r : records) {
    const nlohmann::json j = {
        {"step", r.step}, {"loss", r.loss}, {"wall_ms", r.wall_ms}, {"peak_mem_bytes", r.peak_mem_bytes}};
    out << j.dump() << '\n';
  }
}

StepLogger::StepLogger(int log_every) : log_every_(log_every), start_(std::chrono::steady_clock::now()) {
  if (log_every_ < 1) throw ConfigError("log interval must be >= 1");
}

void StepLogger::step(double loss, std::size_t graph_bytes, std::size_t optimizer_bytes) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(log_.steps + 1));
  }
  ++log_.steps;
  log_.peak_mem_bytes = std::max(log_.peak_mem_bytes, graph_bytes + optimizer_bytes);
  window_sum_ += loss;
  ++window_count_;
  if (log_.steps % log_every_ == 0) flush();
}

void StepLogger::flush() {
  if (window_count_ == 0) return;
  LogRecord r;
  r.step = log_.steps;
  r.loss = window_sum_ / window_count_;
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  r.peak_mem_bytes = log_.peak_mem_bytes;
  log_.records.push_back(r);
  log_.final_loss = r.loss;
  window_sum_ = 0;
  window_count_ = 0;
}

TrainLog StepLogger::finish() {
  flush();
  log_.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  return std::move(log_);
}

}  // namespace ilora
