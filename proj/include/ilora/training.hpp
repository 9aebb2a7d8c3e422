// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Shared training plumbing: deterministic data subsets and batches, and the
// JSON-lines step log.

#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <vector>

#include "ilora/autograd.hpp"
#include "ilora/scene.hpp"

namespace ilora {

/// `budget` train-split indices: seeded shuffle, take the first `budget`,
/// then sort ascending.
std::vector<int> budget_subset(const Dataset& dataset, int budget, std::uint64_t seed);

/// Model-space RGB for the given samples, 3 x (B*R*R).
ag::Tensor image_batch(const Dataset& dataset, std::span<const int> indices);
/// Encoded targets, 3 x (B*R*R).
ag::Matrix target_batch(const Dataset& dataset, std::span<const int> indices, IntrinsicKind kind);
Mask mask_batch(const Dataset& dataset, std::span<const int> indices);

/// Cycles through a pool in reshuffled epochs.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> pool, int batch_size, std::uint64_t seed);
  std::vector<int> next();

 private:
  std::vector<int> pool_;
  int batch_size_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

struct LogRecord {
  int step = 0;
  double loss = 0;  // mean over the steps since the previous record
  double wall_ms = 0;
  std::size_t peak_mem_bytes = 0;
};

struct TrainLog {
  std::vector<LogRecord> records;
  int steps = 0;
  double wall_ms = 0;
  std::size_t peak_mem_bytes = 0;
  double final_loss = 0;
  std::vector<int> null_samples;  // per step, guidance-dropout runs only
  int samples_per_step = 0;

  double steps_per_sec() const { return wall_ms > 0 ? 1000.0 * steps / wall_ms : 0.0; }
  void write_jsonl(const std::filesystem::path& path) const;
};

/// Accumulates losses and resources across steps. Throws DivergenceError on a
/// non-finite loss.
class StepLogger {
 public:
  explicit StepLogger(int log_every = 50);
  void step(double loss, std::size_t graph_bytes, std::size_t optimizer_bytes);
  TrainLog finish();
  TrainLog& log() { return log_; }

 private:
  void flush();

  int log_every_;
  TrainLog log_;
  double window_sum_ = 0;
  int window_count_ = 0;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace ilora
