// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Low-rank weight deltas:  o = W a + scale * W_u (W_l a).
//
// W_u (d1 x r) starts at exactly zero and W_l (r x d2) is Gaussian with
// standard deviation 1/sqrt(d2), so a fresh adapter leaves its target
// unchanged.

#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>

#include "ilora/backbone.hpp"
#include "ilora/intrinsics.hpp"

namespace ilora {

template <typename Scalar>
struct BasicLoraAdapter {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  std::string target_id;
  int d1 = 0;
  int d2 = 0;
  int rank = 0;
  Matrix up;    // W_u, d1 x rank
  Matrix down;  // W_l, rank x d2
  Scalar scale = Scalar(1);

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(rank) * static_cast<std::size_t>(d1 + d2);
  }
};

using LoraAdapter = BasicLoraAdapter<float>;

template <typename Scalar = float>
BasicLoraAdapter<Scalar> make_adapter(std::string target_id, int d1, int d2, int rank, std::uint64_t seed) {
  if (d1 < 1 || d2 < 1) throw ConfigError("make_adapter: non-positive target shape");
  if (rank < 1 || rank > std::min(d1, d2)) {
    throw ConfigError("make_adapter: rank " + std::to_string(rank) + " outside [1, " + std::to_string(std::min(d1, d2)) +
                      "] for " + target_id);
  }
  BasicLoraAdapter<Scalar> a;
  a.target_id = std::move(target_id);
  a.d1 = d1;
  a.d2 = d2;
  a.rank = rank;
  a.up.setZero(d1, rank);
  a.down.resize(rank, d2);
  Rng rng(seed);
  const double sd = 1.0 / std::sqrt(double(d2));
  for (Eigen::Index i = 0; i < a.down.size(); ++i) a.down.data()[i] = Scalar(rng.normal(0.0, sd));
  return a;
}

/// W a + scale * W_u (W_l a) for a single vector or a batch of columns.
template <typename DerivedW, typename DerivedA>
Eigen::Matrix<typename DerivedW::Scalar, Eigen::Dynamic, Eigen::Dynamic> adapted_forward(
    const Eigen::MatrixBase<DerivedW>& w, const BasicLoraAdapter<typename DerivedW::Scalar>& adapter,
    const Eigen::MatrixBase<DerivedA>& a) {
  if (w.rows() != adapter.d1 || w.cols() != adapter.d2 || a.rows() != adapter.d2) {
    throw ConfigError("adapted_forward: shape mismatch for " + adapter.target_id);
  }
  return w * a + adapter.scale * (adapter.up * (adapter.down * a));
}

struct AdapterSet {
  std::map<std::string, LoraAdapter> adapters;
  Digest backbone_fingerprint{};
  IntrinsicKind kind = IntrinsicKind::normal;
  TargetSelector selector = TargetSelector::all_attn;
  bool consumed = false;

  std::size_t parameter_count() const;
  /// Digest over names and factor bits.
  Digest hash() const;
};

/// Creates one fresh adapter per selected weight and routes the backbone
/// through them. Adapter i uses seed mix_seed(seed, i) in name order.
AdapterSet inject(Backbone& backbone, TargetSelector selector, int rank, std::uint64_t seed,
                  IntrinsicKind kind = IntrinsicKind::normal);

/// Installs an existing set as trainable slots (fingerprints must match).
void attach(Backbone& backbone, const AdapterSet& set);
/// Copies the slot values of the backbone back into the set.
void sync_from(const Backbone& backbone, AdapterSet& set);
/// Slot leaves, in adapter name order (W_u then W_l each).
std::vector<ag::Tensor> adapter_parameters(const Backbone& backbone);

/// Adapter parameters over backbone parameters.
double param_fraction(const AdapterSet& set, const Backbone& backbone);
double param_fraction(double adapter_params, double backbone_params);
/// Fraction rendered as a percentage, e.g. 0.0016858 -> "0.17%".
std::string format_percent(double fraction, int decimals = 2);

/// Folds W + scale W_u W_l into each target and removes the slots. A set can
/// be merged once.
void merge(AdapterSet& set, Backbone& backbone);

void save_adapters(const AdapterSet& set, const std::filesystem::path& path);
/// Parses an adapter file without a backbone (selector left at all_attn).
AdapterSet read_adapters(const std::filesystem::path& path, IntrinsicKind kind = IntrinsicKind::normal);
/// Parses and checks the file against a backbone, inferring the selector.
AdapterSet load_adapters(const std::filesystem::path& path, const Backbone& backbone,
                         IntrinsicKind kind = IntrinsicKind::normal);

}  // namespace ilora
