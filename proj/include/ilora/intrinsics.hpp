// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Intrinsic-image domain types and the codec that maps every intrinsic into
// the generator's 3-channel [-1, 1] output space.
//
// Dense fields are stored channels x pixels with pixels in row-major (y, x)
// order, so the raw buffer is exactly a row-major H x W x C tensor.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include "ilora/common.hpp"
#include "ilora/tensor_file.hpp"

namespace ilora {

enum class IntrinsicKind : std::uint8_t { normal, depth, albedo, shading };

inline constexpr std::array<IntrinsicKind, 4> kAllKinds = {
    IntrinsicKind::normal, IntrinsicKind::depth, IntrinsicKind::albedo, IntrinsicKind::shading};

std::string_view to_string(IntrinsicKind kind);
IntrinsicKind parse_kind(std::string_view text);

constexpr int channel_count(IntrinsicKind kind) {
  return (kind == IntrinsicKind::normal || kind == IntrinsicKind::albedo) ? 3 : 1;
}

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

template <typename Scalar>
using FieldMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// RGB image in model space. data is 3 x (height*width).
template <typename Scalar>
struct BasicImage {
  int height = 0;
  int width = 0;
  FieldMatrix<Scalar> data;
  Scalar lo = Scalar(-1);
  Scalar hi = Scalar(1);

  int pixels() const { return height * width; }
};

template <typename Scalar>
struct BasicIntrinsicMap {
  IntrinsicKind kind = IntrinsicKind::normal;
  int height = 0;
  int width = 0;
  FieldMatrix<Scalar> data;  // channel_count(kind) x pixels
  Mask mask;                 // true = valid

  int pixels() const { return height * width; }
};

struct CodecParams {
  double depth_min = 0.5;
  double depth_max = 20.0;
  double shading_max = 1.5;
};

template <typename Scalar>
struct BasicEncodedTarget {
  IntrinsicKind kind = IntrinsicKind::normal;
  int height = 0;
  int width = 0;
  FieldMatrix<Scalar> data;  // 3 x pixels in [-1, 1]
  CodecParams codec;
};

using Image = BasicImage<float>;
using IntrinsicMap = BasicIntrinsicMap<float>;
using EncodedTarget = BasicEncodedTarget<float>;

/// Throws ConfigError describing the first violated invariant, if any.
template <typename Scalar>
void validate(const BasicIntrinsicMap<Scalar>& map, double normal_tol = 1e-4);

template <typename Scalar>
BasicEncodedTarget<Scalar> encode_intrinsic(const BasicIntrinsicMap<Scalar>& map, const CodecParams& codec);

template <typename Scalar>
BasicIntrinsicMap<Scalar> decode_intrinsic(const BasicEncodedTarget<Scalar>& enc);

/// Bit pattern digest of a float field, for immutability checks.
Digest hash_field(const FieldMatrix<float>& data);

NtfTensor to_ntf(const Image& image);
NtfTensor to_ntf(const IntrinsicMap& map);
NtfTensor mask_to_ntf(const Mask& mask, int height, int width);
Image image_from_ntf(const NtfTensor& t);
IntrinsicMap map_from_ntf(IntrinsicKind kind, const NtfTensor& t, const Mask& mask);
Mask mask_from_ntf(const NtfTensor& t);

// ---------------------------------------------------------------------------

namespace detail {
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.array().isFinite().all();
}
}  // namespace detail

template <typename Scalar>
void validate(const BasicIntrinsicMap<Scalar>& map, double normal_tol) {
  const int n = map.pixels();
  if (map.data.cols() != n || map.data.rows() != channel_count(map.kind) || map.mask.size() != n) {
    throw ConfigError("intrinsic map: shape mismatch");
  }
  if (!detail::all_finite(map.data)) throw ConfigError("intrinsic map: non-finite entries");
  for (int p = 0; p < n; ++p) {
    if (!map.mask(p)) continue;
    const auto col = map.data.col(p);
    switch (map.kind) {
      case IntrinsicKind::normal:
        if (std::abs(double(col.norm()) - 1.0) > normal_tol) {
          throw ConfigError("normal map: non-unit normal at pixel " + std::to_string(p));
        }
        break;
      case IntrinsicKind::depth:
        if (!(col(0) > Scalar(0))) throw ConfigError("depth map: non-positive depth at pixel " + std::to_string(p));
        break;
      case IntrinsicKind::albedo:
        if ((col.array() < Scalar(0)).any() || (col.array() > Scalar(1)).any()) {
          throw ConfigError("albedo map: entry outside [0,1] at pixel " + std::to_string(p));
        }
        break;
      case IntrinsicKind::shading:
        if (col(0) < Scalar(0)) throw ConfigError("shading map: negative entry at pixel " + std::to_string(p));
        break;
    }
  }
}

template <typename Scalar>
BasicEncodedTarget<Scalar> encode_intrinsic(const BasicIntrinsicMap<Scalar>& map, const CodecParams& codec) {
  if (!(codec.depth_min < codec.depth_max)) throw ConfigError("codec: depth_min must be < depth_max");
  if (!(codec.shading_max > 0)) throw ConfigError("codec: shading_max must be > 0");
  const int n = map.pixels();
  if (map.data.cols() != n || map.data.rows() != channel_count(map.kind)) {
    throw ConfigError("encode_intrinsic: shape mismatch");
  }
  if (!detail::all_finite(map.data)) {
    throw ConfigError(std::string("encode_intrinsic: non-finite input in ") + std::string(to_string(map.kind)) + " map");
  }
  BasicEncodedTarget<Scalar> out;
  out.kind = map.kind;
  out.height = map.height;
  out.width = map.width;
  out.codec = codec;
  out.data = FieldMatrix<Scalar>::Zero(3, n);

  const auto clamp1 = [](double v) { return std::clamp(v, -1.0, 1.0); };
  for (int p = 0; p < n; ++p) {
    if (map.mask.size() == n && !map.mask(p)) continue;
    switch (map.kind) {
      case IntrinsicKind::normal:
        for (int c = 0; c < 3; ++c) out.data(c, p) = Scalar(clamp1(double(map.data(c, p))));
        break;
      case IntrinsicKind::albedo:
        for (int c = 0; c < 3; ++c) out.data(c, p) = Scalar(clamp1(2.0 * double(map.data(c, p)) - 1.0));
        break;
      case IntrinsicKind::depth: {
        const double e =
            clamp1(2.0 * (double(map.data(0, p)) - codec.depth_min) / (codec.depth_max - codec.depth_min) - 1.0);
        out.data.col(p).setConstant(Scalar(e));
        break;
      }
      case IntrinsicKind::shading: {
        const double e = clamp1(2.0 * double(map.data(0, p)) / codec.shading_max - 1.0);
        out.data.col(p).setConstant(Scalar(e));
        break;
      }
    }
  }
  return out;
}

template <typename Scalar>
BasicIntrinsicMap<Scalar> decode_intrinsic(const BasicEncodedTarget<Scalar>& enc) {
  const int n = enc.height * enc.width;
  if (enc.data.rows() != 3 || enc.data.cols() != n) throw ConfigError("decode_intrinsic: shape mismatch");
  if (!detail::all_finite(enc.data)) throw ConfigError("decode_intrinsic: non-finite input");
  BasicIntrinsicMap<Scalar> out;
  out.kind = enc.kind;
  out.height = enc.height;
  out.width = enc.width;
  out.mask = Mask::Constant(n, true);
  out.data.resize(channel_count(enc.kind), n);
  const auto& codec = enc.codec;
  for (int p = 0; p < n; ++p) {
    switch (enc.kind) {
      case IntrinsicKind::normal: {
        const Eigen::Vector3d v = enc.data.col(p).template cast<double>();
        const double len = v.norm();
        out.data.col(p) = len < 1e-6 ? Eigen::Matrix<Scalar, 3, 1>(0, 0, 1)
                                     : Eigen::Matrix<Scalar, 3, 1>((v / len).template cast<Scalar>());
        break;
      }
      case IntrinsicKind::albedo:
        for (int c = 0; c < 3; ++c) out.data(c, p) = Scalar((double(enc.data(c, p)) + 1.0) * 0.5);
        break;
      case IntrinsicKind::depth: {
        const double e = enc.data.col(p).template cast<double>().mean();
        out.data(0, p) = Scalar((e + 1.0) * 0.5 * (codec.depth_max - codec.depth_min) + codec.depth_min);
        break;
      }
      case IntrinsicKind::shading: {
        const double e = enc.data.col(p).template cast<double>().mean();
        out.data(0, p) = Scalar((e + 1.0) * 0.5 * codec.shading_max);
        break;
      }
    }
  }
  return out;
}

}  // namespace ilora
