// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/intrinsics.hpp"

namespace ilora {

std::string_view to_string(IntrinsicKind kind) {
  switch (kind) {
    case IntrinsicKind::normal: return "normal";
    case IntrinsicKind::depth: return "depth";
    case IntrinsicKind::albedo: return "albedo";
    case IntrinsicKind::shading: return "shading";
  }
  return "unknown";
}

IntrinsicKind parse_kind(std::string_view text) {
  for (auto k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown intrinsic kind: " + std::string(text));
}

Digest hash_field(const FieldMatrix<float>& data) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size() * sizeof(float)));
}

namespace {
std::vector<std::uint32_t> hwc(int h, int w, int c) {
  return {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(c)};
}
}  // namespace

NtfTensor to_ntf(const Image& image) {
  return NtfTensor::from_f32(hwc(image.height, image.width, 3),
                             std::span(image.data.data(), static_cast<std::size_t>(image.data.size())));
}

NtfTensor to_ntf(const IntrinsicMap& map) {
  return NtfTensor::from_f32(hwc(map.height, map.width, static_cast<int>(map.data.rows())),
                             std::span(map.data.data(), static_cast<std::size_t>(map.data.size())));
}

NtfTensor mask_to_ntf(const Mask& mask, int height, int width) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) bytes[static_cast<std::size_t>(i)] = mask(i) ? 1 : 0;
  return NtfTensor::from_u8({static_cast<std::uint32_t>(height), static_cast<std::uint32_t>(width)}, bytes);
}

Image image_from_ntf(const NtfTensor& t) {
  if (t.dtype != DType::f32 || t.dims.size() != 3 || t.dims[2] != 3) throw FormatError("NTF: not an RGB image");
  Image img;
  img.height = static_cast<int>(t.dims[0]);
  img.width = static_cast<int>(t.dims[1]);
  img.data = Eigen::Map<const FieldMatrix<float>>(t.f32.data(), 3, img.pixels());
  return img;
}

IntrinsicMap map_from_ntf(IntrinsicKind kind, const NtfTensor& t, const Mask& mask) {
  const auto c = static_cast<std::uint32_t>(channel_count(kind));
  if (t.dtype != DType::f32 || t.dims.size() != 3 || t.dims[2] != c) {
    throw FormatError("NTF: wrong layout for " + std::string(to_string(kind)) + " map");
  }
  IntrinsicMap m;
  m.kind = kind;
  m.height = static_cast<int>(t.dims[0]);
  m.width = static_cast<int>(t.dims[1]);
  m.data = Eigen::Map<const FieldMatrix<float>>(t.f32.data(), c, m.pixels());
  if (mask.size() != m.pixels()) throw FormatError("NTF: mask size mismatch");
  m.mask = mask;
  return m;
}

Mask mask_from_ntf(const NtfTensor& t) {
  if (t.dtype != DType::u8 || t.dims.size() != 2) throw FormatError("NTF: not a mask");
  Mask m(static_cast<Eigen::Index>(t.u8.size()));
  for (std::size_t i = 0; i < t.u8.size(); ++i) m(static_cast<Eigen::Index>(i)) = t.u8[i] != 0;
  return m;
}

}  // namespace ilora
