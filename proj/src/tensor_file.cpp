// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "ilora/common.hpp"

namespace ilora {

namespace le {

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_f32s(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) put_f32(out, v);
  }
}

void get_bytes(std::istream& in, std::span<char> bytes) {
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("unexpected end of file");
  }
}

std::uint8_t get_u8(std::istream& in) {
  char b;
  get_bytes(in, std::span(&b, 1));
  return static_cast<std::uint8_t>(b);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  get_bytes(in, std::span(reinterpret_cast<char*>(b), 2));
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  get_bytes(in, std::span(reinterpret_cast<char*>(b), 4));
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

void get_f32s(std::istream& in, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    get_bytes(in, std::span(reinterpret_cast<char*>(values.data()), values.size() * sizeof(float)));
  } else {
    for (float& v : values) v = get_f32(in);
  }
}

}  // namespace le

std::size_t NtfTensor::element_count() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t d) { return a * d; });
}

NtfTensor NtfTensor::from_f32(std::vector<std::uint32_t> dims, std::span<const float> values) {
  NtfTensor t;
  t.dtype = DType::f32;
  t.dims = std::move(dims);
  if (t.element_count() != values.size()) throw ConfigError("NTF: dims do not match payload size");
  t.f32.assign(values.begin(), values.end());
  return t;
}

NtfTensor NtfTensor::from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values) {
  NtfTensor t;
  t.dtype = DType::u8;
  t.dims = std::move(dims);
  if (t.element_count() != values.size()) throw ConfigError("NTF: dims do not match payload size");
  t.u8.assign(values.begin(), values.end());
  return t;
}

void write_ntf(std::ostream& out, const NtfTensor& tensor) {
  if (tensor.dims.size() > 255) throw ConfigError("NTF: rank exceeds 255");
  out.write("NTF1", 4);
  le::put_u8(out, static_cast<std::uint8_t>(tensor.dtype));
  le::put_u8(out, static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) le::put_u32(out, d);
  if (tensor.dtype == DType::f32) {
    le::put_f32s(out, tensor.f32);
  } else {
    out.write(reinterpret_cast<const char*>(tensor.u8.data()),
              static_cast<std::streamsize>(tensor.u8.size()));
  }
}

NtfTensor read_ntf(std::istream& in) {
  char magic[4];
  le::get_bytes(in, magic);
  if (std::memcmp(magic, "NTF1", 4) != 0) throw FormatError("NTF: bad magic");
  NtfTensor t;
  const auto code = le::get_u8(in);
  if (code != 1 && code != 2) throw FormatError("NTF: unknown dtype code " + std::to_string(code));
  t.dtype = static_cast<DType>(code);
  const auto rank = le::get_u8(in);
  t.dims.resize(rank);
  for (auto& d : t.dims) d = le::get_u32(in);
  const auto n = t.element_count();
  if (t.dtype == DType::f32) {
    t.f32.resize(n);
    le::get_f32s(in, t.f32);
  } else {
    t.u8.resize(n);
    le::get_bytes(in, std::span(reinterpret_cast<char*>(t.u8.data()), n));
  }
  return t;
}

void save_ntf(const std::filesystem::path& path, const NtfTensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_ntf(out, tensor);
  if (!out) throw FormatError("write failed: " + path.string());
}

NtfTensor load_ntf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return read_ntf(in);
}

}  // namespace ilora
