// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// NTF tensor files: "NTF1", u8 dtype, u8 rank, rank x u32 dims (LE), then a
// raw row-major payload. dtype 1 is little-endian f32, dtype 2 is u8.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ilora {

enum class DType : std::uint8_t { f32 = 1, u8 = 2 };

struct NtfTensor {
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const;

  static NtfTensor from_f32(std::vector<std::uint32_t> dims, std::span<const float> values);
  static NtfTensor from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values);
};

void write_ntf(std::ostream& out, const NtfTensor& tensor);
/// Throws FormatError on bad magic, unknown dtype or a short payload.
NtfTensor read_ntf(std::istream& in);

void save_ntf(const std::filesystem::path& path, const NtfTensor& tensor);
NtfTensor load_ntf(const std::filesystem::path& path);

// Little-endian primitives shared by the binary formats in this project.
namespace le {
void put_u8(std::ostream& out, std::uint8_t v);
void put_u16(std::ostream& out, std::uint16_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
void put_f32s(std::ostream& out, std::span<const float> values);
std::uint8_t get_u8(std::istream& in);
std::uint16_t get_u16(std::istream& in);
std::uint32_t get_u32(std::istream& in);
float get_f32(std::istream& in);
void get_f32s(std::istream& in, std::span<float> values);
void get_bytes(std::istream& in, std::span<char> bytes);
}  // namespace le

}  // namespace ilora
