// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/checkpoint.hpp"

#include <fstream>

#include "ilora/style_gan.hpp"
#include "ilora/tensor_file.hpp"
#include "ilora/unet.hpp"
#include "ilora/vq.hpp"

namespace ilora {

namespace {
constexpr char kMagic[4] = {'I', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::unique_ptr<Backbone> build(std::string_view family, const nlohmann::json& config) {
  if (family == "unet") return std::make_unique<UNet>(UNetConfig::from_json(config));
  if (family == "style_gan") return std::make_unique<StyleGenerator>(StyleConfig::from_json(config));
  if (family == "vq") return std::make_unique<VQAutoencoder>(VQConfig::from_json(config));
  throw FormatError("unknown backbone family " + std::string(family));
}

// NTF blobs are row-major; Eigen matrices here are column-major.
NtfTensor matrix_to_ntf(const ag::Matrix& m) {
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return NtfTensor::from_f32({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                             std::span(rm.data(), static_cast<std::size_t>(rm.size())));
}

ag::Matrix ntf_to_matrix(const NtfTensor& t) {
  if (t.dtype != DType::f32 || t.dims.size() != 2) throw FormatError("checkpoint tensor must be a rank-2 f32 NTF");
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.f32.data(), t.dims[0], t.dims[1]);
}
}  // namespace

void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kMagic, 4);
  le::put_u32(out, kVersion);
  const std::string family(backbone.family());
  le::put_u16(out, static_cast<std::uint16_t>(family.size()));
  out.write(family.data(), static_cast<std::streamsize>(family.size()));
  const std::string config = backbone.config_json().dump();
  le::put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const Digest fp = backbone.fingerprint();
  out.write(reinterpret_cast<const char*>(fp.data()), 32);
  const auto state = backbone.state();
  le::put_u32(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, m] : state) {
    le::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_ntf(out, matrix_to_ntf(m));
  }
  if (!out) throw FormatError("short write to " + path.string());
}

std::unique_ptr<Backbone> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  le::get_bytes(in, magic);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(path.string() + " is not a checkpoint");
  if (le::get_u32(in) != kVersion) throw FormatError("unsupported checkpoint version");
  std::string family(le::get_u16(in), '\0');
  le::get_bytes(in, std::span(family.data(), family.size()));
  std::string config(le::get_u32(in), '\0');
  le::get_bytes(in, std::span(config.data(), config.size()));
  Digest fp;
  le::get_bytes(in, std::span(reinterpret_cast<char*>(fp.data()), 32));

  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  auto backbone = build(family, cfg);
  if (backbone->fingerprint() != fp) {
    throw FormatError("checkpoint fingerprint " + to_hex(fp) + " does not match rebuilt " +
                      to_hex(backbone->fingerprint()));
  }
  std::vector<std::pair<std::string, ag::Matrix>> state(le::get_u32(in));
  for (auto& [name, m] : state) {
    name.resize(le::get_u16(in));
    le::get_bytes(in, std::span(name.data(), name.size()));
    m = ntf_to_matrix(read_ntf(in));
  }
  backbone->load_state(state);
  return backbone;
}

}  // namespace ilora
