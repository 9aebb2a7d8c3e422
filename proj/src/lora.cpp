// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/lora.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ilora/tensor_file.hpp"

namespace ilora {

namespace {
constexpr char kMagic[4] = {'I', 'L', 'R', 'A'};
constexpr std::uint32_t kVersion = 1;

void require_fingerprint(const AdapterSet& set, const Backbone& backbone) {
  const Digest fp = backbone.fingerprint();
  if (set.backbone_fingerprint != fp) {
    throw FormatError("adapter fingerprint " + to_hex(set.backbone_fingerprint) + " does not match backbone " +
                      to_hex(fp));
  }
}
}  // namespace

std::size_t AdapterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, a] : adapters) n += a.parameter_count();
  return n;
}

Digest AdapterSet::hash() const {
  Hasher h;
  for (const auto& [name, a] : adapters) {
    h.update(name);
    h.update_pod(a.scale);
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(a.down.data()), sizeof(float) * a.down.size()));
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(a.up.data()), sizeof(float) * a.up.size()));
  }
  return h.finish();
}

AdapterSet inject(Backbone& backbone, TargetSelector selector, int rank, std::uint64_t seed, IntrinsicKind kind) {
  auto names = backbone.select_targets(selector);
  if (names.empty()) throw ConfigError("selector " + std::string(to_string(selector)) + " matched no weights");
  std::sort(names.begin(), names.end());
  AdapterSet set;
  set.backbone_fingerprint = backbone.fingerprint();
  set.kind = kind;
  set.selector = selector;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& w = backbone.param(names[i]);
    set.adapters.emplace(names[i], make_adapter(names[i], static_cast<int>(w.rows()), static_cast<int>(w.cols()), rank,
                                                mix_seed(seed, i)));
  }
  attach(backbone, set);
  return set;
}

void attach(Backbone& backbone, const AdapterSet& set) {
  require_fingerprint(set, backbone);
  if (set.consumed) throw ConfigError("adapter set was already merged");
  backbone.clear_slots();
  for (const auto& [name, a] : set.adapters) {
    backbone.set_slot(name, LoraSlot{ag::Tensor::leaf(a.up), ag::Tensor::leaf(a.down), a.scale});
  }
}

void sync_from(const Backbone& backbone, AdapterSet& set) {
  for (auto& [name, a] : set.adapters) {
    const auto it = backbone.slots().find(name);
    if (it == backbone.slots().end()) throw ConfigError("backbone has no adapter slot for " + name);
    a.up = it->second.up.value();
    a.down = it->second.down.value();
  }
}

std::vector<ag::Tensor> adapter_parameters(const Backbone& backbone) {
  std::vector<ag::Tensor> out;
  for (const auto& [name, slot] : backbone.slots()) {
    out.push_back(slot.up);
    out.push_back(slot.down);
  }
  return out;
}

double param_fraction(double adapter_params, double backbone_params) {
  if (!(backbone_params > 0)) throw ConfigError("param_fraction: backbone has no parameters");
  return adapter_params / backbone_params;
}

double param_fraction(const AdapterSet& set, const Backbone& backbone) {
  return param_fraction(static_cast<double>(set.parameter_count()), static_cast<double>(backbone.parameter_count()));
}

std::string format_percent(double fraction, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f%%", decimals, 100.0 * fraction);
  return buf;
}

void merge(AdapterSet& set, Backbone& backbone) {
  if (set.consumed) throw ConfigError("adapter set was already merged");
  require_fingerprint(set, backbone);
  for (const auto& [name, a] : set.adapters) {
    backbone.add_to_weight(name, a.scale * (a.up * a.down));
  }
  backbone.clear_slots();
  set.consumed = true;
}

void save_adapters(const AdapterSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kMagic, 4);
  le::put_u32(out, kVersion);
  out.write(reinterpret_cast<const char*>(set.backbone_fingerprint.data()), 32);
  le::put_u32(out, static_cast<std::uint32_t>(set.adapters.size()));
  for (const auto& [name, a] : set.adapters) {
    le::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put_u32(out, static_cast<std::uint32_t>(a.d1));
    le::put_u32(out, static_cast<std::uint32_t>(a.d2));
    le::put_u32(out, static_cast<std::uint32_t>(a.rank));
    le::put_f32(out, a.scale);
    // Row-major payloads.
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> down = a.down, up = a.up;
    le::put_f32s(out, std::span(down.data(), static_cast<std::size_t>(down.size())));
    le::put_f32s(out, std::span(up.data(), static_cast<std::size_t>(up.size())));
  }
  if (!out) throw FormatError("short write to " + path.string());
}

AdapterSet read_adapters(const std::filesystem::path& path, IntrinsicKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  le::get_bytes(in, magic);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(path.string() + " is not an adapter file");
  if (const auto v = le::get_u32(in); v != kVersion) throw FormatError("unsupported adapter file version " + std::to_string(v));
  AdapterSet set;
  set.kind = kind;
  le::get_bytes(in, std::span(reinterpret_cast<char*>(set.backbone_fingerprint.data()), 32));
  const std::uint32_t count = le::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    LoraAdapter a;
    a.target_id.resize(le::get_u16(in));
    le::get_bytes(in, std::span(a.target_id.data(), a.target_id.size()));
    a.d1 = static_cast<int>(le::get_u32(in));
    a.d2 = static_cast<int>(le::get_u32(in));
    a.rank = static_cast<int>(le::get_u32(in));
    a.scale = le::get_f32(in);
    if (a.rank < 1 || a.rank > std::min(a.d1, a.d2)) throw FormatError("adapter " + a.target_id + ": bad rank");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> down(a.rank, a.d2), up(a.d1, a.rank);
    le::get_f32s(in, std::span(down.data(), static_cast<std::size_t>(down.size())));
    le::get_f32s(in, std::span(up.data(), static_cast<std::size_t>(up.size())));
    a.down = down;
    a.up = up;
    if (!set.adapters.emplace(a.target_id, std::move(a)).second) throw FormatError("duplicate adapter name in file");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return set;
}

AdapterSet load_adapters(const std::filesystem::path& path, const Backbone& backbone, IntrinsicKind kind) {
  AdapterSet set = read_adapters(path, kind);
  require_fingerprint(set, backbone);
  std::set<std::string> names;
  for (const auto& [name, a] : set.adapters) {
    const auto& w = backbone.param(name);
    if (w.rows() != a.d1 || w.cols() != a.d2) throw FormatError("adapter " + name + " does not fit its weight");
    names.insert(name);
  }
  for (auto s : kAllSelectors) {
    std::vector<std::string> match;
    try {
      match = backbone.select_targets(s);
    } catch (const ConfigError&) {
      continue;
    }
    if (std::set<std::string>(match.begin(), match.end()) == names) {
      set.selector = s;
      return set;
    }
  }
  throw FormatError("adapter targets in " + path.string() + " match no selector");
}

}  // namespace ilora
