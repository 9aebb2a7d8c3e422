// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Backbone checkpoints: "ILCK", u32 version, u16-prefixed family tag,
// u32-prefixed JSON config, 32-byte fingerprint, u32 tensor count, then per
// tensor a u16-prefixed name followed by an NTF blob (rank 2, d1 x d2).

#pragma once

#include <filesystem>
#include <memory>

#include "ilora/backbone.hpp"

namespace ilora {

void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path);

/// Rebuilds the backbone family named in the file and restores its weights.
std::unique_ptr<Backbone> load_checkpoint(const std::filesystem::path& path);

template <typename T>
std::unique_ptr<T> load_checkpoint_as(const std::filesystem::path& path) {
  auto base = load_checkpoint(path);
  auto* typed = dynamic_cast<T*>(base.get());
  if (typed == nullptr) throw FormatError(path.string() + " holds a " + std::string(base->family()) + " backbone");
  base.release();
  return std::unique_ptr<T>(typed);
}

}  // namespace ilora
