// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, version 1. All integers and floats little-endian:
//
//   magic    8 bytes  "SPATTNCK"
//   version  u32      1
//   count    u32      number of entries
//   entry    u32 name length, name bytes (UTF-8),
//            u32 rank, rank x u64 dims,
//            prod(dims) x f64 values in row-major order
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sparseattn/model.hpp"
#include "sparseattn/tensor.hpp"

namespace sparseattn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Loads into params, which must already have the checkpoint's layout.
void load_checkpoint(const std::filesystem::path& path, ModelParams& params);

}  // namespace sparseattn
