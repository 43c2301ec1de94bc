#pragma once

#include "patchail/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace patchail {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "PTCK", u32 version, then per tensor
// u32 name length, name bytes, u32 rank, u32 extents[rank], f64 values.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `targets` by name. Every target must be present
/// with the same shape; std::runtime_error otherwise.
void restore_checkpoint(const std::filesystem::path& path, const NamedTensors& targets);

}  // namespace patchail
