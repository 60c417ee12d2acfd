#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One named array read back from a checkpoint.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  Vector values;
  Vector mask;
};

/// Layout: 8-byte magic "MTSPCKPT", u32 version, u64 index length, JSON index
/// (names, shapes, byte offsets), then little-endian float64 payload holding
/// each array's values followed by its mask.
void save_checkpoint(const std::filesystem::path& path, std::span<const MaskedParam* const> params);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);
/// Restores values and masks by name; throws DataError on missing names or shape drift.
void load_checkpoint(const std::filesystem::path& path, std::span<MaskedParam* const> params);

}  // namespace mtsparse
