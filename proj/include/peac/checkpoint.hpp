#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "peac/pretrain.hpp"

namespace peac {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, JSON header (config, step, tensor
/// names and shapes), raw little-endian doubles for student, teacher and
/// momentum, trailing FNV-1a checksum. Written to a temporary file and
/// renamed into place. Throws DataError on I/O failure.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Throws DataError on a missing file, wrong magic, version mismatch,
/// truncation or checksum failure.
TrainState load_checkpoint(const std::filesystem::path& path);

/// *.ckpt files in a directory, sorted by name.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

}  // namespace peac
