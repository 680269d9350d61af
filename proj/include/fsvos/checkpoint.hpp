#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsvos/model_state.hpp"

namespace fsvos {

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::string& bytes);

/// Checkpoint directory layout:
///   manifest.json  architecture, parameter table (name, shape, dtype, frozen,
///                  offset, count), metadata, weights sha256
///   weights.bin    float64 little-endian values in manifest order
///
/// save_checkpoint returns the weights hash, which also identifies the
/// checkpoint (recorded as "source_checkpoint" by derived runs).
std::string save_checkpoint(const ModelState& model, const std::filesystem::path& dir);

/// Throws IoError when files are missing or unreadable and ValidationError when
/// the manifest is malformed or the weights hash does not match.
ModelState load_checkpoint(const std::filesystem::path& dir);

/// Weights hash stored in a checkpoint manifest, without loading weights.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace fsvos
