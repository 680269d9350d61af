#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "fsvos/data.hpp"

namespace fsvos {

/// On-disk layout:
///   manifest.json
///   images/<class>/<index>.png   masks/<class>/<index>.png      base classes
///   clips/<class>/<clip>/frame_<t>.png, mask_<t>.png             novel classes
///
/// Writing is deterministic: the same config produces byte-identical files.
/// Returns the manifest.
nlohmann::json write_dataset(const SynthConfig& cfg, int images_per_class, int clips_per_class,
                             const std::filesystem::path& dir);

nlohmann::json read_dataset_manifest(const std::filesystem::path& dir);

/// Base-class training images listed in the manifest.
std::vector<LabeledImage> load_image_dataset(const std::filesystem::path& dir);

/// Novel-class clips listed in the manifest, in manifest order.
std::vector<VideoClip> load_clips(const std::filesystem::path& dir);

}  // namespace fsvos
