#pragma once

#include <filesystem>

#include "fsvos/data.hpp"

namespace fsvos {

// 8-bit PNG. Images with 1 or 3 channels; values are quantized to 0..255.
void write_png(const std::filesystem::path& path, const Image& image);
// Masks are stored as {0,255}.
void write_png(const std::filesystem::path& path, const Mask& mask);

Image read_png_image(const std::filesystem::path& path);
// Rejects anything other than {0,255} with ValidationError.
Mask read_png_mask(const std::filesystem::path& path);

/// Frame with the mask region tinted green.
Image overlay(const Image& frame, const Mask& mask);

}  // namespace fsvos
