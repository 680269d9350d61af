#include "fsvos/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "fsvos/errors.hpp"

namespace fsvos {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                const std::vector<std::uint8_t>& bytes, int channels) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

RawPng read_raw(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);

  RawPng raw;
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.bytes.resize(stride * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("PNG export supports 1 or 3 channels");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.height) * image.width * image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        bytes[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] = quantize(image.at(c, y, x));
      }
  write_rows(path, image.width, image.height, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
             bytes, image.channels);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
  validate_binary(mask);
  std::vector<std::uint8_t> bytes(mask.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] ? 255 : 0;
  write_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

Image read_png_image(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  Image img(raw.channels, raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < raw.channels; ++c) {
        img.at(c, y, x) = raw.bytes[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels + c] / 255.0;
      }
  return img;
}

Mask read_png_mask(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  if (raw.channels != 1) throw ValidationError("mask PNG must be single-channel: " + path.string());
  Mask mask(raw.height, raw.width);
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const auto v = raw.bytes[i];
    if (v != 0 && v != 255) throw ValidationError("mask PNG has values other than 0/255: " + path.string());
    mask.values[i] = v ? 1 : 0;
  }
  return mask;
}

Image overlay(const Image& frame, const Mask& mask) {
  Image out(3, frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double base = frame.at(frame.channels == 3 ? c : 0, y, x);
        const double tint = (c == 1) ? 1.0 : 0.0;
        out.at(c, y, x) = mask.at(y, x) ? 0.5 * base + 0.5 * tint : base;
      }
  return out;
}

}  // namespace fsvos
