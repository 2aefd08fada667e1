#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "agspnet/raster.hpp"

namespace agspnet::io {

/// Writes an 8-bit RGB PNG. Band values are rounded and clamped to 0..255.
inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.width()) * img.height() * 3);
  for (std::size_t i = 0; i < img.bands[0].size(); ++i) {
    for (int b = 0; b < 3; ++b) {
      buf[i * 3 + b] = static_cast<std::uint8_t>(std::clamp(std::lround(img.bands[b][i]), 0L, 255L));
    }
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

/// Reads any PNG as 8-bit RGB. PNG carries no georeferencing, so the
/// caller supplies origin and pixel size (default: unit frame).
inline RgbImage read_png(const std::filesystem::path& path, double origin_x = 0.0,
                         double origin_y = NAN, double pixel_size = 1.0) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  GeoFrame f{w, h, origin_x, std::isnan(origin_y) ? h * pixel_size : origin_y, pixel_size};
  RgbImage img(f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int b = 0; b < 3; ++b) img.bands[b][i] = buf[i * 3 + b];
  }
  return img;
}

}  // namespace agspnet::io
