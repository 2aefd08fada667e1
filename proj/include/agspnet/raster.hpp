#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agspnet/error.hpp"

namespace agspnet {

/// Placement of a north-up grid in map units. (origin_x, origin_y) is the
/// outer corner of the top-left cell; rows grow southwards.
struct GeoFrame {
  int width = 0;
  int height = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(width) * height; }
  bool contains(int col, int row) const {
    return col >= 0 && row >= 0 && col < width && row < height;
  }
  double x_of(double col) const { return origin_x + col * pixel_size; }
  double y_of(double row) const { return origin_y - row * pixel_size; }
  double col_of(double x) const { return (x - origin_x) / pixel_size; }
  double row_of(double y) const { return (origin_y - y) / pixel_size; }

  friend bool operator==(const GeoFrame&, const GeoFrame&) = default;

  /// Frame with origin (0, height) so map coordinates equal pixel-edge
  /// coordinates with y flipped; convenient for tests.
  static GeoFrame unit(int width, int height, double pixel_size = 1.0) {
    return {width, height, 0.0, height * pixel_size, pixel_size};
  }
};

inline void validate(const GeoFrame& f) {
  require(f.width > 0 && f.height > 0, "raster dimensions must be positive");
  require(f.pixel_size > 0.0 && std::isfinite(f.pixel_size), "pixel_size must be > 0");
}

/// Row-major single-band grid. Continuous layers use float, categorical
/// layers std::uint16_t, masks std::uint8_t with cells in {0, 1}.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  explicit Raster(const GeoFrame& frame, T fill = T{}) : frame_(frame), cells_(frame.size(), fill) {
    validate(frame_);
  }
  Raster(const GeoFrame& frame, std::vector<T> cells) : frame_(frame), cells_(std::move(cells)) {
    validate(frame_);
    require(cells_.size() == frame_.size(), "cells.length must equal width x height");
  }

  const GeoFrame& frame() const { return frame_; }
  int width() const { return frame_.width; }
  int height() const { return frame_.height; }
  std::size_t size() const { return cells_.size(); }

  T& operator()(int col, int row) { return cells_[index(col, row)]; }
  const T& operator()(int col, int row) const { return cells_[index(col, row)]; }
  T& operator[](std::size_t i) { return cells_[i]; }
  const T& operator[](std::size_t i) const { return cells_[i]; }

  /// Border-clamped read.
  T clamped(int col, int row) const {
    col = std::clamp(col, 0, frame_.width - 1);
    row = std::clamp(row, 0, frame_.height - 1);
    return (*this)(col, row);
  }

  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * frame_.width + col;
  }

  std::vector<T>& cells() { return cells_; }
  const std::vector<T>& cells() const { return cells_; }

  const std::optional<double>& nodata() const { return nodata_; }
  void set_nodata(std::optional<double> v) { nodata_ = v; }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.frame_ == b.frame_ && a.cells_ == b.cells_;
  }

 private:
  GeoFrame frame_;
  std::vector<T> cells_;
  std::optional<double> nodata_;
};

using FloatRaster = Raster<float>;
using LabelRaster = Raster<std::uint16_t>;
using BinaryMask = Raster<std::uint8_t>;

template <typename A, typename B>
bool aligned(const Raster<A>& a, const Raster<B>& b) {
  return a.frame() == b.frame();
}

template <typename A, typename B>
void require_aligned(const Raster<A>& a, const Raster<B>& b, const std::string& context) {
  if (!aligned(a, b)) throw DataError(context + ": rasters are not aligned");
}

template <typename Out, typename In, typename F>
Raster<Out> map_cells(const Raster<In>& in, F&& f) {
  Raster<Out> out(in.frame());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

inline std::size_t count_ones(const BinaryMask& m) {
  return static_cast<std::size_t>(std::count(m.cells().begin(), m.cells().end(), std::uint8_t{1}));
}

/// Nearest-neighbour resampling of `src` onto `target` (cell centres).
/// Cells whose centre falls outside `src` take `outside`.
template <typename T>
Raster<T> resample_nearest(const Raster<T>& src, const GeoFrame& target, T outside = T{}) {
  Raster<T> out(target, outside);
  for (int r = 0; r < target.height; ++r) {
    const double y = target.y_of(r + 0.5);
    const int sr = static_cast<int>(std::floor(src.frame().row_of(y)));
    for (int c = 0; c < target.width; ++c) {
      const int sc = static_cast<int>(std::floor(src.frame().col_of(target.x_of(c + 0.5))));
      if (src.frame().contains(sc, sr)) out(c, r) = src(sc, sr);
    }
  }
  return out;
}

/// Three aligned 8-bit-range bands (values 0..255 stored as float).
struct RgbImage {
  std::array<FloatRaster, 3> bands;

  RgbImage() = default;
  explicit RgbImage(const GeoFrame& f) : bands{FloatRaster(f), FloatRaster(f), FloatRaster(f)} {}
  const GeoFrame& frame() const { return bands[0].frame(); }
  int width() const { return bands[0].width(); }
  int height() const { return bands[0].height(); }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

}  // namespace agspnet
