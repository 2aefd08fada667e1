#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "agspnet/raster.hpp"

namespace agspnet {

using IdRaster = Raster<std::uint32_t>;

/// Square (Chebyshev) dilation, computed separably: a running max along
/// rows and then along columns equals the (2r+1)^2 window max.
inline BinaryMask dilate(const BinaryMask& mask, int radius) {
  require(radius >= 0, "dilation radius must be >= 0");
  if (radius == 0) return mask;
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask rows(mask.frame());
  for (int r = 0; r < h; ++r) {
    // Distance to the nearest 1 on the left/right along the row.
    int last = -1'000'000;
    for (int c = 0; c < w; ++c) {
      if (mask(c, r)) last = c;
      if (c - last <= radius) rows(c, r) = 1;
    }
    last = 1'000'000;
    for (int c = w - 1; c >= 0; --c) {
      if (mask(c, r)) last = c;
      if (last - c <= radius) rows(c, r) = 1;
    }
  }
  BinaryMask out(mask.frame());
  for (int c = 0; c < w; ++c) {
    int last = -1'000'000;
    for (int r = 0; r < h; ++r) {
      if (rows(c, r)) last = r;
      if (r - last <= radius) out(c, r) = 1;
    }
    last = 1'000'000;
    for (int r = h - 1; r >= 0; --r) {
      if (rows(c, r)) last = r;
      if (last - r <= radius) out(c, r) = 1;
    }
  }
  return out;
}

/// Labels maximal connected groups of 1-cells 1..k in raster-scan order of
/// each group's first cell; 0-cells stay 0.
inline IdRaster connected_components(const BinaryMask& mask, int connectivity = 4) {
  require(connectivity == 4 || connectivity == 8, "connectivity must be 4 or 8");
  const int w = mask.width();
  const int h = mask.height();
  IdRaster labels(mask.frame(), 0);
  std::uint32_t next = 0;
  std::vector<std::pair<int, int>> stack;
  static constexpr std::array<std::pair<int, int>, 8> kNbr{
      {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}}};
  const std::size_t nn = connectivity == 4 ? 4 : 8;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(c, r) || labels(c, r)) continue;
      ++next;
      labels(c, r) = next;
      stack.assign(1, {c, r});
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        for (std::size_t k = 0; k < nn; ++k) {
          const int nx = x + kNbr[k].first;
          const int ny = y + kNbr[k].second;
          if (mask.frame().contains(nx, ny) && mask(nx, ny) && !labels(nx, ny)) {
            labels(nx, ny) = next;
            stack.emplace_back(nx, ny);
          }
        }
      }
    }
  }
  return labels;
}

inline std::uint32_t max_label(const IdRaster& labels) {
  std::uint32_t m = 0;
  for (auto v : labels.cells()) m = std::max(m, v);
  return m;
}

namespace detail {

// Neighbourhood P2..P9 clockwise from north, as in Zhang & Suen (1984).
inline std::array<std::uint8_t, 8> ring8(const BinaryMask& m, int c, int r) {
  auto at = [&](int x, int y) -> std::uint8_t {
    return m.frame().contains(x, y) ? m(x, y) : std::uint8_t{0};
  };
  return {at(c, r - 1), at(c + 1, r - 1), at(c + 1, r), at(c + 1, r + 1),
          at(c, r + 1), at(c - 1, r + 1), at(c - 1, r), at(c - 1, r - 1)};
}

inline int transitions(const std::array<std::uint8_t, 8>& p) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1);
  return a;
}

inline int ones(const std::array<std::uint8_t, 8>& p) {
  int b = 0;
  for (auto v : p) b += v;
  return b;
}

}  // namespace detail

/// Zhang-Suen thinning. Candidates of each sub-iteration are found in
/// parallel as in the original algorithm, then removed one at a time in
/// raster order after re-checking the deletion conditions against the
/// current image. The re-check keeps 2x2 blocks (which plain Zhang-Suen
/// erases) and so preserves the number of 8-connected components.
inline BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask img = mask;
  const int w = img.width();
  const int h = img.height();
  auto deletable = [&](int c, int r, int pass) {
    const auto p = detail::ring8(img, c, r);
    const int b = detail::ones(p);
    if (b < 2 || b > 6 || detail::transitions(p) != 1) return false;
    // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
    if (pass == 0) return p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0;
    return p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0;
  };
  std::vector<std::pair<int, int>> marked;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      marked.clear();
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (img(c, r) && deletable(c, r, pass)) marked.emplace_back(c, r);
        }
      }
      for (auto [c, r] : marked) {
        if (deletable(c, r, pass)) {
          img(c, r) = 0;
          changed = true;
        }
      }
    }
  }
  return img;
}

/// Slope in degrees from the Horn (1981) 3x3 finite-difference stencil.
/// Border cells replicate their nearest interior neighbour.
inline FloatRaster slope_from_dem(const FloatRaster& dem) {
  require(dem.width() >= 3 && dem.height() >= 3, "slope needs a DEM of at least 3x3 cells");
  const double ps = dem.frame().pixel_size;
  FloatRaster out(dem.frame());
  for (int r = 0; r < dem.height(); ++r) {
    for (int c = 0; c < dem.width(); ++c) {
      auto z = [&](int dc, int dr) { return static_cast<double>(dem.clamped(c + dc, r + dr)); };
      const double gx = ((z(1, -1) + 2 * z(1, 0) + z(1, 1)) - (z(-1, -1) + 2 * z(-1, 0) + z(-1, 1))) /
                        (8.0 * ps);
      const double gy = ((z(-1, 1) + 2 * z(0, 1) + z(1, 1)) - (z(-1, -1) + 2 * z(0, -1) + z(1, -1))) /
                        (8.0 * ps);
      const float deg = static_cast<float>(std::atan(std::sqrt(gx * gx + gy * gy)) * (180.0 / M_PI));
      // float rounding can reach 90 exactly for near-vertical faces
      out(c, r) = std::min(deg, std::nextafter(90.0f, 0.0f));
    }
  }
  return out;
}

}  // namespace agspnet
