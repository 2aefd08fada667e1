#pragma once

#include "agspnet/parcels.hpp"

namespace fixture {

using namespace agspnet;

constexpr int kMargin = 5;
constexpr int kPitch = 32;
constexpr int kLine = 2;
constexpr int kField = kPitch - kLine;  // drawn interior side
constexpr int kSide = 2 * kMargin + 3 * kPitch + kLine;

// 3x3 fields separated by 2-px lines; the vertical line between the first
// two columns of fields has a 3-px gap in the middle field row.
inline parcels::EdgeProbMap field_grid(double pixel_size, float line_prob = 0.9f, float gap_line_prob = 0.9f) {
  parcels::EdgeProbMap m(GeoFrame{kSide, kSide, 100.0, 900.0, pixel_size}, 0.05f);
  for (int k = 0; k <= 3; ++k) {
    const int p0 = kMargin + k * kPitch;
    for (int t = 0; t < kLine; ++t) {
      for (int s = kMargin; s < kSide - kMargin; ++s) {
        m(s, p0 + t) = line_prob;
        m(p0 + t, s) = k == 1 ? gap_line_prob : line_prob;
      }
    }
  }
  const int gx = kMargin + kPitch;
  const int gy = kMargin + kPitch + kLine + kField / 2 - 1;
  for (int t = 0; t < kLine; ++t) {
    for (int s = gy; s < gy + 3; ++s) m(gx + t, s) = 0.05f;
  }
  return m;
}

}  // namespace fixture
