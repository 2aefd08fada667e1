#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "agspnet/geometry.hpp"
#include "agspnet/morphology.hpp"
#include "agspnet/raster.hpp"

namespace agspnet {

namespace detail {

struct GridEdge {
  int x0, y0, x1, y1;  // lattice vertices, y up
};

inline std::uint64_t vkey(int x, int y) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) << 32) |
         static_cast<std::uint32_t>(y);
}

/// 4-connected regions of equal nonzero label, numbered in raster-scan
/// order of their first cell.
template <typename L>
IdRaster label_regions(const Raster<L>& labels) {
  IdRaster region(labels.frame(), 0);
  std::uint32_t next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < labels.height(); ++r) {
    for (int c = 0; c < labels.width(); ++c) {
      if (labels(c, r) == L{0} || region(c, r)) continue;
      const L v = labels(c, r);
      region(c, r) = ++next;
      stack.assign(1, {c, r});
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        const int nx[4] = {x + 1, x - 1, x, x};
        const int ny[4] = {y, y, y + 1, y - 1};
        for (int k = 0; k < 4; ++k) {
          if (labels.frame().contains(nx[k], ny[k]) && labels(nx[k], ny[k]) == v &&
              !region(nx[k], ny[k])) {
            region(nx[k], ny[k]) = next;
            stack.emplace_back(nx[k], ny[k]);
          }
        }
      }
    }
  }
  return region;
}

/// Links directed boundary edges (region on the left) into closed rings.
/// At a vertex with two candidate exits the left turn is taken, which keeps
/// diagonal-only neighbours apart (the region is traced 4-connected).
inline std::vector<std::vector<std::pair<int, int>>> link_rings(const std::vector<GridEdge>& edges) {
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> out_of;
  out_of.reserve(edges.size() * 2);
  for (std::size_t i = 0; i < edges.size(); ++i) out_of[vkey(edges[i].x0, edges[i].y0)].push_back(i);
  std::vector<char> used(edges.size(), 0);
  std::vector<std::vector<std::pair<int, int>>> rings;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (used[start]) continue;
    std::vector<std::pair<int, int>> ring{{edges[start].x0, edges[start].y0}};
    std::size_t cur = start;
    while (true) {
      used[cur] = 1;
      const GridEdge& e = edges[cur];
      ring.emplace_back(e.x1, e.y1);
      if (e.x1 == edges[start].x0 && e.y1 == edges[start].y0) break;
      const auto& cands = out_of[vkey(e.x1, e.y1)];
      const int dx = e.x1 - e.x0;
      const int dy = e.y1 - e.y0;
      std::size_t pick = edges.size();
      for (std::size_t k : cands) {
        if (used[k]) continue;
        const int ndx = edges[k].x1 - edges[k].x0;
        const int ndy = edges[k].y1 - edges[k].y0;
        const bool left = (ndx == -dy && ndy == dx);
        if (pick == edges.size() || left) pick = k;
      }
      if (pick == edges.size()) throw std::logic_error("polygonize: open boundary chain");
      cur = pick;
    }
    rings.push_back(std::move(ring));
  }
  return rings;
}

}  // namespace detail

/// Traces pixel-edge boundaries of every 4-connected region of equal
/// nonzero label. One polygon per region, in raster-scan order of the
/// region's first cell; `label` (and properties["label"]) carry the cell
/// value. Enclosed areas of other values become interior rings.
template <typename L>
PolygonSet polygonize(const Raster<L>& labels) {
  const GeoFrame& f = labels.frame();
  const int w = f.width;
  const int h = f.height;
  const IdRaster region = detail::label_regions(labels);
  const std::uint32_t n = max_label(region);
  std::vector<std::vector<detail::GridEdge>> edges(n + 1);
  std::vector<L> region_label(n + 1, L{0});
  auto rid = [&](int c, int r) -> std::uint32_t { return f.contains(c, r) ? region(c, r) : 0u; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint32_t id = region(c, r);
      if (!id) continue;
      region_label[id] = labels(c, r);
      const int yb = h - r - 1;
      const int yt = h - r;
      auto& e = edges[id];
      if (rid(c, r + 1) != id) e.push_back({c, yb, c + 1, yb});          // south, going east
      if (rid(c + 1, r) != id) e.push_back({c + 1, yb, c + 1, yt});      // east, going north
      if (rid(c, r - 1) != id) e.push_back({c + 1, yt, c, yt});          // north, going west
      if (rid(c - 1, r) != id) e.push_back({c, yt, c, yb});              // west, going south
    }
  }
  PolygonSet out;
  out.reserve(n);
  for (std::uint32_t id = 1; id <= n; ++id) {
    Polygon poly;
    poly.label = static_cast<int>(region_label[id]);
    poly.properties["label"] = poly.label;
    bool have_exterior = false;
    for (auto& lattice : detail::link_rings(edges[id])) {
      Ring ring;
      ring.reserve(lattice.size());
      for (auto [x, y] : lattice) ring.push_back({f.x_of(x), f.y_of(h - y)});
      ring = remove_collinear(ring);
      if (signed_area(ring) > 0.0) {
        if (have_exterior) throw std::logic_error("polygonize: region with two exterior rings");
        poly.exterior = std::move(ring);
        have_exterior = true;
      } else {
        poly.holes.push_back(std::move(ring));
      }
    }
    out.push_back(std::move(poly));
  }
  return out;
}

/// Burns polygon labels into a grid: a cell takes the label of the polygon
/// containing its centre, later polygons overwrite earlier ones, and
/// uncovered cells stay 0. Scanline even-odd fill, consistent with
/// point_in_polygon.
inline IdRaster rasterize(const PolygonSet& polys, const GeoFrame& frame) {
  IdRaster out(frame, 0);
  std::vector<double> xs;
  for (const Polygon& p : polys) {
    if (p.exterior.empty()) continue;
    double ymin = INFINITY, ymax = -INFINITY;
    for (const auto& pt : p.exterior) {
      ymin = std::min(ymin, pt.y);
      ymax = std::max(ymax, pt.y);
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(frame.row_of(ymax))) - 1);
    const int r1 = std::min(frame.height - 1, static_cast<int>(std::ceil(frame.row_of(ymin))) + 1);
    const auto label = static_cast<std::uint32_t>(p.label);
    for (int r = r0; r <= r1; ++r) {
      const double yc = frame.y_of(r + 0.5);
      xs.clear();
      auto collect = [&](const Ring& ring) {
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
          const Point& a = ring[i];
          const Point& b = ring[i + 1];
          if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
      };
      collect(p.exterior);
      for (const auto& hole : p.holes) collect(hole);
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        // centres x with xs[k] <= x < xs[k+1]
        int c0 = static_cast<int>(std::ceil(frame.col_of(xs[k]) - 0.5));
        int c1 = static_cast<int>(std::ceil(frame.col_of(xs[k + 1]) - 0.5)) - 1;
        c0 = std::max(c0, 0);
        c1 = std::min(c1, frame.width - 1);
        for (int c = c0; c <= c1; ++c) out(c, r) = label;
      }
    }
  }
  return out;
}

}  // namespace agspnet
