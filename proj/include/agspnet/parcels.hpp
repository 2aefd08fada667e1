#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "agspnet/geometry.hpp"
#include "agspnet/morphology.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/vectorize.hpp"

// Edge optimisation: turns an edge-probability raster into object-level
// farmland parcels, and fuses the parcels of two epochs.

namespace agspnet::parcels {

using EdgeProbMap = FloatRaster;
using ParcelSet = PolygonSet;  // label == parcel id, properties {id, area}

struct Params {
  double threshold = 0.5;
  int dilate_radius = 1;
  double min_area = 25.0;      // pixels
  double simplify_tol = 1.0;   // pixels
  int extend_len = 8;          // pixels
  int dangle_len = 5;          // pixels
};

inline void validate(const Params& p) {
  require(p.threshold > 0.0 && p.threshold < 1.0, "binarize threshold must be in (0,1)");
  require(p.dilate_radius >= 0, "dilate_radius must be >= 0");
  require(p.min_area >= 0.0, "min_area must be >= 0");
  require(p.simplify_tol >= 0.0, "simplify_tol must be >= 0");
  require(p.extend_len >= 0 && p.dangle_len >= 0, "extend_len and dangle_len must be >= 0");
}

inline BinaryMask binarize(const EdgeProbMap& edges, double threshold = 0.5) {
  require(threshold > 0.0 && threshold < 1.0, "binarize threshold must be in (0,1)");
  BinaryMask out(edges.frame());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = edges[i];
    require(v >= 0.0f && v <= 1.0f, "edge probability outside [0,1]");
    out[i] = v >= threshold ? 1 : 0;
  }
  return out;
}

namespace detail {

constexpr int kDx[8] = {0, 1, 0, -1, 1, 1, -1, -1};  // 4-neighbours first
constexpr int kDy[8] = {-1, 0, 1, 0, -1, 1, 1, -1};

inline bool on(const BinaryMask& m, int c, int r) { return m.frame().contains(c, r) && m(c, r); }

inline int crossing_number(const BinaryMask& m, int c, int r) {
  return agspnet::detail::transitions(agspnet::detail::ring8(m, c, r));
}

inline int neighbour_count(const BinaryMask& m, int c, int r) {
  return agspnet::detail::ones(agspnet::detail::ring8(m, c, r));
}

inline bool is_endpoint(const BinaryMask& m, int c, int r) {
  return on(m, c, r) && crossing_number(m, c, r) == 1 && neighbour_count(m, c, r) <= 2;
}

struct Branch {
  std::vector<std::pair<int, int>> pixels;  // starting at the endpoint
  bool reached_junction = false;
};

/// Walks from an endpoint along the skeleton for at most `limit` pixels,
/// stopping before a junction (crossing number >= 3 or two diverging
/// continuations).
inline Branch trace_branch(const BinaryMask& m, int c, int r, int limit) {
  Branch b;
  b.pixels.emplace_back(c, r);
  auto in_path = [&](int x, int y) {
    return std::find(b.pixels.begin(), b.pixels.end(), std::make_pair(x, y)) != b.pixels.end();
  };
  while (static_cast<int>(b.pixels.size()) < limit) {
    auto [x, y] = b.pixels.back();
    std::vector<std::pair<int, int>> next;
    for (int k = 0; k < 8; ++k) {
      const int nx = x + kDx[k], ny = y + kDy[k];
      if (on(m, nx, ny) && !in_path(nx, ny)) next.emplace_back(nx, ny);
    }
    if (b.pixels.size() >= 2 && next.size() > 1) {
      // drop candidates that merely touch the previous pixel's corner
      auto [px, py] = b.pixels[b.pixels.size() - 2];
      std::erase_if(next, [&](auto q) { return std::abs(q.first - px) <= 1 && std::abs(q.second - py) <= 1; });
    }
    if (next.empty()) break;
    if (next.size() > 2 || (next.size() == 2 && std::abs(next[0].first - next[1].first) + std::abs(next[0].second - next[1].second) > 1)) {
      b.reached_junction = true;
      break;
    }
    const auto q = next.front();
    if (crossing_number(m, q.first, q.second) >= 3) {
      b.reached_junction = true;
      break;
    }
    b.pixels.push_back(q);
  }
  return b;
}

}  // namespace detail

/// Extends every dangling endpoint straight along its incoming direction
/// (taken from the last 5 skeleton pixels) for up to `max_len` pixels. An
/// extension is kept only if it touches other skeleton pixels or leaves
/// the raster; overshoots that meet nothing are discarded.
inline BinaryMask extend_dangles(const BinaryMask& skeleton, int max_len) {
  BinaryMask out = skeleton;
  if (max_len <= 0) return out;
  const GeoFrame& f = out.frame();
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      if (!detail::is_endpoint(out, c, r)) continue;
      const auto tail = detail::trace_branch(out, c, r, 6);
      if (tail.pixels.size() < 2) continue;
      const auto [tx, ty] = tail.pixels.back();
      double dx = c - tx, dy = r - ty;
      const double len = std::hypot(dx, dy);
      dx /= len;
      dy /= len;
      auto own = [&](int x, int y) {
        return std::find(tail.pixels.begin(), tail.pixels.end(), std::make_pair(x, y)) != tail.pixels.end();
      };
      std::vector<std::pair<int, int>> added;
      bool connect = false;
      int px = c, py = r;
      for (int step = 1; step <= 2 * max_len && static_cast<int>(added.size()) < max_len; ++step) {
        const int x = static_cast<int>(std::lround(c + dx * step * 0.5));
        const int y = static_cast<int>(std::lround(r + dy * step * 0.5));
        if (x == px && y == py) continue;
        if (!f.contains(x, y)) {
          connect = true;
          break;
        }
        if (out(x, y) && !own(x, y)) {
          connect = true;
          break;
        }
        added.emplace_back(x, y);
        bool touches = false;
        for (int k = 0; k < 8; ++k) {
          const int nx = x + detail::kDx[k], ny = y + detail::kDy[k];
          if (nx == px && ny == py) continue;
          if (detail::on(out, nx, ny) && !own(nx, ny) &&
              std::find(added.begin(), added.end(), std::make_pair(nx, ny)) == added.end()) {
            touches = true;
          }
        }
        px = x;
        py = y;
        if (touches) {
          connect = true;
          break;
        }
      }
      if (connect) {
        for (auto [x, y] : added) out(x, y) = 1;
      }
    }
  }
  return out;
}

/// Deletes dangling branches shorter than `min_len` pixels (the junction
/// pixel they hang from is kept). Isolated short segments vanish.
inline BinaryMask prune_dangles(const BinaryMask& skeleton, int min_len) {
  BinaryMask out = skeleton;
  if (min_len <= 0) return out;
  std::vector<std::pair<int, int>> doomed;
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      if (!out(c, r)) continue;
      if (detail::neighbour_count(out, c, r) == 0) {
        if (min_len > 1) doomed.emplace_back(c, r);
        continue;
      }
      if (!detail::is_endpoint(out, c, r)) continue;
      const auto b = detail::trace_branch(out, c, r, min_len);
      if (static_cast<int>(b.pixels.size()) < min_len) {
        doomed.insert(doomed.end(), b.pixels.begin(), b.pixels.end());
      }
    }
  }
  for (auto [c, r] : doomed) out(c, r) = 0;
  return out;
}

struct Extraction {
  ParcelSet parcels;
  BinaryMask network;   // final 1-px edge network
  IdRaster components;  // kept complement components, labelled by parcel id
};

/// Full edge optimisation chain; see Params for the knobs.
inline Extraction extract_parcels(const EdgeProbMap& edges, const Params& p = {}) {
  validate(p);
  const GeoFrame& f = edges.frame();
  const BinaryMask bin = binarize(edges, p.threshold);
  const BinaryMask thick = dilate(bin, p.dilate_radius);
  BinaryMask net = skeletonize(thick);
  net = extend_dangles(net, p.extend_len);
  net = prune_dangles(net, p.dangle_len);

  BinaryMask free(f);
  for (std::size_t i = 0; i < free.size(); ++i) free[i] = !net[i];
  const IdRaster comp = connected_components(free, 4);
  const std::uint32_t n = max_label(comp);
  std::vector<std::size_t> area(n + 1, 0);
  std::vector<char> border(n + 1, 0);
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      const auto id = comp(c, r);
      ++area[id];
      if (r == 0 || c == 0 || r == f.height - 1 || c == f.width - 1) border[id] = 1;
    }
  }
  // The background is the largest component touching the raster border.
  std::uint32_t background = 0;
  for (std::uint32_t id = 1; id <= n; ++id) {
    if (border[id] && (background == 0 || area[id] > area[background])) background = id;
  }
  std::vector<std::uint32_t> new_id(n + 1, 0);
  std::uint32_t next = 0;
  for (std::uint32_t id = 1; id <= n; ++id) {
    if (id == background || static_cast<double>(area[id]) < p.min_area) continue;
    new_id[id] = ++next;
  }
  Extraction out;
  out.network = net;
  out.components = IdRaster(f, 0);
  for (std::size_t i = 0; i < comp.size(); ++i) out.components[i] = new_id[comp[i]];

  PolygonSet raw = polygonize(out.components);
  // first cell of every kept parcel, used to tell voids from enclosed parcels
  std::vector<Point> seed(next + 1);
  std::vector<char> seen(next + 1, 0);
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      const auto id = out.components(c, r);
      if (id && !seen[id]) {
        seen[id] = 1;
        seed[id] = {f.x_of(c + 0.5), f.y_of(r + 0.5)};
      }
    }
  }
  const double tol = p.simplify_tol * f.pixel_size;
  std::vector<Polygon> unsimplified;
  for (auto& poly : raw) {
    std::vector<Ring> kept_holes;
    for (auto& h : poly.holes) {
      bool encloses_parcel = false;
      for (std::uint32_t id = 1; id <= next && !encloses_parcel; ++id) {
        if (static_cast<int>(id) != poly.label && point_in_ring(seed[id], h)) encloses_parcel = true;
      }
      if (encloses_parcel) kept_holes.push_back(std::move(h));
    }
    poly.holes = std::move(kept_holes);
    unsimplified.push_back(poly);
    poly = simplify_polygon(poly, tol);
  }
  // Keep a parcel unsimplified if simplification split or erased its
  // rasterised footprint.
  for (int pass = 0; pass < 4; ++pass) {
    const IdRaster burnt = rasterize(raw, f);
    BinaryMask mask(f);
    bool changed = false;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      const auto id = static_cast<std::uint32_t>(raw[k].label);
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = burnt[i] == id;
      const auto parts = max_label(connected_components(mask, 4));
      if (parts != 1 && raw[k].exterior != unsimplified[k].exterior) {
        raw[k] = unsimplified[k];
        changed = true;
      }
    }
    if (!changed) break;
  }
  for (auto& poly : raw) {
    poly.properties = {{"id", poly.label}, {"label", poly.label}, {"area", polygon_area(poly)}};
  }
  out.parcels = std::move(raw);
  return out;
}

struct Fusion {
  ParcelSet parcels;
  IdRaster footprint;   // final ids after sliver merging
  IdRaster intersections;  // ids before sliver merging
};

/// Overlays two parcel sets in raster space. Each nonempty 4-connected
/// intersection of a t1 and a t2 parcel becomes a candidate; candidates
/// smaller than `min_area` pixels merge into the neighbour with the
/// longest shared boundary (ties to the lower id) or vanish if isolated.
inline Fusion fuse_parcels(const ParcelSet& t1, const ParcelSet& t2, const GeoFrame& frame, double min_area = 25.0) {
  const IdRaster r1 = rasterize(t1, frame);
  const IdRaster r2 = rasterize(t2, frame);
  // index every (t1, t2) pair, then split pairs into 4-connected pieces
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> pair_index;
  IdRaster pairs(frame, 0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!r1[i] || !r2[i]) continue;
    auto [it, inserted] = pair_index.emplace(std::make_pair(r1[i], r2[i]), static_cast<std::uint32_t>(pair_index.size() + 1));
    pairs[i] = it->second;
  }
  Fusion out;
  out.intersections = agspnet::detail::label_regions(pairs);
  const std::uint32_t n = max_label(out.intersections);

  std::vector<std::uint32_t> owner(n + 1);
  for (std::uint32_t i = 0; i <= n; ++i) owner[i] = i;
  auto find = [&](std::uint32_t x) {
    while (owner[x] != x) x = owner[x] = owner[owner[x]];
    return x;
  };
  std::vector<std::vector<std::size_t>> members(n + 1);
  for (std::size_t i = 0; i < out.intersections.size(); ++i) {
    if (out.intersections[i]) members[out.intersections[i]].push_back(i);
  }
  for (std::uint32_t id = 1; id <= n; ++id) {
    if (static_cast<double>(members[id].size()) >= min_area) continue;
    std::map<std::uint32_t, std::size_t> shared;
    for (std::size_t i : members[id]) {
      const int c = static_cast<int>(i % frame.width), r = static_cast<int>(i / frame.width);
      const int nx[4] = {c + 1, c - 1, c, c};
      const int ny[4] = {r, r, r + 1, r - 1};
      for (int k = 0; k < 4; ++k) {
        if (!frame.contains(nx[k], ny[k])) continue;
        const auto other = find(out.intersections(nx[k], ny[k]));
        if (other && other != id) ++shared[other];
      }
    }
    std::uint32_t target = 0;
    std::size_t best = 0;
    for (auto [other, len] : shared) {  // ascending id, so ties keep the lower id
      if (len > best) {
        best = len;
        target = other;
      }
    }
    owner[id] = target;  // 0 drops the sliver
    if (target) members[target].insert(members[target].end(), members[id].begin(), members[id].end());
    members[id].clear();
  }
  IdRaster merged(frame, 0);
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] = out.intersections[i] ? find(out.intersections[i]) : 0;
  // renumber in raster-scan order
  std::vector<std::uint32_t> renum(n + 1, 0);
  std::uint32_t next = 0;
  for (auto& v : merged.cells()) {
    if (!v) continue;
    if (!renum[v]) renum[v] = ++next;
    v = renum[v];
  }
  out.footprint = merged;
  out.parcels = polygonize(merged);
  for (auto& poly : out.parcels) {
    poly.properties = {{"id", poly.label}, {"label", poly.label}, {"area", polygon_area(poly)}};
  }
  return out;
}

}  // namespace agspnet::parcels
