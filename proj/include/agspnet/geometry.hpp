#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "agspnet/error.hpp"
#include "json.hpp"

namespace agspnet {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Closed ring: front() == back().
using Ring = std::vector<Point>;
using Polyline = std::vector<Point>;

struct Polygon {
  Ring exterior;
  std::vector<Ring> holes;
  int label = 0;
  nlohmann::json properties = nlohmann::json::object();
};

using PolygonSet = std::vector<Polygon>;

/// Shoelace; positive for counter-clockwise rings.
inline double signed_area(const Ring& ring) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    acc += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
  }
  return 0.5 * acc;
}

inline bool is_closed(const Ring& ring) { return ring.size() >= 2 && ring.front() == ring.back(); }

inline void validate_ring(const Ring& ring, bool exterior) {
  require(is_closed(ring), "polygon ring is not closed");
  require(ring.size() >= 4, "polygon ring needs at least 4 vertices");
  const double a = signed_area(ring);
  require(exterior ? a > 0.0 : a < 0.0,
          exterior ? "exterior ring must be counter-clockwise" : "interior ring must be clockwise");
}

inline void validate_polygon(const Polygon& p) {
  validate_ring(p.exterior, true);
  for (const auto& h : p.holes) validate_ring(h, false);
}

/// Exterior minus interiors. Relies on canonical winding (holes negative).
inline double polygon_area(const Polygon& p) {
  double a = signed_area(p.exterior);
  for (const auto& h : p.holes) a += signed_area(h);
  return a;
}

/// Reverses rings whose winding disagrees with the canonical one.
inline void orient_canonical(Polygon& p) {
  if (signed_area(p.exterior) < 0.0) std::reverse(p.exterior.begin(), p.exterior.end());
  for (auto& h : p.holes) {
    if (signed_area(h) > 0.0) std::reverse(h.begin(), h.end());
  }
}

/// Even-odd crossing test against one closed ring.
inline bool point_in_ring(const Point& pt, const Ring& ring) {
  bool inside = false;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const Point& a = ring[i];
    const Point& b = ring[i + 1];
    if ((a.y > pt.y) != (b.y > pt.y)) {
      const double xc = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (pt.x < xc) inside = !inside;
    }
  }
  return inside;
}

inline bool point_in_polygon(const Point& pt, const Polygon& p) {
  if (!point_in_ring(pt, p.exterior)) return false;
  for (const auto& h : p.holes) {
    if (point_in_ring(pt, h)) return false;
  }
  return true;
}

inline double point_segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

inline double point_polyline_distance(const Point& p, const Polyline& line) {
  if (line.size() == 1) return std::hypot(p.x - line[0].x, p.y - line[0].y);
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    best = std::min(best, point_segment_distance(p, line[i], line[i + 1]));
  }
  return best;
}

/// Douglas-Peucker on an open polyline; endpoints are always kept. A
/// vertex is kept when its distance to the current chord exceeds
/// `tolerance` (ties are dropped). Iterative, so deep inputs cannot
/// overflow the stack.
inline Polyline douglas_peucker(const Polyline& line, double tolerance) {
  if (line.size() <= 2) return line;
  std::vector<char> keep(line.size(), 0);
  keep[0] = 1;
  keep[line.size() - 1] = 1;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, line.size() - 1}};
  while (!stack.empty()) {
    auto [first, last] = stack.back();
    stack.pop_back();
    double dmax = -1.0;
    std::size_t imax = first;
    for (std::size_t i = first + 1; i < last; ++i) {
      const double d = point_segment_distance(line[i], line[first], line[last]);
      if (d > dmax) {
        dmax = d;
        imax = i;
      }
    }
    if (imax != first && dmax > tolerance) {
      keep[imax] = 1;
      stack.emplace_back(first, imax);
      stack.emplace_back(imax, last);
    }
  }
  Polyline out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (keep[i]) out.push_back(line[i]);
  }
  return out;
}

/// Simplifies a closed ring. Falls back to the input whenever the result
/// would be degenerate or flip orientation.
inline Ring simplify_ring(const Ring& ring, double tolerance) {
  if (tolerance <= 0.0 || ring.size() <= 4) return ring;
  Ring out = douglas_peucker(ring, tolerance);
  const double a0 = signed_area(ring);
  const double a1 = signed_area(out);
  if (out.size() < 4 || !is_closed(out) || a1 == 0.0 || (a0 > 0.0) != (a1 > 0.0)) return ring;
  return out;
}

inline Polygon simplify_polygon(const Polygon& p, double tolerance) {
  require(tolerance >= 0.0, "simplify tolerance must be >= 0");
  Polygon out = p;
  out.exterior = simplify_ring(p.exterior, tolerance);
  for (auto& h : out.holes) h = simplify_ring(h, tolerance);
  return out;
}

/// Drops vertices lying on the straight line between their neighbours.
inline Ring remove_collinear(const Ring& ring) {
  if (ring.size() <= 4) return ring;
  std::vector<Point> pts(ring.begin(), ring.end() - 1);
  bool changed = true;
  while (changed && pts.size() > 3) {
    changed = false;
    for (std::size_t i = 0; i < pts.size() && pts.size() > 3; ++i) {
      const Point& a = pts[(i + pts.size() - 1) % pts.size()];
      const Point& b = pts[i];
      const Point& c = pts[(i + 1) % pts.size()];
      if ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) == 0.0) {
        pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        --i;
      }
    }
  }
  pts.push_back(pts.front());
  return pts;
}

/// Buffers a polyline into polygons: one rectangle per segment plus a
/// 16-gon at every vertex for round joins and caps.
inline PolygonSet buffer_polyline(const Polyline& line, double width) {
  require(width > 0.0, "road buffer width must be > 0");
  const double h = 0.5 * width;
  PolygonSet out;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Point a = line[i];
    const Point b = line[i + 1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len == 0.0) continue;
    const double nx = -(b.y - a.y) / len * h;
    const double ny = (b.x - a.x) / len * h;
    Polygon rect;
    rect.exterior = {{a.x - nx, a.y - ny}, {b.x - nx, b.y - ny}, {b.x + nx, b.y + ny},
                     {a.x + nx, a.y + ny}, {a.x - nx, a.y - ny}};
    orient_canonical(rect);
    out.push_back(std::move(rect));
  }
  for (const Point& v : line) {
    Polygon disc;
    constexpr int kSides = 16;
    for (int k = 0; k <= kSides; ++k) {
      const double t = 2.0 * M_PI * (k % kSides) / kSides;
      disc.exterior.push_back({v.x + h * std::cos(t), v.y + h * std::sin(t)});
    }
    out.push_back(std::move(disc));
  }
  return out;
}

}  // namespace agspnet
