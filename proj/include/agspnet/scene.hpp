#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "agspnet/geometry.hpp"
#include "agspnet/morphology.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/vectorize.hpp"

// Agricultural geographic scene (AGS) division: LULC overlay, terrain
// elimination of trees/shrubs, OSM masking, clipping.

namespace agspnet::scene {

enum class LulcClass : std::uint8_t { other = 0, agri_tree = 1, agri_crop = 2, agri_shrub = 3 };

inline bool is_agricultural(LulcClass c) { return c != LulcClass::other; }

struct LulcProduct {
  LabelRaster labels;
  std::map<std::uint16_t, LulcClass> class_map;
};

using CategoryRaster = Raster<std::uint8_t>;  // cells hold LulcClass values
using SceneMask = BinaryMask;

struct OsmLayers {
  PolygonSet buildings;
  PolygonSet water;
  std::vector<Polyline> roads;
  double road_width = 6.0;  // map units, full width
};

struct TerrainThresholds {
  double max_elevation = 93.0;  // metres
  double max_slope = 16.0;      // degrees
};

/// Maps raw product codes to LULC classes. Every code present must be known.
inline CategoryRaster classify(const LulcProduct& p) {
  CategoryRaster out(p.labels.frame());
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    auto it = p.class_map.find(p.labels[i]);
    if (it == p.class_map.end()) {
      throw DataError("LULC class id " + std::to_string(p.labels[i]) + " missing from class map");
    }
    out[i] = static_cast<std::uint8_t>(it->second);
  }
  return out;
}

/// Brings a (typically coarser) product onto the working frame.
inline LulcProduct resample_to(const LulcProduct& p, const GeoFrame& frame) {
  // Outside-extent cells get a code that maps to `other`; pick one from the
  // map or add a private sentinel.
  std::uint16_t other_code = 0xFFFF;
  for (auto [code, cls] : p.class_map) {
    if (cls == LulcClass::other) {
      other_code = code;
      break;
    }
  }
  LulcProduct out{resample_nearest(p.labels, frame, other_code), p.class_map};
  out.class_map.emplace(other_code, LulcClass::other);
  return out;
}

/// Union of the agriculture-related classes (tree, crop, shrub) of two
/// aligned products.
inline BinaryMask preselect_agriculture(const LulcProduct& a, const LulcProduct& b) {
  require_aligned(a.labels, b.labels, "preselect_agriculture");
  const auto ca = classify(a);
  const auto cb = classify(b);
  BinaryMask out(a.labels.frame());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = is_agricultural(static_cast<LulcClass>(ca[i])) || is_agricultural(static_cast<LulcClass>(cb[i]));
  }
  return out;
}

/// Per-cell merge of two products: crop if either says crop, else tree,
/// else shrub, else other. Crop wins so that terrain elimination never
/// removes a cell one product considers cropland.
inline CategoryRaster lulc_union(const LulcProduct& a, const LulcProduct& b) {
  require_aligned(a.labels, b.labels, "lulc_union");
  const auto ca = classify(a);
  const auto cb = classify(b);
  CategoryRaster out(a.labels.frame());
  auto any = [&](std::size_t i, LulcClass c) {
    return ca[i] == static_cast<std::uint8_t>(c) || cb[i] == static_cast<std::uint8_t>(c);
  };
  for (std::size_t i = 0; i < out.size(); ++i) {
    LulcClass c = LulcClass::other;
    if (any(i, LulcClass::agri_crop)) {
      c = LulcClass::agri_crop;
    } else if (any(i, LulcClass::agri_tree)) {
      c = LulcClass::agri_tree;
    } else if (any(i, LulcClass::agri_shrub)) {
      c = LulcClass::agri_shrub;
    }
    out[i] = static_cast<std::uint8_t>(c);
  }
  return out;
}

/// Removes tree and shrub cells above the elevation or slope maxima.
/// Comparisons are strict; crop cells are never removed here.
inline BinaryMask terrain_filter(const BinaryMask& pre, const CategoryRaster& lulc, const FloatRaster& dem,
                                 const FloatRaster& slope, const TerrainThresholds& t = {}) {
  require_aligned(pre, lulc, "terrain_filter");
  require_aligned(pre, dem, "terrain_filter");
  require_aligned(pre, slope, "terrain_filter");
  BinaryMask out = pre;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = static_cast<LulcClass>(lulc[i]);
    const bool woody = c == LulcClass::agri_tree || c == LulcClass::agri_shrub;
    if (woody && (dem[i] > t.max_elevation || slope[i] > t.max_slope)) out[i] = 0;
  }
  return out;
}

/// Cells whose centre lies in a building, a water body, or a buffered road.
inline BinaryMask osm_coverage(const OsmLayers& osm, const GeoFrame& frame) {
  PolygonSet all = osm.buildings;
  all.insert(all.end(), osm.water.begin(), osm.water.end());
  for (const auto& road : osm.roads) {
    auto buf = buffer_polyline(road, osm.road_width);
    all.insert(all.end(), buf.begin(), buf.end());
  }
  for (auto& p : all) p.label = 1;
  const auto burnt = rasterize(all, frame);
  BinaryMask out(frame);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = burnt[i] != 0;
  return out;
}

inline SceneMask remove_osm(const BinaryMask& mask, const OsmLayers& osm) {
  const auto covered = osm_coverage(osm, mask.frame());
  SceneMask out = mask;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (covered[i]) out[i] = 0;
  }
  return out;
}

template <typename T>
Raster<T> clip(const Raster<T>& image, const SceneMask& scene, T fill) {
  require_aligned(image, scene, "clip");
  Raster<T> out = image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!scene[i]) out[i] = fill;
  }
  return out;
}

inline RgbImage clip(const RgbImage& image, const SceneMask& scene, float fill = 0.0f) {
  RgbImage out;
  for (int b = 0; b < 3; ++b) out.bands[b] = clip(image.bands[b], scene, fill);
  return out;
}

struct DivisionResult {
  BinaryMask preselected;
  BinaryMask terrain_kept;
  SceneMask scene;
};

/// The full division flow on products already resampled to the DEM frame.
inline DivisionResult divide(const LulcProduct& a, const LulcProduct& b, const FloatRaster& dem,
                             const OsmLayers& osm, const TerrainThresholds& t = {}) {
  DivisionResult r;
  r.preselected = preselect_agriculture(a, b);
  r.terrain_kept = terrain_filter(r.preselected, lulc_union(a, b), dem, slope_from_dem(dem), t);
  r.scene = remove_osm(r.terrain_kept, osm);
  return r;
}

/// Outline polygons of the scene (one per 4-connected part).
inline PolygonSet scene_outline(const SceneMask& scene) { return polygonize(scene); }

}  // namespace agspnet::scene
