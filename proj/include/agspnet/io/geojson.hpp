#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "agspnet/geometry.hpp"
#include "json.hpp"

namespace agspnet::io {

namespace detail {

inline nlohmann::json ring_json(const Ring& r) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : r) a.push_back({p.x, p.y});
  return a;
}

inline Ring ring_from_json(const nlohmann::json& a) {
  Ring r;
  for (const auto& p : a) {
    require(p.is_array() && p.size() >= 2, "GeoJSON position must have two coordinates");
    r.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return r;
}

inline Polygon polygon_from_json(const nlohmann::json& rings, const nlohmann::json& props) {
  require(rings.is_array() && !rings.empty(), "GeoJSON Polygon without rings");
  Polygon p;
  p.exterior = ring_from_json(rings[0]);
  for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(ring_from_json(rings[i]));
  orient_canonical(p);
  validate_polygon(p);
  if (props.is_object()) {
    p.properties = props;
    if (props.contains("label") && props["label"].is_number()) p.label = props["label"].get<int>();
  }
  return p;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_geojson(const PolygonSet& polys) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& p : polys) {
    nlohmann::json rings = nlohmann::json::array();
    rings.push_back(detail::ring_json(p.exterior));
    for (const auto& h : p.holes) rings.push_back(detail::ring_json(h));
    nlohmann::json props = p.properties.is_object() ? p.properties : nlohmann::json::object();
    props["label"] = p.label;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

/// Polygons and MultiPolygons; each MultiPolygon part becomes its own
/// polygon carrying the feature's properties. Other geometries are skipped.
inline PolygonSet polygons_from_geojson(const nlohmann::json& doc) {
  PolygonSet out;
  require(doc.value("type", "") == "FeatureCollection", "expected a GeoJSON FeatureCollection");
  for (const auto& feat : doc.at("features")) {
    const auto& g = feat.at("geometry");
    if (g.is_null()) continue;
    const auto props = feat.contains("properties") ? feat["properties"] : nlohmann::json::object();
    const std::string type = g.at("type").get<std::string>();
    if (type == "Polygon") {
      out.push_back(detail::polygon_from_json(g.at("coordinates"), props));
    } else if (type == "MultiPolygon") {
      for (const auto& part : g.at("coordinates")) out.push_back(detail::polygon_from_json(part, props));
    }
  }
  return out;
}

inline std::vector<Polyline> polylines_from_geojson(const nlohmann::json& doc) {
  std::vector<Polyline> out;
  require(doc.value("type", "") == "FeatureCollection", "expected a GeoJSON FeatureCollection");
  for (const auto& feat : doc.at("features")) {
    const auto& g = feat.at("geometry");
    if (g.is_null()) continue;
    const std::string type = g.at("type").get<std::string>();
    if (type == "LineString") {
      out.push_back(detail::ring_from_json(g.at("coordinates")));
    } else if (type == "MultiLineString") {
      for (const auto& part : g.at("coordinates")) out.push_back(detail::ring_from_json(part));
    }
  }
  return out;
}

inline nlohmann::json polylines_to_geojson(const std::vector<Polyline>& lines) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& l : lines) {
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", detail::ring_json(l)}}},
                        {"properties", nlohmann::json::object()}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) { return detail::read_json_file(path); }

inline PolygonSet read_polygons(const std::filesystem::path& path) {
  return polygons_from_geojson(read_json(path));
}

inline std::vector<Polyline> read_polylines(const std::filesystem::path& path) {
  return polylines_from_geojson(read_json(path));
}

}  // namespace agspnet::io
