#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "agspnet/geometry.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/vectorize.hpp"
#include "json.hpp"

namespace agspnet::assembly {

using SemanticChangeMap = Raster<std::uint8_t>;

// Per-epoch crop codes.
namespace t1 {
enum : int { background = 0, vegetable = 1, nursery = 2, early_rice = 3, rapeseed = 4 };
}
namespace t2 {
enum : int { background = 0, vegetable = 1, nursery = 2, middle_rice = 3, late_rice = 4 };
}

inline constexpr int kChangeCategories = 7;

inline const std::array<std::string, kChangeCategories>& category_names() {
  static const std::array<std::string, kChangeCategories> names = {
      "no change",
      "vegetable to vegetable",
      "nursery to nursery",
      "early-season rice to middle-season rice",
      "early-season rice to late-season rice",
      "rapeseed to middle-season rice",
      "rapeseed to late-season rice"};
  return names;
}

/// (t1 class, t2 class, changed) -> change category; anything absent maps
/// to `fallback`.
struct TransitionTable {
  std::map<std::tuple<int, int, bool>, int> entries;
  int fallback = 0;

  int lookup(int c1, int c2, bool changed) const {
    const auto it = entries.find({c1, c2, changed});
    return it == entries.end() ? fallback : it->second;
  }
  bool contains(int c1, int c2, bool changed) const { return entries.count({c1, c2, changed}) != 0; }

  /// The six crop transitions plus the two no-change crop categories.
  /// Vegetable and nursery keep their category whether or not the change
  /// detector fired, since the pair itself is a valid table row.
  static TransitionTable standard() {
    TransitionTable t;
    t.entries[{t1::vegetable, t2::vegetable, false}] = 1;
    t.entries[{t1::vegetable, t2::vegetable, true}] = 1;
    t.entries[{t1::nursery, t2::nursery, false}] = 2;
    t.entries[{t1::nursery, t2::nursery, true}] = 2;
    t.entries[{t1::early_rice, t2::middle_rice, true}] = 3;
    t.entries[{t1::early_rice, t2::late_rice, true}] = 4;
    t.entries[{t1::rapeseed, t2::middle_rice, true}] = 5;
    t.entries[{t1::rapeseed, t2::late_rice, true}] = 6;
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [k, v] : entries) {
      rows.push_back({{"t1", std::get<0>(k)}, {"t2", std::get<1>(k)}, {"changed", std::get<2>(k)}, {"category", v}});
    }
    return {{"fallback", fallback}, {"entries", rows}};
  }

  static TransitionTable from_json(const nlohmann::json& j) {
    TransitionTable t;
    try {
      t.fallback = j.value("fallback", 0);
      for (const auto& r : j.at("entries")) {
        const int cat = r.at("category").get<int>();
        if (cat < 0 || cat >= kChangeCategories) throw ConfigError("transition category out of range");
        t.entries[{r.at("t1").get<int>(), r.at("t2").get<int>(), r.at("changed").get<bool>()}] = cat;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad transition table: ") + e.what());
    }
    return t;
  }
};

struct Assembled {
  SemanticChangeMap map;
  std::map<std::pair<int, int>, std::size_t> invalid;  // changed pixels outside the table, per (t1, t2)

  std::size_t invalid_total() const {
    std::size_t n = 0;
    for (const auto& [k, v] : invalid) n += v;
    return n;
  }
};

/// Per-pixel from-to categories. Changed pixels whose pair is absent from
/// the table fall back and are counted as invalid.
inline Assembled assemble(const LabelRaster& seg_t1, const LabelRaster& seg_t2, const BinaryMask& change,
                          const TransitionTable& table = TransitionTable::standard()) {
  require_aligned(seg_t1, seg_t2, "assemble");
  require_aligned(seg_t1, change, "assemble");
  Assembled out{SemanticChangeMap(seg_t1.frame(), 0), {}};
  for (std::size_t i = 0; i < out.map.size(); ++i) {
    const int c1 = seg_t1[i], c2 = seg_t2[i];
    const bool ch = change[i] != 0;
    out.map[i] = static_cast<std::uint8_t>(table.lookup(c1, c2, ch));
    if (ch && !table.contains(c1, c2, true)) ++out.invalid[{c1, c2}];
  }
  return out;
}

inline nlohmann::json invalid_report(const Assembled& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [k, v] : a.invalid) rows.push_back({{"t1", k.first}, {"t2", k.second}, {"pixels", v}});
  return {{"invalid_pixels", a.invalid_total()}, {"pairs", rows}};
}

namespace detail {

/// Category histogram per parcel id of an id raster.
inline std::vector<std::array<std::size_t, 256>> histograms(const SemanticChangeMap& map, const IdRaster& ids) {
  std::vector<std::array<std::size_t, 256>> h(max_label(ids) + 1, std::array<std::size_t, 256>{});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i]) ++h[ids[i]][map[i]];
  }
  return h;
}

inline int majority(const std::array<std::size_t, 256>& h) {
  int best = 0;
  for (int c = 1; c < 256; ++c)
    if (h[c] > h[best]) best = c;
  return best;
}

}  // namespace detail

/// Every cell of a rasterised parcel takes the parcel's most frequent
/// category (ties to the lowest id); cells outside all parcels keep their
/// pixel label.
inline SemanticChangeMap parcel_constrain(const SemanticChangeMap& map, const IdRaster& parcel_ids) {
  require_aligned(map, parcel_ids, "parcel_constrain");
  const auto hist = detail::histograms(map, parcel_ids);
  std::vector<int> label(hist.size());
  for (std::size_t id = 1; id < hist.size(); ++id) label[id] = detail::majority(hist[id]);
  SemanticChangeMap out = map;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (parcel_ids[i]) out[i] = static_cast<std::uint8_t>(label[parcel_ids[i]]);
  }
  return out;
}

inline SemanticChangeMap parcel_constrain(const SemanticChangeMap& map, const PolygonSet& parcels) {
  return parcel_constrain(map, rasterize(parcels, map.frame()));
}

/// Area share per category and, with parcels, the number of parcels whose
/// majority category is each category.
inline nlohmann::json category_report(const SemanticChangeMap& map, const IdRaster* parcel_ids = nullptr) {
  std::array<std::size_t, kChangeCategories> cells{};
  for (auto v : map.cells()) {
    require(v < kChangeCategories, "semantic change category out of range");
    ++cells[v];
  }
  std::array<std::size_t, kChangeCategories> parcels{};
  if (parcel_ids) {
    require_aligned(map, *parcel_ids, "category_report");
    const auto hist = detail::histograms(map, *parcel_ids);
    for (std::size_t id = 1; id < hist.size(); ++id) {
      std::size_t n = 0;
      for (auto c : hist[id]) n += c;
      if (n) ++parcels[detail::majority(hist[id])];
    }
  }
  const double px = map.frame().pixel_size * map.frame().pixel_size;
  nlohmann::json rows = nlohmann::json::array();
  for (int c = 0; c < kChangeCategories; ++c) {
    nlohmann::json r = {{"category", c},
                        {"name", category_names()[c]},
                        {"cells", cells[c]},
                        {"area", static_cast<double>(cells[c]) * px},
                        {"area_percent", 100.0 * static_cast<double>(cells[c]) / static_cast<double>(map.size())}};
    if (parcel_ids) r["parcels"] = parcels[c];
    rows.push_back(r);
  }
  return rows;
}

}  // namespace agspnet::assembly
