#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agspnet/assembly.hpp"
#include "agspnet/io/geojson.hpp"
#include "agspnet/io/pgr.hpp"
#include "agspnet/io/png.hpp"
#include "agspnet/morphology.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/rng.hpp"
#include "agspnet/scene.hpp"
#include "agspnet/vectorize.hpp"
#include "json.hpp"

namespace agspnet::synth {

namespace fs = std::filesystem;

enum class Palette { distinct, confusable };

struct SynthConfig {
  int size = 1024;
  int tile = 64;
  double pixel_size = 2.0;
  double origin_x = 500000.0;
  double origin_y = 3000000.0;
  int parcel_pitch = 56;
  int parcel_jitter = 10;
  int path_width = 2;
  int min_parcel_px = 120;
  // Relative parcel frequencies of categories 0 (fallow) .. 6.
  std::array<double, assembly::kChangeCategories> frequencies = {0.05, 0.12, 0.10, 0.17, 0.26, 0.15, 0.15};
  Palette palette = Palette::distinct;
  double noise = 9.0;
  std::array<int, 3> split = {6, 1, 3};
  double hill_peak = 170.0;  // metres
};

inline void validate(const SynthConfig& c) {
  if (c.size <= 0 || c.tile <= 0) throw ConfigError("synth: size and tile must be positive");
  if (c.tile > c.size) throw ConfigError("synth: tile larger than scene");
  if (c.size % c.tile) throw ConfigError("synth: scene size must be divisible by the tile size");
  if (c.tile % 16) throw ConfigError("synth: tile size must be a multiple of 16");
  if (c.pixel_size <= 0) throw ConfigError("synth: pixel_size must be > 0");
  if (c.parcel_pitch < 8 || c.parcel_jitter < 0 || 2 * c.parcel_jitter >= c.parcel_pitch)
    throw ConfigError("synth: need parcel_pitch >= 8 and 0 <= 2 * jitter < pitch");
  if (c.path_width < 1) throw ConfigError("synth: path_width must be >= 1");
  double total = 0;
  for (double f : c.frequencies) {
    if (f < 0) throw ConfigError("synth: negative category frequency");
    total += f;
  }
  if (total <= 0) throw ConfigError("synth: category frequencies sum to zero");
  if (c.split[0] <= 0 || c.split[1] < 0 || c.split[2] <= 0) throw ConfigError("synth: bad split ratio");
  if (c.noise < 0) throw ConfigError("synth: noise must be >= 0");
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"size", c.size},
          {"tile", c.tile},
          {"pixel_size", c.pixel_size},
          {"origin_x", c.origin_x},
          {"origin_y", c.origin_y},
          {"parcel_pitch", c.parcel_pitch},
          {"parcel_jitter", c.parcel_jitter},
          {"path_width", c.path_width},
          {"min_parcel_px", c.min_parcel_px},
          {"frequencies", c.frequencies},
          {"palette", c.palette == Palette::distinct ? "distinct" : "confusable"},
          {"noise", c.noise},
          {"split", c.split},
          {"hill_peak", c.hill_peak}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.size = j.value("size", c.size);
    c.tile = j.value("tile", c.tile);
    c.pixel_size = j.value("pixel_size", c.pixel_size);
    c.origin_x = j.value("origin_x", c.origin_x);
    c.origin_y = j.value("origin_y", c.origin_y);
    c.parcel_pitch = j.value("parcel_pitch", c.parcel_pitch);
    c.parcel_jitter = j.value("parcel_jitter", c.parcel_jitter);
    c.path_width = j.value("path_width", c.path_width);
    c.min_parcel_px = j.value("min_parcel_px", c.min_parcel_px);
    c.frequencies = j.value("frequencies", c.frequencies);
    c.noise = j.value("noise", c.noise);
    c.split = j.value("split", c.split);
    c.hill_peak = j.value("hill_peak", c.hill_peak);
    const std::string pal = j.value("palette", std::string("distinct"));
    if (pal == "distinct") {
      c.palette = Palette::distinct;
    } else if (pal == "confusable") {
      c.palette = Palette::confusable;
    } else {
      throw ConfigError("synth: unknown palette " + pal);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  validate(c);
  return c;
}

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

struct Tile {
  int col = 0, row = 0;  // tile indices
  Split split = Split::train;
};

/// Non-overlapping tiles, assigned to train/val/test in the given ratio by
/// a seeded shuffle. Counts are rounded down for train and val.
inline std::vector<Tile> split_tiles(int tiles_x, int tiles_y, const std::array<int, 3>& ratio, std::uint64_t seed) {
  const int n = tiles_x * tiles_y;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, "split");
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  const int total = ratio[0] + ratio[1] + ratio[2];
  const int n_train = n * ratio[0] / total;
  const int n_val = n * ratio[1] / total;
  std::vector<Tile> tiles(n);
  for (int i = 0; i < n; ++i) tiles[i] = {i % tiles_x, i / tiles_x, Split::train};
  for (int k = 0; k < n; ++k) {
    tiles[order[k]].split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
  }
  return tiles;
}

// Land-cover regions of the generator (not part of any output).
enum Region : std::uint8_t { cropland = 0, hill = 1, town = 2, water = 3, road = 4, building = 5 };

struct SyntheticScene {
  SynthConfig config;
  std::uint64_t seed = 0;
  RgbImage img_t1, img_t2;
  LabelRaster seg_t1, seg_t2;
  BinaryMask change;
  assembly::SemanticChangeMap semantic;
  IdRaster parcel_ids;
  PolygonSet parcels;  // label = parcel id, properties {id, category}
  BinaryMask edges;    // parcel-boundary truth for edge training
  FloatRaster dem;
  scene::LulcProduct lulc_a, lulc_b;
  scene::OsmLayers osm;
  std::vector<Tile> tiles;
  nlohmann::json manifest;
};

namespace detail {

/// Bilinear value noise in [-1, 1] on a lattice of the given spacing.
inline FloatRaster value_noise(const GeoFrame& f, int spacing, Rng& rng) {
  const int gx = f.width / spacing + 2, gy = f.height / spacing + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gx) * gy);
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  FloatRaster out(f);
  for (int r = 0; r < f.height; ++r) {
    const double fy = static_cast<double>(r) / spacing;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int c = 0; c < f.width; ++c) {
      const double fx = static_cast<double>(c) / spacing;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      auto at = [&](int x, int y) { return lattice[static_cast<std::size_t>(y) * gx + x]; };
      const double top = at(x0, y0) * (1 - tx) + at(x0 + 1, y0) * tx;
      const double bot = at(x0, y0 + 1) * (1 - tx) + at(x0 + 1, y0 + 1) * tx;
      out(c, r) = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

inline Polygon rect_polygon(const GeoFrame& f, double c0, double r0, double c1, double r1) {
  Polygon p;
  p.exterior = {{f.x_of(c0), f.y_of(r1)}, {f.x_of(c1), f.y_of(r1)}, {f.x_of(c1), f.y_of(r0)},
                {f.x_of(c0), f.y_of(r0)}, {f.x_of(c0), f.y_of(r1)}};
  orient_canonical(p);
  return p;
}

using Rgb = std::array<double, 3>;

struct Colors {
  std::array<Rgb, 5> t1, t2;  // per-epoch crop classes; index 0 = fallow/margin
  Rgb path, hill, town, water, road, building;
};

inline Colors palette(Palette p) {
  Colors c;
  c.t1 = {{{128, 118, 84}, {62, 150, 92}, {34, 96, 58}, {92, 138, 176}, {226, 204, 56}}};
  c.t2 = {{{132, 120, 86}, {62, 150, 92}, {34, 96, 58}, {196, 158, 86}, {150, 194, 42}}};
  c.path = {160, 136, 102};
  c.hill = {40, 78, 44};
  c.town = {150, 148, 144};
  c.water = {44, 72, 122};
  c.road = {206, 204, 198};
  c.building = {182, 96, 76};
  if (p == Palette::confusable) {
    // Pull every crop colour 60% of the way to the crop mean.
    for (auto* set : {&c.t1, &c.t2}) {
      Rgb mean{0, 0, 0};
      for (const auto& col : *set)
        for (int b = 0; b < 3; ++b) mean[b] += col[b] / 5.0;
      for (auto& col : *set)
        for (int b = 0; b < 3; ++b) col[b] = mean[b] + 0.4 * (col[b] - mean[b]);
    }
  }
  return c;
}

// Per-category (t1 class, t2 class, changed).
inline constexpr std::array<std::array<int, 3>, assembly::kChangeCategories> kCategoryClasses = {{
    {0, 0, 0}, {1, 1, 0}, {2, 2, 0}, {3, 3, 1}, {3, 4, 1}, {4, 3, 1}, {4, 4, 1}}};

inline int draw_category(Rng& rng, const std::array<double, assembly::kChangeCategories>& freq) {
  double total = 0;
  for (double f : freq) total += f;
  double u = rng.uniform() * total;
  for (int k = 0; k < assembly::kChangeCategories; ++k) {
    if (u < freq[k]) return k;
    u -= freq[k];
  }
  for (int k = assembly::kChangeCategories - 1; k >= 0; --k)
    if (freq[k] > 0) return k;
  return 0;
}

inline float clamp_byte(double v) { return static_cast<float>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace detail

/// A bi-temporal scene with every ground-truth layer. Throws DataError if
/// the generated layers fail the assemble self-check.
inline SyntheticScene generate(const SynthConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const int n = cfg.size;
  const GeoFrame f{n, n, cfg.origin_x, cfg.origin_y, cfg.pixel_size};
  SyntheticScene s;
  s.config = cfg;
  s.seed = seed;
  Rng layout = Rng::stream(seed, "layout");

  // OSM vectors: a town block of buildings, a meandering river, two roads.
  const double town_c0 = 0.08 * n, town_c1 = 0.30 * n, town_r0 = 0.70 * n, town_r1 = 0.90 * n;
  for (double r = town_r0 + 4; r + 10 < town_r1; r += 18 + layout.range(0, 6)) {
    for (double c = town_c0 + 4; c + 10 < town_c1; c += 20 + layout.range(0, 6)) {
      const double w = 8 + layout.range(0, 6), h = 8 + layout.range(0, 5);
      s.osm.buildings.push_back(detail::rect_polygon(f, c, r, c + w, r + h));
    }
  }
  {
    const double phase = layout.uniform(0, 6.28), amp = 0.035 * n, half = 0.006 * n + 2;
    const double base = 0.56 * n;
    Polygon river;
    std::vector<Point> left, right;
    for (int r = -8; r <= n + 8; r += 8) {
      const double cx = base + amp * std::sin(phase + r * 6.28 / (0.45 * n));
      left.push_back({f.x_of(cx - half), f.y_of(r)});
      right.push_back({f.x_of(cx + half), f.y_of(r)});
    }
    river.exterior = left;
    river.exterior.insert(river.exterior.end(), right.rbegin(), right.rend());
    river.exterior.push_back(river.exterior.front());
    orient_canonical(river);
    s.osm.water.push_back(river);
  }
  s.osm.road_width = 3 * cfg.pixel_size;
  s.osm.roads.push_back({{f.x_of(0), f.y_of(0.47 * n)}, {f.x_of(n), f.y_of(0.50 * n)}});
  s.osm.roads.push_back({{f.x_of(0.33 * n), f.y_of(0)}, {f.x_of(0.35 * n), f.y_of(0.47 * n)}});

  // Regions, by priority water > road > building > town > hill > cropland.
  Raster<std::uint8_t> region(f, cropland);
  const double hill_cx = 0.80 * n, hill_cy = 0.20 * n, hill_r = 0.24 * n;
  const FloatRaster wobble = detail::value_noise(f, std::max(8, n / 16), layout);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double d = std::hypot(c - hill_cx, r - hill_cy) / hill_r;
      if (d < 1.0 + 0.15 * wobble(c, r)) region(c, r) = hill;
      if (c >= town_c0 && c < town_c1 && r >= town_r0 && r < town_r1) region(c, r) = town;
    }
  auto burn = [&](const scene::OsmLayers& only, Region code) {
    const auto cov = scene::osm_coverage(only, f);
    for (std::size_t i = 0; i < cov.size(); ++i)
      if (cov[i]) region[i] = code;
  };
  burn({s.osm.buildings, {}, {}, s.osm.road_width}, building);
  burn({{}, {}, s.osm.roads, s.osm.road_width}, road);
  burn({{}, s.osm.water, {}, s.osm.road_width}, water);

  // Field grid: jittered strips, each cut by independently jittered paths.
  IdRaster cell(f, 0);
  BinaryMask path(f, 0);
  std::uint32_t next_cell = 0;
  int y = 0;
  while (y < n) {
    const int h = std::min(n - y, cfg.parcel_pitch + layout.range(-cfg.parcel_jitter, cfg.parcel_jitter));
    int x = 0;
    while (x < n) {
      const int w = std::min(n - x, cfg.parcel_pitch + layout.range(-cfg.parcel_jitter, cfg.parcel_jitter));
      ++next_cell;
      for (int r = y; r < y + h; ++r)
        for (int c = x; c < x + w; ++c) {
          const bool on_path = (r - y) >= h - cfg.path_width || (c - x) >= w - cfg.path_width;
          if (on_path) {
            path(c, r) = 1;
          } else {
            cell(c, r) = next_cell;
          }
        }
      x += w;
    }
    y += h;
  }
  // Parcels: 4-connected cropland pieces of grid cells.
  IdRaster pieces_src(f, 0);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (region[i] == cropland) pieces_src[i] = cell[i];
  const IdRaster pieces = agspnet::detail::label_regions(pieces_src);
  const std::uint32_t n_pieces = max_label(pieces);
  std::vector<std::size_t> piece_area(n_pieces + 1, 0);
  for (auto v : pieces.cells()) ++piece_area[v];
  std::vector<std::uint32_t> parcel_of(n_pieces + 1, 0);
  std::uint32_t n_parcels = 0;
  for (std::uint32_t k = 1; k <= n_pieces; ++k)
    if (piece_area[k] >= static_cast<std::size_t>(cfg.min_parcel_px)) parcel_of[k] = ++n_parcels;
  s.parcel_ids = IdRaster(f, 0);
  for (std::size_t i = 0; i < f.size(); ++i) s.parcel_ids[i] = parcel_of[pieces[i]];

  Rng cats = Rng::stream(seed, "categories");
  std::vector<int> category(n_parcels + 1, 0);
  for (std::uint32_t k = 1; k <= n_parcels; ++k) category[k] = detail::draw_category(cats, cfg.frequencies);

  s.seg_t1 = LabelRaster(f, 0);
  s.seg_t2 = LabelRaster(f, 0);
  s.change = BinaryMask(f, 0);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto id = s.parcel_ids[i];
    if (!id) continue;
    const auto& cc = detail::kCategoryClasses[category[id]];
    s.seg_t1[i] = static_cast<std::uint16_t>(cc[0]);
    s.seg_t2[i] = static_cast<std::uint16_t>(cc[1]);
    s.change[i] = static_cast<std::uint8_t>(cc[2]);
  }
  s.semantic = assembly::SemanticChangeMap(f, 0);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (s.parcel_ids[i]) s.semantic[i] = static_cast<std::uint8_t>(category[s.parcel_ids[i]]);

  // Edge truth: cells outside every parcel touching one (8-neighbourhood).
  s.edges = BinaryMask(f, 0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      if (s.parcel_ids(c, r)) continue;
      for (int dy = -1; dy <= 1 && !s.edges(c, r); ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (f.contains(c + dx, r + dy) && s.parcel_ids(c + dx, r + dy)) {
            s.edges(c, r) = 1;
            break;
          }
    }

  s.parcels = polygonize(s.parcel_ids);
  for (auto& p : s.parcels) {
    p.properties = {{"id", p.label}, {"category", category[p.label]}, {"area", polygon_area(p)}};
  }

  // DEM: gently rolling lowland with a hill rising above the elevation cap.
  Rng terrain = Rng::stream(seed, "terrain");
  const FloatRaster roll = detail::value_noise(f, std::max(16, n / 8), terrain);
  s.dem = FloatRaster(f);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double d = std::hypot(c - hill_cx, r - hill_cy) / hill_r;
      const double lowland = 48.0 + 6.0 * roll(c, r);
      s.dem(c, r) = static_cast<float>(lowland + (cfg.hill_peak - 48.0) * std::exp(-2.2 * d * d));
    }

  // LULC products at 4x and 2x the pixel size, majority of regions per block.
  auto lulc = [&](int factor, const std::array<std::uint16_t, 6>& code) {
    const GeoFrame g{n / factor, n / factor, f.origin_x, f.origin_y, f.pixel_size * factor};
    LabelRaster out(g);
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) {
        std::array<int, 6> votes{};
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) ++votes[region(c * factor + dx, r * factor + dy)];
        const int best = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        out(c, r) = code[best];
      }
    return out;
  };
  // Product A uses ESRI-like codes, product B ESA-like codes.
  s.lulc_a.labels = lulc(4, {5, 2, 7, 1, 7, 7});
  s.lulc_a.class_map = {{1, scene::LulcClass::other}, {2, scene::LulcClass::agri_tree},
                        {5, scene::LulcClass::agri_crop}, {7, scene::LulcClass::other},
                        {11, scene::LulcClass::agri_shrub}};
  s.lulc_b.labels = lulc(2, {40, 10, 50, 80, 50, 50});
  s.lulc_b.class_map = {{10, scene::LulcClass::agri_tree}, {20, scene::LulcClass::agri_shrub},
                        {40, scene::LulcClass::agri_crop}, {50, scene::LulcClass::other},
                        {80, scene::LulcClass::other}};

  // Imagery.
  const auto colors = detail::palette(cfg.palette);
  Rng tex = Rng::stream(seed, "texture");
  std::vector<std::array<double, 3>> parcel_tint(n_parcels + 1);
  for (auto& t : parcel_tint)
    for (auto& v : t) v = tex.normal() * 5.0;
  const FloatRaster grain1 = detail::value_noise(f, 6, tex);
  const FloatRaster grain2 = detail::value_noise(f, 6, tex);
  s.img_t1 = RgbImage(f);
  s.img_t2 = RgbImage(f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int epoch = 0; epoch < 2; ++epoch) {
      detail::Rgb base;
      double grain_amp = 6.0;
      const auto id = s.parcel_ids[i];
      switch (region[i]) {
        case hill: base = colors.hill; grain_amp = 16.0; break;
        case town: base = colors.town; grain_amp = 10.0; break;
        case water: base = colors.water; grain_amp = 4.0; break;
        case road: base = colors.road; grain_amp = 3.0; break;
        case building: base = colors.building; grain_amp = 4.0; break;
        default:
          if (id) {
            const int cls = epoch == 0 ? s.seg_t1[i] : s.seg_t2[i];
            base = epoch == 0 ? colors.t1[cls] : colors.t2[cls];
          } else {
            base = path[i] ? colors.path : colors.t1[0];
          }
      }
      const auto& grain = epoch == 0 ? grain1 : grain2;
      auto& img = epoch == 0 ? s.img_t1 : s.img_t2;
      for (int b = 0; b < 3; ++b) {
        const double tint = id ? parcel_tint[id][b] : 0.0;
        img.bands[b][i] = detail::clamp_byte(base[b] + tint + grain_amp * grain[i] + cfg.noise * tex.normal());
      }
    }
  }

  s.tiles = split_tiles(n / cfg.tile, n / cfg.tile, cfg.split, seed);

  // Self-check: the semantic truth must be exactly what assembly derives.
  const auto derived = assembly::assemble(s.seg_t1, s.seg_t2, s.change);
  if (derived.map.cells() != s.semantic.cells() || derived.invalid_total() != 0)
    throw DataError("synthetic scene failed the assembly self-check");

  std::array<int, 3> split_counts{};
  for (const auto& t : s.tiles) ++split_counts[static_cast<int>(t.split)];
  s.manifest = {{"format", "agspnet-synth/1"},
                {"seed", seed},
                {"config", to_json(cfg)},
                {"parcels", n_parcels},
                {"categories", assembly::category_report(s.semantic, &s.parcel_ids)},
                {"tiles", {{"size", cfg.tile}, {"train", split_counts[0]}, {"val", split_counts[1]}, {"test", split_counts[2]}}}};
  return s;
}

/// Tile rectangle as a sub-frame of `f`.
inline GeoFrame tile_frame(const GeoFrame& f, const Tile& t, int tile) {
  return {tile, tile, f.x_of(t.col * tile), f.y_of(t.row * tile), f.pixel_size};
}

template <typename T>
Raster<T> crop(const Raster<T>& src, int c0, int r0, int w, int h) {
  GeoFrame g{w, h, src.frame().x_of(c0), src.frame().y_of(r0), src.frame().pixel_size};
  Raster<T> out(g);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(c, r) = src(c0 + c, r0 + r);
  return out;
}

inline RgbImage crop(const RgbImage& src, int c0, int r0, int w, int h) {
  RgbImage out;
  for (int b = 0; b < 3; ++b) out.bands[b] = crop(src.bands[b], c0, r0, w, h);
  return out;
}

/// Cells covered by tiles of the given split.
inline BinaryMask split_mask(const GeoFrame& f, const std::vector<Tile>& tiles, int tile, Split which) {
  BinaryMask m(f, 0);
  for (const auto& t : tiles) {
    if (t.split != which) continue;
    for (int r = 0; r < tile; ++r)
      for (int c = 0; c < tile; ++c) m(t.col * tile + c, t.row * tile + r) = 1;
  }
  return m;
}

namespace detail {

inline nlohmann::json class_map_json(const scene::LulcProduct& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [code, cls] : p.class_map) j[std::to_string(code)] = static_cast<int>(cls);
  return j;
}

inline std::map<std::uint16_t, scene::LulcClass> class_map_from_json(const nlohmann::json& j) {
  std::map<std::uint16_t, scene::LulcClass> m;
  for (const auto& [k, v] : j.items()) {
    const int cls = v.get<int>();
    require(cls >= 0 && cls <= 3, "LULC class id out of range");
    m[static_cast<std::uint16_t>(std::stoi(k))] = static_cast<scene::LulcClass>(cls);
  }
  return m;
}

inline nlohmann::json tiles_json(const std::vector<Tile>& tiles) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& t : tiles) a.push_back({{"col", t.col}, {"row", t.row}, {"split", split_name(t.split)}});
  return a;
}

inline std::vector<Tile> tiles_from_json(const nlohmann::json& a) {
  std::vector<Tile> tiles;
  for (const auto& t : a) {
    const std::string sp = t.at("split").get<std::string>();
    require(sp == "train" || sp == "val" || sp == "test", "unknown tile split " + sp);
    tiles.push_back({t.at("col").get<int>(), t.at("row").get<int>(),
                     sp == "train" ? Split::train : (sp == "val" ? Split::val : Split::test)});
  }
  return tiles;
}

}  // namespace detail

/// Writes the scene as PNG / PGR / GeoJSON files plus manifest.json.
inline void write_scene(const SyntheticScene& s, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_png(dir / "t1.png", s.img_t1);
  io::write_png(dir / "t2.png", s.img_t2);
  io::write_pgr(dir / "truth_seg_t1.pgr", s.seg_t1);
  io::write_pgr(dir / "truth_seg_t2.pgr", s.seg_t2);
  io::write_pgr(dir / "truth_change.pgr", s.change);
  io::write_pgr(dir / "truth_semantic.pgr", s.semantic);
  io::write_pgr(dir / "truth_edges.pgr", s.edges);
  io::write_pgr(dir / "dem.pgr", s.dem);
  io::write_pgr(dir / "lulc_a.pgr", s.lulc_a.labels);
  io::write_pgr(dir / "lulc_b.pgr", s.lulc_b.labels);
  io::write_json(dir / "truth_parcels.geojson", io::to_geojson(s.parcels));
  io::write_json(dir / "osm_buildings.geojson", io::to_geojson(s.osm.buildings));
  io::write_json(dir / "osm_water.geojson", io::to_geojson(s.osm.water));
  io::write_json(dir / "osm_roads.geojson", io::polylines_to_geojson(s.osm.roads));
  nlohmann::json m = s.manifest;
  m["lulc_a_classes"] = detail::class_map_json(s.lulc_a);
  m["lulc_b_classes"] = detail::class_map_json(s.lulc_b);
  m["road_width"] = s.osm.road_width;
  m["tile_list"] = detail::tiles_json(s.tiles);
  io::write_json(dir / "manifest.json", m);
}

inline SyntheticScene read_scene(const fs::path& dir) {
  SyntheticScene s;
  s.manifest = io::read_json(dir / "manifest.json");
  try {
    s.config = synth_config_from_json(s.manifest.at("config"));
    s.seed = s.manifest.at("seed").get<std::uint64_t>();
    s.lulc_a.class_map = detail::class_map_from_json(s.manifest.at("lulc_a_classes"));
    s.lulc_b.class_map = detail::class_map_from_json(s.manifest.at("lulc_b_classes"));
    s.osm.road_width = s.manifest.at("road_width").get<double>();
    s.tiles = detail::tiles_from_json(s.manifest.at("tile_list"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad scene manifest in " + dir.string() + ": " + e.what());
  }
  s.dem = io::read_pgr<float>(dir / "dem.pgr");
  const GeoFrame& f = s.dem.frame();
  s.img_t1 = io::read_png(dir / "t1.png", f.origin_x, f.origin_y, f.pixel_size);
  s.img_t2 = io::read_png(dir / "t2.png", f.origin_x, f.origin_y, f.pixel_size);
  s.seg_t1 = io::read_pgr<std::uint16_t>(dir / "truth_seg_t1.pgr");
  s.seg_t2 = io::read_pgr<std::uint16_t>(dir / "truth_seg_t2.pgr");
  s.change = io::read_pgr<std::uint8_t>(dir / "truth_change.pgr");
  s.semantic = io::read_pgr<std::uint8_t>(dir / "truth_semantic.pgr");
  s.edges = io::read_pgr<std::uint8_t>(dir / "truth_edges.pgr");
  s.lulc_a.labels = io::read_pgr<std::uint16_t>(dir / "lulc_a.pgr");
  s.lulc_b.labels = io::read_pgr<std::uint16_t>(dir / "lulc_b.pgr");
  s.parcels = io::read_polygons(dir / "truth_parcels.geojson");
  s.parcel_ids = rasterize(s.parcels, f);
  s.osm.buildings = io::read_polygons(dir / "osm_buildings.geojson");
  s.osm.water = io::read_polygons(dir / "osm_water.geojson");
  s.osm.roads = io::read_polylines(dir / "osm_roads.geojson");
  require_aligned(s.dem, s.img_t1.bands[0], "scene " + dir.string());
  require_aligned(s.dem, s.seg_t1, "scene " + dir.string());
  return s;
}

}  // namespace agspnet::synth
