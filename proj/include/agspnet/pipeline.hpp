#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "agspnet/assembly.hpp"
#include "agspnet/edge_net.hpp"
#include "agspnet/io/geojson.hpp"
#include "agspnet/io/pgr.hpp"
#include "agspnet/io/png.hpp"
#include "agspnet/metrics.hpp"
#include "agspnet/nn/checkpoint.hpp"
#include "agspnet/parcels.hpp"
#include "agspnet/scd_net.hpp"
#include "agspnet/scene.hpp"
#include "agspnet/synth.hpp"
#include "json.hpp"

namespace agspnet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

/// Every accepted key with its default. `seed` has no default.
inline json default_config() {
  return {
      {"seed", nullptr},
      {"input", ""},  // existing scene directory; empty = synthesise one
      {"synth", synth::to_json(synth::SynthConfig{})},
      {"scene", {{"max_elevation", 93.0}, {"max_slope", 16.0}}},
      {"edge",
       {{"epochs", 20},
        {"batch", 4},
        {"lr", 0.001},
        {"momentum", 0.9},
        {"weight_decay", 1e-4},
        {"widths", {8, 16, 32, 32, 32}},
        {"convs", {2, 2, 3, 3, 3}},
        {"sem_rate", 1},
        {"sem_branches", 3},
        {"sem_channels", 8},
        {"train_epochs", {"t1", "t2"}},
        {"infer_tile", 192},
        {"infer_margin", 32}}},
      {"parcels",
       {{"threshold", 0.5},
        {"dilate_radius", 1},
        {"min_area", 25.0},
        {"simplify_tol", 1.0},
        {"extend_len", 8},
        {"dangle_len", 5},
        {"fuse_min_area", 25.0}}},
      {"scd",
       {{"epochs", 20},
        {"batch", 4},
        {"lr", 0.001},
        {"momentum", 0.9},
        {"weight_decay", 1e-4},
        {"stem", 16},
        {"features", 32},
        {"reduced", 16},
        {"recurrence", 2},
        {"head", 32},
        {"change", 16},
        {"infer_tile", 64},
        {"infer_margin", 16}}},
      {"transitions", assembly::TransitionTable::standard().to_json()},
      {"evaluate_split", "test"},
      {"preview",
       {{"categories",
         {{255, 255, 255}, {62, 150, 92}, {34, 96, 58}, {70, 130, 220}, {230, 90, 40}, {240, 200, 40}, {160, 70, 200}}},
        {"classes", {{255, 255, 255}, {62, 150, 92}, {34, 96, 58}, {70, 130, 220}, {240, 200, 40}}}}},
  };
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

/// Rejects keys absent from `schema` and values of the wrong JSON kind.
/// Arrays and objects under "transitions" are taken as-is.
inline void check_against(const json& user, const json& schema, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config " + where + " must be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!schema.contains(k)) throw ConfigError("unknown config key: " + path);
    const json& def = schema.at(k);
    if (def.is_null()) {
      const bool ok = v.is_null() || v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError("config " + path + " must be a non-negative integer");
      continue;
    }
    if (!same_kind(v, def)) throw ConfigError("config " + path + " has the wrong type");
    if (def.is_object() && k != "transitions") check_against(v, def, path);
  }
}

}  // namespace detail

/// Defaults overlaid with `user`, after key and type validation.
inline json resolve_config(const json& user) {
  json cfg = default_config();
  detail::check_against(user, cfg, "");
  cfg.merge_patch(user);
  if (user.contains("transitions")) cfg["transitions"] = user["transitions"];
  return cfg;
}

inline json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return resolve_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

inline std::uint64_t require_seed(const json& cfg) {
  if (cfg.at("seed").is_null()) throw ConfigError("a seed is required (--seed or config \"seed\")");
  return cfg.at("seed").get<std::uint64_t>();
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) { return seed ^ fnv1a(name); }

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key ") + key + ": " + e.what());
  }
}

inline edge::BdcnConfig bdcn_config(const json& cfg) {
  const auto& e = cfg.at("edge");
  edge::BdcnConfig c;
  c.widths = get<std::array<int, 5>>(e, "widths");
  c.convs = get<std::array<int, 5>>(e, "convs");
  c.sem.r0 = get<int>(e, "sem_rate");
  c.sem.K = get<int>(e, "sem_branches");
  c.sem.channels = get<int>(e, "sem_channels");
  edge::validate(c.sem);
  for (int i = 0; i < 5; ++i)
    if (c.widths[i] < 1 || c.convs[i] < 1) throw ConfigError("edge widths and convs must be >= 1");
  return c;
}

inline nn::SgdConfig sgd_config(const json& section) {
  nn::SgdConfig s;
  s.lr = get<double>(section, "lr");
  s.momentum = get<double>(section, "momentum");
  s.weight_decay = get<double>(section, "weight_decay");
  if (s.lr < 0 || s.momentum < 0 || s.momentum >= 1 || s.weight_decay < 0)
    throw ConfigError("SGD needs lr >= 0, 0 <= momentum < 1, weight_decay >= 0");
  return s;
}

inline scd::ScdConfig scd_config(const json& cfg) {
  const auto& s = cfg.at("scd");
  scd::ScdConfig c;
  c.stem = get<int>(s, "stem");
  c.features = get<int>(s, "features");
  c.reduced = get<int>(s, "reduced");
  c.recurrence = get<int>(s, "recurrence");
  c.head = get<int>(s, "head");
  c.change = get<int>(s, "change");
  if (c.stem < 1 || c.features < 1 || c.reduced < 1 || c.head < 1 || c.change < 1)
    throw ConfigError("scd channel counts must be >= 1");
  if (c.recurrence < 1) throw ConfigError("scd recurrence must be >= 1");
  return c;
}

inline parcels::Params parcel_params(const json& cfg) {
  const auto& p = cfg.at("parcels");
  parcels::Params out;
  out.threshold = get<double>(p, "threshold");
  out.dilate_radius = get<int>(p, "dilate_radius");
  out.min_area = get<double>(p, "min_area");
  out.simplify_tol = get<double>(p, "simplify_tol");
  out.extend_len = get<int>(p, "extend_len");
  out.dangle_len = get<int>(p, "dangle_len");
  try {
    parcels::validate(out);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

inline scene::TerrainThresholds terrain_thresholds(const json& cfg) {
  return {get<double>(cfg.at("scene"), "max_elevation"), get<double>(cfg.at("scene"), "max_slope")};
}

// ---------------------------------------------------------------- ablations

enum class Ablation { base, ags, bdcn, full };

inline const std::array<Ablation, 4>& all_ablations() {
  static const std::array<Ablation, 4> a = {Ablation::base, Ablation::ags, Ablation::bdcn, Ablation::full};
  return a;
}

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::base: return "base";
    case Ablation::ags: return "base+ags";
    case Ablation::bdcn: return "base+bdcn";
    default: return "base+ags+bdcn";
  }
}

inline std::string ablation_file(Ablation a) {
  switch (a) {
    case Ablation::base: return "base";
    case Ablation::ags: return "ags";
    case Ablation::bdcn: return "bdcn";
    default: return "full";
  }
}

inline bool uses_scene(Ablation a) { return a == Ablation::ags || a == Ablation::full; }
inline bool uses_parcels(Ablation a) { return a == Ablation::bdcn || a == Ablation::full; }

/// Pixel map for one module combination. With the scene, cells outside it
/// become 0 and parcels are clipped to it before the majority vote.
inline assembly::SemanticChangeMap apply_ablation(Ablation a, const assembly::SemanticChangeMap& base,
                                                  const scene::SceneMask& scene, const IdRaster& parcel_ids,
                                                  IdRaster* used_ids = nullptr) {
  assembly::SemanticChangeMap m = base;
  IdRaster ids = parcel_ids;
  if (uses_scene(a)) {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!scene[i]) m[i] = 0, ids[i] = 0;
  }
  if (uses_parcels(a)) m = assembly::parcel_constrain(m, ids);
  if (used_ids) *used_ids = uses_parcels(a) ? ids : IdRaster(base.frame(), 0);
  return m;
}

/// True when every parcel footprint holds exactly one category.
inline bool parcels_single_valued(const assembly::SemanticChangeMap& m, const IdRaster& ids) {
  std::vector<int> seen(max_label(ids) + 1, -1);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!ids[i]) continue;
    int& s = seen[ids[i]];
    if (s < 0) s = m[i];
    if (s != m[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------- workspace

struct Workspace {
  fs::path root;
  fs::path input;  // scene directory

  explicit Workspace(fs::path r, const json& cfg = default_config()) : root(std::move(r)) {
    const std::string in = cfg.value("input", std::string());
    input = in.empty() ? root / "scene" : fs::path(in);
  }

  fs::path division() const { return root / "division"; }
  fs::path scene_mask() const { return division() / "scene_mask.pgr"; }
  fs::path edge_model() const { return root / "edge" / "model"; }
  fs::path edge_log() const { return root / "edge" / "train_log.json"; }
  fs::path edges(int epoch) const { return root / "edge" / ("edges_t" + std::to_string(epoch) + ".pgr"); }
  fs::path parcels(int epoch) const { return root / "parcels" / ("parcels_t" + std::to_string(epoch) + ".geojson"); }
  fs::path fused() const { return root / "parcels" / "fused.geojson"; }
  fs::path scd_model() const { return root / "scd" / "model"; }
  fs::path scd_log() const { return root / "scd" / "train_log.json"; }
  fs::path seg(int epoch) const { return root / "scd" / ("seg_t" + std::to_string(epoch) + ".pgr"); }
  fs::path change() const { return root / "scd" / "change.pgr"; }
  fs::path semantic(Ablation a) const { return root / "assembly" / (ablation_file(a) + ".pgr"); }
  fs::path invalid() const { return root / "assembly" / "invalid_pairs.json"; }
  fs::path report() const { return root / "report.json"; }
  fs::path stages() const { return root / "stages"; }
  fs::path timings() const { return root / "timings.json"; }
};

// ---------------------------------------------------------------- previews

inline RgbImage colorize(const Raster<std::uint8_t>& m, const json& palette) {
  RgbImage img(m.frame());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& rgb = palette.at(std::min<std::size_t>(m[i], palette.size() - 1));
    for (int b = 0; b < 3; ++b) img.bands[b][i] = rgb[b].get<float>();
  }
  return img;
}

inline Raster<std::uint8_t> to_u8(const LabelRaster& r) {
  return map_cells<std::uint8_t>(r, [](std::uint16_t v) { return static_cast<std::uint8_t>(std::min<int>(v, 255)); });
}

inline void write_preview(const fs::path& pgr_path, const Raster<std::uint8_t>& m, const json& palette) {
  fs::path png = pgr_path;
  png.replace_extension(".png");
  io::write_png(png, colorize(m, palette));
}

// ---------------------------------------------------------------- stages

struct Context {
  json cfg;
  Workspace ws;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline std::vector<edge::EdgeSample> edge_samples(const synth::SyntheticScene& s, const std::vector<int>& epochs) {
  const int t = s.config.tile;
  std::vector<edge::EdgeSample> out;
  for (const auto& tile : s.tiles) {
    if (tile.split != synth::Split::train) continue;
    for (int e : epochs) {
      edge::EdgeSample smp;
      smp.image = edge::image_tensor<float>(synth::crop(e == 1 ? s.img_t1 : s.img_t2, tile.col * t, tile.row * t, t, t));
      smp.edges.reserve(static_cast<std::size_t>(t) * t);
      for (int r = 0; r < t; ++r)
        for (int c = 0; c < t; ++c) smp.edges.push_back(s.edges(tile.col * t + c, tile.row * t + r));
      out.push_back(std::move(smp));
    }
  }
  return out;
}

inline scd::ScdSample scd_sample(const synth::SyntheticScene& s, const synth::Tile& tile) {
  const int t = s.config.tile;
  scd::ScdSample smp;
  smp.img_t1 = edge::image_tensor<float>(synth::crop(s.img_t1, tile.col * t, tile.row * t, t, t));
  smp.img_t2 = edge::image_tensor<float>(synth::crop(s.img_t2, tile.col * t, tile.row * t, t, t));
  for (int r = 0; r < t; ++r)
    for (int c = 0; c < t; ++c) {
      const int x = tile.col * t + c, y = tile.row * t + r;
      smp.y_t1.push_back(s.seg_t1(x, y));
      smp.y_t2.push_back(s.seg_t2(x, y));
      smp.y_bcd.push_back(s.change(x, y));
    }
  return smp;
}

}  // namespace detail

inline json stage_synth(Context& ctx) {
  const auto s = synth::generate(synth::synth_config_from_json(ctx.cfg.at("synth")), require_seed(ctx.cfg));
  synth::write_scene(s, ctx.ws.input);
  return s.manifest;
}

inline json stage_scene_divide(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  const GeoFrame& f = s.dem.frame();
  const auto a = scene::resample_to(s.lulc_a, f);
  const auto b = scene::resample_to(s.lulc_b, f);
  const auto div = scene::divide(a, b, s.dem, s.osm, terrain_thresholds(ctx.cfg));
  io::write_pgr(ctx.ws.scene_mask(), div.scene);
  io::write_pgr(ctx.ws.division() / "preselected.pgr", div.preselected);
  io::write_pgr(ctx.ws.division() / "terrain_kept.pgr", div.terrain_kept);
  io::write_json(ctx.ws.division() / "scene_outline.geojson", io::to_geojson(scene::scene_outline(div.scene)));
  io::write_png(ctx.ws.division() / "t1_clipped.png", scene::clip(s.img_t1, div.scene));
  io::write_png(ctx.ws.division() / "t2_clipped.png", scene::clip(s.img_t2, div.scene));
  const double n = static_cast<double>(f.size());
  return {{"preselected_fraction", count_ones(div.preselected) / n},
          {"terrain_kept_fraction", count_ones(div.terrain_kept) / n},
          {"scene_fraction", count_ones(div.scene) / n}};
}

inline json stage_edge_train(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  const auto& e = ctx.cfg.at("edge");
  std::vector<int> epochs;
  for (const auto& name : e.at("train_epochs")) {
    const std::string n = name.get<std::string>();
    if (n != "t1" && n != "t2") throw ConfigError("edge.train_epochs entries must be \"t1\" or \"t2\"");
    epochs.push_back(n == "t1" ? 1 : 2);
  }
  if (epochs.empty()) throw ConfigError("edge.train_epochs is empty");
  const auto data = detail::edge_samples(s, epochs);
  const std::uint64_t seed = require_seed(ctx.cfg);
  edge::Bdcn<float> model(sub_seed(seed, "edge"), bdcn_config(ctx.cfg));
  edge::TrainConfig tc;
  tc.epochs = get<int>(e, "epochs");
  tc.batch = get<int>(e, "batch");
  tc.sgd = sgd_config(e);
  tc.seed = sub_seed(seed, "edge");
  json logs = json::array();
  edge::train(model, data, tc, [&](const edge::EpochLog& l) {
    *ctx.log << "  edge epoch " << l.epoch << "/" << tc.epochs << " loss " << l.mean_loss << std::endl;
    logs.push_back({{"epoch", l.epoch}, {"loss", l.mean_loss}});
  });
  nn::save_checkpoint(model.registry(), ctx.ws.edge_model(), {{"model", "bdcn"}, {"config", e}});
  io::write_json(ctx.ws.edge_log(), logs);
  return {{"samples", data.size()}, {"final_loss", logs.empty() ? json(nullptr) : logs.back()["loss"]}};
}

inline json stage_edge_infer(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  edge::Bdcn<float> model(0, bdcn_config(ctx.cfg));
  nn::load_checkpoint(model.registry(), ctx.ws.edge_model());
  const auto& e = ctx.cfg.at("edge");
  const int tile = get<int>(e, "infer_tile"), margin = get<int>(e, "infer_margin");
  json out = json::object();
  for (int ep : {1, 2}) {
    const auto prob = edge::infer(model, ep == 1 ? s.img_t1 : s.img_t2, tile, margin);
    io::write_pgr(ctx.ws.edges(ep), prob);
    Raster<std::uint8_t> grey = map_cells<std::uint8_t>(prob, [](float v) { return static_cast<std::uint8_t>(std::lround(v * 255)); });
    RgbImage img(prob.frame());
    for (int b = 0; b < 3; ++b) img.bands[b] = map_cells<float>(grey, [](std::uint8_t v) { return static_cast<float>(v); });
    fs::path png = ctx.ws.edges(ep);
    io::write_png(png.replace_extension(".png"), img);
    double mean = 0;
    for (float v : prob.cells()) mean += v;
    out["mean_edge_prob_t" + std::to_string(ep)] = mean / static_cast<double>(prob.size());
  }
  return out;
}

inline json stage_parcel_extract(Context& ctx) {
  const auto p = parcel_params(ctx.cfg);
  json out = json::object();
  for (int ep : {1, 2}) {
    const auto ex = parcels::extract_parcels(io::read_pgr<float>(ctx.ws.edges(ep)), p);
    io::write_json(ctx.ws.parcels(ep), io::to_geojson(ex.parcels));
    io::write_pgr(ctx.ws.root / "parcels" / ("network_t" + std::to_string(ep) + ".pgr"), ex.network);
    out["parcels_t" + std::to_string(ep)] = ex.parcels.size();
  }
  return out;
}

inline json stage_parcel_fuse(Context& ctx) {
  const GeoFrame f = io::read_pgr<float>(ctx.ws.edges(1)).frame();
  const double min_area = get<double>(ctx.cfg.at("parcels"), "fuse_min_area");
  const auto fu = parcels::fuse_parcels(io::read_polygons(ctx.ws.parcels(1)), io::read_polygons(ctx.ws.parcels(2)), f, min_area);
  io::write_json(ctx.ws.fused(), io::to_geojson(fu.parcels));
  return {{"fused_parcels", fu.parcels.size()}};
}

inline json stage_scd_train(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  std::vector<scd::ScdSample> train, val;
  for (const auto& t : s.tiles) {
    if (t.split == synth::Split::train) train.push_back(detail::scd_sample(s, t));
    if (t.split == synth::Split::val) val.push_back(detail::scd_sample(s, t));
  }
  const std::uint64_t seed = require_seed(ctx.cfg);
  const auto& c = ctx.cfg.at("scd");
  scd::ScdModel<float> model(sub_seed(seed, "scd"), scd_config(ctx.cfg));
  scd::TrainConfig tc;
  tc.epochs = get<int>(c, "epochs");
  tc.batch = get<int>(c, "batch");
  tc.sgd = sgd_config(c);
  tc.seed = sub_seed(seed, "scd");
  const auto res = scd::train(model, train, val, tc, [&](const scd::EpochLog& l) {
    *ctx.log << "  scd epoch " << l.epoch << "/" << tc.epochs << " train " << l.train_loss << " val " << l.val_loss
             << (l.best ? " *" : "") << std::endl;
  });
  nn::save_checkpoint(model.registry(), ctx.ws.scd_model(), {{"model", "scd"}, {"config", c}, {"best_epoch", res.best_epoch}});
  json steps = json::array();
  double worst = 0;
  for (const auto& st : res.steps) {
    const double resid = std::abs(st.total - (st.t1 + st.t2 + 2 * st.bcd));
    worst = std::max(worst, resid);
    steps.push_back({{"epoch", st.epoch}, {"step", st.step}, {"total", st.total}, {"t1", st.t1}, {"t2", st.t2}, {"bcd", st.bcd}});
  }
  json epochs = json::array();
  for (const auto& e : res.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", std::isnan(e.val_loss) ? json(nullptr) : json(e.val_loss)}, {"best", e.best}});
  io::write_json(ctx.ws.scd_log(), {{"steps", steps}, {"epochs", epochs}, {"best_epoch", res.best_epoch}});
  return {{"train_tiles", train.size()},
          {"val_tiles", val.size()},
          {"best_epoch", res.best_epoch},
          {"steps", res.steps.size()},
          {"max_decomposition_residual", worst}};
}

inline json stage_scd_infer(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  scd::ScdModel<float> model(0, scd_config(ctx.cfg));
  nn::load_checkpoint(model.registry(), ctx.ws.scd_model());
  const auto& c = ctx.cfg.at("scd");
  const auto p = scd::infer(model, s.img_t1, s.img_t2, get<int>(c, "infer_tile"), get<int>(c, "infer_margin"));
  const auto& pal = ctx.cfg.at("preview").at("classes");
  io::write_pgr(ctx.ws.seg(1), p.seg_t1);
  io::write_pgr(ctx.ws.seg(2), p.seg_t2);
  io::write_pgr(ctx.ws.change(), p.change);
  write_preview(ctx.ws.seg(1), to_u8(p.seg_t1), pal);
  write_preview(ctx.ws.seg(2), to_u8(p.seg_t2), pal);
  write_preview(ctx.ws.change(), p.change, json::array({{0, 0, 0}, {255, 255, 255}}));
  return {{"changed_fraction", count_ones(p.change) / static_cast<double>(p.change.size())}};
}

inline json stage_assemble(Context& ctx) {
  const auto table = assembly::TransitionTable::from_json(ctx.cfg.at("transitions"));
  const auto a = assembly::assemble(io::read_pgr<std::uint16_t>(ctx.ws.seg(1)), io::read_pgr<std::uint16_t>(ctx.ws.seg(2)),
                                    io::read_pgr<std::uint8_t>(ctx.ws.change()), table);
  io::write_pgr(ctx.ws.semantic(Ablation::base), a.map);
  write_preview(ctx.ws.semantic(Ablation::base), a.map, ctx.cfg.at("preview").at("categories"));
  const auto inv = assembly::invalid_report(a);
  io::write_json(ctx.ws.invalid(), inv);
  return inv;
}

inline json stage_constrain(Context& ctx) {
  const auto base = io::read_pgr<std::uint8_t>(ctx.ws.semantic(Ablation::base));
  const auto scene = io::read_pgr<std::uint8_t>(ctx.ws.scene_mask());
  require_aligned(base, scene, "constrain");
  const IdRaster ids = rasterize(io::read_polygons(ctx.ws.fused()), base.frame());
  json out = json::object();
  for (Ablation a : all_ablations()) {
    if (a == Ablation::base) continue;
    IdRaster used;
    const auto m = apply_ablation(a, base, scene, ids, &used);
    io::write_pgr(ctx.ws.semantic(a), m);
    write_preview(ctx.ws.semantic(a), m, ctx.cfg.at("preview").at("categories"));
    io::write_json(ctx.ws.root / "assembly" / (ablation_file(a) + "_categories.json"),
                   assembly::category_report(m, uses_parcels(a) ? &used : nullptr));
    if (uses_parcels(a)) out[ablation_name(a)] = {{"parcels_single_valued", parcels_single_valued(m, used)}};
  }
  return out;
}

inline json evaluate_map(const assembly::SemanticChangeMap& truth, const assembly::SemanticChangeMap& pred,
                         const BinaryMask& mask) {
  auto cm = metrics::build_cm(truth, pred, assembly::kChangeCategories, &mask);
  cm.names.assign(assembly::category_names().begin(), assembly::category_names().end());
  return metrics::overall_report(cm);
}

inline json stage_evaluate(Context& ctx) {
  const auto s = synth::read_scene(ctx.ws.input);
  const std::string split = ctx.cfg.value("evaluate_split", std::string("test"));
  BinaryMask mask(s.semantic.frame(), 1);
  if (split != "all") {
    if (split != "test" && split != "val" && split != "train") throw ConfigError("evaluate_split must be train, val, test or all");
    const auto which = split == "test" ? synth::Split::test : (split == "val" ? synth::Split::val : synth::Split::train);
    mask = synth::split_mask(s.semantic.frame(), s.tiles, s.config.tile, which);
  }
  json out = {{"split", split}, {"cells", count_ones(mask)}, {"ablations", json::object()}};
  for (Ablation a : all_ablations()) {
    out["ablations"][ablation_name(a)] = evaluate_map(s.semantic, io::read_pgr<std::uint8_t>(ctx.ws.semantic(a)), mask);
  }
  return out;
}

// ---------------------------------------------------------------- runner

struct Stage {
  std::string name;
  std::function<json(Context&)> run;
  std::function<std::vector<fs::path>(const Workspace&)> outputs;
};

inline std::vector<Stage> stages() {
  using W = Workspace;
  return {
      {"synth", stage_synth, [](const W& w) { return std::vector<fs::path>{w.input / "manifest.json"}; }},
      {"scene-divide", stage_scene_divide, [](const W& w) { return std::vector<fs::path>{w.scene_mask()}; }},
      {"edge-train", stage_edge_train, [](const W& w) { return std::vector<fs::path>{w.edge_model() / "manifest.json"}; }},
      {"edge-infer", stage_edge_infer, [](const W& w) { return std::vector<fs::path>{w.edges(1), w.edges(2)}; }},
      {"parcel-extract", stage_parcel_extract, [](const W& w) { return std::vector<fs::path>{w.parcels(1), w.parcels(2)}; }},
      {"parcel-fuse", stage_parcel_fuse, [](const W& w) { return std::vector<fs::path>{w.fused()}; }},
      {"scd-train", stage_scd_train, [](const W& w) { return std::vector<fs::path>{w.scd_model() / "manifest.json", w.scd_log()}; }},
      {"scd-infer", stage_scd_infer, [](const W& w) { return std::vector<fs::path>{w.seg(1), w.seg(2), w.change()}; }},
      {"assemble", stage_assemble, [](const W& w) { return std::vector<fs::path>{w.semantic(Ablation::base)}; }},
      {"constrain", stage_constrain, [](const W& w) { return std::vector<fs::path>{w.semantic(Ablation::full)}; }},
      {"evaluate", stage_evaluate, [](const W& w) { return std::vector<fs::path>{w.root / "evaluation.json"}; }},
  };
}

inline const Stage& find_stage(const std::string& name) {
  static const auto all = stages();
  for (const auto& s : all)
    if (s.name == name) return s;
  throw ConfigError("unknown stage " + name);
}

/// Fingerprint of the resolved configuration; a stage marker written under
/// a different fingerprint is stale.
inline std::string fingerprint(const json& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(cfg.dump())));
  return buf;
}

inline fs::path marker(const Workspace& ws, const std::string& stage) { return ws.stages() / (stage + ".done"); }

inline bool is_complete(const Context& ctx, const Stage& st) {
  const auto m = marker(ctx.ws, st.name);
  if (!fs::exists(m)) return false;
  try {
    if (io::read_json(m).value("fingerprint", "") != fingerprint(ctx.cfg)) return false;
  } catch (const DataError&) {
    return false;
  }
  for (const auto& p : st.outputs(ctx.ws))
    if (!fs::exists(p)) return false;
  return true;
}

/// Runs one stage and records its marker and summary. Failures are
/// rethrown with the stage name; artifacts written so far are kept.
inline json run_stage(Context& ctx, const Stage& st) {
  json summary;
  try {
    summary = st.run(ctx);
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + st.name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + st.name + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError("stage " + st.name + ": " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError("stage " + st.name + ": " + e.what());
  }
  io::write_json(marker(ctx.ws, st.name), {{"stage", st.name}, {"fingerprint", fingerprint(ctx.cfg)}, {"summary", summary}});
  if (st.name == "evaluate") io::write_json(ctx.ws.root / "evaluation.json", summary);
  return summary;
}

struct PlanEntry {
  std::string stage;
  bool skip;
};

inline std::vector<PlanEntry> plan(const Context& ctx) {
  std::vector<PlanEntry> out;
  const bool synthesise = ctx.cfg.value("input", std::string()).empty();
  bool dirty = false;  // once a stage reruns, everything downstream reruns
  for (const auto& st : stages()) {
    if (st.name == "synth" && !synthesise) continue;
    const bool done = !dirty && is_complete(ctx, st);
    if (!done) dirty = true;
    out.push_back({st.name, done});
  }
  return out;
}

/// The full flow; the final report holds only deterministic content.
inline json run_pipeline(Context& ctx) {
  fs::create_directories(ctx.ws.root);
  if (ctx.cfg.value("input", std::string()).empty()) require_seed(ctx.cfg);
  json timings = json::object();
  json summaries = json::object();
  for (const auto& entry : plan(ctx)) {
    const Stage& st = find_stage(entry.stage);
    if (entry.skip) {
      *ctx.log << "[skip] " << st.name << " (complete)" << std::endl;
      summaries[st.name] = io::read_json(marker(ctx.ws, st.name)).at("summary");
      continue;
    }
    *ctx.log << "[run ] " << st.name << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    summaries[st.name] = run_stage(ctx, st);
    timings[st.name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  json report = {{"format", "agspnet-report/1"},
                 {"seed", ctx.cfg.at("seed")},
                 {"config", ctx.cfg},
                 {"stages", summaries},
                 {"evaluation", summaries.at("evaluate")}};
  io::write_json(ctx.ws.report(), report);
  io::write_json(ctx.ws.timings(), timings);
  return report;
}

}  // namespace agspnet::pipeline
