// Command-line front end: one subcommand per pipeline stage plus `run`,
// `synth` and `gradcheck`.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "agspnet/checks.hpp"
#include "agspnet/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = agspnet::pipeline;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "agspnet-out";
  bool dry_run = false;
};

json resolved(const Globals& g, json overrides = json::object()) {
  json user = json::object();
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw agspnet::ConfigError("cannot open config " + g.config);
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw agspnet::ConfigError("malformed config " + g.config + ": " + e.what());
    }
  }
  if (g.seed) user["seed"] = *g.seed;
  user.merge_patch(overrides);
  return pl::resolve_config(user);
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

int run_single(const Globals& g, const std::string& stage, json overrides = json::object()) {
  pl::Context ctx{resolved(g, std::move(overrides)), pl::Workspace(g.out)};
  ctx.ws = pl::Workspace(g.out, ctx.cfg);
  if (g.dry_run) {
    print_json({{"stage", stage}, {"out", g.out}, {"input", ctx.ws.input.string()}, {"config", ctx.cfg}});
    return kOk;
  }
  print_json(pl::run_stage(ctx, pl::find_stage(stage)));
  return kOk;
}

int run_all(const Globals& g) {
  pl::Context ctx{resolved(g), pl::Workspace(g.out)};
  ctx.ws = pl::Workspace(g.out, ctx.cfg);
  if (g.dry_run) {
    for (const auto& e : pl::plan(ctx)) std::cout << (e.skip ? "skip " : "run  ") << e.stage << '\n';
    return kOk;
  }
  const json report = pl::run_pipeline(ctx);
  print_json(report.at("evaluation"));
  return kOk;
}

// Standalone forms operate on explicit files instead of the workspace.

int parcel_extract_files(const Globals& g, const json& overrides, const std::string& edges, const std::string& output) {
  const auto p = pl::parcel_params(resolved(g, overrides));
  if (g.dry_run) return print_json({{"edges", edges}, {"output", output}}), kOk;
  const auto ex = agspnet::parcels::extract_parcels(agspnet::io::read_pgr<float>(edges), p);
  agspnet::io::write_json(output, agspnet::io::to_geojson(ex.parcels));
  print_json({{"parcels", ex.parcels.size()}});
  return kOk;
}

int parcel_fuse_files(const Globals& g, const std::string& t1, const std::string& t2, const std::string& frame_of,
                      const std::string& output) {
  const double min_area = pl::get<double>(resolved(g).at("parcels"), "fuse_min_area");
  if (g.dry_run) return print_json({{"t1", t1}, {"t2", t2}, {"output", output}}), kOk;
  const auto frame = agspnet::io::read_pgr<float>(frame_of).frame();
  const auto fu = agspnet::parcels::fuse_parcels(agspnet::io::read_polygons(t1), agspnet::io::read_polygons(t2), frame, min_area);
  agspnet::io::write_json(output, agspnet::io::to_geojson(fu.parcels));
  print_json({{"fused_parcels", fu.parcels.size()}});
  return kOk;
}

int assemble_files(const Globals& g, const std::string& s1, const std::string& s2, const std::string& change,
                   const std::string& output) {
  const json cfg = resolved(g);
  if (g.dry_run) return print_json({{"seg_t1", s1}, {"seg_t2", s2}, {"change", change}, {"output", output}}), kOk;
  const auto table = agspnet::assembly::TransitionTable::from_json(cfg.at("transitions"));
  const auto a = agspnet::assembly::assemble(agspnet::io::read_pgr<std::uint16_t>(s1), agspnet::io::read_pgr<std::uint16_t>(s2),
                                             agspnet::io::read_pgr<std::uint8_t>(change), table);
  agspnet::io::write_pgr(output, a.map);
  pl::write_preview(output, a.map, cfg.at("preview").at("categories"));
  print_json({{"invalid", agspnet::assembly::invalid_report(a)}, {"categories", agspnet::assembly::category_report(a.map)}});
  return kOk;
}

int constrain_files(const Globals& g, const std::string& map, const std::string& parcels, const std::string& scene,
                    const std::string& output) {
  const json cfg = resolved(g);
  if (g.dry_run) return print_json({{"map", map}, {"parcels", parcels}, {"scene", scene}, {"output", output}}), kOk;
  const auto base = agspnet::io::read_pgr<std::uint8_t>(map);
  agspnet::BinaryMask mask(base.frame(), 1);
  if (!scene.empty()) mask = agspnet::io::read_pgr<std::uint8_t>(scene);
  const auto ids = agspnet::rasterize(agspnet::io::read_polygons(parcels), base.frame());
  agspnet::IdRaster used;
  const auto m = pl::apply_ablation(scene.empty() ? pl::Ablation::bdcn : pl::Ablation::full, base, mask, ids, &used);
  agspnet::io::write_pgr(output, m);
  pl::write_preview(output, m, cfg.at("preview").at("categories"));
  print_json({{"parcels_single_valued", pl::parcels_single_valued(m, used)},
              {"categories", agspnet::assembly::category_report(m, &used)}});
  return kOk;
}

int evaluate_files(const Globals& g, const std::string& truth, const std::string& pred, const std::string& mask_path,
                   const std::string& output) {
  resolved(g);
  if (g.dry_run) return print_json({{"truth", truth}, {"pred", pred}, {"mask", mask_path}}), kOk;
  const auto t = agspnet::io::read_pgr<std::uint8_t>(truth);
  agspnet::BinaryMask mask(t.frame(), 1);
  if (!mask_path.empty()) mask = agspnet::io::read_pgr<std::uint8_t>(mask_path);
  const json report = pl::evaluate_map(t, agspnet::io::read_pgr<std::uint8_t>(pred), mask);
  if (!output.empty()) agspnet::io::write_json(output, report);
  print_json(report);
  return kOk;
}

int gradcheck(const Globals& g) {
  if (g.dry_run) return std::cout << "gradcheck suite\n", kOk;
  const auto entries = agspnet::checks::gradcheck_suite(g.seed.value_or(1), [](const agspnet::checks::GradcheckEntry& e) {
    std::cerr << (e.report.passed ? "ok   " : "FAIL ") << e.name << "  max_rel " << e.report.max_rel_error << '\n';
  });
  const json j = agspnet::checks::to_json(entries);
  print_json(j);
  return j.at("passed").get<bool>() ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crop semantic change detection pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "random seed (required for synth and training)");
  app.add_option("--out", g.out, "workspace directory")->capture_default_str();
  app.add_flag("--dry-run", g.dry_run, "print the resolved plan without executing");

  std::function<int()> action;
  auto stage = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&, name] { action = [&, name] { return run_single(g, name); }; });
    return sub;
  };

  stage("synth", "generate the synthetic bi-temporal scene");
  stage("scene-divide", "agricultural scene mask from LULC, DEM and OSM");
  stage("edge-train", "train the edge network");
  stage("edge-infer", "edge probability maps for both epochs");
  stage("scd-train", "train the change network");
  stage("scd-infer", "segmentation and change maps");

  std::string edges, output, t1, t2, frame_of;
  json parcel_overrides = json::object();
  auto* extract = app.add_subcommand("parcel-extract", "edge map to parcel polygons");
  extract->add_option("--edges", edges, "edge probability PGR (standalone mode)");
  extract->add_option("--output", output, "output GeoJSON");
  for (const char* key : {"threshold", "min_area", "simplify_tol"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    extract->add_option_function<double>(flag, [&, key](double v) { parcel_overrides[key] = v; });
  }
  for (const char* key : {"dilate_radius", "extend_len", "dangle_len"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    extract->add_option_function<int>(flag, [&, key](int v) { parcel_overrides[key] = v; });
  }
  extract->callback([&] {
    action = [&] {
      const json ov = {{"parcels", parcel_overrides}};
      if (edges.empty()) return run_single(g, "parcel-extract", ov);
      if (output.empty()) throw agspnet::ConfigError("--output is required with --edges");
      return parcel_extract_files(g, ov, edges, output);
    };
  });

  auto* fuse = app.add_subcommand("parcel-fuse", "overlay the two epochs' parcels");
  fuse->add_option("--t1", t1, "epoch 1 parcels GeoJSON (standalone mode)");
  fuse->add_option("--t2", t2, "epoch 2 parcels GeoJSON");
  fuse->add_option("--frame", frame_of, "PGR raster defining the grid");
  fuse->add_option("--output", output, "output GeoJSON");
  fuse->callback([&] {
    action = [&] {
      if (t1.empty() && t2.empty()) return run_single(g, "parcel-fuse");
      if (t1.empty() || t2.empty() || frame_of.empty() || output.empty())
        throw agspnet::ConfigError("standalone parcel-fuse needs --t1, --t2, --frame and --output");
      return parcel_fuse_files(g, t1, t2, frame_of, output);
    };
  });

  std::string seg1, seg2, change;
  auto* assemble = app.add_subcommand("assemble", "combine segmentations and change into categories");
  assemble->add_option("--seg-t1", seg1, "epoch 1 class PGR (standalone mode)");
  assemble->add_option("--seg-t2", seg2, "epoch 2 class PGR");
  assemble->add_option("--change", change, "binary change PGR");
  assemble->add_option("--output", output, "output PGR");
  assemble->callback([&] {
    action = [&] {
      if (seg1.empty() && seg2.empty() && change.empty()) return run_single(g, "assemble");
      if (seg1.empty() || seg2.empty() || change.empty() || output.empty())
        throw agspnet::ConfigError("standalone assemble needs --seg-t1, --seg-t2, --change and --output");
      return assemble_files(g, seg1, seg2, change, output);
    };
  });

  std::string map, parcels, scene;
  auto* constrain = app.add_subcommand("constrain", "parcel majority constraint");
  constrain->add_option("--map", map, "category PGR (standalone mode)");
  constrain->add_option("--parcels", parcels, "parcel GeoJSON");
  constrain->add_option("--scene", scene, "optional scene mask PGR");
  constrain->add_option("--output", output, "output PGR");
  constrain->callback([&] {
    action = [&] {
      if (map.empty() && parcels.empty()) return run_single(g, "constrain");
      if (map.empty() || parcels.empty() || output.empty())
        throw agspnet::ConfigError("standalone constrain needs --map, --parcels and --output");
      return constrain_files(g, map, parcels, scene, output);
    };
  });

  std::string truth, pred, mask;
  auto* evaluate = app.add_subcommand("evaluate", "confusion matrix and metrics");
  evaluate->add_option("--truth", truth, "truth category PGR (standalone mode)");
  evaluate->add_option("--pred", pred, "predicted category PGR");
  evaluate->add_option("--mask", mask, "optional evaluation mask PGR");
  evaluate->add_option("--output", output, "output JSON");
  evaluate->callback([&] {
    action = [&] {
      if (truth.empty() && pred.empty()) return run_single(g, "evaluate");
      if (truth.empty() || pred.empty()) throw agspnet::ConfigError("standalone evaluate needs --truth and --pred");
      return evaluate_files(g, truth, pred, mask, output);
    };
  });

  app.add_subcommand("run", "the full pipeline, resuming completed stages")->callback([&] {
    action = [&] { return run_all(g); };
  });
  app.add_subcommand("gradcheck", "finite-difference gradient suite")->callback([&] {
    action = [&] { return gradcheck(g); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    return action();
  } catch (const agspnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const agspnet::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const agspnet::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
