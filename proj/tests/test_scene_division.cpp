#include <array>

#include <gtest/gtest.h>

#include "agspnet/scene.hpp"
#include "support/oracles.hpp"

using namespace agspnet;
using namespace agspnet::scene;

namespace {

LulcProduct constant_product(const GeoFrame& f, std::uint16_t code, std::map<std::uint16_t, LulcClass> map) {
  return {LabelRaster(f, code), std::move(map)};
}

const std::map<std::uint16_t, LulcClass> kMap = {{0, LulcClass::other},
                                                 {1, LulcClass::agri_tree},
                                                 {2, LulcClass::agri_crop},
                                                 {3, LulcClass::agri_shrub}};

}  // namespace

TEST(Preselect, CropInEitherProductIsKept) {
  const auto f = GeoFrame::unit(3, 3);
  auto m = preselect_agriculture(constant_product(f, 2, kMap), constant_product(f, 0, kMap));
  EXPECT_EQ(count_ones(m), 9u);
  m = preselect_agriculture(constant_product(f, 0, kMap), constant_product(f, 0, kMap));
  EXPECT_EQ(count_ones(m), 0u);
}

TEST(Preselect, MatchesPerCellRule) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = oracle::random_scene_stack(seed);
    auto m = preselect_agriculture(s.a, s.b);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const bool expect = s.a.class_map.at(s.a.labels[i]) != LulcClass::other ||
                          s.b.class_map.at(s.b.labels[i]) != LulcClass::other;
      ASSERT_EQ(m[i], expect);
    }
  }
}

TEST(Preselect, RejectsMisalignedAndUnknownCodes) {
  auto a = constant_product(GeoFrame::unit(3, 3), 2, kMap);
  auto b = constant_product(GeoFrame::unit(4, 3), 2, kMap);
  EXPECT_THROW(preselect_agriculture(a, b), DataError);
  auto c = constant_product(GeoFrame::unit(3, 3), 9, kMap);
  EXPECT_THROW(preselect_agriculture(a, c), DataError);
}

TEST(Resample, CoarseProductLandsOnFrame) {
  // 2x2 coarse cells of 4 m onto an 8x8 frame of 1 m
  LulcProduct coarse{LabelRaster(GeoFrame{2, 2, 0.0, 8.0, 4.0}), kMap};
  coarse.labels(1, 0) = 2;
  auto fine = resample_to(coarse, GeoFrame::unit(8, 8));
  EXPECT_EQ(fine.labels(7, 0), 2);
  EXPECT_EQ(fine.labels(4, 3), 2);
  EXPECT_EQ(fine.labels(3, 3), 0);
  EXPECT_EQ(fine.labels(4, 4), 0);
}

TEST(TerrainFilter, HighTreeRemovedBoundaryKept) {
  const auto f = GeoFrame::unit(2, 1);
  BinaryMask pre(f, 1);
  CategoryRaster cat(f, static_cast<std::uint8_t>(LulcClass::agri_tree));
  FloatRaster dem(f), slope(f);
  dem(0, 0) = 100.0f;
  dem(1, 0) = 93.0f;
  slope(1, 0) = 16.0f;
  auto out = terrain_filter(pre, cat, dem, slope);
  EXPECT_EQ(out(0, 0), 0);
  EXPECT_EQ(out(1, 0), 1);
}

TEST(TerrainFilter, CropNeverRemoved) {
  const auto f = GeoFrame::unit(1, 1);
  auto out = terrain_filter(BinaryMask(f, 1), CategoryRaster(f, static_cast<std::uint8_t>(LulcClass::agri_crop)),
                            FloatRaster(f, 500.0f), FloatRaster(f, 45.0f));
  EXPECT_EQ(out(0, 0), 1);
}

TEST(TerrainFilter, MatchesPerCellRule) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = oracle::random_scene_stack(seed);
    auto pre = preselect_agriculture(s.a, s.b);
    auto cat = lulc_union(s.a, s.b);
    auto slope = slope_from_dem(s.dem);
    auto out = terrain_filter(pre, cat, s.dem, slope);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto c = static_cast<LulcClass>(cat[i]);
      const bool woody = c == LulcClass::agri_tree || c == LulcClass::agri_shrub;
      const bool drop = woody && (s.dem[i] > 93.0f || slope[i] > 16.0f);
      ASSERT_EQ(out[i], pre[i] && !drop);
    }
  }
  const auto f = GeoFrame::unit(2, 2);
  EXPECT_THROW(terrain_filter(BinaryMask(f), CategoryRaster(f), FloatRaster(f), FloatRaster(GeoFrame::unit(2, 3))),
               DataError);
}

TEST(RemoveOsm, EmptyLayersAreIdentity) {
  auto s = oracle::random_scene_stack(3);
  auto pre = preselect_agriculture(s.a, s.b);
  EXPECT_EQ(remove_osm(pre, OsmLayers{}), pre);
}

TEST(RemoveOsm, BuildingClearsBlock) {
  const auto f = GeoFrame::unit(5, 5);
  OsmLayers osm;
  Polygon b;
  b.exterior = {{1, 1}, {3, 1}, {3, 3}, {1, 3}, {1, 1}};
  osm.buildings.push_back(b);
  auto out = remove_osm(BinaryMask(f, 1), osm);
  EXPECT_EQ(count_ones(out), 21u);
  EXPECT_EQ(out(1, 2), 0);  // x in [1,2), y in [2,3)
}

TEST(RemoveOsm, MatchesPointInPolygonOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = oracle::random_scene_stack(seed);
    BinaryMask all(s.dem.frame(), 1);
    auto out = remove_osm(all, s.osm);
    const auto& f = s.dem.frame();
    PolygonSet roads;
    for (const auto& r : s.osm.roads) {
      auto b = buffer_polyline(r, s.osm.road_width);
      roads.insert(roads.end(), b.begin(), b.end());
    }
    for (int r = 0; r < f.height; ++r)
      for (int c = 0; c < f.width; ++c) {
        const Point p{f.x_of(c + 0.5), f.y_of(r + 0.5)};
        bool cov = false;
        for (const PolygonSet* set : std::array<const PolygonSet*, 3>{&s.osm.buildings, &s.osm.water, &roads})
          for (const auto& poly : *set) cov = cov || point_in_polygon(p, poly);
        ASSERT_EQ(out(c, r), cov ? 0 : 1) << seed;
      }
  }
}

TEST(Clip, IdentityConstantAndCheckerboard) {
  Rng rng(5);
  const auto f = GeoFrame::unit(7, 6);
  FloatRaster img(f);
  for (auto& v : img.cells()) v = static_cast<float>(rng.uniform(0, 255));
  EXPECT_EQ(clip(img, BinaryMask(f, 1), 0.0f), img);
  const auto zero = clip(img, BinaryMask(f, 0), 3.0f);
  for (float v : zero.cells()) EXPECT_EQ(v, 3.0f);
  BinaryMask checker(f);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c) checker(c, r) = (r + c) % 2;
  auto out = clip(img, checker, 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], checker[i] ? img[i] : 0.0f);
  EXPECT_THROW(clip(img, BinaryMask(GeoFrame::unit(6, 6)), 0.0f), DataError);
}

TEST(Division, StagesAreMonotoneAndMatchPredicate) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = oracle::random_scene_stack(seed);
    auto r = divide(s.a, s.b, s.dem, s.osm);
    for (std::size_t i = 0; i < r.scene.size(); ++i) {
      EXPECT_LE(r.terrain_kept[i], r.preselected[i]);
      EXPECT_LE(r.scene[i], r.terrain_kept[i]);
    }
    EXPECT_EQ(r.scene, oracle::scene_predicate(s));
    EXPECT_EQ(divide(s.a, s.b, s.dem, s.osm).scene, r.scene);
  }
}

TEST(Division, OutlineCoversScene) {
  auto s = oracle::random_scene_stack(2);
  auto r = divide(s.a, s.b, s.dem, s.osm);
  auto outline = scene_outline(r.scene);
  auto burnt = rasterize(outline, r.scene.frame());
  for (std::size_t i = 0; i < burnt.size(); ++i) EXPECT_EQ(burnt[i] != 0, r.scene[i] != 0);
}
