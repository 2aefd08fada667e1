#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "agspnet/synth.hpp"

using namespace agspnet;

namespace {

synth::SynthConfig small_config() {
  synth::SynthConfig c;
  c.size = 256;
  c.tile = 64;
  c.parcel_pitch = 40;
  c.parcel_jitter = 6;
  return c;
}

}  // namespace

TEST(Synth, SameSeedIsBitIdentical) {
  const auto a = synth::generate(small_config(), 5);
  const auto b = synth::generate(small_config(), 5);
  EXPECT_TRUE(a.img_t1 == b.img_t1);
  EXPECT_TRUE(a.img_t2 == b.img_t2);
  EXPECT_EQ(a.semantic.cells(), b.semantic.cells());
  EXPECT_EQ(a.dem.cells(), b.dem.cells());
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  const auto c = synth::generate(small_config(), 6);
  EXPECT_FALSE(a.img_t1 == c.img_t1);
}

TEST(Synth, SingleCategoryFrequencies) {
  auto cfg = small_config();
  cfg.frequencies = {0, 0, 0, 1, 0, 0, 0};
  const auto s = synth::generate(cfg, 1);
  std::set<int> seen(s.semantic.cells().begin(), s.semantic.cells().end());
  EXPECT_EQ(seen, (std::set<int>{0, 3}));
  for (const auto& row : s.manifest["categories"]) {
    const int k = row["category"];
    if (k == 0 || k == 3) {
      EXPECT_GT(row["cells"].get<int>(), 0);
    } else {
      EXPECT_EQ(row["cells"].get<int>(), 0);
      EXPECT_EQ(row["parcels"].get<int>(), 0);
    }
  }
}

TEST(Synth, LayersAreConsistent) {
  const auto s = synth::generate(small_config(), 9);
  const auto a = assembly::assemble(s.seg_t1, s.seg_t2, s.change);
  EXPECT_EQ(a.map.cells(), s.semantic.cells());
  EXPECT_EQ(a.invalid_total(), 0u);
  // every parcel is single-valued in the semantic truth
  EXPECT_EQ(assembly::parcel_constrain(s.semantic, s.parcel_ids).cells(), s.semantic.cells());
  EXPECT_EQ(rasterize(s.parcels, s.semantic.frame()).cells(), s.parcel_ids.cells());
  EXPECT_EQ(s.manifest["parcels"].get<std::size_t>(), s.parcels.size());
  EXPECT_EQ(s.manifest["categories"], assembly::category_report(s.semantic, &s.parcel_ids));
  float hi = 0;
  for (float v : s.dem.cells()) hi = std::max(hi, v);
  EXPECT_GT(hi, 93.0f);
  EXPECT_FALSE(s.osm.buildings.empty());
  for (std::size_t i = 0; i < s.edges.size(); ++i) {
    if (!s.edges[i]) continue;
    ASSERT_EQ(s.parcel_ids[i], 0u);
  }
  for (const auto& band : s.img_t1.bands)
    for (float v : band.cells()) ASSERT_EQ(v, std::round(v));
}

TEST(Synth, TileSplitRatio) {
  const auto tiles = synth::split_tiles(16, 16, {6, 1, 3}, 3);
  std::array<int, 3> n{};
  for (const auto& t : tiles) ++n[static_cast<int>(t.split)];
  EXPECT_EQ(n[0], 153);
  EXPECT_EQ(n[1], 25);
  EXPECT_EQ(n[2], 78);
  EXPECT_EQ(tiles.size(), 256u);
}

TEST(Synth, InfeasibleConfigsRejected) {
  auto cfg = small_config();
  cfg.tile = 512;
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.size = 250;
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.frequencies = {0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
  EXPECT_THROW(synth::synth_config_from_json({{"palette", "pastel"}}), ConfigError);
}

TEST(Synth, DiskRoundTrip) {
  const auto s = synth::generate(small_config(), 2);
  const auto dir = std::filesystem::temp_directory_path() / "agspnet_synth_rt";
  std::filesystem::remove_all(dir);
  synth::write_scene(s, dir);
  const auto t = synth::read_scene(dir);
  EXPECT_TRUE(t.img_t1 == s.img_t1);
  EXPECT_TRUE(t.img_t2 == s.img_t2);
  EXPECT_EQ(t.semantic.cells(), s.semantic.cells());
  EXPECT_EQ(t.parcel_ids.cells(), s.parcel_ids.cells());
  EXPECT_EQ(t.lulc_a.class_map, s.lulc_a.class_map);
  EXPECT_EQ(t.tiles.size(), s.tiles.size());
  EXPECT_EQ(t.osm.roads.size(), s.osm.roads.size());
  EXPECT_EQ(t.seed, 2u);
  std::filesystem::remove_all(dir);
}
