#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "agspnet/io/geojson.hpp"
#include "agspnet/parcels.hpp"
#include "agspnet/rng.hpp"
#include "support/field_grid.hpp"

using namespace agspnet;
using namespace agspnet::parcels;
using namespace fixture;

namespace {

double pixel_area(const Polygon& p, double ps) { return polygon_area(p) / (ps * ps); }

void expect_parcel_invariants(const ParcelSet& ps, const GeoFrame& f, double min_area) {
  std::set<int> ids;
  for (const auto& p : ps) {
    EXPECT_TRUE(ids.insert(p.label).second);
    EXPECT_GE(pixel_area(p, f.pixel_size) + 1e-9, min_area);
    EXPECT_NO_THROW(validate_polygon(p));
  }
  const IdRaster burnt = rasterize(ps, f);
  for (const auto& p : ps) {
    BinaryMask mask(f);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = burnt[i] == static_cast<std::uint32_t>(p.label);
    EXPECT_EQ(max_label(connected_components(mask, 4)), 1u) << "parcel " << p.label;
  }
  // interior-disjoint: burning each parcel alone never overlaps another
  std::vector<int> hits(static_cast<std::size_t>(f.width) * f.height, 0);
  for (const auto& p : ps) {
    const IdRaster one = rasterize(PolygonSet{p}, f);
    for (std::size_t i = 0; i < one.size(); ++i) hits[i] += one[i] != 0;
  }
  for (int h : hits) EXPECT_LE(h, 1);
}

EdgeProbMap random_edges(std::uint64_t seed, int w = 72, int h = 60) {
  Rng rng = Rng::stream(seed, "edges");
  EdgeProbMap m(GeoFrame::unit(w, h, 1.0), 0.0f);
  for (auto& v : m.cells()) v = static_cast<float>(rng.uniform(0.0, 0.3));
  // full-span lines at jittered positions, some with gaps
  auto draw = [&](bool vertical, int pos, int a, int b) {
    for (int s = a; s <= b; ++s) {
      if (vertical) m(pos, s) = 0.9f;
      else m(s, pos) = 0.9f;
    }
  };
  for (int pos = rng.range(2, 8); pos < w - 2; pos += rng.range(9, 18)) {
    draw(true, pos, 0, h - 1);
    if (rng.bernoulli(0.3)) {
      const int g = rng.range(0, h - 4);
      for (int s = g; s < g + rng.range(1, 3); ++s) m(pos, s) = 0.1f;
    }
  }
  for (int pos = rng.range(2, 8); pos < h - 2; pos += rng.range(9, 18)) {
    draw(false, pos, 0, w - 1);
  }
  for (int k = rng.range(0, 3); k > 0; --k) {  // spurs
    const int c = rng.range(0, w - 1), r = rng.range(0, h - 8);
    draw(true, c, r, r + rng.range(1, 7));
  }
  return m;
}

ParcelSet square_parcels(const GeoFrame& f, const std::vector<std::array<int, 5>>& boxes) {
  // boxes: {id, c0, r0, c1, r1} in cells, inclusive-exclusive
  LabelRaster lr(f, 0);
  for (auto [id, c0, r0, c1, r1] : boxes) {
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) lr(c, r) = static_cast<std::uint16_t>(id);
    }
  }
  return polygonize(lr);
}

}  // namespace

TEST(Binarize, ThresholdInclusive) {
  EdgeProbMap m(GeoFrame::unit(3, 1, 1.0));
  m(0, 0) = 0.49f;
  m(1, 0) = 0.5f;
  m(2, 0) = 1.0f;
  const BinaryMask b = binarize(m, 0.5);
  EXPECT_EQ(b(0, 0), 0);
  EXPECT_EQ(b(1, 0), 1);
  EXPECT_EQ(b(2, 0), 1);
}

TEST(Binarize, RejectsOutOfRange) {
  EdgeProbMap m(GeoFrame::unit(2, 2, 1.0), 0.2f);
  m(1, 1) = 1.5f;
  EXPECT_THROW(binarize(m), DataError);
  m(1, 1) = 0.2f;
  EXPECT_THROW(binarize(m, 0.0), DataError);
  EXPECT_THROW(binarize(m, 1.0), DataError);
}

TEST(ExtractParcels, FieldGridWithGapGivesNineParcels) {
  for (double ps : {1.0, 0.5}) {
    Params p;
    p.extend_len = 4;
    const auto ex = extract_parcels(field_grid(ps), p);
    ASSERT_EQ(ex.parcels.size(), 9u) << "pixel size " << ps;
    const double truth = static_cast<double>(kField) * kField;
    for (const auto& parcel : ex.parcels) {
      EXPECT_NEAR(pixel_area(parcel, ps), truth, 0.10 * truth) << "parcel " << parcel.label;
      EXPECT_DOUBLE_EQ(parcel.properties["area"].get<double>(), polygon_area(parcel));
    }
    expect_parcel_invariants(ex.parcels, ex.network.frame(), p.min_area);
  }
}

TEST(ExtractParcels, GapStaysOpenWithoutExtension) {
  Params p;
  p.extend_len = 0;
  const auto ex = extract_parcels(field_grid(1.0), p);
  EXPECT_EQ(ex.parcels.size(), 8u);
}

TEST(ExtractParcels, AllZeroIsEmpty) {
  const auto ex = extract_parcels(EdgeProbMap(GeoFrame::unit(40, 30, 1.0), 0.0f));
  EXPECT_TRUE(ex.parcels.empty());
}

TEST(ExtractParcels, ClosedRingGivesItsInterior) {
  EdgeProbMap m(GeoFrame::unit(40, 30, 1.0), 0.0f);
  for (int c = 5; c <= 30; ++c) m(c, 4) = m(c, 22) = 1.0f;
  for (int r = 4; r <= 22; ++r) m(5, r) = m(30, r) = 1.0f;
  const auto ex = extract_parcels(m);
  ASSERT_EQ(ex.parcels.size(), 1u);
  EXPECT_DOUBLE_EQ(polygon_area(ex.parcels[0]), 24.0 * 17.0);
  const IdRaster burnt = rasterize(ex.parcels, m.frame());
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 40; ++c) {
      const bool inside = c > 5 && c < 30 && r > 4 && r < 22;
      EXPECT_EQ(burnt(c, r) != 0, inside) << c << "," << r;
    }
  }
}

TEST(ExtractParcels, SmallFragmentsDropped) {
  EdgeProbMap m(GeoFrame::unit(30, 30, 1.0), 0.0f);
  for (int c = 5; c <= 9; ++c) m(c, 5) = m(c, 9) = 1.0f;
  for (int r = 5; r <= 9; ++r) m(5, r) = m(9, r) = 1.0f;
  Params p;
  p.dilate_radius = 0;
  p.min_area = 10;
  EXPECT_TRUE(extract_parcels(m, p).parcels.empty());
  p.min_area = 9;
  EXPECT_EQ(extract_parcels(m, p).parcels.size(), 1u);
}

TEST(ExtractParcels, VoidsRemovedButEnclosedParcelsKept) {
  EdgeProbMap m(GeoFrame::unit(60, 60, 1.0), 0.0f);
  auto box = [&](int a, int b) {
    for (int s = a; s <= b; ++s) m(s, a) = m(s, b) = m(a, s) = m(b, s) = 1.0f;
  };
  box(5, 50);   // outer parcel
  box(20, 35);  // enclosed parcel
  // a tiny closed ring whose interior falls below min_area leaves a void
  for (int s = 10; s <= 12; ++s) m(s, 10) = m(s, 12) = m(10, s) = m(12, s) = 1.0f;
  Params p;
  p.dilate_radius = 0;
  p.min_area = 4;
  const auto ex = extract_parcels(m, p);
  ASSERT_EQ(ex.parcels.size(), 2u);
  const Polygon& outer = ex.parcels[0];
  ASSERT_EQ(outer.holes.size(), 1u);
  EXPECT_TRUE(point_in_ring({27.5, 60 - 27.5}, outer.holes[0]));
  EXPECT_TRUE(point_in_polygon({11.5, 60 - 11.5}, outer));
}

TEST(ExtractParcels, InvariantsOnRandomEdges) {
  std::size_t total = 0;
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const auto m = random_edges(seed);
    const auto ex = extract_parcels(m);
    expect_parcel_invariants(ex.parcels, m.frame(), Params{}.min_area);
    const auto again = extract_parcels(m);
    EXPECT_EQ(io::to_geojson(again.parcels).dump(), io::to_geojson(ex.parcels).dump());
    total += ex.parcels.size();
  }
  EXPECT_GE(total, 30u);
}

TEST(ExtractParcels, ParcelCountMonotoneInThreshold) {
  const auto m = field_grid(1.0, 0.9f, 0.6f);
  std::size_t prev = SIZE_MAX;
  for (double t : {0.3, 0.5, 0.7, 0.95}) {
    Params p;
    p.threshold = t;
    p.extend_len = 4;
    const std::size_t n = extract_parcels(m, p).parcels.size();
    EXPECT_LE(n, prev) << "threshold " << t;
    prev = n;
  }
  Params p;
  p.threshold = 0.7;
  EXPECT_EQ(extract_parcels(m, p).parcels.size(), 6u);
}

TEST(ExtendDangles, BridgesGapAndDiscardsOvershoot) {
  BinaryMask s(GeoFrame::unit(30, 9, 1.0), 0);
  for (int c = 0; c <= 10; ++c) s(c, 4) = 1;
  for (int c = 14; c <= 29; ++c) s(c, 4) = 1;
  const BinaryMask e = extend_dangles(s, 5);
  for (int c = 0; c < 30; ++c) EXPECT_EQ(e(c, 4), 1) << c;
  EXPECT_EQ(count_ones(e), 30u);

  BinaryMask lone(GeoFrame::unit(40, 9, 1.0), 0);
  for (int c = 10; c <= 20; ++c) lone(c, 4) = 1;
  EXPECT_EQ(extend_dangles(lone, 5), lone);
}

TEST(ExtendDangles, ReachesBorder) {
  BinaryMask s(GeoFrame::unit(20, 9, 1.0), 0);
  for (int c = 0; c <= 15; ++c) s(c, 4) = 1;
  const BinaryMask e = extend_dangles(s, 6);
  for (int c = 0; c < 20; ++c) EXPECT_EQ(e(c, 4), 1) << c;
}

TEST(PruneDangles, RemovesShortSpursOnly) {
  BinaryMask s(GeoFrame::unit(30, 20, 1.0), 0);
  for (int c = 0; c < 30; ++c) s(c, 10) = 1;
  for (int r = 7; r <= 9; ++r) s(8, r) = 1;    // spur of 3
  for (int r = 1; r <= 9; ++r) s(20, r) = 1;   // spur of 9
  s(3, 3) = 1;                                  // isolated pixel
  const BinaryMask p = prune_dangles(s, 5);
  for (int r = 7; r <= 9; ++r) EXPECT_EQ(p(8, r), 0);
  for (int r = 1; r <= 9; ++r) EXPECT_EQ(p(20, r), 1);
  EXPECT_EQ(p(3, 3), 0);
  for (int c = 5; c < 25; ++c) EXPECT_EQ(p(c, 10), 1);
}

TEST(FuseParcels, SplitByOtherEpochBoundary) {
  const GeoFrame f = GeoFrame::unit(20, 10, 1.0);
  const auto t1 = square_parcels(f, {{1, 0, 0, 20, 10}});
  const auto t2 = square_parcels(f, {{1, 0, 0, 10, 10}, {2, 10, 0, 20, 10}});
  const auto fused = fuse_parcels(t1, t2, f, 5);
  ASSERT_EQ(fused.parcels.size(), 2u);
  EXPECT_DOUBLE_EQ(polygon_area(fused.parcels[0]), 100.0);
  EXPECT_DOUBLE_EQ(polygon_area(fused.parcels[1]), 100.0);
}

TEST(FuseParcels, IdempotentOnIdenticalInputs) {
  const GeoFrame f = GeoFrame::unit(30, 20, 1.0);
  const auto t = square_parcels(f, {{1, 1, 1, 12, 10}, {2, 12, 1, 29, 10}, {3, 1, 10, 29, 19}});
  const auto fused = fuse_parcels(t, t, f, 5);
  EXPECT_EQ(fused.footprint, rasterize(t, f));
  const auto twice = fuse_parcels(fused.parcels, fused.parcels, f, 5);
  EXPECT_EQ(twice.footprint, fused.footprint);
}

TEST(FuseParcels, SliverMergesIntoLongestSharedBoundary) {
  const GeoFrame f = GeoFrame::unit(20, 12, 1.0);
  // t2 cuts a 2-wide strip off the right of t1's left parcel
  const auto t1 = square_parcels(f, {{1, 0, 0, 10, 12}, {2, 10, 0, 20, 12}});
  const auto t2 = square_parcels(f, {{1, 0, 0, 8, 12}, {2, 8, 0, 20, 12}});
  const auto fused = fuse_parcels(t1, t2, f, 30);
  // sliver cols 8-9 (24 cells) shares 12 edges with each side: tie -> lower id
  ASSERT_EQ(fused.parcels.size(), 2u);
  EXPECT_DOUBLE_EQ(polygon_area(fused.parcels[0]), 120.0);
  EXPECT_EQ(fused.footprint(9, 5), fused.footprint(0, 0));
}

TEST(FuseParcels, IsolatedSliverDropped) {
  const GeoFrame f = GeoFrame::unit(20, 20, 1.0);
  const auto t1 = square_parcels(f, {{1, 0, 0, 10, 10}, {2, 15, 15, 17, 17}});
  const auto fused = fuse_parcels(t1, t1, f, 10);
  ASSERT_EQ(fused.parcels.size(), 1u);
  EXPECT_EQ(fused.footprint(16, 16), 0u);
}

TEST(FuseParcels, RefinesBothInputsAndMatchesPairingOracle) {
  std::size_t total = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto a = extract_parcels(random_edges(seed)).parcels;
    const auto b = extract_parcels(random_edges(seed + 100)).parcels;
    const GeoFrame f = GeoFrame::unit(72, 60, 1.0);
    const auto fused = fuse_parcels(a, b, f, 25);
    const IdRaster ra = rasterize(a, f), rb = rasterize(b, f);
    // oracle: before merging, cells share a piece iff they share the pair
    // and are 4-connected through cells of that pair
    std::map<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>> piece_pair;
    for (std::size_t i = 0; i < ra.size(); ++i) {
      const auto id = fused.intersections[i];
      EXPECT_EQ(id != 0, ra[i] != 0 && rb[i] != 0);
      if (!id) continue;
      auto [it, ins] = piece_pair.emplace(id, std::make_pair(ra[i], rb[i]));
      EXPECT_EQ(it->second, std::make_pair(ra[i], rb[i]));
    }
    for (std::uint32_t id = 1; id <= max_label(fused.intersections); ++id) {
      BinaryMask mk(f);
      for (std::size_t i = 0; i < mk.size(); ++i) mk[i] = fused.intersections[i] == id;
      EXPECT_EQ(max_label(connected_components(mk, 4)), 1u);
    }
    for (const auto& p : fused.parcels) EXPECT_GE(polygon_area(p), 25.0);
    EXPECT_EQ(rasterize(fused.parcels, f), fused.footprint);
    total += fused.parcels.size();
  }
  EXPECT_GE(total, 20u);
}
