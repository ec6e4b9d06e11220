#include <cmath>

#include "doctest.h"
#include "gdmae/grad_suite.hpp"
#include "gdmae/pillar_grid.hpp"
#include "support/oracles.hpp"

using namespace gdmae;

namespace {

GridSpec unit_grid() {
  GridSpec g;
  g.range_min = {0.0, 0.0, -2.0};
  g.range_max = {3.2, 3.2, 2.0};
  g.pillar_x = g.pillar_y = 0.32;
  return g;
}

PointCloud cloud_of(std::vector<Point3> pts) {
  PointCloud c;
  c.points = std::move(pts);
  c.intensity.assign(c.points.size(), 0.5);
  return c;
}

}  // namespace

TEST_SUITE("pillar-grid") {

TEST_CASE("voxelize: floor((p - min) / size)") {
  const auto v = voxelize(cloud_of({{0.50, 0.70, 0.0}, {0.32, 0.0, 0.0}}), unit_grid());
  REQUIRE(v.coords.size() == 2);
  CHECK(v.coords[static_cast<std::size_t>(v.pillar_of_point[0])] == Coord{1, 2});
  // A point exactly on a boundary belongs to the upper cell.
  CHECK(v.coords[static_cast<std::size_t>(v.pillar_of_point[1])] == Coord{1, 0});
}

TEST_CASE("voxelize drops out-of-range points and counts them") {
  const auto v = voxelize(cloud_of({{-0.1, 1.0, 0.0}, {1.0, 1.0, 5.0}, {1.0, 1.0, 0.0}, {3.2, 0.0, 0.0}}), unit_grid());
  CHECK(v.dropped == 3);
  CHECK(v.pillar_of_point == std::vector<std::int32_t>{-1, -1, 0, -1});
}

TEST_CASE("voxelize matches a scalar reference loop on 1000 random points") {
  Rng rng(4);
  const GridSpec g = unit_grid();
  PointCloud c;
  for (int i = 0; i < 1000; ++i) c.points.push_back({uniform(rng, -0.5, 3.7), uniform(rng, -0.5, 3.7), uniform(rng, -2.5, 2.5)});
  const auto v = voxelize(c, g);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.points[i];
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && p[a] >= g.range_min[a] && p[a] < g.range_max[a];
    if (!inside) {
      ++dropped;
      CHECK(v.pillar_of_point[i] == -1);
      continue;
    }
    const Coord want{static_cast<std::int32_t>(std::floor((p[0] - g.range_min[0]) / g.pillar_x)),
                     static_cast<std::int32_t>(std::floor((p[1] - g.range_min[1]) / g.pillar_y))};
    REQUIRE(v.pillar_of_point[i] >= 0);
    CHECK(v.coords[static_cast<std::size_t>(v.pillar_of_point[i])] == want);
  }
  CHECK(v.dropped == dropped);
  CHECK(std::is_sorted(v.coords.begin(), v.coords.end()));
}

TEST_CASE("grid extents round up per level") {
  GridSpec g = unit_grid();
  g.range_max = {3.3, 1.0, 2.0};
  CHECK(g.extent() == Extent{11, 4});
  CHECK(g.extent(1) == Extent{6, 2});
  CHECK(g.extent(2) == Extent{3, 1});
}

TEST_CASE("single point pillar: pooled feature is that point's MLP output") {
  Rng rng(8);
  const PillarFeatureNet pfe(6, 5, true, rng);
  const GridSpec g = unit_grid();
  const PointCloud c = cloud_of({{1.0, 2.0, 0.3}});
  const auto v = voxelize(c, g);
  std::vector<std::uint32_t> seg;
  const Tensor per_point = pfe.point_mlp(pfe.point_inputs(c, v, g, &seg));
  const TokenSet t = pfe.forward(c, v, g);
  REQUIRE(t.size() == 1);
  CHECK(t.features.values() == per_point.values());
}

TEST_CASE("duplicate points pool to the single-point feature") {
  Rng rng(9);
  const PillarFeatureNet pfe(6, 5, true, rng);
  const GridSpec g = unit_grid();
  const PointCloud one = cloud_of({{1.0, 2.0, 0.3}});
  const PointCloud two = cloud_of({{1.0, 2.0, 0.3}, {1.0, 2.0, 0.3}});
  CHECK(pfe.forward(one, voxelize(one, g), g).features.values() ==
        pfe.forward(two, voxelize(two, g), g).features.values());
}

TEST_CASE("pooling is the per-channel maximum over a pillar's points") {
  Rng rng(10);
  const PillarFeatureNet pfe(8, 6, false, rng);
  const GridSpec g = unit_grid();
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.points.push_back({uniform(rng, 0.0, 1.28), uniform(rng, 0.0, 0.64), uniform(rng, -1.0, 1.0)});
  const auto v = voxelize(c, g);
  std::vector<std::uint32_t> seg;
  const Tensor per_point = pfe.point_mlp(pfe.point_inputs(c, v, g, &seg));
  const TokenSet t = pfe.forward(c, v, g);
  REQUIRE(t.size() == v.coords.size());
  for (std::size_t p = 0; p < t.size(); ++p) {
    for (std::size_t ch = 0; ch < 6; ++ch) {
      double best = -INFINITY;
      for (std::size_t r = 0; r < seg.size(); ++r)
        if (seg[r] == p) best = std::max(best, per_point.at(r, ch));
      CHECK(t.features.at(p, ch) == best);
    }
  }
}

TEST_CASE("scatter_to_dense of an empty set is all fill") {
  const Tensor m = scatter_to_dense(TokenSet::empty(3, 0), {4, 5}, -2.0);
  CHECK(m.shape() == Shape{3, 5, 4});
  for (double v : m.data()) CHECK(v == -2.0);
}

TEST_CASE("one token at (2, 3) touches only column 2, row 3") {
  const TokenSet t{Tensor({1, 2}, {7.0, -1.0}), {{2, 3}}, 0};
  const Extent e{5, 6};
  const Tensor m = scatter_to_dense(t, e);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::int32_t y = 0; y < e.height; ++y)
      for (std::int32_t x = 0; x < e.width; ++x) {
        const double v = m.data()[(c * 6 + static_cast<std::size_t>(y)) * 5 + static_cast<std::size_t>(x)];
        if (x == 2 && y == 3) CHECK(v == (c == 0 ? 7.0 : -1.0));
        else CHECK(v == 0.0);
      }
}

TEST_CASE("gather at a fill-only cell returns the fill; repeated coords repeat rows") {
  const TokenSet t{Tensor({1, 2}, {7.0, -1.0}), {{2, 3}}, 0};
  const Tensor m = scatter_to_dense(t, {5, 6}, 0.25);
  const std::vector<Coord> at{{0, 0}, {2, 3}, {2, 3}};
  const Tensor g = gather_from_dense(m, at);
  CHECK(g.values() == std::vector<double>{0.25, 0.25, 7.0, -1.0, 7.0, -1.0});
}

TEST_CASE("gather after scatter is the identity on random sparse maps") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Extent e{1 + static_cast<std::int32_t>(uniform_index(rng, 12)), 1 + static_cast<std::int32_t>(uniform_index(rng, 12))};
    const TokenSet t = oracle::random_tokens(1 + uniform_index(rng, e.cells()), 3, e, 0, rng);
    CHECK(gather_from_dense(scatter_to_dense(t, e, 9.0), t.coords).values() == t.features.values());
  }
}

TEST_CASE("token sets reject duplicates and out-of-extent coords") {
  CHECK_THROWS(TokenSet{Tensor({2, 1}), {{0, 0}, {0, 0}}, 0}.validate({3, 3}));
  CHECK_THROWS(TokenSet{Tensor({1, 1}), {{3, 0}}, 0}.validate({3, 3}));
  CHECK_THROWS(TokenSet{Tensor({2, 1}), {{0, 0}}, 0}.validate({3, 3}));
}

TEST_CASE("point files round-trip through CSV and PLY") {
  const std::vector<Point3> pts{{1.5, -2.25, 0.125}, {0.0, 3.0, -1.0}};
  for (const char* ext : {".csv", ".ply"}) {
    const std::string path = std::string("pillar_grid_roundtrip") + ext;
    if (std::string(ext) == ".csv") write_points_csv(path, pts);
    else write_points_ply(path, pts);
    const PointCloud c = read_point_cloud(path);
    REQUIRE(c.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
      for (int a = 0; a < 3; ++a) CHECK(c.points[i][a] == doctest::Approx(pts[i][a]).epsilon(1e-12));
    std::remove(path.c_str());
  }
}

TEST_CASE("pillar-grid gradient suite") {
  for (const auto& r : run_grad_checks("pillar-grid", 3)) {
    INFO(r.name << " seed " << r.seed << " " << r.error);
    CHECK(r.passed);
  }
}

}  // TEST_SUITE
