#include <set>

#include "doctest.h"
#include "gdmae/masking.hpp"
#include "gdmae/scene.hpp"
#include "support/oracles.hpp"

using namespace gdmae;

namespace {

TokenSet tokens_at(std::vector<Coord> c) {
  const std::size_t n = c.size();
  return TokenSet{Tensor({n, 1}), std::move(c), 0};
}

std::vector<Coord> grid_coords(std::int32_t w, std::int32_t h) {
  std::vector<Coord> c;
  for (std::int32_t y = 0; y < h; ++y)
    for (std::int32_t x = 0; x < w; ++x) c.push_back({x, y});
  return c;
}

}  // namespace

TEST_SUITE("masking") {

TEST_CASE("mask count is floor(ratio * M)") {
  Rng rng(1);
  const auto hundred = oracle::random_coords(100, {20, 20}, rng);
  CHECK(sample_mask(hundred, 0.75, 1, 0, {20, 20}).masked.size() == 75);
  CHECK(sample_mask(std::vector<Coord>{{0, 0}, {1, 0}}, 0.75, 1, 0, {2, 1}).masked.size() == 1);
  CHECK(mask_count(10, 0.3) == 3);
  CHECK_THROWS(sample_mask(hundred, 1.0, 1, 0, {20, 20}));
  CHECK_THROWS(sample_mask(hundred, 0.0, 1, 0, {20, 20}));
}

TEST_CASE("masks are deterministic per seed and vary across seeds") {
  Rng rng(2);
  const auto c = oracle::random_coords(60, {16, 16}, rng);
  int differ = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = sample_mask(c, 0.75, s, 0, {16, 16});
    const auto b = sample_mask(c, 0.75, s, 0, {16, 16});
    CHECK(a.masked == b.masked);
    CHECK(a.grid == b.grid);
    if (a.masked != sample_mask(c, 0.75, s + 1000, 0, {16, 16}).masked) ++differ;
  }
  CHECK(differ >= 99);
}

TEST_CASE("masked and visible partition the occupied cells") {
  Rng rng(3);
  const auto c = oracle::random_coords(50, {12, 12}, rng);
  const auto m = sample_mask(c, 0.6, 9, 0, {12, 12});
  std::set<Coord> all(m.masked.begin(), m.masked.end());
  for (const auto& v : m.visible) CHECK(all.insert(v).second);
  CHECK(all == std::set<Coord>(c.begin(), c.end()));
  for (const auto& x : m.masked) CHECK(m.is_masked(x));
  for (const auto& x : m.visible) CHECK_FALSE(m.is_masked(x));
}

TEST_CASE("masking level-2 cell (1,0) removes pillars [4..7] x [0..3]") {
  // Two occupied level-2 cells: ratio 0.5 masks exactly one; find a seed
  // that masks (1, 0).
  auto c = grid_coords(8, 4);
  const TokenSet t = tokens_at(c);
  for (std::uint64_t seed = 0;; ++seed) {
    const auto r = block_mask_inputs(t, MaskPlan{MaskStrategy::Block, 0.5, seed}, {2, 1});
    if (r.mask.masked != std::vector<Coord>{{1, 0}}) continue;
    for (const auto& v : r.visible.coords) CHECK(v.x < 4);
    CHECK(r.visible.size() == 16);
    break;
  }
}

TEST_CASE("ratio small enough to mask nothing keeps every token") {
  const TokenSet t = tokens_at(grid_coords(8, 8));
  const auto r = block_mask_inputs(t, MaskPlan{MaskStrategy::Block, 0.2, 4}, {2, 2});
  CHECK(r.mask.masked.empty());
  CHECK(r.visible.coords == t.coords);
}

TEST_CASE("block visibility matches a per-token floor loop, preimage and upsampling agree") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Extent e0{4 + static_cast<std::int32_t>(uniform_index(rng, 40)), 4 + static_cast<std::int32_t>(uniform_index(rng, 40))};
    const Extent e2{(e0.width + 3) / 4, (e0.height + 3) / 4};
    const TokenSet t = tokens_at(oracle::random_coords(1 + uniform_index(rng, e0.cells() / 4 + 1), e0, rng));
    const auto r = block_mask_inputs(t, MaskPlan{MaskStrategy::Block, 0.75, rng()}, e2);
    std::vector<Coord> want;
    for (const auto& c : t.coords)
      if (!r.mask.is_masked({c.x / 4, c.y / 4})) want.push_back(c);
    CHECK(r.visible.coords == want);
    CHECK(visibility_by_preimage(t.coords, r.mask) == visibility_by_upsampling(t.coords, r.mask, e0));
    // No level-2 cell of a surviving token is masked.
    for (const auto& c : downsample_coords(downsample_coords(r.visible.coords))) CHECK_FALSE(r.mask.is_masked(c));
  }
}

TEST_CASE("patch masking: 4 tokens at 0.75 leave 1 visible") {
  const TokenSet t = tokens_at({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
  const auto r = patch_mask_inputs(t, MaskPlan{MaskStrategy::Patch, 0.75, 3}, {2, 2});
  CHECK(r.visible.size() == 1);
  CHECK(r.mask.masked.size() == 3);
}

TEST_CASE("patch masking partitions coords and is deterministic") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const TokenSet t = tokens_at(oracle::random_coords(1 + uniform_index(rng, 80), {12, 12}, rng));
    const MaskPlan plan{MaskStrategy::Patch, 0.75, static_cast<std::uint64_t>(trial)};
    const auto a = patch_mask_inputs(t, plan, {12, 12});
    const auto b = patch_mask_inputs(t, plan, {12, 12});
    CHECK(a.visible.coords == b.visible.coords);
    CHECK(a.mask.masked == b.mask.masked);
    std::set<Coord> u(a.visible.coords.begin(), a.visible.coords.end());
    u.insert(a.mask.masked.begin(), a.mask.masked.end());
    CHECK(u.size() == t.size());
    CHECK(a.visible.size() + a.mask.masked.size() == t.size());
  }
}

TEST_CASE("point masking: 4 points at 0.75 leave 1") {
  GridSpec g;
  g.range_min = {0, 0, -1};
  g.range_max = {2, 2, 1};
  g.pillar_x = g.pillar_y = 1.0;
  PointCloud c;
  c.points = {{0.5, 0.5, 0}, {1.5, 0.5, 0}, {0.5, 1.5, 0}, {1.5, 1.5, 0}};
  const auto r = point_mask_inputs(c, g, MaskPlan{MaskStrategy::Point, 0.75, 1});
  CHECK(r.visible.size() == 1);
  CHECK(r.target_coords.size() == 3);
  // Every target pillar lost all its points here, so none is visible.
  const auto v = voxelize(r.visible, g);
  for (const auto& t : r.target_coords) CHECK(std::find(v.coords.begin(), v.coords.end(), t) == v.coords.end());
}

TEST_CASE("point masking conserves points and lists removed points per pillar") {
  Rng rng(7);
  GridSpec g;
  g.range_min = {-2, -2, -1};
  g.range_max = {2, 2, 1};
  g.pillar_x = g.pillar_y = 0.5;
  for (int trial = 0; trial < 30; ++trial) {
    PointCloud c;
    const std::size_t n = 1 + uniform_index(rng, 200);
    for (std::size_t i = 0; i < n; ++i) c.points.push_back({uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -1, 1)});
    const auto r = point_mask_inputs(c, g, MaskPlan{MaskStrategy::Point, 0.75, rng()});
    std::size_t removed = 0;
    std::set<std::uint32_t> seen(r.visible_index.begin(), r.visible_index.end());
    for (std::size_t p = 0; p < r.target_coords.size(); ++p) {
      for (auto i : r.masked_points[p]) {
        ++removed;
        CHECK(seen.insert(i).second);
        const auto& q = c.points[i];
        CHECK(r.target_coords[p] == Coord{static_cast<std::int32_t>(std::floor((q[0] + 2) / 0.5)),
                                         static_cast<std::int32_t>(std::floor((q[1] + 2) / 0.5))});
      }
    }
    CHECK(r.visible.size() + removed == n);
    CHECK(removed == mask_count(n, 0.75));
    CHECK(r.mask.masked == r.target_coords);
  }
}

TEST_CASE("strategy names round-trip") {
  for (auto s : {MaskStrategy::Block, MaskStrategy::Patch, MaskStrategy::Point}) CHECK(parse_mask_strategy(to_string(s)) == s);
  CHECK_THROWS(parse_mask_strategy("voxel"));
  CHECK(MaskPlan{MaskStrategy::Block}.target_level() == 2);
  CHECK(MaskPlan{MaskStrategy::Point}.target_level() == 0);
}

}  // TEST_SUITE
