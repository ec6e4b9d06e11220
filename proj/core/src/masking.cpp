#include "gdmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gdmae/ops.hpp"
#include "gdmae/rng.hpp"

namespace gdmae {

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::Block: return "block";
    case MaskStrategy::Patch: return "patch";
    case MaskStrategy::Point: return "point";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "block") return MaskStrategy::Block;
  if (name == "patch") return MaskStrategy::Patch;
  if (name == "point") return MaskStrategy::Point;
  throw std::invalid_argument("unknown mask strategy '" + name + "' (expected block, patch or point)");
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("mask ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
}

// First `count` entries of a seeded Fisher-Yates shuffle of [0, n).
std::vector<std::uint32_t> shuffled_prefix(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  return order;
}

}  // namespace

std::size_t mask_count(std::size_t total, double ratio) {
  // Guard against representation error, e.g. 0.29 * 100 = 28.999999999999996.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 1e-9));
}

MaskMap sample_mask(std::span<const Coord> occupied, double ratio, std::uint64_t seed, int level,
                    const Extent& extent) {
  check_ratio(ratio);
  MaskMap map;
  map.level = level;
  map.extent = extent;
  map.grid.assign(extent.cells(), 0);
  std::vector<std::uint8_t> chosen(occupied.size(), 0);
  for (std::uint32_t i : shuffled_prefix(occupied.size(), mask_count(occupied.size(), ratio), seed)) chosen[i] = 1;
  for (std::size_t i = 0; i < occupied.size(); ++i) {
    const Coord& c = occupied[i];
    if (!extent.contains(c)) throw std::out_of_range("sample_mask: coord " + coord_str(c) + " outside extent");
    if (chosen[i]) {
      map.grid[static_cast<std::size_t>(c.y) * static_cast<std::size_t>(extent.width) + static_cast<std::size_t>(c.x)] = 1;
      map.masked.push_back(c);
    } else {
      map.visible.push_back(c);
    }
  }
  std::sort(map.masked.begin(), map.masked.end());
  std::sort(map.visible.begin(), map.visible.end());
  return map;
}

namespace {

MaskedTokens keep_rows(const TokenSet& tokens, const std::vector<std::uint8_t>& keep, MaskMap mask) {
  std::vector<std::uint32_t> rows;
  std::vector<Coord> coords;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!keep[i]) continue;
    rows.push_back(static_cast<std::uint32_t>(i));
    coords.push_back(tokens.coords[i]);
  }
  TokenSet visible{rows.empty() ? Tensor(Shape{0, tokens.channels()}) : gather_rows(tokens.features, rows),
                   std::move(coords), tokens.level};
  return {std::move(visible), std::move(mask)};
}

}  // namespace

std::vector<std::uint8_t> upsample_mask(const MaskMap& mask, std::int32_t factor, const Extent& fine) {
  std::vector<std::uint8_t> grid(fine.cells(), 0);
  for (std::int32_t y = 0; y < fine.height; ++y)
    for (std::int32_t x = 0; x < fine.width; ++x)
      grid[static_cast<std::size_t>(y) * static_cast<std::size_t>(fine.width) + static_cast<std::size_t>(x)] =
          mask.is_masked({x / factor, y / factor});
  return grid;
}

std::vector<std::uint8_t> visibility_by_preimage(std::span<const Coord> level0, const MaskMap& block_mask) {
  std::vector<std::uint8_t> visible(level0.size());
  for (std::size_t i = 0; i < level0.size(); ++i) visible[i] = !block_mask.is_masked(floor_div(level0[i], kBlockFactor));
  return visible;
}

std::vector<std::uint8_t> visibility_by_upsampling(std::span<const Coord> level0, const MaskMap& block_mask,
                                                   const Extent& level0_extent) {
  const auto grid = upsample_mask(block_mask, kBlockFactor, level0_extent);
  std::vector<std::uint8_t> visible(level0.size());
  for (std::size_t i = 0; i < level0.size(); ++i) {
    const Coord& c = level0[i];
    visible[i] = !grid[static_cast<std::size_t>(c.y) * static_cast<std::size_t>(level0_extent.width) +
                       static_cast<std::size_t>(c.x)];
  }
  return visible;
}

MaskedTokens block_mask_inputs(const TokenSet& level0, const MaskPlan& plan, const Extent& level2_extent) {
  if (plan.strategy != MaskStrategy::Block) throw std::invalid_argument("block_mask_inputs: plan is not block-wise");
  if (level0.level != 0) throw std::invalid_argument("block_mask_inputs: expected level-0 tokens");
  std::vector<Coord> cells;
  cells.reserve(level0.size());
  for (const auto& c : level0.coords) cells.push_back(floor_div(c, kBlockFactor));
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  MaskMap mask = sample_mask(cells, plan.ratio, plan.seed, 2, level2_extent);
  const auto keep = visibility_by_preimage(level0.coords, mask);
  return keep_rows(level0, keep, std::move(mask));
}

MaskedTokens patch_mask_inputs(const TokenSet& level0, const MaskPlan& plan, const Extent& level0_extent) {
  if (plan.strategy != MaskStrategy::Patch) throw std::invalid_argument("patch_mask_inputs: plan is not patch-wise");
  if (level0.level != 0) throw std::invalid_argument("patch_mask_inputs: expected level-0 tokens");
  MaskMap mask = sample_mask(level0.coords, plan.ratio, plan.seed, 0, level0_extent);
  std::vector<std::uint8_t> keep(level0.size());
  for (std::size_t i = 0; i < level0.size(); ++i) keep[i] = !mask.is_masked(level0.coords[i]);
  return keep_rows(level0, keep, std::move(mask));
}

PointMaskResult point_mask_inputs(const PointCloud& cloud, const GridSpec& spec, const MaskPlan& plan) {
  if (plan.strategy != MaskStrategy::Point) throw std::invalid_argument("point_mask_inputs: plan is not point-wise");
  check_ratio(plan.ratio);
  const Voxelization vox = voxelize(cloud, spec);
  std::vector<std::uint8_t> removed(cloud.size(), 0);
  for (std::uint32_t i : shuffled_prefix(cloud.size(), mask_count(cloud.size(), plan.ratio), plan.seed)) removed[i] = 1;

  PointMaskResult out;
  std::vector<std::vector<std::uint32_t>> per_pillar(vox.coords.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (removed[i]) {
      const std::int32_t k = vox.pillar_of_point[i];
      if (k >= 0) per_pillar[static_cast<std::size_t>(k)].push_back(static_cast<std::uint32_t>(i));
      continue;
    }
    out.visible.points.push_back(cloud.points[i]);
    if (cloud.has_intensity()) out.visible.intensity.push_back(cloud.intensity[i]);
    out.visible_index.push_back(static_cast<std::uint32_t>(i));
  }
  const Extent extent = spec.extent();
  out.mask.level = 0;
  out.mask.extent = extent;
  out.mask.grid.assign(extent.cells(), 0);
  for (std::size_t k = 0; k < vox.coords.size(); ++k) {
    const Coord& c = vox.coords[k];
    if (per_pillar[k].empty()) {
      out.mask.visible.push_back(c);
      continue;
    }
    out.target_coords.push_back(c);
    out.masked_points.push_back(std::move(per_pillar[k]));
    out.mask.masked.push_back(c);
    out.mask.grid[static_cast<std::size_t>(c.y) * static_cast<std::size_t>(extent.width) + static_cast<std::size_t>(c.x)] = 1;
  }
  return out;
}

}  // namespace gdmae
