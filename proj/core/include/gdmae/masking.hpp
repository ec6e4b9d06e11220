#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gdmae/pillar_grid.hpp"

namespace gdmae {

enum class MaskStrategy { Block, Patch, Point };

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

/// Level-2 cells are 4x4 blocks of level-0 pillars.
inline constexpr std::int32_t kBlockFactor = 4;

struct MaskPlan {
  MaskStrategy strategy = MaskStrategy::Patch;
  double ratio = 0.75;
  std::uint64_t seed = 0;

  /// Scale at which masking and decoding happen: 2 for block, else 0.
  int target_level() const { return strategy == MaskStrategy::Block ? 2 : 0; }
};

/// Binary occupancy of masked cells at one level. masked and visible
/// partition the occupied cells and are sorted lexicographically.
struct MaskMap {
  int level = 0;
  Extent extent;
  std::vector<std::uint8_t> grid;  // row-major, 1 = masked
  std::vector<Coord> masked;
  std::vector<Coord> visible;

  bool is_masked(const Coord& c) const {
    return extent.contains(c) && grid[static_cast<std::size_t>(c.y) * static_cast<std::size_t>(extent.width) +
                                      static_cast<std::size_t>(c.x)] != 0;
  }
};

/// Masks exactly floor(ratio * M) of the occupied cells, chosen as the prefix
/// of a seeded shuffle.
MaskMap sample_mask(std::span<const Coord> occupied, double ratio, std::uint64_t seed, int level,
                    const Extent& extent);

std::size_t mask_count(std::size_t total, double ratio);

struct MaskedTokens {
  TokenSet visible;
  MaskMap mask;
};

/// Masks occupied level-2 cells; a level-0 token survives iff floor(c / 4)
/// is unmasked.
MaskedTokens block_mask_inputs(const TokenSet& level0, const MaskPlan& plan, const Extent& level2_extent);

/// Nearest-neighbour upsampling of a mask grid by `factor` onto `fine`.
std::vector<std::uint8_t> upsample_mask(const MaskMap& mask, std::int32_t factor, const Extent& fine);

/// Per-token visibility of level-0 coords: by floor-division preimage, or by
/// indexing the upsampled mask grid. The two must agree.
std::vector<std::uint8_t> visibility_by_preimage(std::span<const Coord> level0, const MaskMap& block_mask);
std::vector<std::uint8_t> visibility_by_upsampling(std::span<const Coord> level0, const MaskMap& block_mask,
                                                   const Extent& level0_extent);

/// Masks level-0 tokens directly.
MaskedTokens patch_mask_inputs(const TokenSet& level0, const MaskPlan& plan, const Extent& level0_extent);

struct PointMaskResult {
  PointCloud visible;
  std::vector<std::uint32_t> visible_index;  // original index of each visible point
  // Pillars that lost at least one in-range point, sorted, with the original
  // indices of their removed points.
  std::vector<Coord> target_coords;
  std::vector<std::vector<std::uint32_t>> masked_points;
  MaskMap mask;  // level 0: masked = target pillars
};

/// Removes floor(ratio * N) points uniformly over the whole cloud.
PointMaskResult point_mask_inputs(const PointCloud& cloud, const GridSpec& spec, const MaskPlan& plan);

}  // namespace gdmae
