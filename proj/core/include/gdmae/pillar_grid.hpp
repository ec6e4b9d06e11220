#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gdmae/params.hpp"
#include "gdmae/rng.hpp"
#include "gdmae/tensor.hpp"

namespace gdmae {

using Point3 = std::array<double, 3>;

/// Points in meters, optional per-point intensity.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<double> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
  bool has_intensity() const { return !intensity.empty(); }
  /// Throws std::invalid_argument on non-finite values or a size mismatch.
  void validate() const;
};

/// Integer cell index on a BEV grid: x is the column, y the row.
struct Coord {
  std::int32_t x = 0;
  std::int32_t y = 0;
  auto operator<=>(const Coord&) const = default;
};

struct CoordHash {
  std::size_t operator()(const Coord& c) const noexcept {
    return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.x)) << 32) |
                                      static_cast<std::uint32_t>(c.y));
  }
};

using CoordIndex = std::unordered_map<Coord, std::uint32_t, CoordHash>;

CoordIndex index_coords(std::span<const Coord> coords);
std::string coord_str(const Coord& c);

inline Coord floor_div(const Coord& c, std::int32_t factor) {
  auto fd = [factor](std::int32_t v) { return v >= 0 ? v / factor : -((-v + factor - 1) / factor); };
  return {fd(c.x), fd(c.y)};
}

struct Extent {
  std::int32_t width = 0;
  std::int32_t height = 0;
  bool contains(const Coord& c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  std::size_t cells() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  auto operator<=>(const Extent&) const = default;
};

struct GridSpec {
  Point3 range_min{0.0, 0.0, -2.0};
  Point3 range_max{1.0, 1.0, 4.0};
  double pillar_x = 0.32;
  double pillar_y = 0.32;

  void validate() const;
  /// Level-0 grid extent: ceil(range / pillar size) per axis.
  Extent extent() const;
  /// Extent after `level` stride-2 downsamplings: ceil(W / 2^level).
  Extent extent(int level) const;
  double z_mid() const { return 0.5 * (range_min[2] + range_max[2]); }
  double z_half() const { return 0.5 * (range_max[2] - range_min[2]); }
  /// Metric center of cell `c` at `level`.
  std::array<double, 2> cell_center(const Coord& c, int level) const;
  std::array<double, 2> cell_size(int level) const;
};

/// Sparse features paired with unique grid coordinates at one pyramid level.
struct TokenSet {
  Tensor features;  // (M, C)
  std::vector<Coord> coords;
  int level = 0;

  std::size_t size() const { return coords.size(); }
  std::size_t channels() const { return features.defined() && features.ndim() == 2 ? features.dim(1) : 0; }
  /// Throws if rows and coords disagree, coords repeat, or fall outside `extent`.
  void validate(const Extent& extent) const;
  static TokenSet empty(std::size_t channels, int level);
};

struct Voxelization {
  // Index into `coords` for every point; -1 for points outside the range.
  std::vector<std::int32_t> pillar_of_point;
  // Occupied pillars, deduplicated and sorted lexicographically.
  std::vector<Coord> coords;
  std::vector<std::uint32_t> points_per_pillar;
  std::size_t dropped = 0;
};

/// Assigns points to pillars by floor((p - range_min) / pillar_size). Points
/// outside [range_min, range_max) on any axis are dropped and counted.
Voxelization voxelize(const PointCloud& cloud, const GridSpec& spec);

/// Point-wise MLP (two linear+gelu layers) followed by a max over the points
/// of each pillar. Per-point input is (dx, dy, z[, intensity]) with dx, dy
/// the offset from the pillar center.
class PillarFeatureNet {
 public:
  PillarFeatureNet() = default;
  PillarFeatureNet(std::size_t hidden, std::size_t out_channels, bool use_intensity, Rng& rng);

  static std::size_t input_width(bool use_intensity) { return use_intensity ? 4 : 3; }
  bool use_intensity() const { return use_intensity_; }
  std::size_t out_channels() const { return w2_.dim(1); }

  /// (N_in, F) matrix of per-point inputs for the points kept by `vox`, in
  /// point order, plus the pillar index of each row.
  Tensor point_inputs(const PointCloud& cloud, const Voxelization& vox, const GridSpec& spec,
                      std::vector<std::uint32_t>* segment) const;
  Tensor point_mlp(const Tensor& inputs) const;
  TokenSet forward(const PointCloud& cloud, const Voxelization& vox, const GridSpec& spec) const;

  ParamList parameters() const;

 private:
  bool use_intensity_ = true;
  Tensor w1_, b1_, w2_, b2_;
};

/// (C, H_l, W_l) map holding `fill` except at token cells. Differentiable in
/// the token features.
Tensor scatter_to_dense(const TokenSet& tokens, const Extent& extent, double fill = 0.0);

/// Row i is the feature column of `map` (C, H, W) at coords[i].
Tensor gather_from_dense(const Tensor& map, std::span<const Coord> coords);

// Point files: CSV rows "x,y,z[,i]" and ASCII PLY with vertex x y z
// [intensity]. Format is chosen from the extension.
PointCloud read_point_cloud(const std::string& path);
void write_points_csv(const std::string& path, std::span<const Point3> points);
void write_points_ply(const std::string& path, std::span<const Point3> points);

}  // namespace gdmae
