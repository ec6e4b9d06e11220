#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gdmae/pillar_grid.hpp"

namespace gdmae {

/// Per-token point targets in token-local coordinates, zero padded to K.
struct TargetSet {
  std::size_t tokens = 0;
  std::size_t k = 0;
  std::vector<double> points;              // (tokens, k, 3)
  std::vector<std::uint32_t> valid_counts;  // each in [1, k]
  std::vector<std::vector<std::uint32_t>> source;  // original point index per valid row

  const double* point(std::size_t t, std::size_t j) const { return points.data() + (t * k + j) * 3; }
};

/// Local frame of a cell: x, y relative to the cell center in half cell
/// sizes, z relative to the middle of the z range in half ranges.
Point3 to_local(const Point3& p, const Coord& cell, int level, const GridSpec& spec);
Point3 from_local(const Point3& q, const Coord& cell, int level, const GridSpec& spec);

/// Samples up to K points per masked cell of `level` from the in-range points
/// of `cloud`. Throws if a cell holds no point.
TargetSet build_targets(const PointCloud& cloud, std::span<const Coord> masked, int level, const GridSpec& spec,
                        std::size_t k, std::uint64_t seed);

/// Same, with the candidate points of each cell given explicitly (point
/// masking supplies only the removed points).
TargetSet build_targets(const PointCloud& cloud, std::span<const Coord> masked,
                        std::span<const std::vector<std::uint32_t>> candidates, int level, const GridSpec& spec,
                        std::size_t k, std::uint64_t seed);

/// linear(dim -> 3K) followed by a reshape to (T, K, 3).
struct PredictionHead {
  Tensor weight;  // (dim, 3K)
  Tensor bias;    // (3K,)

  static PredictionHead create(std::size_t dim, std::size_t k, Rng& rng);
  std::size_t k() const { return weight.dim(1) / 3; }
  Tensor predict(const Tensor& features) const;
  ParamList parameters() const { return {{"weight", weight}, {"bias", bias}}; }
};

inline Tensor predict_points(const Tensor& features, const PredictionHead& head) { return head.predict(features); }

/// Mean over tokens of
///   (1/K) sum_k min_j |p_k - q_j|^2 + (1/v) sum_j min_k |q_j - p_k|^2
/// with j ranging over the v valid targets. Differentiable in `pred`.
Tensor chamfer_loss(const Tensor& pred, const TargetSet& targets);

}  // namespace gdmae
