#include "gdmae/reconstruction.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "gdmae/autograd.hpp"
#include "gdmae/ops.hpp"

namespace gdmae {

Point3 to_local(const Point3& p, const Coord& cell, int level, const GridSpec& spec) {
  const auto c = spec.cell_center(cell, level);
  const auto s = spec.cell_size(level);
  return {(p[0] - c[0]) / (0.5 * s[0]), (p[1] - c[1]) / (0.5 * s[1]), (p[2] - spec.z_mid()) / spec.z_half()};
}

Point3 from_local(const Point3& q, const Coord& cell, int level, const GridSpec& spec) {
  const auto c = spec.cell_center(cell, level);
  const auto s = spec.cell_size(level);
  return {c[0] + q[0] * 0.5 * s[0], c[1] + q[1] * 0.5 * s[1], spec.z_mid() + q[2] * spec.z_half()};
}

TargetSet build_targets(const PointCloud& cloud, std::span<const Coord> masked,
                        std::span<const std::vector<std::uint32_t>> candidates, int level, const GridSpec& spec,
                        std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("build_targets: K must be positive");
  if (candidates.size() != masked.size()) {
    throw std::invalid_argument("build_targets: " + std::to_string(candidates.size()) + " candidate lists for " +
                                std::to_string(masked.size()) + " masked cells");
  }
  TargetSet out;
  out.tokens = masked.size();
  out.k = k;
  out.points.assign(masked.size() * k * 3, 0.0);
  out.valid_counts.resize(masked.size());
  out.source.resize(masked.size());
  Rng rng(seed);
  for (std::size_t t = 0; t < masked.size(); ++t) {
    std::vector<std::uint32_t> pool = candidates[t];
    if (pool.empty()) throw std::invalid_argument("build_targets: masked cell " + coord_str(masked[t]) + " holds no points");
    if (pool.size() > k) {
      // Partial Fisher-Yates: the first k entries are a uniform sample.
      for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      pool.resize(k);
    }
    out.valid_counts[t] = static_cast<std::uint32_t>(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (pool[j] >= cloud.size()) throw std::out_of_range("build_targets: point index out of range");
      const Point3 q = to_local(cloud.points[pool[j]], masked[t], level, spec);
      std::copy(q.begin(), q.end(), out.points.begin() + static_cast<std::ptrdiff_t>((t * k + j) * 3));
    }
    out.source[t] = std::move(pool);
  }
  return out;
}

TargetSet build_targets(const PointCloud& cloud, std::span<const Coord> masked, int level, const GridSpec& spec,
                        std::size_t k, std::uint64_t seed) {
  const Voxelization vox = voxelize(cloud, spec);
  const CoordIndex index = index_coords(masked);
  std::vector<std::vector<std::uint32_t>> candidates(masked.size());
  const std::int32_t factor = 1 << level;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::int32_t p = vox.pillar_of_point[i];
    if (p < 0) continue;
    const auto it = index.find(floor_div(vox.coords[static_cast<std::size_t>(p)], factor));
    if (it != index.end()) candidates[it->second].push_back(static_cast<std::uint32_t>(i));
  }
  return build_targets(cloud, masked, candidates, level, spec, k, seed);
}

PredictionHead PredictionHead::create(std::size_t dim, std::size_t k, Rng& rng) {
  return {uniform_param({dim, 3 * k}, dim, rng), constant_param({3 * k}, 0.0)};
}

Tensor PredictionHead::predict(const Tensor& features) const {
  if (!features.defined() || features.ndim() != 2 || features.dim(1) != weight.dim(0)) {
    throw ShapeError("predict_points: features " + (features.defined() ? shape_str(features.shape()) : "<undefined>") +
                     " vs head input width " + std::to_string(weight.dim(0)));
  }
  return reshape(linear(features, weight, bias), {features.dim(0), k(), 3});
}

namespace {

double sq_dist(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

Tensor chamfer_loss(const Tensor& pred, const TargetSet& targets) {
  if (!pred.defined() || pred.ndim() != 3 || pred.dim(2) != 3 || pred.dim(0) != targets.tokens ||
      pred.dim(1) != targets.k) {
    throw ShapeError("chamfer_loss: prediction " + (pred.defined() ? shape_str(pred.shape()) : "<undefined>") +
                     " vs targets (" + std::to_string(targets.tokens) + ", " + std::to_string(targets.k) + ", 3)");
  }
  if (targets.tokens == 0) throw std::invalid_argument("chamfer_loss: no tokens");
  for (std::size_t t = 0; t < targets.tokens; ++t) {
    const auto v = targets.valid_counts[t];
    if (v == 0 || v > targets.k) {
      throw std::invalid_argument("chamfer_loss: token " + std::to_string(t) + " has valid count " + std::to_string(v));
    }
  }
  require_finite("chamfer_loss", pred);

  const std::size_t T = targets.tokens, K = targets.k;
  const auto p = pred.data();
  // Nearest target for each prediction and nearest prediction for each target.
  std::vector<std::uint32_t> pred_nn(T * K), tgt_nn(T * K, 0);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t v = targets.valid_counts[t];
    const double* pt = p.data() + t * K * 3;
    double fwd = 0.0, bwd = 0.0;
    for (std::size_t a = 0; a < K; ++a) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v; ++j) {
        const double d = sq_dist(pt + a * 3, targets.point(t, j));
        if (d < best) best = d, pred_nn[t * K + a] = static_cast<std::uint32_t>(j);
      }
      fwd += best;
    }
    for (std::size_t j = 0; j < v; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < K; ++a) {
        const double d = sq_dist(targets.point(t, j), pt + a * 3);
        if (d < best) best = d, tgt_nn[t * K + j] = static_cast<std::uint32_t>(a);
      }
      bwd += best;
    }
    total += fwd / static_cast<double>(K) + bwd / static_cast<double>(v);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(T));
  return record("chamfer_loss", {pred}, out, [pred, targets, pred_nn, tgt_nn](const TensorImpl& res) {
    const std::size_t T = targets.tokens, K = targets.k;
    const double g = res.grad[0] / static_cast<double>(T);
    auto gp = grad_buffer(pred);
    const auto p = pred.data();
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t v = targets.valid_counts[t];
      for (std::size_t a = 0; a < K; ++a) {
        const double* q = targets.point(t, pred_nn[t * K + a]);
        const std::size_t base = (t * K + a) * 3;
        for (std::size_t c = 0; c < 3; ++c) gp[base + c] += g * 2.0 * (p[base + c] - q[c]) / static_cast<double>(K);
      }
      for (std::size_t j = 0; j < v; ++j) {
        const double* q = targets.point(t, j);
        const std::size_t base = (t * K + tgt_nn[t * K + j]) * 3;
        for (std::size_t c = 0; c < 3; ++c) gp[base + c] += g * 2.0 * (p[base + c] - q[c]) / static_cast<double>(v);
      }
    }
  });
}

}  // namespace gdmae
