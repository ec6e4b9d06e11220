#include "gdmae/pillar_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gdmae/autograd.hpp"
#include "gdmae/ops.hpp"

namespace gdmae {

void PointCloud::validate() const {
  if (!intensity.empty() && intensity.size() != points.size()) {
    throw std::invalid_argument("PointCloud: " + std::to_string(intensity.size()) + " intensities for " +
                                std::to_string(points.size()) + " points");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (double v : points[i]) {
      if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite coordinate at point " + std::to_string(i));
    }
  }
  if (!all_finite(intensity)) throw std::invalid_argument("PointCloud: non-finite intensity");
}

CoordIndex index_coords(std::span<const Coord> coords) {
  CoordIndex index;
  index.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) index.emplace(coords[i], static_cast<std::uint32_t>(i));
  return index;
}

std::string coord_str(const Coord& c) { return "(" + std::to_string(c.x) + ", " + std::to_string(c.y) + ")"; }

void GridSpec::validate() const {
  if (!(pillar_x > 0.0) || !(pillar_y > 0.0)) throw std::invalid_argument("GridSpec: pillar size must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(range_min[a]) || !std::isfinite(range_max[a]) || !(range_max[a] > range_min[a])) {
      throw std::invalid_argument("GridSpec: range_max must exceed range_min on axis " + std::to_string(a));
    }
  }
}

Extent GridSpec::extent() const {
  return {static_cast<std::int32_t>(std::ceil((range_max[0] - range_min[0]) / pillar_x)),
          static_cast<std::int32_t>(std::ceil((range_max[1] - range_min[1]) / pillar_y))};
}

Extent GridSpec::extent(int level) const {
  const Extent e = extent();
  const std::int32_t f = 1 << level;
  return {(e.width + f - 1) / f, (e.height + f - 1) / f};
}

std::array<double, 2> GridSpec::cell_size(int level) const {
  const double f = static_cast<double>(1 << level);
  return {pillar_x * f, pillar_y * f};
}

std::array<double, 2> GridSpec::cell_center(const Coord& c, int level) const {
  const auto size = cell_size(level);
  return {range_min[0] + (c.x + 0.5) * size[0], range_min[1] + (c.y + 0.5) * size[1]};
}

void TokenSet::validate(const Extent& extent) const {
  if (!features.defined() || features.ndim() != 2 || features.dim(0) != coords.size()) {
    throw ShapeError("TokenSet: " + std::to_string(coords.size()) + " coords but features shape " +
                     (features.defined() ? shape_str(features.shape()) : std::string("<undefined>")));
  }
  CoordIndex seen;
  for (const auto& c : coords) {
    if (!extent.contains(c)) {
      throw std::out_of_range("TokenSet: coord " + coord_str(c) + " outside level extent (" +
                              std::to_string(extent.width) + ", " + std::to_string(extent.height) + ")");
    }
    if (!seen.emplace(c, 0).second) throw std::invalid_argument("TokenSet: duplicate coord " + coord_str(c));
  }
}

TokenSet TokenSet::empty(std::size_t channels, int level) {
  return {Tensor(Shape{0, channels}), {}, level};
}

Voxelization voxelize(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  const Extent ext = spec.extent();
  Voxelization out;
  out.pillar_of_point.assign(cloud.size(), -1);
  std::vector<Coord> cell(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && p[a] >= spec.range_min[a] && p[a] < spec.range_max[a];
    const Coord c{static_cast<std::int32_t>(std::floor((p[0] - spec.range_min[0]) / spec.pillar_x)),
                  static_cast<std::int32_t>(std::floor((p[1] - spec.range_min[1]) / spec.pillar_y))};
    if (!inside || !ext.contains(c)) {
      ++out.dropped;
      continue;
    }
    cell[i] = c;
    out.pillar_of_point[i] = 0;
    out.coords.push_back(c);
  }
  std::sort(out.coords.begin(), out.coords.end());
  out.coords.erase(std::unique(out.coords.begin(), out.coords.end()), out.coords.end());
  const CoordIndex index = index_coords(out.coords);
  out.points_per_pillar.assign(out.coords.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (out.pillar_of_point[i] < 0) continue;
    const std::uint32_t k = index.at(cell[i]);
    out.pillar_of_point[i] = static_cast<std::int32_t>(k);
    ++out.points_per_pillar[k];
  }
  return out;
}

PillarFeatureNet::PillarFeatureNet(std::size_t hidden, std::size_t out_channels, bool use_intensity, Rng& rng)
    : use_intensity_(use_intensity) {
  const std::size_t in = input_width(use_intensity);
  w1_ = uniform_param({in, hidden}, in, rng);
  b1_ = constant_param({hidden}, 0.0);
  w2_ = uniform_param({hidden, out_channels}, hidden, rng);
  b2_ = constant_param({out_channels}, 0.0);
}

ParamList PillarFeatureNet::parameters() const {
  return {{"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
}

Tensor PillarFeatureNet::point_inputs(const PointCloud& cloud, const Voxelization& vox, const GridSpec& spec,
                                      std::vector<std::uint32_t>* segment) const {
  const std::size_t width = input_width(use_intensity_);
  std::vector<double> rows;
  segment->clear();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::int32_t k = vox.pillar_of_point[i];
    if (k < 0) continue;
    const auto center = spec.cell_center(vox.coords[static_cast<std::size_t>(k)], 0);
    const auto& p = cloud.points[i];
    rows.push_back(p[0] - center[0]);
    rows.push_back(p[1] - center[1]);
    rows.push_back(p[2]);
    if (use_intensity_) rows.push_back(cloud.has_intensity() ? cloud.intensity[i] : 0.0);
    segment->push_back(static_cast<std::uint32_t>(k));
  }
  const std::size_t n = segment->size();
  return Tensor({n, width}, std::move(rows));
}

Tensor PillarFeatureNet::point_mlp(const Tensor& inputs) const {
  return gelu(linear(gelu(linear(inputs, w1_, b1_)), w2_, b2_));
}

TokenSet PillarFeatureNet::forward(const PointCloud& cloud, const Voxelization& vox, const GridSpec& spec) const {
  if (vox.pillar_of_point.size() != cloud.size()) {
    throw std::invalid_argument("PillarFeatureNet: voxelization was computed for a different cloud");
  }
  if (vox.coords.empty()) return TokenSet::empty(out_channels(), 0);
  std::vector<std::uint32_t> segment;
  const Tensor inputs = point_inputs(cloud, vox, spec, &segment);
  return {segment_max(point_mlp(inputs), segment, vox.coords.size()), vox.coords, 0};
}

Tensor scatter_to_dense(const TokenSet& tokens, const Extent& extent, double fill) {
  tokens.validate(extent);
  require_finite("scatter_to_dense", tokens.features);
  const std::size_t c = tokens.channels();
  const std::size_t hw = extent.cells();
  Tensor map({c, static_cast<std::size_t>(extent.height), static_cast<std::size_t>(extent.width)}, fill);
  auto out = map.mutable_data();
  std::vector<std::size_t> cell(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    cell[i] = static_cast<std::size_t>(tokens.coords[i].y) * static_cast<std::size_t>(extent.width) +
              static_cast<std::size_t>(tokens.coords[i].x);
    for (std::size_t j = 0; j < c; ++j) out[j * hw + cell[i]] = tokens.features.data()[i * c + j];
  }
  const Tensor feats = tokens.features;
  return record("scatter_to_dense", {feats}, map, [feats, cell = std::move(cell), c, hw](const TensorImpl& res) {
    auto g = grad_buffer(feats);
    for (std::size_t i = 0; i < cell.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += res.grad[j * hw + cell[i]];
  });
}

Tensor gather_from_dense(const Tensor& map, std::span<const Coord> coords) {
  if (!map.defined() || map.ndim() != 3) {
    throw ShapeError("gather_from_dense: expected a (C, H, W) map, got " +
                     (map.defined() ? shape_str(map.shape()) : std::string("<undefined>")));
  }
  require_finite("gather_from_dense", map);
  const std::size_t c = map.dim(0);
  const Extent extent{static_cast<std::int32_t>(map.dim(2)), static_cast<std::int32_t>(map.dim(1))};
  const std::size_t hw = extent.cells();
  std::vector<std::size_t> cell(coords.size());
  Tensor out({coords.size(), c});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!extent.contains(coords[i])) {
      throw std::out_of_range("gather_from_dense: coord " + coord_str(coords[i]) + " outside map of shape " +
                              shape_str(map.shape()));
    }
    cell[i] = static_cast<std::size_t>(coords[i].y) * map.dim(2) + static_cast<std::size_t>(coords[i].x);
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = map.data()[j * hw + cell[i]];
  }
  return record("gather_from_dense", {map}, out, [map, cell = std::move(cell), c, hw](const TensorImpl& res) {
    auto g = grad_buffer(map);
    for (std::size_t i = 0; i < cell.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[j * hw + cell[i]] += res.grad[i * c + j];
  });
}

}  // namespace gdmae
