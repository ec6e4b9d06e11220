#include "gdmae/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "gdmae/rng.hpp"

namespace gdmae {

void SceneSpec::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("SceneSpec: " + what); };
  for (double r : ring_radii)
    if (!(r > 0.0) || !std::isfinite(r)) bad("ring radii must be positive");
  if (points_per_ring < 0) bad("points_per_ring must be non-negative");
  for (const BoxClass* c : {&vehicles, &pedestrians}) {
    if (c->min_count < 0 || c->max_count < c->min_count) bad("box count range is invalid");
    for (int i = 0; i < 3; ++i)
      if (!(c->size_min[i] > 0.0) || c->size_max[i] < c->size_min[i]) bad("box size range is invalid");
  }
  if (!(half_extent > 0.0)) bad("half_extent must be positive");
  if (!(surface_density >= 0.0)) bad("surface_density must be non-negative");
  if (!(noise_sigma >= 0.0)) bad("noise_sigma must be non-negative");
  if (!std::isfinite(ground_z)) bad("ground_z must be finite");
}

namespace {

// Gaussian truncated at 3 sigma (by rejection), so every sampled point stays
// within a hard tolerance of its surface.
double noise(Rng& rng, double sigma) {
  if (!(sigma > 0.0)) return 0.0;
  for (;;) {
    const double e = normal(rng, 0.0, sigma);
    if (std::abs(e) <= 3.0 * sigma) return e;
  }
}

SceneBox draw_box(Rng& rng, const BoxClass& cls, double half_extent, double ground_z) {
  SceneBox b;
  for (int i = 0; i < 3; ++i) b.size[static_cast<std::size_t>(i)] = uniform(rng, cls.size_min[static_cast<std::size_t>(i)], cls.size_max[static_cast<std::size_t>(i)]);
  const double margin = 0.5 * std::max(b.size[0], b.size[1]);
  const double h = std::max(half_extent - margin, 0.0);
  b.center = {uniform(rng, -h, h), uniform(rng, -h, h), ground_z};
  b.yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
  return b;
}

// Sides and top: the faces a scanner above the ground can see.
std::array<std::size_t, 5> face_counts(const SceneBox& b, double density) {
  const double l = b.size[0], w = b.size[1], h = b.size[2];
  const std::array<double, 5> area{l * h, l * h, w * h, w * h, l * w};
  std::array<std::size_t, 5> n{};
  for (std::size_t f = 0; f < 5; ++f) n[f] = static_cast<std::size_t>(std::llround(area[f] * density));
  return n;
}

}  // namespace

Scene generate_scene_with_objects(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  std::vector<SceneBox> boxes;
  for (const BoxClass* cls : {&spec.vehicles, &spec.pedestrians}) {
    const int count = cls->min_count + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cls->max_count - cls->min_count + 1)));
    for (int i = 0; i < count; ++i) boxes.push_back(draw_box(rng, *cls, spec.half_extent, spec.ground_z));
  }
  std::size_t total = spec.ring_radii.size() * static_cast<std::size_t>(spec.points_per_ring);
  for (const auto& b : boxes)
    for (auto n : face_counts(b, spec.surface_density)) total += n;
  if (total > kMaxScenePoints) {
    throw std::invalid_argument("generate_scene: spec implies " + std::to_string(total) + " points, above the limit of " +
                                std::to_string(kMaxScenePoints));
  }

  auto& pts = scene.cloud.points;
  auto& inten = scene.cloud.intensity;
  pts.reserve(total);
  for (double r : spec.ring_radii) {
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < spec.points_per_ring; ++i) {
      const double a = phase + 2.0 * std::numbers::pi * i / spec.points_per_ring;
      const double rr = r + noise(rng, spec.noise_sigma);
      pts.push_back({rr * std::cos(a), rr * std::sin(a), spec.ground_z + noise(rng, spec.noise_sigma)});
      if (spec.intensity) inten.push_back(std::clamp(uniform(rng, 0.05, 0.3), 0.0, 1.0));
    }
  }
  for (auto& b : boxes) {
    b.first_point = pts.size();
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.size[0], hw = 0.5 * b.size[1], h = b.size[2];
    const auto counts = face_counts(b, spec.surface_density);
    for (std::size_t f = 0; f < 5; ++f) {
      for (std::size_t i = 0; i < counts[f]; ++i) {
        // Point in the box frame (x along length, origin at the bottom center).
        double u = 0, v = 0, z = 0;
        switch (f) {
          case 0: u = uniform(rng, -hl, hl), v = hw, z = uniform(rng, 0.0, h); break;
          case 1: u = uniform(rng, -hl, hl), v = -hw, z = uniform(rng, 0.0, h); break;
          case 2: u = hl, v = uniform(rng, -hw, hw), z = uniform(rng, 0.0, h); break;
          case 3: u = -hl, v = uniform(rng, -hw, hw), z = uniform(rng, 0.0, h); break;
          default: u = uniform(rng, -hl, hl), v = uniform(rng, -hw, hw), z = h; break;
        }
        pts.push_back({b.center[0] + c * u - s * v + noise(rng, spec.noise_sigma),
                       b.center[1] + s * u + c * v + noise(rng, spec.noise_sigma),
                       b.center[2] + z + noise(rng, spec.noise_sigma)});
        if (spec.intensity) inten.push_back(std::clamp(uniform(rng, 0.3, 1.0), 0.0, 1.0));
      }
    }
    b.num_points = pts.size() - b.first_point;
  }
  scene.boxes = std::move(boxes);
  return scene;
}

PointCloud generate_scene(const SceneSpec& spec) { return generate_scene_with_objects(spec).cloud; }

AugmentParams draw_augment(std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.flip_y = uniform(rng, 0.0, 1.0) < 0.5;
  p.scale = uniform(rng, 0.95, 1.05);
  p.angle = uniform(rng, -0.25 * std::numbers::pi, 0.25 * std::numbers::pi);
  return p;
}

PointCloud apply_augment(const PointCloud& cloud, const AugmentParams& params) {
  PointCloud out = cloud;
  const double c = std::cos(params.angle), s = std::sin(params.angle);
  for (auto& p : out.points) {
    double x = p[0], y = params.flip_y ? -p[1] : p[1], z = p[2];
    x *= params.scale, y *= params.scale, z *= params.scale;
    if (params.angle != 0.0) {
      const double rx = c * x - s * y, ry = s * x + c * y;
      x = rx, y = ry;
    }
    p = {x, y, z};
  }
  return out;
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed) { return apply_augment(cloud, draw_augment(seed)); }

}  // namespace gdmae
