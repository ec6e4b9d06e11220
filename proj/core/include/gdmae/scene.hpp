#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gdmae/pillar_grid.hpp"

namespace gdmae {

inline constexpr std::size_t kMaxScenePoints = 50000;

struct BoxClass {
  int min_count = 0;
  int max_count = 0;
  std::array<double, 3> size_min{};  // length, width, height
  std::array<double, 3> size_max{};
};

/// Synthetic LiDAR-like scene: concentric ground rings plus surface-sampled
/// boxes standing on the ground at random positions and headings.
struct SceneSpec {
  std::vector<double> ring_radii{3.0, 5.0, 7.5, 10.0, 13.0, 16.5, 20.0};
  int points_per_ring = 1200;
  BoxClass vehicles{4, 8, {3.6, 1.6, 1.4}, {4.8, 2.0, 1.8}};
  BoxClass pedestrians{3, 8, {0.5, 0.5, 1.5}, {0.9, 0.9, 1.9}};
  double half_extent = 22.0;    // objects are placed within [-h, h]^2
  double surface_density = 40;  // points per square meter of box surface
  double noise_sigma = 0.02;
  double ground_z = -1.8;
  bool intensity = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SceneBox {
  std::array<double, 3> center{};  // bottom-face center
  std::array<double, 3> size{};
  double yaw = 0.0;
  std::size_t first_point = 0;
  std::size_t num_points = 0;
};

struct Scene {
  PointCloud cloud;
  std::vector<SceneBox> boxes;
};

/// Deterministic per seed. Throws std::invalid_argument when the scene would
/// exceed kMaxScenePoints.
Scene generate_scene_with_objects(const SceneSpec& spec);
PointCloud generate_scene(const SceneSpec& spec);

struct AugmentParams {
  bool flip_y = false;
  double scale = 1.0;
  double angle = 0.0;  // rotation about z, radians
};

/// Flip (p = 0.5), scale in [0.95, 1.05], rotation in [-pi/4, pi/4].
AugmentParams draw_augment(std::uint64_t seed);
/// Applies flip, then scale, then rotation.
PointCloud apply_augment(const PointCloud& cloud, const AugmentParams& params);
PointCloud augment(const PointCloud& cloud, std::uint64_t seed);

}  // namespace gdmae
