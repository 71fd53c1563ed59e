#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "momaplan/common.hpp"

namespace momaplan {

enum class ObstacleKind { kCuboid, kSphere, kCylinder };

/// Analytic obstacle primitive. Cuboids and cylinders are centered on
/// `position`; cuboids may be yawed about +Z, cylinders stand along +Z.
struct Obstacle {
  ObstacleKind kind = ObstacleKind::kSphere;
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  Vec3 half_extents = Vec3::Constant(0.5);
  double radius = 0.5;
  double half_height = 0.5;

  static Obstacle cuboid(const Vec3& center, const Vec3& half_extents, double yaw = 0.0);
  static Obstacle sphere(const Vec3& center, double radius);
  static Obstacle cylinder(const Vec3& center, double radius, double half_height);

  double sdf(const Vec3& p) const;
  /// Signed distance plus its gradient (unit norm wherever differentiable).
  double sdf(const Vec3& p, Vec3& grad) const;
  /// Containment by squared-distance / box tests, independent of sdf().
  bool contains(const Vec3& p) const;
  /// Horizontal distance from the vertical line through `xy` to the footprint.
  double footprint_distance(const Vec2& xy) const;
  double bounding_radius() const;
  double surface_area() const;
  void aabb(Vec3& lo, Vec3& hi) const;
  void check() const;
};

enum class ScenePreset { kCuboids, kMixed };

ScenePreset parse_preset(const std::string& name);
std::string preset_name(ScenePreset preset);

struct RoomBounds {
  Vec3 min = Vec3(-5.0, -5.0, 0.0);
  Vec3 max = Vec3(5.0, 5.0, 3.0);
  double wall_thickness = 0.2;
};

/// Generation ranges; everything is in meters.
struct SceneGenConfig {
  double room_size = 10.0;
  double room_height = 3.0;
  double wall_thickness = 0.2;
  double grounded_half_min = 0.1, grounded_half_max = 0.5;
  double grounded_height_min = 0.3, grounded_height_max = 2.0;
  double floating_base_min = 0.8, floating_base_max = 1.8;
  double floating_half_min = 0.1, floating_half_max = 0.5;
  double sphere_radius_min = 0.15, sphere_radius_max = 0.5;
  double sphere_height_min = 0.3, sphere_height_max = 2.0;
  double cylinder_radius_min = 0.1, cylinder_radius_max = 0.4;
  double cylinder_height_min = 0.5, cylinder_height_max = 2.0;
  double start_goal_clearance = 0.6;
  double task_margin = 1.0;
  double task_distance_min = 3.0, task_distance_max = 8.0;

  static SceneGenConfig from_json(const nlohmann::json& j);
};

/// Immutable obstacle set inside a walled room. The floor is implicit and
/// does not contribute to the distance field.
class Scene {
 public:
  Scene() = default;
  Scene(std::vector<Obstacle> obstacles, RoomBounds room, ScenePreset preset = ScenePreset::kCuboids,
        std::uint64_t seed = 0, Vec2 start_xy = Vec2::Zero(), Vec2 goal_xy = Vec2::Zero());

  /// Obstacle-only scene without walls (used by tests and oracles).
  static Scene open(std::vector<Obstacle> obstacles);

  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  const std::vector<Obstacle>& walls() const { return walls_; }
  /// Obstacles followed by walls; the index order used for tie-breaking.
  const std::vector<Obstacle>& primitives() const { return all_; }
  const RoomBounds& room() const { return room_; }
  bool has_walls() const { return !walls_.empty(); }
  ScenePreset preset() const { return preset_; }
  std::uint64_t seed() const { return seed_; }
  const Vec2& start_xy() const { return start_xy_; }
  const Vec2& goal_xy() const { return goal_xy_; }

  double sdf(const Vec3& p) const;
  double sdf(const Vec3& p, Vec3& grad) const;
  Vec3 sdf_gradient(const Vec3& p) const;

  /// Indices of primitives whose bounding sphere comes within `reach` of `center`.
  void nearby(const Vec3& center, double reach, std::vector<int>& out) const;
  double sdf_subset(const Vec3& p, std::span<const int> subset, Vec3* grad) const;

 private:
  std::vector<Obstacle> obstacles_;
  std::vector<Obstacle> walls_;
  std::vector<Obstacle> all_;
  RoomBounds room_;
  ScenePreset preset_ = ScenePreset::kCuboids;
  std::uint64_t seed_ = 0;
  Vec2 start_xy_ = Vec2::Zero();
  Vec2 goal_xy_ = Vec2::Zero();
};

std::vector<Obstacle> make_walls(const RoomBounds& room);

Scene generate_scene(ScenePreset preset, std::uint64_t seed, double density_scale,
                     const SceneGenConfig& config = {});

struct PointCloud {
  Eigen::MatrixX3d points;
  int size() const { return static_cast<int>(points.rows()); }
};

/// Area-weighted uniform samples over every obstacle and wall surface. Points
/// that fall inside another primitive are rejected and redrawn.
PointCloud sample_surface(const Scene& scene, int n, std::uint64_t seed);
PointCloud sample_surface(std::span<const Obstacle> shapes, int n, std::uint64_t seed);

/// Occupancy on the global lattice: cell (i, j, k) has center ((i + 0.5) r, ...).
struct VoxelGrid {
  Eigen::Vector3i origin = Eigen::Vector3i::Zero();  // lattice index of the first cell
  Eigen::Vector3i dims = Eigen::Vector3i::Zero();
  double resolution = 0.05;
  std::vector<std::uint8_t> occupancy;

  std::int64_t linear(int i, int j, int k) const {
    return (static_cast<std::int64_t>(k) * dims.y() + j) * dims.x() + i;
  }
  Vec3 cell_center(int i, int j, int k) const;
  std::int64_t count() const;
  double volume() const;
};

/// Lattice-aligned box covering [lo, hi].
VoxelGrid empty_grid(const Vec3& lo, const Vec3& hi, double resolution);
/// Marks cells whose center lies inside any shape; the grid covers the shapes' bounds.
VoxelGrid voxelize(std::span<const Obstacle> shapes, double resolution);
/// Same, onto a caller-provided grid (cells are OR-ed in).
void voxelize_into(std::span<const Obstacle> shapes, VoxelGrid& grid);
VoxelGrid voxelize(const Scene& scene, double resolution);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

}  // namespace momaplan
