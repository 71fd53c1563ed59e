#include "momaplan/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

namespace momaplan {

namespace {

// Box SDF in the box frame, with gradient in the same frame.
double box_sdf(const Vec3& p, const Vec3& h, Vec3* grad) {
  const Vec3 q = p.cwiseAbs() - h;
  const Vec3 outside = q.cwiseMax(0.0);
  const double out_norm = outside.norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  if (grad) {
    if (out_norm > 0.0) {
      *grad = outside / out_norm;
      for (int k = 0; k < 3; ++k) (*grad)[k] *= (p[k] < 0.0 ? -1.0 : 1.0);
    } else {
      int axis = 0;
      q.maxCoeff(&axis);
      grad->setZero();
      (*grad)[axis] = p[axis] < 0.0 ? -1.0 : 1.0;
    }
  }
  return out_norm + inside;
}

// 2D box formula for a Z-aligned cylinder; radial/axial offsets relative to the center.
double cylinder_sdf(const Vec3& d, double r, double hh, Vec3* grad) {
  const double rho = std::hypot(d.x(), d.y());
  const double qr = rho - r;
  const double qz = std::abs(d.z()) - hh;
  const double or_ = std::max(qr, 0.0), oz = std::max(qz, 0.0);
  const double out_norm = std::hypot(or_, oz);
  const double inside = std::min(std::max(qr, qz), 0.0);
  if (grad) {
    Vec3 radial = rho > 0.0 ? Vec3(d.x() / rho, d.y() / rho, 0.0) : Vec3(1.0, 0.0, 0.0);
    const double zsign = d.z() < 0.0 ? -1.0 : 1.0;
    if (out_norm > 0.0) {
      *grad = radial * (or_ / out_norm) + Vec3(0, 0, zsign * oz / out_norm);
    } else if (qr >= qz) {
      *grad = radial;
    } else {
      *grad = Vec3(0, 0, zsign);
    }
  }
  return out_norm + inside;
}

}  // namespace

Obstacle Obstacle::cuboid(const Vec3& center, const Vec3& half_extents, double yaw) {
  Obstacle o;
  o.kind = ObstacleKind::kCuboid;
  o.position = center;
  o.half_extents = half_extents;
  o.yaw = wrap_angle(yaw);
  o.check();
  return o;
}

Obstacle Obstacle::sphere(const Vec3& center, double radius) {
  Obstacle o;
  o.kind = ObstacleKind::kSphere;
  o.position = center;
  o.radius = radius;
  o.check();
  return o;
}

Obstacle Obstacle::cylinder(const Vec3& center, double radius, double half_height) {
  Obstacle o;
  o.kind = ObstacleKind::kCylinder;
  o.position = center;
  o.radius = radius;
  o.half_height = half_height;
  o.check();
  return o;
}

void Obstacle::check() const {
  switch (kind) {
    case ObstacleKind::kCuboid:
      if ((half_extents.array() <= 0.0).any()) throw std::invalid_argument("cuboid half extents must be > 0");
      if (yaw < -kPi || yaw >= kPi) throw std::invalid_argument("cuboid yaw must lie in [-pi, pi)");
      break;
    case ObstacleKind::kSphere:
      if (radius <= 0.0) throw std::invalid_argument("sphere radius must be > 0");
      break;
    case ObstacleKind::kCylinder:
      if (radius <= 0.0 || half_height <= 0.0) throw std::invalid_argument("cylinder size must be > 0");
      break;
  }
}

double Obstacle::sdf(const Vec3& p) const {
  switch (kind) {
    case ObstacleKind::kSphere:
      return (p - position).norm() - radius;
    case ObstacleKind::kCylinder:
      return cylinder_sdf(p - position, radius, half_height, nullptr);
    case ObstacleKind::kCuboid: {
      const Vec3 d = p - position;
      const double c = std::cos(yaw), s = std::sin(yaw);
      const Vec3 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
      return box_sdf(local, half_extents, nullptr);
    }
  }
  return 0.0;
}

double Obstacle::sdf(const Vec3& p, Vec3& grad) const {
  switch (kind) {
    case ObstacleKind::kSphere: {
      const Vec3 d = p - position;
      const double n = d.norm();
      grad = n > 0.0 ? Vec3(d / n) : Vec3(0, 0, 1);
      return n - radius;
    }
    case ObstacleKind::kCylinder:
      return cylinder_sdf(p - position, radius, half_height, &grad);
    case ObstacleKind::kCuboid: {
      const Vec3 d = p - position;
      const double c = std::cos(yaw), s = std::sin(yaw);
      const Vec3 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
      Vec3 g;
      const double v = box_sdf(local, half_extents, &g);
      grad = Vec3(c * g.x() - s * g.y(), s * g.x() + c * g.y(), g.z());
      return v;
    }
  }
  return 0.0;
}

bool Obstacle::contains(const Vec3& p) const {
  const Vec3 d = p - position;
  switch (kind) {
    case ObstacleKind::kSphere:
      return d.x() * d.x() + d.y() * d.y() + d.z() * d.z() < radius * radius;
    case ObstacleKind::kCylinder:
      return d.x() * d.x() + d.y() * d.y() < radius * radius && std::abs(d.z()) < half_height;
    case ObstacleKind::kCuboid: {
      const double c = std::cos(yaw), s = std::sin(yaw);
      const double lx = c * d.x() + s * d.y(), ly = -s * d.x() + c * d.y();
      return std::abs(lx) < half_extents.x() && std::abs(ly) < half_extents.y() &&
             std::abs(d.z()) < half_extents.z();
    }
  }
  return false;
}

double Obstacle::footprint_distance(const Vec2& xy) const {
  const Vec2 d = xy - position.head<2>();
  switch (kind) {
    case ObstacleKind::kSphere:
    case ObstacleKind::kCylinder:
      return d.norm() - radius;
    case ObstacleKind::kCuboid: {
      const double c = std::cos(yaw), s = std::sin(yaw);
      const Vec2 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
      const Vec2 q = local.cwiseAbs() - half_extents.head<2>();
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
  }
  return 0.0;
}

double Obstacle::bounding_radius() const {
  switch (kind) {
    case ObstacleKind::kSphere:
      return radius;
    case ObstacleKind::kCylinder:
      return std::hypot(radius, half_height);
    case ObstacleKind::kCuboid:
      return half_extents.norm();
  }
  return 0.0;
}

double Obstacle::surface_area() const {
  switch (kind) {
    case ObstacleKind::kSphere:
      return 4.0 * kPi * radius * radius;
    case ObstacleKind::kCylinder:
      return 2.0 * kPi * radius * radius + 2.0 * kPi * radius * 2.0 * half_height;
    case ObstacleKind::kCuboid: {
      const Vec3 e = 2.0 * half_extents;
      return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
    }
  }
  return 0.0;
}

void Obstacle::aabb(Vec3& lo, Vec3& hi) const {
  Vec3 ext;
  switch (kind) {
    case ObstacleKind::kSphere:
      ext = Vec3::Constant(radius);
      break;
    case ObstacleKind::kCylinder:
      ext = Vec3(radius, radius, half_height);
      break;
    case ObstacleKind::kCuboid: {
      const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
      ext = Vec3(c * half_extents.x() + s * half_extents.y(), s * half_extents.x() + c * half_extents.y(),
                 half_extents.z());
      break;
    }
  }
  lo = position - ext;
  hi = position + ext;
}

ScenePreset parse_preset(const std::string& name) {
  if (name == "cuboids") return ScenePreset::kCuboids;
  if (name == "mixed") return ScenePreset::kMixed;
  throw std::invalid_argument("unknown scene preset '" + name + "' (expected cuboids | mixed)");
}

std::string preset_name(ScenePreset preset) { return preset == ScenePreset::kCuboids ? "cuboids" : "mixed"; }

std::vector<Obstacle> make_walls(const RoomBounds& room) {
  const double t = room.wall_thickness;
  const Vec3 size = room.max - room.min;
  const Vec3 mid = 0.5 * (room.max + room.min);
  const double hz = 0.5 * size.z();
  std::vector<Obstacle> walls;
  // Walls sit outside the free room box and overlap at the corners.
  walls.push_back(Obstacle::cuboid(Vec3(room.min.x() - 0.5 * t, mid.y(), mid.z()),
                                   Vec3(0.5 * t, 0.5 * size.y() + t, hz)));
  walls.push_back(Obstacle::cuboid(Vec3(room.max.x() + 0.5 * t, mid.y(), mid.z()),
                                   Vec3(0.5 * t, 0.5 * size.y() + t, hz)));
  walls.push_back(Obstacle::cuboid(Vec3(mid.x(), room.min.y() - 0.5 * t, mid.z()),
                                   Vec3(0.5 * size.x() + t, 0.5 * t, hz)));
  walls.push_back(Obstacle::cuboid(Vec3(mid.x(), room.max.y() + 0.5 * t, mid.z()),
                                   Vec3(0.5 * size.x() + t, 0.5 * t, hz)));
  return walls;
}

Scene::Scene(std::vector<Obstacle> obstacles, RoomBounds room, ScenePreset preset, std::uint64_t seed,
             Vec2 start_xy, Vec2 goal_xy)
    : obstacles_(std::move(obstacles)),
      walls_(make_walls(room)),
      room_(room),
      preset_(preset),
      seed_(seed),
      start_xy_(start_xy),
      goal_xy_(goal_xy) {
  for (const auto& o : obstacles_) o.check();
  all_ = obstacles_;
  all_.insert(all_.end(), walls_.begin(), walls_.end());
}

Scene Scene::open(std::vector<Obstacle> obstacles) {
  Scene s;
  for (const auto& o : obstacles) o.check();
  s.obstacles_ = std::move(obstacles);
  s.all_ = s.obstacles_;
  s.room_.min = Vec3::Constant(-1e3);
  s.room_.max = Vec3::Constant(1e3);
  return s;
}

double Scene::sdf(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : all_) best = std::min(best, o.sdf(p));
  return best;
}

double Scene::sdf(const Vec3& p, Vec3& grad) const {
  double best = std::numeric_limits<double>::infinity();
  grad = Vec3(0, 0, 1);
  Vec3 g;
  for (const auto& o : all_) {
    const double v = o.sdf(p, g);
    if (v < best) {
      best = v;
      grad = g;
    }
  }
  return best;
}

Vec3 Scene::sdf_gradient(const Vec3& p) const {
  Vec3 g;
  sdf(p, g);
  return g;
}

void Scene::nearby(const Vec3& center, double reach, std::vector<int>& out) const {
  out.clear();
  for (int i = 0; i < static_cast<int>(all_.size()); ++i) {
    const auto& o = all_[i];
    double gap;
    if (o.kind == ObstacleKind::kCuboid && o.half_extents.maxCoeff() > 2.0) {
      gap = o.sdf(center);  // long walls: bounding spheres are useless
    } else {
      gap = (center - o.position).norm() - o.bounding_radius();
    }
    if (gap < reach) out.push_back(i);
  }
}

double Scene::sdf_subset(const Vec3& p, std::span<const int> subset, Vec3* grad) const {
  double best = std::numeric_limits<double>::infinity();
  if (grad) *grad = Vec3(0, 0, 1);
  Vec3 g;
  for (int i : subset) {
    const double v = grad ? all_[i].sdf(p, g) : all_[i].sdf(p);
    if (v < best) {
      best = v;
      if (grad) *grad = g;
    }
  }
  return best;
}

SceneGenConfig SceneGenConfig::from_json(const nlohmann::json& j) {
  SceneGenConfig c;
#define MOMAPLAN_FIELD(name) c.name = j.value(#name, c.name)
  MOMAPLAN_FIELD(room_size);
  MOMAPLAN_FIELD(room_height);
  MOMAPLAN_FIELD(wall_thickness);
  MOMAPLAN_FIELD(grounded_half_min);
  MOMAPLAN_FIELD(grounded_half_max);
  MOMAPLAN_FIELD(grounded_height_min);
  MOMAPLAN_FIELD(grounded_height_max);
  MOMAPLAN_FIELD(floating_base_min);
  MOMAPLAN_FIELD(floating_base_max);
  MOMAPLAN_FIELD(floating_half_min);
  MOMAPLAN_FIELD(floating_half_max);
  MOMAPLAN_FIELD(sphere_radius_min);
  MOMAPLAN_FIELD(sphere_radius_max);
  MOMAPLAN_FIELD(sphere_height_min);
  MOMAPLAN_FIELD(sphere_height_max);
  MOMAPLAN_FIELD(cylinder_radius_min);
  MOMAPLAN_FIELD(cylinder_radius_max);
  MOMAPLAN_FIELD(cylinder_height_min);
  MOMAPLAN_FIELD(cylinder_height_max);
  MOMAPLAN_FIELD(start_goal_clearance);
  MOMAPLAN_FIELD(task_margin);
  MOMAPLAN_FIELD(task_distance_min);
  MOMAPLAN_FIELD(task_distance_max);
#undef MOMAPLAN_FIELD
  return c;
}

namespace {

int scaled_count(int count, double density) {
  return std::max(1, static_cast<int>(std::floor(count * density + 1e-9)));
}

}  // namespace

Scene generate_scene(ScenePreset preset, std::uint64_t seed, double density_scale, const SceneGenConfig& cfg) {
  if (!(density_scale > 0.0 && density_scale <= 1.0)) {
    throw std::invalid_argument("density_scale must lie in (0, 1]");
  }
  Rng rng(derive_seed(seed, 0x5ce7e));
  const double half = 0.5 * cfg.room_size;
  RoomBounds room;
  room.min = Vec3(-half, -half, 0.0);
  room.max = Vec3(half, half, cfg.room_height);
  room.wall_thickness = cfg.wall_thickness;

  // Designated task positions first, so obstacles can keep clear of them.
  const double lo = -half + cfg.task_margin, hi = half - cfg.task_margin;
  Vec2 start, goal;
  do {
    start = Vec2(uniform(rng, lo, hi), uniform(rng, lo, hi));
    goal = Vec2(uniform(rng, lo, hi), uniform(rng, lo, hi));
    const double d = (goal - start).norm();
    if (d >= cfg.task_distance_min && d <= cfg.task_distance_max) break;
  } while (true);

  auto place = [&](auto&& draw) {
    for (;;) {
      Obstacle o = draw();
      if (o.footprint_distance(start) >= cfg.start_goal_clearance &&
          o.footprint_distance(goal) >= cfg.start_goal_clearance) {
        return o;
      }
    }
  };
  auto xy = [&] { return Vec2(uniform(rng, -half, half), uniform(rng, -half, half)); };
  auto grounded_cuboid = [&] {
    const Vec2 c = xy();
    const double hx = uniform(rng, cfg.grounded_half_min, cfg.grounded_half_max);
    const double hy = uniform(rng, cfg.grounded_half_min, cfg.grounded_half_max);
    const double h = uniform(rng, cfg.grounded_height_min, cfg.grounded_height_max);
    const double yaw = uniform(rng, -kPi, kPi);
    return Obstacle::cuboid(Vec3(c.x(), c.y(), 0.5 * h), Vec3(hx, hy, 0.5 * h), yaw);
  };
  auto floating_cuboid = [&] {
    const Vec2 c = xy();
    const Vec3 he(uniform(rng, cfg.floating_half_min, cfg.floating_half_max),
                  uniform(rng, cfg.floating_half_min, cfg.floating_half_max),
                  uniform(rng, cfg.floating_half_min, cfg.floating_half_max));
    const double base = uniform(rng, cfg.floating_base_min, cfg.floating_base_max);
    const double yaw = uniform(rng, -kPi, kPi);
    return Obstacle::cuboid(Vec3(c.x(), c.y(), base + he.z()), he, yaw);
  };
  auto sphere = [&] {
    const Vec2 c = xy();
    const double r = uniform(rng, cfg.sphere_radius_min, cfg.sphere_radius_max);
    const double z = uniform(rng, cfg.sphere_height_min, cfg.sphere_height_max);
    return Obstacle::sphere(Vec3(c.x(), c.y(), z), r);
  };
  auto cylinder = [&] {
    const Vec2 c = xy();
    const double r = uniform(rng, cfg.cylinder_radius_min, cfg.cylinder_radius_max);
    const double h = uniform(rng, cfg.cylinder_height_min, cfg.cylinder_height_max);
    return Obstacle::cylinder(Vec3(c.x(), c.y(), 0.5 * h), r, 0.5 * h);
  };

  std::vector<Obstacle> obstacles;
  if (preset == ScenePreset::kCuboids) {
    const int grounded = scaled_count(20, density_scale), floating = scaled_count(30, density_scale);
    for (int i = 0; i < grounded; ++i) obstacles.push_back(place(grounded_cuboid));
    for (int i = 0; i < floating; ++i) obstacles.push_back(place(floating_cuboid));
  } else {
    const int cuboids = scaled_count(10, density_scale), spheres = scaled_count(10, density_scale),
              cylinders = scaled_count(25, density_scale);
    for (int i = 0; i < cuboids; ++i) {
      const bool grounded = uniform(rng, 0.0, 1.0) < 0.5;
      obstacles.push_back(grounded ? place(grounded_cuboid) : place(floating_cuboid));
    }
    for (int i = 0; i < spheres; ++i) obstacles.push_back(place(sphere));
    for (int i = 0; i < cylinders; ++i) obstacles.push_back(place(cylinder));
  }
  return Scene(std::move(obstacles), room, preset, seed, start, goal);
}

namespace {

// Uniform point on the surface of one primitive.
Vec3 sample_on(const Obstacle& o, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (o.kind) {
    case ObstacleKind::kSphere: {
      Vec3 d(normal(rng), normal(rng), normal(rng));
      while (d.norm() < 1e-12) d = Vec3(normal(rng), normal(rng), normal(rng));
      return o.position + o.radius * d.normalized();
    }
    case ObstacleKind::kCylinder: {
      const double cap = kPi * o.radius * o.radius;
      const double side = 2.0 * kPi * o.radius * 2.0 * o.half_height;
      const double u = uniform(rng, 0.0, 2.0 * cap + side);
      const double ang = uniform(rng, -kPi, kPi);
      if (u < side) {
        const double z = uniform(rng, -o.half_height, o.half_height);
        return o.position + Vec3(o.radius * std::cos(ang), o.radius * std::sin(ang), z);
      }
      const double rr = o.radius * std::sqrt(uniform(rng, 0.0, 1.0));
      const double z = u < side + cap ? o.half_height : -o.half_height;
      return o.position + Vec3(rr * std::cos(ang), rr * std::sin(ang), z);
    }
    case ObstacleKind::kCuboid: {
      const Vec3 e = 2.0 * o.half_extents;
      const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};  // faces normal to x, y, z
      const double u = uniform(rng, 0.0, 2.0 * (areas[0] + areas[1] + areas[2]));
      double acc = 0.0;
      int axis = 0, sign = 1;
      for (int f = 0; f < 6; ++f) {
        acc += areas[f / 2];
        if (u < acc || f == 5) {
          axis = f / 2;
          sign = (f % 2 == 0) ? 1 : -1;
          break;
        }
      }
      Vec3 local;
      for (int k = 0; k < 3; ++k) local[k] = uniform(rng, -o.half_extents[k], o.half_extents[k]);
      local[axis] = sign * o.half_extents[axis];
      const double c = std::cos(o.yaw), s = std::sin(o.yaw);
      return o.position + Vec3(c * local.x() - s * local.y(), s * local.x() + c * local.y(), local.z());
    }
  }
  return o.position;
}

PointCloud sample_union(std::span<const Obstacle> shapes, int n, std::uint64_t seed,
                        const std::function<double(const Vec3&)>& field) {
  if (n < 1) throw std::invalid_argument("sample_surface needs n >= 1");
  if (shapes.empty()) throw std::invalid_argument("sample_surface needs at least one primitive");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& o : shapes) cumulative.push_back(total += o.surface_area());
  Rng rng(derive_seed(seed, 0x5a3f));
  PointCloud cloud;
  cloud.points.resize(n, 3);
  int filled = 0;
  long attempts = 0;
  while (filled < n) {
    if (++attempts > 1000L * n + 100000L) throw std::runtime_error("sample_surface: surfaces fully occluded");
    const double u = uniform(rng, 0.0, total);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto idx = std::min<std::size_t>(it - cumulative.begin(), shapes.size() - 1);
    const Vec3 p = sample_on(shapes[idx], rng);
    if (std::abs(field(p)) > 1e-6) continue;
    cloud.points.row(filled++) = p.transpose();
  }
  return cloud;
}

}  // namespace

PointCloud sample_surface(const Scene& scene, int n, std::uint64_t seed) {
  return sample_union(scene.primitives(), n, seed, [&](const Vec3& p) { return scene.sdf(p); });
}

PointCloud sample_surface(std::span<const Obstacle> shapes, int n, std::uint64_t seed) {
  return sample_union(shapes, n, seed, [&](const Vec3& p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : shapes) best = std::min(best, o.sdf(p));
    return best;
  });
}

Vec3 VoxelGrid::cell_center(int i, int j, int k) const {
  return Vec3((origin.x() + i + 0.5) * resolution, (origin.y() + j + 0.5) * resolution,
              (origin.z() + k + 0.5) * resolution);
}

std::int64_t VoxelGrid::count() const {
  std::int64_t c = 0;
  for (auto v : occupancy) c += v ? 1 : 0;
  return c;
}

double VoxelGrid::volume() const { return static_cast<double>(count()) * resolution * resolution * resolution; }

VoxelGrid empty_grid(const Vec3& lo, const Vec3& hi, double resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("voxel resolution must be > 0");
  VoxelGrid g;
  g.resolution = resolution;
  for (int k = 0; k < 3; ++k) {
    const int first = static_cast<int>(std::floor(lo[k] / resolution));
    const int last = static_cast<int>(std::floor(hi[k] / resolution));
    g.origin[k] = first;
    g.dims[k] = std::max(0, last - first + 1);
  }
  g.occupancy.assign(static_cast<std::size_t>(g.dims.x()) * g.dims.y() * g.dims.z(), 0);
  return g;
}

void voxelize_into(std::span<const Obstacle> shapes, VoxelGrid& grid) {
  const double r = grid.resolution;
  for (const auto& o : shapes) {
    Vec3 lo, hi;
    o.aabb(lo, hi);
    int b[3], e[3];
    for (int k = 0; k < 3; ++k) {
      b[k] = std::max(0, static_cast<int>(std::floor(lo[k] / r)) - grid.origin[k] - 1);
      e[k] = std::min(grid.dims[k] - 1, static_cast<int>(std::floor(hi[k] / r)) - grid.origin[k] + 1);
    }
    for (int kz = b[2]; kz <= e[2]; ++kz)
      for (int jy = b[1]; jy <= e[1]; ++jy)
        for (int ix = b[0]; ix <= e[0]; ++ix) {
          auto& cell = grid.occupancy[grid.linear(ix, jy, kz)];
          if (!cell && o.contains(grid.cell_center(ix, jy, kz))) cell = 1;
        }
  }
}

VoxelGrid voxelize(std::span<const Obstacle> shapes, double resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("voxel resolution must be > 0");
  if (shapes.empty()) return empty_grid(Vec3::Zero(), Vec3::Zero(), resolution);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& o : shapes) {
    Vec3 a, b;
    o.aabb(a, b);
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(b);
  }
  VoxelGrid g = empty_grid(lo, hi, resolution);
  voxelize_into(shapes, g);
  return g;
}

VoxelGrid voxelize(const Scene& scene, double resolution) {
  const auto& room = scene.room();
  VoxelGrid g = empty_grid(room.min, room.max, resolution);
  voxelize_into(scene.primitives(), g);
  return g;
}

namespace {

std::string kind_name(ObstacleKind k) {
  switch (k) {
    case ObstacleKind::kCuboid:
      return "cuboid";
    case ObstacleKind::kSphere:
      return "sphere";
    case ObstacleKind::kCylinder:
      return "cylinder";
  }
  return "?";
}

// 9 significant digits, as plain JSON numbers.
nlohmann::json num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return nlohmann::json::parse(buf);
}

nlohmann::json vec(const auto& v) {
  auto a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

}  // namespace

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json j;
  j["version"] = 1;
  j["preset"] = preset_name(scene.preset());
  j["seed"] = scene.seed();
  j["room"] = {{"min", vec(scene.room().min)},
               {"max", vec(scene.room().max)},
               {"wall_thickness", num(scene.room().wall_thickness)}};
  j["task"] = {{"start", vec(scene.start_xy())}, {"goal", vec(scene.goal_xy())}};
  auto obs = nlohmann::json::array();
  for (const auto& o : scene.obstacles()) {
    nlohmann::json e;
    e["kind"] = kind_name(o.kind);
    e["pose"] = {{"position", vec(o.position)}, {"yaw", num(o.yaw)}};
    switch (o.kind) {
      case ObstacleKind::kCuboid:
        e["params"] = {{"half_extents", vec(o.half_extents)}};
        break;
      case ObstacleKind::kSphere:
        e["params"] = {{"radius", num(o.radius)}};
        break;
      case ObstacleKind::kCylinder:
        e["params"] = {{"radius", num(o.radius)}, {"half_height", num(o.half_height)}};
        break;
    }
    obs.push_back(std::move(e));
  }
  j["obstacles"] = std::move(obs);
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw std::runtime_error("unsupported scene file version");
  auto v3 = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
  auto v2 = [](const nlohmann::json& a) { return Vec2(a.at(0).get<double>(), a.at(1).get<double>()); };
  RoomBounds room;
  room.min = v3(j.at("room").at("min"));
  room.max = v3(j.at("room").at("max"));
  room.wall_thickness = j.at("room").value("wall_thickness", room.wall_thickness);
  std::vector<Obstacle> obstacles;
  for (const auto& e : j.at("obstacles")) {
    const std::string kind = e.at("kind");
    const Vec3 pos = v3(e.at("pose").at("position"));
    const double yaw = e.at("pose").value("yaw", 0.0);
    const auto& p = e.at("params");
    if (kind == "cuboid") {
      obstacles.push_back(Obstacle::cuboid(pos, v3(p.at("half_extents")), yaw));
    } else if (kind == "sphere") {
      obstacles.push_back(Obstacle::sphere(pos, p.at("radius").get<double>()));
    } else if (kind == "cylinder") {
      Obstacle o = Obstacle::cylinder(pos, p.at("radius").get<double>(), p.at("half_height").get<double>());
      o.yaw = yaw;
      obstacles.push_back(o);
    } else {
      throw std::runtime_error("unknown obstacle kind '" + kind + "'");
    }
  }
  Vec2 start = Vec2::Zero(), goal = Vec2::Zero();
  if (j.contains("task")) {
    start = v2(j["task"].at("start"));
    goal = v2(j["task"].at("goal"));
  }
  return Scene(std::move(obstacles), room, parse_preset(j.at("preset")), j.value("seed", std::uint64_t{0}), start,
               goal);
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << scene_to_json(scene).dump(1) << "\n";
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return scene_from_json(nlohmann::json::parse(in));
}

}  // namespace momaplan
