#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "momaplan/scene.hpp"
#include "oracles.hpp"

using namespace momaplan;

using oracle::random_open_scene;

TEST_CASE("analytic sdf values") {
  const Scene s = Scene::open({Obstacle::sphere(Vec3::Zero(), 1.0)});
  CHECK(s.sdf(Vec3(2, 0, 0)) == doctest::Approx(1.0));
  const Vec3 g = s.sdf_gradient(Vec3(2, 0, 0));
  CHECK(g.x() == doctest::Approx(1.0));
  CHECK(g.y() == doctest::Approx(0.0));
  CHECK(g.z() == doctest::Approx(0.0));

  const Scene box = Scene::open({Obstacle::cuboid(Vec3::Zero(), Vec3(1, 1, 1))});
  CHECK(box.sdf(Vec3(2, 2, 0)) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(box.sdf(Vec3(0.5, 0, 0)) == doctest::Approx(-0.5));

  const Scene cyl = Scene::open({Obstacle::cylinder(Vec3::Zero(), 1.0, 1.0)});
  CHECK(cyl.sdf(Vec3(3, 0, 0)) == doctest::Approx(2.0));
  CHECK(cyl.sdf(Vec3(0, 0, 3)) == doctest::Approx(2.0));
  CHECK(cyl.sdf(Vec3(2, 0, 2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(cyl.sdf(Vec3(0, 0, 0)) == doctest::Approx(-1.0));
}

TEST_CASE("gradient tie goes to the lower-index primitive") {
  const Scene s = Scene::open({Obstacle::sphere(Vec3(-1, 0, 0), 0.5), Obstacle::sphere(Vec3(1, 0, 0), 0.5)});
  const Vec3 g = s.sdf_gradient(Vec3(0, 0, 0));
  CHECK(g.x() == doctest::Approx(1.0));  // pointing away from the first sphere
}

TEST_CASE("sdf gradient matches central differences") {
  const Scene s = random_open_scene(3, 10);
  Rng rng(11);
  int checked = 0;
  for (int n = 0; n < 100; ++n) {
    const Vec3 p(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, 0, 3));
    Vec3 g;
    s.sdf(p, g);
    const double h = 1e-6;
    Vec3 fd;
    for (int k = 0; k < 3; ++k) {
      Vec3 a = p, b = p;
      a[k] += h;
      b[k] -= h;
      fd[k] = (s.sdf(a) - s.sdf(b)) / (2 * h);
    }
    // skip points near a kink: minimizer switch or medial axis of a box
    Vec3 g2;
    const Vec3 off = p + 1e-4 * Vec3(0.3, -0.2, 0.1);
    s.sdf(off, g2);
    if ((g2 - g).norm() > 1e-2) continue;
    CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((fd - g).norm() / g.norm() < 1e-5);
    ++checked;
  }
  CHECK(checked > 80);
}

TEST_CASE("sdf agrees with nearest surface sample oracle") {
  Rng rng(17);
  CHECK(oracle::sdf_violations(random_open_scene(5, 10), 100000, 1000, rng) == 0);
}

TEST_CASE("sdf is a min composition and 1-Lipschitz") {
  const Scene s = generate_scene(ScenePreset::kMixed, 4, 1.0);
  Rng rng(5);
  for (int n = 0; n < 2000; ++n) {
    const Vec3 p(uniform(rng, -5.5, 5.5), uniform(rng, -5.5, 5.5), uniform(rng, -0.5, 3.5));
    const Vec3 q(uniform(rng, -5.5, 5.5), uniform(rng, -5.5, 5.5), uniform(rng, -0.5, 3.5));
    const double v = s.sdf(p);
    for (const auto& o : s.primitives()) CHECK_LE(v, o.sdf(p));
    CHECK(std::abs(v - s.sdf(q)) <= (p - q).norm() + 1e-12);
  }
}

TEST_CASE("generate_scene counts and determinism") {
  const Scene c = generate_scene(ScenePreset::kCuboids, 7, 1.0);
  CHECK(c.obstacles().size() == 50);
  CHECK(c.walls().size() == 4);
  int grounded = 0;
  for (const auto& o : c.obstacles()) {
    CHECK(o.kind == ObstacleKind::kCuboid);
    const double base = o.position.z() - o.half_extents.z();
    if (std::abs(base) < 1e-12) ++grounded; else CHECK(base > 0.0);
  }
  CHECK(grounded == 20);

  const Scene m = generate_scene(ScenePreset::kMixed, 7, 1.0);
  CHECK(m.obstacles().size() == 45);
  CHECK(m.walls().size() == 4);

  const Scene a = generate_scene(ScenePreset::kCuboids, 7, 0.1);
  const Scene b = generate_scene(ScenePreset::kCuboids, 7, 0.1);
  REQUIRE(a.obstacles().size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.obstacles()[i].position == b.obstacles()[i].position);
    CHECK(a.obstacles()[i].half_extents == b.obstacles()[i].half_extents);
    CHECK(a.obstacles()[i].yaw == b.obstacles()[i].yaw);
  }
  CHECK(generate_scene(ScenePreset::kMixed, 7, 0.01).obstacles().size() == 3);
}

TEST_CASE("generated obstacles keep clear of the task positions and lie in the room") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = generate_scene(seed % 2 ? ScenePreset::kMixed : ScenePreset::kCuboids, seed, 1.0);
    const double d = (s.goal_xy() - s.start_xy()).norm();
    CHECK(d >= 3.0);
    CHECK(d <= 8.0);
    for (const auto& o : s.obstacles()) {
      CHECK(o.footprint_distance(s.start_xy()) >= 0.6);
      CHECK(o.footprint_distance(s.goal_xy()) >= 0.6);
      CHECK(std::abs(o.position.x()) <= 5.0);
      CHECK(std::abs(o.position.y()) <= 5.0);
      if (o.kind == ObstacleKind::kCuboid) {
        CHECK(o.yaw >= -kPi);
        CHECK(o.yaw < kPi);
      }
    }
  }
}

TEST_CASE("surface samples") {
  const Obstacle sphere = Obstacle::sphere(Vec3::Zero(), 1.0);
  const std::vector<Obstacle> one{sphere};
  const PointCloud pc = sample_surface(one, 10000, 1);
  double mean = 0.0;
  for (int i = 0; i < pc.size(); ++i) mean += pc.points.row(i).norm();
  CHECK(mean / pc.size() == doctest::Approx(1.0).epsilon(1e-3));

  const Obstacle box = Obstacle::cuboid(Vec3(0.3, -0.2, 1.0), Vec3(0.2, 0.5, 0.8), 0.4);
  const std::vector<Obstacle> b{box};
  const int n = 100000;
  const PointCloud bc = sample_surface(b, n, 2);
  int counts[6] = {0, 0, 0, 0, 0, 0};
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  for (int i = 0; i < n; ++i) {
    const Vec3 d = bc.points.row(i).transpose() - box.position;
    const Vec3 l(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
    int axis = 0;
    for (int k = 1; k < 3; ++k) {
      if (std::abs(l[k]) / box.half_extents[k] > std::abs(l[axis]) / box.half_extents[axis]) axis = k;
    }
    const int best = 2 * axis + (l[axis] > 0 ? 0 : 1);
    ++counts[best];
  }
  const Vec3 e = 2.0 * box.half_extents;
  const double area[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
  const double total = 2.0 * (area[0] + area[1] + area[2]);
  for (int f = 0; f < 6; ++f) {
    const double expected = n * area[f / 2] / total;
    CHECK(std::abs(counts[f] - expected) / expected < 0.05);
  }

  const Scene scene = generate_scene(ScenePreset::kMixed, 3, 0.5);
  const PointCloud p1 = sample_surface(scene, 2048, 9), p2 = sample_surface(scene, 2048, 9);
  CHECK(p1.points == p2.points);
  for (int i = 0; i < p1.size(); ++i) CHECK(std::abs(scene.sdf(p1.points.row(i).transpose())) <= 1e-6);
}

TEST_CASE("voxelize") {
  const std::vector<Obstacle> one{Obstacle::sphere(Vec3::Zero(), 1.0)};
  const VoxelGrid g = voxelize(one, 0.05);
  CHECK(std::abs(g.volume() - 4.0 / 3.0 * kPi) / (4.0 / 3.0 * kPi) < 0.03);

  CHECK(voxelize(std::vector<Obstacle>{}, 0.05).count() == 0);

  const std::vector<Obstacle> two{one[0], one[0]};
  const VoxelGrid g2 = voxelize(two, 0.05);
  CHECK(g2.occupancy == g.occupancy);

  // brute force over every cell of a room-covering grid
  const Scene s = generate_scene(ScenePreset::kMixed, 2, 0.3);
  VoxelGrid grid = empty_grid(Vec3(-1, -1, 0), Vec3(1, 1, 1), 0.1);
  voxelize_into(s.obstacles(), grid);
  for (int k = 0; k < grid.dims.z(); ++k)
    for (int j = 0; j < grid.dims.y(); ++j)
      for (int i = 0; i < grid.dims.x(); ++i) {
        bool in = false;
        for (const auto& o : s.obstacles()) in = in || o.contains(grid.cell_center(i, j, k));
        CHECK(static_cast<bool>(grid.occupancy[grid.linear(i, j, k)]) == in);
      }
  CHECK_THROWS(voxelize(one, 0.0));
}

TEST_CASE("scene json round trip") {
  const Scene s = generate_scene(ScenePreset::kMixed, 12, 0.4);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string a = (dir / "momaplan_scene_a.json").string(), b = (dir / "momaplan_scene_b.json").string();
  save_scene(s, a);
  const Scene r = load_scene(a);
  save_scene(r, b);
  std::ifstream fa(a), fb(b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(r.obstacles().size() == s.obstacles().size());
  CHECK(r.start_xy().isApprox(s.start_xy(), 1e-8));
  for (std::size_t i = 0; i < s.obstacles().size(); ++i) {
    CHECK((r.obstacles()[i].position - s.obstacles()[i].position).norm() < 1e-7);
  }
  CHECK_THROWS(parse_preset("replica"));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("invalid primitives are rejected") {
  CHECK_THROWS(Obstacle::sphere(Vec3::Zero(), 0.0));
  CHECK_THROWS(Obstacle::cuboid(Vec3::Zero(), Vec3(1, -1, 1)));
  CHECK_THROWS(Obstacle::cylinder(Vec3::Zero(), 1.0, 0.0));
  CHECK_THROWS(generate_scene(ScenePreset::kCuboids, 1, 0.0));
}
