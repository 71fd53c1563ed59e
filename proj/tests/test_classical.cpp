#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "momaplan/classical.hpp"
#include "momaplan/collision.hpp"

using namespace momaplan;

namespace {

RobotState st(double x, double y, double th, const Eigen::VectorXd& q) {
  RobotState s;
  s.x = x;
  s.y = y;
  s.theta = th;
  s.q = q;
  return s;
}

Eigen::VectorXd mid_joints(const RobotModel& m) { return 0.5 * (m.q_min + m.q_max); }

PlanQuery query(const Scene& scene, const RobotModel& m, const RobotState& s, const RobotState& g,
                long iterations, std::uint64_t seed) {
  PlanQuery q;
  q.scene = &scene;
  q.model = &m;
  q.start = s;
  q.goal = g;
  q.max_iterations = iterations;
  q.seed = seed;
  return q;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("start equal to goal returns a single state immediately") {
  const RobotModel m = RobotModel::default_model();
  const Scene scene = generate_scene(ScenePreset::kCuboids, 1, 0.2);
  Rng rng(1);
  const RobotState s = random_valid_state(scene, m, scene.start_xy(), rng);
  const PlanResult r = rrt_connect(query(scene, m, s, s, 100, 0));
  CHECK(r.success);
  CHECK(r.path.size() == 1);
  CHECK(r.seconds < 1e-3);
}

TEST_CASE("empty room plan prunes to a near-straight segment") {
  const RobotModel m = RobotModel::default_model();
  const Scene room(std::vector<Obstacle>{}, RoomBounds{});
  const RobotState s = st(-3.0, -1.0, 0.5, mid_joints(m)), g = st(2.5, 1.5, -1.0, mid_joints(m));
  const PlanResult r = rrt_connect(query(room, m, s, g, 2000, 3));
  REQUIRE(r.success);
  CHECK(validate_path(r.path, room, m).ok);
  const WaypointPath p = prune(r.path, room, m, 3);
  const double arc = delta_totals(p).p;
  const double straight = (g.xy() - s.xy()).norm();
  CHECK(arc <= 1.05 * straight);
  CHECK(p.front().x == s.x);
  CHECK(p.back().y == g.y);
}

TEST_CASE("enclosed goal fails at the iteration budget") {
  const RobotModel m = RobotModel::default_model();
  const Vec3 c(2.0, 2.0, 1.4);
  const double h = 1.3, t = 0.05;
  std::vector<Obstacle> box{Obstacle::cuboid(c + Vec3(h, 0, 0), Vec3(t, h + t, 1.4)),
                            Obstacle::cuboid(c - Vec3(h, 0, 0), Vec3(t, h + t, 1.4)),
                            Obstacle::cuboid(c + Vec3(0, h, 0), Vec3(h + t, t, 1.4)),
                            Obstacle::cuboid(c - Vec3(0, h, 0), Vec3(h + t, t, 1.4)),
                            Obstacle::cuboid(c + Vec3(0, 0, 1.45), Vec3(h + t, h + t, t))};
  const Scene scene(box, RoomBounds{});
  Rng rng(2);
  const RobotState s = random_valid_state(scene, m, Vec2(-3, -3), rng);
  const RobotState g = random_valid_state(scene, m, Vec2(2, 2), rng);
  const PlanResult r = rrt_connect(query(scene, m, s, g, 300, 1));
  CHECK(!r.success);
  CHECK(r.iterations == 300);
  CHECK(r.start_nodes + r.goal_nodes > 2);
}

TEST_CASE("plans are seed-deterministic and pass validation") {
  const RobotModel m = RobotModel::default_model();
  for (int i = 0; i < 6; ++i) {
    const Scene scene = generate_scene(ScenePreset::kMixed, 40 + i, 0.6);
    Rng rng(i);
    const RobotState s = random_valid_state(scene, m, scene.start_xy(), rng);
    const RobotState g = random_valid_state(scene, m, scene.goal_xy(), rng);
    const PlanResult a = rrt_connect(query(scene, m, s, g, 3000, i));
    const PlanResult b = rrt_connect(query(scene, m, s, g, 3000, i));
    CHECK(a.success == b.success);
    CHECK(a.iterations == b.iterations);
    REQUIRE(a.path.size() == b.path.size());
    for (std::size_t k = 0; k < a.path.size(); ++k) {
      CHECK(a.path[k].x == b.path[k].x);
      CHECK(a.path[k].q == b.path[k].q);
    }
    if (a.success) {
      const Validation v = validate_path(a.path, scene, m);
      CHECK_MESSAGE(v.ok, v.channel << " at " << v.time);
    }
  }
  const Scene scene = generate_scene(ScenePreset::kCuboids, 1, 0.2);
  RobotState bad = st(0, 0, 0, mid_joints(m));
  bad.q[0] = m.q_max[0] + 1.0;
  CHECK_THROWS(rrt_connect(query(scene, m, bad, st(1, 1, 0, mid_joints(m)), 10, 0)));
}

TEST_CASE("validation reports the first speed violation") {
  const RobotModel m = RobotModel::default_model();
  const Scene empty = Scene::open({});
  // cruise at 0.9 v_max, then accelerate at half the limit from the knot on
  const double v0 = 0.9 * m.limits.v_max, acc = 0.5 * m.limits.a_max, t1 = 2.0, t2 = 3.0;
  Trajectory t;
  t.start_xy = Vec2(0.0, 0.0);
  t.durations = {t1, t2};
  Eigen::MatrixXd c0 = Eigen::MatrixXd::Zero(9, 6), c1 = Eigen::MatrixXd::Zero(9, 6);
  c0(0, 1) = v0;
  c1(0, 0) = v0 * t1;
  c1(0, 1) = v0;
  c1(0, 2) = 0.5 * acc;
  for (int j = 0; j < 7; ++j) c0(2 + j, 0) = c1(2 + j, 0) = mid_joints(m)[j];
  t.coefficients = {c0, c1};
  const double crossing = t1 + (m.limits.v_max - v0) / acc;
  REQUIRE(crossing < t1 + t2);
  const Validation v = validate_trajectory(t, empty, m);
  CHECK(!v.ok);
  CHECK(v.channel == "v");
  CHECK(v.time > crossing - 1e-9);
  CHECK(v.time <= crossing + 0.01 + 1e-9);
  CHECK(v.value > m.limits.v_max);
}

TEST_CASE("a path grazing an obstacle fails validation") {
  const RobotModel m = RobotModel::default_model();
  const Scene scene = Scene::open({Obstacle::cylinder(Vec3(2.0, 0.0, 1.0), 0.3, 1.0)});
  const Eigen::VectorXd q = mid_joints(m);
  // minimum clearance of the straight pass at lateral offset d, sampled every millimeter
  auto min_clearance = [&](double d) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 4000; ++i) best = std::min(best, state_clearance(scene, m, st(i * 1e-3, d, 0.0, q)));
    return best;
  };
  auto offset_for = [&](double target) {
    double lo = 0.0, hi = 3.0;  // clearance grows with the offset
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (min_clearance(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double d_in = offset_for(-1e-3), d_out = offset_for(1e-3);
  CHECK(min_clearance(d_in) == doctest::Approx(-1e-3).epsilon(1e-6));
  const Validation graze = validate_path({st(0, d_in, 0, q), st(4, d_in, 0, q)}, scene, m);
  CHECK(!graze.ok);
  CHECK(graze.channel == "clearance");
  CHECK(validate_path({st(0, d_out, 0, q), st(4, d_out, 0, q)}, scene, m).ok);
}

TEST_CASE("dataset collection records validated uniform samples") {
  const RobotModel m = RobotModel::default_model();
  const std::string dir = (std::filesystem::temp_directory_path() / "momaplan_dataset").string();
  std::filesystem::remove_all(dir);
  CollectConfig cfg;
  cfg.n_tasks = 50;
  cfg.density = 0.2;
  cfg.max_iterations = 5000;
  cfg.seed = 100;
  const CollectStats stats = collect_dataset(cfg, m, dir);
  CHECK(stats.attempted == 50);
  CHECK(stats.recorded >= 30);
  CHECK(stats.validated >= 0.9 * stats.optimized);
  CHECK(stats.recorded + static_cast<int>(stats.failures.size()) == 50);

  const Dataset d = load_dataset(dir);
  REQUIRE(static_cast<int>(d.records.size()) == stats.recorded);
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const DatasetRecord& r = d.records[i];
    CHECK(r.path.frame == Frame::kTask);
    CHECK(r.path.length() == 64);
    // equal base steps: the uniformity loss vanishes on every truth path
    std::vector<double> steps;
    double total = 0.0;
    for (int k = 1; k < 64; ++k) {
      steps.push_back((r.path.states.row(k).head<2>() - r.path.states.row(k - 1).head<2>()).norm());
      total += steps.back();
    }
    double mean = total / 63.0, var = 0.0;
    for (double s : steps) var += (s - mean) * (s - mean);
    CHECK(std::sqrt(var / 63.0) / std::sqrt(63.0 * total) <= 1e-6);
    const Path world = from_task_frame(r.path, task_frame(r.start, r.goal));
    const Validation v = validate_path(path_states(world), d.scenes[i], m);
    CHECK_MESSAGE(v.ok, "record " << i << " " << v.channel);
  }

  const std::string copy = dir + "/records_copy.bin";
  save_records(copy, d.records);
  CHECK(slurp(copy) == slurp(dir + "/records.bin"));
  const auto again = load_records(copy);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].path.states == d.records[i].path.states);
  std::filesystem::remove_all(dir);
}
