#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "momaplan/collision.hpp"
#include "momaplan/path.hpp"

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

std::vector<double> base_steps(const Path& p) {
  std::vector<double> d;
  for (int i = 1; i < p.length(); ++i) d.push_back((p.states.row(i).head<2>() - p.states.row(i - 1).head<2>()).norm());
  return d;
}

double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

Eigen::VectorXd zeros() { return Eigen::VectorXd::Zero(7); }

}  // namespace

TEST_CASE("resample a straight segment") {
  const WaypointPath w{st(0, 0, 0, zeros()), st(3.0, 0, 0, zeros()), st(6.3, 0, 0, zeros())};
  const Path p = resample_uniform(w, 64);
  CHECK(p.length() == 64);
  for (double d : base_steps(p)) CHECK(std::abs(d - 0.1) < 1e-9);
  CHECK(p.states.row(63)(0) == 6.3);
}

TEST_CASE("stationary base falls back to parameter sampling") {
  Eigen::VectorXd q1 = zeros();
  q1[0] = 1.0;
  const WaypointPath w{st(1, 2, 0.3, zeros()), st(1, 2, 0.3, q1)};
  const Path p = resample_uniform(w, 64);
  for (int i = 0; i < 64; ++i) {
    CHECK(p.states(i, 0) == 1.0);
    CHECK(p.states(i, 1) == 2.0);
    CHECK(p.states(i, 4) == doctest::Approx(i / 63.0));
  }
}

TEST_CASE("resampled curves have equal base steps") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    WaypointPath w;
    double x = 0, y = 0, th = 0;
    const int m = 3 + trial % 20;
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd q(7);
      for (int k = 0; k < 7; ++k) q[k] = uniform(rng, -1, 1);
      w.push_back(st(x, y, th, q));
      th += uniform(rng, -1.2, 1.2);
      const double step = uniform(rng, 0.05, 1.0);
      x += step * std::cos(th);
      y += step * std::sin(th);
    }
    const Path p = resample_uniform(w, 64);
    const auto d = base_steps(p);
    double total = 0.0;
    for (double v : d) total += v;
    CHECK(stddev(d) < 1e-9 * total);
    // uniformity loss formula on the truth path
    double truth_total = total;
    CHECK(stddev(d) / std::sqrt(63.0 * truth_total) <= 1e-6);
    CHECK(p.states.row(0) == path_state_from_state(w.front()).transpose());
    CHECK(p.states.row(63) == path_state_from_state(w.back()).transpose());
    for (int i = 0; i < 64; ++i) CHECK(std::abs(std::hypot(p.states(i, 2), p.states(i, 3)) - 1.0) < 1e-9);
  }
}

TEST_CASE("prune removes collinear waypoints and keeps blocked ones") {
  const RobotModel m = RobotModel::default_model();
  const Scene empty = Scene::open({});
  const WaypointPath w{st(0, 0, 0, zeros()), st(1, 0, 0, zeros()), st(2, 0, 0, zeros())};
  const WaypointPath p = prune(w, empty, m, 1);
  REQUIRE(p.size() == 2);
  CHECK(p.front().x == 0.0);
  CHECK(p.back().x == 2.0);

  // a wall between the endpoints with a detour around it
  const Scene blocked = Scene::open({Obstacle::cuboid(Vec3(2, 0, 1), Vec3(0.2, 1.0, 1.0))});
  const WaypointPath detour{st(0, 0, 0, zeros()), st(2, 2.0, 0, zeros()), st(4, 0, 0, zeros())};
  REQUIRE(!segment_free(blocked, m, detour[0], detour[2]));
  const WaypointPath kept = prune(detour, blocked, m, 2);
  CHECK(kept.size() == 3);
}

TEST_CASE("prune never increases delta totals and keeps endpoints") {
  const RobotModel m = RobotModel::default_model();
  const Scene scene = generate_scene(ScenePreset::kCuboids, 3, 0.3);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    WaypointPath w;
    for (int i = 0; i < 12; ++i) {
      Eigen::VectorXd q(7);
      for (int k = 0; k < 7; ++k) q[k] = uniform(rng, -0.3, 0.3);
      w.push_back(st(uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, -kPi, kPi), q));
    }
    const WaypointPath p = prune(w, scene, m, trial);
    const DeltaTotals a = delta_totals(w), b = delta_totals(p);
    CHECK(b.p <= a.p + 1e-12);
    CHECK(b.theta <= a.theta + 1e-12);
    CHECK(b.q <= a.q + 1e-12);
    CHECK(p.front().x == w.front().x);
    CHECK(p.back().y == w.back().y);
  }
}

TEST_CASE("path distance") {
  Path a;
  a.states = Eigen::MatrixXd::Random(64, 11);
  Path b = a;
  CHECK(path_distance(a, b) == 0.0);
  b.states(3, 5) += 1.0;
  CHECK(path_distance(a, b) == doctest::Approx(1.0));
  Path c;
  c.states = Eigen::MatrixXd::Random(64, 11);
  CHECK(path_distance(a, c) <= path_distance(a, b) + path_distance(b, c) + 1e-12);
  CHECK(path_distance(a, c) == path_distance(c, a));
  Path t = a;
  t.frame = Frame::kTask;
  CHECK_THROWS(path_distance(a, t));
}

TEST_CASE("task frame round trip") {
  Rng rng(3);
  WaypointPath w;
  for (int i = 0; i < 64; ++i) {
    Eigen::VectorXd q(7);
    for (int k = 0; k < 7; ++k) q[k] = uniform(rng, -1, 1);
    w.push_back(st(uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, -kPi, kPi), q));
  }
  const Path p = path_from_states(w);
  const TaskFrame f = task_frame(w.front(), w.back());
  const Path t = to_task_frame(p, f);
  CHECK(t.frame == Frame::kTask);
  CHECK((from_task_frame(t, f).states - p.states).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(to_task_frame(t, f));
  CHECK_THROWS(from_task_frame(p, f));
  const double dth = w.front().theta - f.theta_d;
  CHECK(std::abs(t.states(0, 0)) < 1e-12);
  CHECK(std::abs(t.states(0, 1)) < 1e-12);
  CHECK(t.states(0, 2) == doctest::Approx(std::cos(dth)).epsilon(1e-12));
  CHECK(t.states(0, 3) == doctest::Approx(std::sin(dth)).epsilon(1e-12));
  CHECK(t.states.row(0).tail(7) == p.states.row(0).tail(7));
  CHECK(std::abs(t.states(63, 1)) < 1e-12);

  TaskFrame identity;
  const Path same = to_task_frame(p, identity);
  CHECK(same.states == p.states);
}

TEST_CASE("feature transform round trip") {
  const RobotModel m = RobotModel::default_model();
  Path p;
  p.states = Eigen::MatrixXd::Random(64, 11);
  const Path back = path_from_features(path_features(p, m), m, Frame::kWorld);
  CHECK((back.states - p.states).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dataset records round trip bit-exactly") {
  Rng rng(1);
  std::vector<DatasetRecord> recs;
  for (int i = 0; i < 5; ++i) {
    DatasetRecord r;
    r.path.states = Eigen::MatrixXd::Random(64, 11);
    r.path.frame = Frame::kTask;
    r.start = st(uniform(rng, -4, 4), 1.0 / 3.0, 0.1, zeros());
    r.goal = st(2.0, uniform(rng, -4, 4), -2.0, Eigen::VectorXd::Constant(7, 0.7));
    r.scene_ref = "scenes/scene_" + std::to_string(i) + ".json";
    quantize_record(r);
    recs.push_back(r);
  }
  const std::string file = (std::filesystem::temp_directory_path() / "momaplan_records.bin").string();
  save_records(file, recs);
  const auto back = load_records(file);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].path.states == recs[i].path.states);
    CHECK(back[i].path.frame == Frame::kTask);
    CHECK(back[i].start.x == recs[i].start.x);
    CHECK(back[i].start.y == recs[i].start.y);
    CHECK(back[i].goal.q == recs[i].goal.q);
    CHECK(back[i].scene_ref == recs[i].scene_ref);
  }
  save_records(file + "2", back);
  std::ifstream a(file, std::ios::binary), b(file + "2", std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().substr(0, 4) == "NMPT");
  CHECK(record_to_json(back[0])["scene"] == "scenes/scene_0.json");
  std::filesystem::remove(file);
  std::filesystem::remove(file + "2");
}
