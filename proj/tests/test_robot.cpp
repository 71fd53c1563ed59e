#include "doctest.h"

#include <filesystem>

#include "momaplan/robot.hpp"
#include "oracles.hpp"

using namespace momaplan;

using oracle::flat;
using oracle::perturbed;
using oracle::random_state;

TEST_CASE("keypoints match the homogeneous-transform oracle") {
  const RobotModel m = RobotModel::default_model();
  Rng rng(1);
  for (int n = 0; n < 1000; ++n) {
    const RobotState s = random_state(m, rng);
    const auto kp = keypoints(m, s);
    const auto ref = oracle::keypoints(m, s);
    REQUIRE(kp.size() == 9);
    for (std::size_t j = 0; j < kp.size(); ++j) CHECK((kp[j].position - ref[j]).norm() < 1e-9);
    const CollisionPoints cp = collision_points(m, s);
    REQUIRE(cp.centers.rows() == 16);
    for (int k = 0; k < 16; ++k) CHECK((cp.centers.row(k).transpose() - oracle::sphere(m, s, k)).norm() < 1e-9);
  }
}

TEST_CASE("keypoint features and midrange configuration") {
  const RobotModel m = RobotModel::default_model();
  RobotState s;
  s.q = 0.5 * (m.q_min + m.q_max);
  const auto kp = keypoints(m, s);
  Vec3 sum = Vec3::Zero();
  CHECK(kp[0].position.norm() == 0.0);
  CHECK(kp[0].feature == 1.0);
  CHECK(kp[1].feature == 0.0);
  for (int j = 1; j < 9; ++j) {
    sum += m.links[j - 1];
    CHECK((kp[j].position - sum).norm() < 1e-12);
    if (j >= 2) CHECK(kp[j].feature == 0.0);
  }
  s.x = 1;
  s.y = 2;
  const auto k2 = keypoints(m, s);
  CHECK(k2[0].position == Vec3(1, 2, 0));
  CHECK(k2[0].feature == 1.0);
}

TEST_CASE("keypoint and sphere jacobians match central differences") {
  const RobotModel m = RobotModel::default_model();
  Rng rng(2);
  const double h = 1e-6;
  for (int n = 0; n < 100; ++n) {
    const RobotState s = random_state(m, rng);
    const Eigen::MatrixXd J = keypoints_jacobian(m, s);
    CHECK(J.block<3, 1>(0, 0) == Vec3(1, 0, 0));
    for (int c = 0; c < 3 + m.n_joints; ++c) {
      const Eigen::VectorXd fd = (flat(keypoints(m, perturbed(s, c, h))) - flat(keypoints(m, perturbed(s, c, -h)))) / (2 * h);
      const double scale = std::max(1.0, fd.norm());
      CHECK((fd - J.col(c)).norm() / scale < 1e-5);
    }
    // last joint sits past the final keypoint
    CHECK(J.col(2 + m.n_joints).norm() == 0.0);

    const ChainPose pose = chain_pose(m, s);
    for (int k = 0; k < m.sphere_count(); ++k) {
      const Eigen::MatrixXd Js = sphere_jacobian(m, pose, k);
      for (int c = 0; c < 3 + m.n_joints; ++c) {
        const Vec3 fd = (collision_points(m, perturbed(s, c, h)).centers.row(k) -
                         collision_points(m, perturbed(s, c, -h)).centers.row(k)).transpose() / (2 * h);
        CHECK((fd - Js.col(c)).norm() / std::max(1.0, fd.norm()) < 1e-5);
      }
    }
  }
}

TEST_CASE("joint normalization") {
  const RobotModel m = RobotModel::default_model();
  for (int i = 0; i < m.n_joints; ++i) {
    CHECK(normalize_joint(m, i, m.q_min[i]) == -1.0);
    CHECK(normalize_joint(m, i, m.q_max[i]) == 1.0);
    CHECK(normalize_joint(m, i, 0.5 * (m.q_min[i] + m.q_max[i])) == 0.0);
    for (double v : {-0.7, 0.1, 0.93}) CHECK(std::abs(normalize_joint(m, i, denormalize_joint(m, i, v)) - v) < 1e-12);
  }
}

TEST_CASE("task frame") {
  RobotState a, b;
  a.q = b.q = Eigen::VectorXd::Zero(7);
  b.y = 5;
  const TaskFrame f = task_frame(a, b);
  CHECK((f.to_task(Vec3(0, 5, 1)) - Vec3(5, 0, 1)).norm() < 1e-12);

  a.x = b.x = 1.5;
  a.y = b.y = -2;
  a.theta = 0.7;
  const TaskFrame d = task_frame(a, b);
  CHECK(d.theta_d == 0.7);

  Rng rng(3);
  const RobotModel m = RobotModel::default_model();
  for (int n = 0; n < 200; ++n) {
    const RobotState s = random_state(m, rng), g = random_state(m, rng);
    const TaskFrame tf = task_frame(s, g);
    const Vec2 gt = tf.to_task(g.xy());
    CHECK(std::abs(gt.y()) < 1e-12);
    CHECK(gt.x() >= 0.0);
    CHECK(tf.to_task(s.xy()).norm() < 1e-12);
    const Vec3 p(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, 0, 3));
    const Vec3 q(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, 0, 3));
    CHECK(std::abs((tf.to_task(p) - tf.to_task(q)).norm() - (p - q).norm()) < 1e-12);
    CHECK((tf.to_world(tf.to_task(p)) - p).norm() < 1e-12);
    const Mat3 R = tf.rotation();
    CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("path state conversion") {
  const RobotModel m = RobotModel::default_model();
  Eigen::VectorXd row = Eigen::VectorXd::Zero(11);
  row[2] = 1.0;
  CHECK(state_from_path_state(m, row).theta == 0.0);
  row[2] = 0.6;
  row[3] = 0.8;
  CHECK(state_from_path_state(m, row).theta == doctest::Approx(0.927295218).epsilon(1e-9));
  row[2] = row[3] = 0.0;
  CHECK_THROWS_WITH(state_from_path_state(m, row), "degenerate heading");
  Rng rng(4);
  for (int n = 0; n < 100; ++n) {
    const RobotState s = random_state(m, rng);
    CHECK(std::abs(state_from_path_state(m, path_state_from_state(s)).theta - s.theta) < 1e-12);
  }
}

TEST_CASE("collision point layout") {
  const RobotModel m = RobotModel::default_model();
  RobotState s;
  s.q = Eigen::VectorXd::Zero(7);
  const CollisionPoints cp = collision_points(m, s);
  CHECK(cp.centers.rows() == m.sphere_count());
  CHECK(cp.centers.row(0) == Eigen::RowVector3d(0, 0, 0.15));
  CHECK(cp.centers.row(1) == Eigen::RowVector3d(0, 0, 0.35));
  CHECK(cp.radii[0] == 0.32);
}

TEST_CASE("robot model json round trip") {
  const RobotModel m = RobotModel::default_model();
  const std::string file = (std::filesystem::temp_directory_path() / "momaplan_robot.json").string();
  save_robot(m, file);
  const RobotModel r = load_robot(file);
  CHECK(robot_to_json(r) == robot_to_json(m));
  std::filesystem::remove(file);
  RobotModel bad = m;
  bad.q_min[0] = bad.q_max[0];
  CHECK_THROWS(bad.check());
}
