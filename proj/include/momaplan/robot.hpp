#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "momaplan/common.hpp"

namespace momaplan {

enum class JointAxis { kZ, kY };

/// Sphere rigidly attached to a chain link. Link 0 is the base frame
/// (origin t0, yawed by theta); link j >= 1 starts at t_{j-1} and is rotated by R_cum(j).
struct CollisionSphere {
  int link = 0;
  Vec3 offset = Vec3::Zero();
  double radius = 0.05;
};

struct KinodynamicLimits {
  double v_max = 1.0;        // m/s, base forward speed
  double omega_max = 1.5;    // rad/s, base yaw rate
  double a_max = 1.5;        // m/s^2
  double alpha_max = 2.0;    // rad/s^2
  double qd_max = 1.5;       // rad/s, per joint
  double qdd_max = 3.0;      // rad/s^2, per joint
};

struct RobotModel {
  int n_joints = 7;
  std::vector<Vec3> links;  // l_1 .. l_{N_m+1}
  std::vector<JointAxis> axes;
  Eigen::VectorXd q_min, q_max;
  double base_radius = 0.32;
  double base_height = 0.5;
  std::vector<CollisionSphere> spheres;
  KinodynamicLimits limits;

  static RobotModel default_model();
  void check() const;

  int state_dim() const { return 4 + n_joints; }
  int keypoint_count() const { return n_joints + 2; }
  int sphere_count() const { return static_cast<int>(spheres.size()); }
  double max_sphere_radius() const;
};

struct RobotState {
  double x = 0.0, y = 0.0, theta = 0.0;
  Eigen::VectorXd q;

  Vec2 xy() const { return Vec2(x, y); }
};

struct Keypoint {
  Vec3 position;
  double feature;
};

/// Canonical frame: start base position at the origin, start-to-goal direction on +x.
struct TaskFrame {
  Vec2 origin = Vec2::Zero();
  double theta_d = 0.0;

  Mat3 rotation() const { return rot_z(theta_d); }
  /// Row-vector form (p - [p_s, 0]) R_e.
  Vec3 to_task(const Vec3& p) const;
  Vec3 to_world(const Vec3& p) const;
  Vec2 to_task(const Vec2& p) const;
  Vec2 to_world(const Vec2& p) const;
  RobotState to_task(const RobotState& s) const;
  RobotState to_world(const RobotState& s) const;
};

TaskFrame task_frame(const RobotState& start, const RobotState& goal);

/// Chain positions t_0..t_{N_m+1} and cumulative rotations R_cum(1..N_m+1).
struct ChainPose {
  std::vector<Vec3> t;
  std::vector<Mat3> r_cum;  // index j holds R_cum(j); entry 0 is R_theta as well
  std::vector<Vec3> joint_axis_world;  // omega_i for joints 1..N_m, entry 0 unused
};

ChainPose chain_pose(const RobotModel& model, const RobotState& s);

std::vector<Keypoint> keypoints(const RobotModel& model, const RobotState& s);
/// Rows: 3 per keypoint; columns: (x, y, theta, q_1..q_N).
Eigen::MatrixXd keypoints_jacobian(const RobotModel& model, const RobotState& s);

double normalize_joint(const RobotModel& model, int i, double q);
double denormalize_joint(const RobotModel& model, int i, double qn);

struct CollisionPoints {
  Eigen::MatrixX3d centers;
  Eigen::VectorXd radii;
};

CollisionPoints collision_points(const RobotModel& model, const RobotState& s);
void collision_centers(const RobotModel& model, const ChainPose& pose, Eigen::MatrixX3d& centers);
/// Jacobian of sphere `k` center w.r.t. (x, y, theta, q), 3 x (3 + N_m).
Eigen::MatrixXd sphere_jacobian(const RobotModel& model, const ChainPose& pose, int k);
/// Jacobian of an arbitrary point attached to `link` whose world position is `p`.
void point_jacobian(const RobotModel& model, const ChainPose& pose, int link, const Vec3& p,
                    Eigen::Ref<Eigen::MatrixXd> jac);

/// Path row [x, y, c, s, q...] to state; the heading pair need not be unit norm.
RobotState state_from_path_state(const RobotModel& model, const Eigen::Ref<const Eigen::VectorXd>& row);
Eigen::VectorXd path_state_from_state(const RobotState& s);

bool within_limits(const RobotModel& model, const RobotState& s, double tol = 0.0);
/// Joint configuration drawn uniformly within `spread` times each half-range around the midpoint.
Eigen::VectorXd sample_joints(const RobotModel& model, Rng& rng, double spread);

nlohmann::json robot_to_json(const RobotModel& model);
RobotModel robot_from_json(const nlohmann::json& j);
void save_robot(const RobotModel& model, const std::string& path);
RobotModel load_robot(const std::string& path);

}  // namespace momaplan
