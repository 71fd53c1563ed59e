#pragma once

#include <stop_token>
#include <string>
#include <vector>

#include "json.hpp"

#include "momaplan/path.hpp"
#include "momaplan/robot.hpp"
#include "momaplan/scene.hpp"

namespace momaplan {

/// Piecewise quintic trajectory over channels (a, theta, q_1..q_N). Each piece
/// stores monomial coefficients in local time tau in [0, T_k]; base position
/// is recovered by integrating a'(cos theta, sin theta) from `start_xy`.
struct Trajectory {
  int n_joints = 7;
  Vec2 start_xy = Vec2::Zero();
  std::vector<double> durations;
  std::vector<Eigen::MatrixXd> coefficients;  // per piece: channels x 6

  int pieces() const { return static_cast<int>(durations.size()); }
  int channels() const { return 2 + n_joints; }
  double t_f() const;
  double a_f() const;
  double theta_f() const;
  void check() const;
};

/// Channel values and derivatives at time t (clamped to [0, t_f]).
struct ChannelState {
  Eigen::VectorXd p, v, acc, jerk;
};
ChannelState evaluate_channels(const Trajectory& traj, double t);

/// Base position at time t by Gauss-Legendre quadrature with `nodes` per piece.
Vec2 base_position(const Trajectory& traj, double t, int nodes = 16);
RobotState trajectory_state(const Trajectory& traj, double t, int nodes = 16);

/// Quadrature of the position integrals plus start minus goal.
Vec2 boundary_residual(const Trajectory& traj, const RobotState& start, const RobotState& goal, int nodes = 16);

/// Gauss-Legendre nodes and weights on [0, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

/// Dense states every `dt` seconds, ending exactly at t_f.
WaypointPath trajectory_waypoints(const Trajectory& traj, double dt = 0.01);
/// Equal-arc-length path of `n_tau` states sampled from the trajectory.
Path resample_trajectory(const Trajectory& traj, int n_tau = 64, double dt = 0.01);

/// Quintic Hermite fit through knot times derived from a trapezoidal speed
/// profile along the base arc. Travel headings follow the path tangent, with
/// in-place turns at both ends when the boundary headings differ.
Trajectory init_from_path(const Path& p, const RobotModel& model, int pieces = 8);

nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

struct OptWeights {
  double time = 1.0;
  double jerk = 1.0;
  double clearance = 1e4;
  double limits = 1e3;
  void check() const;
};

struct OptConfig {
  OptWeights weights;
  double margin = 0.03;           // clearance the penalty aims for, m
  double limit_scale = 0.95;      // fraction of each kinodynamic limit targeted
  double joint_margin = 0.01;     // rad inside the joint range
  int samples_per_piece = 16;
  double boundary_weight = 1e3;   // first outer round
  double escalation = 10.0;
  int max_rounds = 8;
  double tolerance = 1e-4;        // boundary residual and heading, m / rad
  int max_iters = 600;            // total inner iterations across rounds
  int round_iters = 150;          // inner iterations per round
  int lbfgs_memory = 8;
};

/// One trajectory optimization query; scene and model are borrowed.
struct OptProblem {
  const Scene* scene = nullptr;
  const RobotModel* model = nullptr;
  RobotState start, goal;
  OptConfig config;
};

enum class OptStatus { kSuccess, kFailed, kDiverged, kCancelled };
std::string status_name(OptStatus s);

struct OptResult {
  Trajectory traj;
  OptStatus status = OptStatus::kFailed;
  double objective = 0.0;
  double residual = 0.0;      // norm of the boundary residual, m
  double heading_error = 0.0; // rad
  int violations = 0;         // samples breaking the unscaled limits or touching obstacles
  int iterations = 0;
  int rounds = 0;
  double final_weight = 0.0;
};

/// Penalized objective over packed knot variables:
/// [p, v, acc] per channel and interior knot, then a_f, theta_f, then log durations.
class TrajectoryObjective {
 public:
  TrajectoryObjective(const OptProblem& problem, const Trajectory& reference);

  int size() const { return n_vars_; }
  Eigen::VectorXd pack(const Trajectory& traj) const;
  Trajectory unpack(const Eigen::VectorXd& x) const;
  /// Objective at boundary weight `w_b`; `grad` is resized and filled.
  double evaluate(const Eigen::VectorXd& x, double w_b, Eigen::VectorXd& grad, int* violations = nullptr) const;
  double theta_target() const { return theta_target_; }

 private:
  const OptProblem& problem_;
  int pieces_, channels_, n_vars_;
  Vec2 start_xy_;
  Eigen::VectorXd start_values_, goal_values_;
  double theta_target_;
};

OptResult optimize(const OptProblem& problem, const Trajectory& traj0, std::stop_token stop = {});

struct ParallelResult {
  OptResult best;
  bool success = false;
  int winner = -1;                 // rank of the returned trajectory
  std::vector<OptStatus> statuses;  // per rank
  std::vector<int> rank_iterations;
  std::vector<double> rank_seconds;  // optimization plus validation; 0 for skipped ranks
  int total_iterations = 0;        // over ranks up to the winner, or all ranks on failure
  double seconds = 0.0;
};

/// Runs every seed; a validated success at rank r cancels ranks above r, so the
/// lowest successful rank is returned independent of scheduling. With no success
/// the lowest-objective failure is reported.
ParallelResult optimize_parallel(const OptProblem& problem, const std::vector<Trajectory>& seeds, int workers = 0);

}  // namespace momaplan
