#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "momaplan/path.hpp"
#include "momaplan/robot.hpp"
#include "momaplan/scene.hpp"
#include "momaplan/trajopt.hpp"

namespace momaplan {

/// Scene and model are borrowed and must outlive the query.
struct PlanQuery {
  const Scene* scene = nullptr;
  const RobotModel* model = nullptr;
  RobotState start, goal;
  double time_budget = 5.0;  // seconds; ignored when max_iterations > 0
  long max_iterations = 0;   // deterministic budget used by tests
  std::uint64_t seed = 0;
};

struct RrtConfig {
  double extend = 0.6;  // max state-metric length of one extension
  double pos_step = 0.02;
  double rot_step = 0.05;
};

struct PlanResult {
  bool success = false;
  WaypointPath path;
  double seconds = 0.0;
  long iterations = 0;
  int start_nodes = 0, goal_nodes = 0;
};

/// Bidirectional RRT over SE(2) x joint space with straight-line edges.
PlanResult rrt_connect(const PlanQuery& q, const RrtConfig& config = {});

/// First violation found by a validation pass.
struct Validation {
  bool ok = true;
  std::string channel;  // "clearance", "joint_limit", "v", "omega", "a", "alpha", "qd", "qdd", "goal"
  double time = 0.0;    // seconds for trajectories, path parameter for paths
  double value = 0.0;
  std::string message;
};

/// Dense check every `dt` seconds with independent polynomial evaluation and
/// Simpson integration of the base position. `goal`, when given, must be met
/// within 1e-3 m and 1e-3 rad.
Validation validate_trajectory(const Trajectory& traj, const Scene& scene, const RobotModel& model,
                               const RobotState* goal = nullptr, double dt = 0.01);
/// Straight-line interpolation between consecutive states at 0.02 m / 0.05 rad.
Validation validate_path(const WaypointPath& w, const Scene& scene, const RobotModel& model);

/// Random valid boundary state at a base position; throws after repeated failures.
RobotState random_valid_state(const Scene& scene, const RobotModel& model, const Vec2& xy, Rng& rng);

/// One planning query in a generated scene.
struct PlanningTask {
  Scene scene;
  RobotState start, goal;
};

/// Scene from `scene_seed` with random valid boundary states at its designated
/// start and goal positions; throws when no valid boundary state exists.
PlanningTask make_task(ScenePreset preset, std::uint64_t scene_seed, double density, const RobotModel& model);

struct CollectConfig {
  ScenePreset preset = ScenePreset::kCuboids;
  int n_tasks = 50;
  double density = 0.2;
  double budget = 5.0;      // planner seconds per task
  long max_iterations = 0;  // overrides the wall-clock budget when positive
  std::uint64_t seed = 0;
  int n_tau = 64;
  int pieces = 8;
  bool verbose = false;
};

struct CollectStats {
  int attempted = 0, planned = 0, optimized = 0, validated = 0, recorded = 0;
  std::vector<std::string> failures;
};

/// Generates one scene and task per index with scene seed `seed + i` and
/// writes `records.bin`, `scenes/scene_i.json` and `manifest.json` into `dir`.
CollectStats collect_dataset(const CollectConfig& config, const RobotModel& model, const std::string& dir);

struct Dataset {
  std::vector<DatasetRecord> records;
  std::vector<Scene> scenes;  // parallel to records
};
Dataset load_dataset(const std::string& dir);

}  // namespace momaplan
