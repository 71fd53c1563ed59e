#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "momaplan/robot.hpp"
#include "momaplan/scene.hpp"

namespace momaplan {

enum class Frame { kWorld, kTask };

/// N_tau rows of [x, y, c, s, q_1..q_N]; joints in radians.
struct Path {
  Eigen::MatrixXd states;
  Frame frame = Frame::kWorld;

  int length() const { return static_cast<int>(states.rows()); }
  int n_joints() const { return static_cast<int>(states.cols()) - 4; }
  RobotState state(int i) const;
  /// Re-normalizes every (c, s) pair; throws on a zero pair.
  void project_headings();
};

using WaypointPath = std::vector<RobotState>;

Path path_from_states(const WaypointPath& states, Frame frame = Frame::kWorld);
WaypointPath path_states(const Path& p);

/// Equal-chord resampling: consecutive base positions are exactly equidistant
/// and the first/last rows reproduce the input endpoints. Heading and joints
/// are interpolated at the same polyline parameters. A base path shorter than
/// 1e-6 m falls back to equal-parameter sampling.
Path resample_uniform(const WaypointPath& w, int n_tau = 64);

struct PruneConfig {
  int max_attempts = 300;
  int max_consecutive_failures = 50;
  double pos_step = 0.02;
  double rot_step = 0.05;
};

WaypointPath prune(const WaypointPath& w, const Scene& scene, const RobotModel& model, std::uint64_t seed,
                   const PruneConfig& config = {});

/// Per-channel totals: base arc length, absolute shortest-arc heading change, joint L1.
struct DeltaTotals {
  double p = 0.0, theta = 0.0, q = 0.0;
};
DeltaTotals delta_totals(const WaypointPath& w);

double path_distance(const Path& a, const Path& b);

Path to_task_frame(const Path& p, const TaskFrame& f);
Path from_task_frame(const Path& p, const TaskFrame& f);

/// Network feature space: joints mapped to [-1, 1]; the rest unchanged.
Eigen::MatrixXd path_features(const Path& p, const RobotModel& model);
Path path_from_features(const Eigen::MatrixXd& features, const RobotModel& model, Frame frame);

/// One collected training sample: truth path in the task frame plus world-frame boundary states.
struct DatasetRecord {
  Path path;
  RobotState start, goal;
  std::string scene_ref;
};

/// Rounds every stored value to f32 so in-memory records equal their reloaded form.
void quantize_record(DatasetRecord& r);
void write_record(std::ostream& out, const DatasetRecord& r);
DatasetRecord read_record(std::istream& in);
void save_records(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> load_records(const std::string& path);
nlohmann::json record_to_json(const DatasetRecord& r);

}  // namespace momaplan
