#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "momaplan/classical.hpp"
#include "momaplan/diffusion.hpp"
#include "momaplan/trajopt.hpp"

namespace momaplan {

enum class SamplerKind { kPtdm, kVanilla, kClassical };
SamplerKind parse_sampler(const std::string& name);
std::string sampler_name(SamplerKind k);

/// Everything `plan` needs; pointers are borrowed. The network and library are
/// required by the learned samplers only.
struct PlannerPipeline {
  const Scene* scene = nullptr;
  const RobotModel* model = nullptr;
  Network<float>* net = nullptr;
  const PrimitiveLibrary* library = nullptr;
  NoiseSchedule schedule;
  SamplerKind kind = SamplerKind::kPtdm;
  int n_samples = 8;
  int ddim_steps = 2;
  int n_points = 512;  // surface points fed to the encoder
  int pieces = 8;
  int opt_workers = 1;
  long rrt_iterations = 20000;  // classical frontend budget; 0 uses rrt_budget seconds
  double rrt_budget = 5.0;
  OptConfig opt;
  std::uint64_t seed = 0;

  void check() const;
};

/// Wall-clock seconds and deterministic cost counters of the two stages.
/// Frontend cost counts denoiser calls (RRT iterations for the classical
/// pipeline); backend cost counts optimizer iterations.
struct PlanTimings {
  double frontend = 0.0, backend = 0.0, total = 0.0;
  long frontend_cost = 0, backend_cost = 0;
  double frontend_shared = 0.0;        // encoding and primitive selection
  std::vector<double> sample_seconds;  // per rank
  std::vector<long> sample_calls;      // per rank
};

struct PlanOutcome {
  bool success = false;
  std::string stage;  // failing stage: "input", "sampler", "optimize"
  std::string message;
  Trajectory traj;
  std::vector<Path> samples;  // world-frame sampler output, boundary rows pinned
  ParallelResult backend;
  PlanTimings timings;
};

/// Sampling frontend followed by pruning, initialization and the parallel
/// optimizer. Never throws for planning failures; they are reported by stage.
PlanOutcome plan(const PlannerPipeline& p, const RobotState& start, const RobotState& goal);

/// Collision spheres of every path state plus interpolated states, so no
/// sphere center moves more than half a voxel between consecutive copies.
std::vector<Obstacle> swept_body(const Path& world, const RobotModel& model, double resolution = 0.05);

/// 1 - (1/N) sum_i Vol(S_i n U) / Vol(S_i u U), with U the union of all swept
/// bodies, on one voxel lattice of the given resolution.
double diversity_score(const std::vector<Path>& world_paths, const RobotModel& model, double resolution = 0.05);

struct SuiteSpec {
  ScenePreset preset = ScenePreset::kCuboids;
  double density = 0.2;
  int n_tasks = 50;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SuiteSpec from_json(const nlohmann::json& j);
};
SuiteSpec load_suite(const std::string& path);

struct SuiteTask {
  int index = 0;
  std::uint64_t scene_seed = 0;
  PlanningTask task;
};

/// Scene seeds count up from `spec.seed`; seeds without valid boundary states
/// are skipped, so the suite always holds `n_tasks` tasks.
std::vector<SuiteTask> make_suite(const SuiteSpec& spec, const RobotModel& model);

enum class TimingMode { kWall, kIterations };
TimingMode parse_timing(const std::string& name);

struct TaskMetrics {
  int task = 0;
  bool success = false;
  double frontend = 0.0, backend = 0.0, tp = 0.0;  // ms, or cost units
  double td = 0.0;                                  // trajectory duration, s
  double ds = 0.0;
  int winner = -1;
  bool sampled = false;  // the frontend produced paths
  std::string failure;
};

struct EvalReport {
  std::string pipeline;
  int n_samples = 0;
  std::vector<TaskMetrics> tasks;
  double sr = 0.0;       // percent
  double mean_tp = 0.0;  // over all tasks
  double mean_frontend = 0.0;
  double mean_td = 0.0;  // over successes
  double mean_ds = 0.0;  // over tasks with samples
  double pr = 0.0;       // mean T.D. ratio to the classical baseline over tasks both solved
  int pr_pairs = 0;
  std::string error;     // missing artifacts
};

struct SweepRow {
  std::string pipeline;
  int n = 0;
  double sr = 0.0, mean_ds = 0.0, mean_tp = 0.0, mean_frontend = 0.0;
};

struct EvalConfig {
  SuiteSpec suite;
  std::vector<SamplerKind> pipelines{SamplerKind::kPtdm};
  int n_samples = 8;
  std::vector<int> sweep{1, 2, 4, 8};
  TimingMode timing = TimingMode::kWall;
  std::uint64_t seed = 0;
  int workers = 0;  // task pool; 0 uses worker_count()
  int ddim_steps = 2;
  int n_points = 512;
  long rrt_iterations = 20000;
  OptConfig opt;
  double resolution = 0.05;
  bool verbose = false;
};

struct Evaluation {
  TimingMode timing = TimingMode::kWall;
  EvalReport baseline;  // classical baseline
  std::vector<EvalReport> reports;
  std::vector<SweepRow> sweep;
  /// Successful trajectories keyed by pipeline, parallel to the suite.
  std::vector<std::pair<std::string, std::vector<Trajectory>>> trajectories;
};

/// Runs the classical baseline plus every requested pipeline on the suite.
/// Each learned pipeline samples max(sweep, n_samples) paths per task once;
/// smaller sample counts are read off as prefixes, which is exact because
/// sampling and early termination are both rank-ordered.
Evaluation evaluate(const EvalConfig& config, const RobotModel& model, Network<float>* net,
                    const PrimitiveLibrary* library, const NoiseSchedule& schedule);

/// report.csv, tasks.csv, ds_vs_n.csv, tp_vs_n.csv, plots/*.svg and
/// trajectories/<pipeline>_<task>.json for every success.
void write_report(const Evaluation& e, const std::string& dir);

}  // namespace momaplan
