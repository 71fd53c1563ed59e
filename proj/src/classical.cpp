#include "momaplan/classical.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

#include "momaplan/collision.hpp"

namespace momaplan {

namespace {

struct Tree {
  std::vector<RobotState> nodes;
  std::vector<int> parent;

  int nearest(const RobotState& s) const {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = state_metric(nodes[i], s);
      if (d < bd) {
        bd = d;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

  int add(const RobotState& s, int par) {
    nodes.push_back(s);
    parent.push_back(par);
    return static_cast<int>(nodes.size()) - 1;
  }

  WaypointPath branch(int i) const {
    WaypointPath out;
    for (; i >= 0; i = parent[i]) out.push_back(nodes[i]);
    std::reverse(out.begin(), out.end());
    return out;
  }
};

enum class Extend { kTrapped, kAdvanced, kReached };

// Trajectory evaluation kept separate from the optimizer's.
struct Evaluator {
  const Trajectory& traj;
  std::vector<double> starts;

  explicit Evaluator(const Trajectory& t) : traj(t) {
    double acc = 0.0;
    for (double d : traj.durations) {
      starts.push_back(acc);
      acc += d;
    }
  }

  // values[ch][order] for order 0..2 at time t.
  void eval(double t, Eigen::MatrixXd& out) const {
    int k = static_cast<int>(std::upper_bound(starts.begin(), starts.end(), t) - starts.begin()) - 1;
    k = std::clamp(k, 0, traj.pieces() - 1);
    const double u = std::clamp(t - starts[k], 0.0, traj.durations[k]);
    const Eigen::MatrixXd& c = traj.coefficients[k];
    out.resize(c.rows(), 3);
    for (int ch = 0; ch < c.rows(); ++ch) {
      double p = 0.0, v = 0.0, a = 0.0;
      for (int d = 5; d >= 0; --d) p = p * u + c(ch, d);
      for (int d = 5; d >= 1; --d) v = v * u + d * c(ch, d);
      for (int d = 5; d >= 2; --d) a = a * u + d * (d - 1) * c(ch, d);
      out(ch, 0) = p;
      out(ch, 1) = v;
      out(ch, 2) = a;
    }
  }
};

Validation fail(const std::string& channel, double time, double value, const std::string& message) {
  Validation v;
  v.ok = false;
  v.channel = channel;
  v.time = time;
  v.value = value;
  v.message = message;
  return v;
}

bool joints_ok(const RobotModel& model, const Eigen::VectorXd& q, int* bad) {
  for (int j = 0; j < model.n_joints; ++j) {
    if (q[j] < model.q_min[j] - 1e-12 || q[j] > model.q_max[j] + 1e-12) {
      *bad = j;
      return false;
    }
  }
  return true;
}

}  // namespace

PlanResult rrt_connect(const PlanQuery& q, const RrtConfig& config) {
  if (!q.scene || !q.model) throw std::invalid_argument("plan query needs a scene and a model");
  const auto t0 = std::chrono::steady_clock::now();
  const Scene& scene = *q.scene;
  const RobotModel& model = *q.model;
  PlanResult res;
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  if (state_metric(q.start, q.goal) == 0.0) {
    res.success = true;
    res.path = {q.start};
    res.start_nodes = res.goal_nodes = 1;
    res.seconds = elapsed();
    return res;
  }
  if (!state_valid(scene, model, q.start)) throw std::invalid_argument("start state is in collision or out of limits");
  if (!state_valid(scene, model, q.goal)) throw std::invalid_argument("goal state is in collision or out of limits");

  Rng rng(derive_seed(q.seed, 0x447));
  const RoomBounds& room = scene.room();
  const double pad = model.base_radius;
  const double x0 = room.min.x() + pad, x1 = room.max.x() - pad;
  const double y0 = room.min.y() + pad, y1 = room.max.y() - pad;

  Tree ta, tb;
  ta.add(q.start, -1);
  tb.add(q.goal, -1);
  bool a_is_start = true;

  auto extend = [&](Tree& t, const RobotState& target, int& idx) {
    const int near = t.nearest(target);
    const RobotState& from = t.nodes[near];
    const double d = state_metric(from, target);
    RobotState next = target;
    bool reach = true;
    if (d > config.extend) {
      next = interpolate(from, target, config.extend / d);
      reach = false;
    }
    if (!within_limits(model, next)) return Extend::kTrapped;
    if (!segment_free(scene, model, from, next, config.pos_step, config.rot_step)) return Extend::kTrapped;
    idx = t.add(next, near);
    return reach ? Extend::kReached : Extend::kAdvanced;
  };

  for (;;) {
    if (q.max_iterations > 0 ? res.iterations >= q.max_iterations : elapsed() >= q.time_budget) break;
    ++res.iterations;
    RobotState rand;
    rand.x = uniform(rng, x0, x1);
    rand.y = uniform(rng, y0, y1);
    rand.theta = uniform(rng, -kPi, kPi);
    rand.q.resize(model.n_joints);
    for (int j = 0; j < model.n_joints; ++j) rand.q[j] = uniform(rng, model.q_min[j], model.q_max[j]);

    int ia = -1;
    if (extend(ta, rand, ia) != Extend::kTrapped) {
      const RobotState target = ta.nodes[ia];
      int ib = -1;
      Extend e = Extend::kAdvanced;
      while (e == Extend::kAdvanced) e = extend(tb, target, ib);
      if (e == Extend::kReached) {
        WaypointPath pa = ta.branch(ia), pb = tb.branch(ib);
        std::reverse(pb.begin(), pb.end());
        // the connection state appears at the end of pa and the start of pb
        pa.insert(pa.end(), pb.begin() + 1, pb.end());
        if (!a_is_start) std::reverse(pa.begin(), pa.end());
        res.path = std::move(pa);
        res.success = true;
        break;
      }
    }
    std::swap(ta, tb);
    a_is_start = !a_is_start;
  }
  res.start_nodes = static_cast<int>((a_is_start ? ta : tb).nodes.size());
  res.goal_nodes = static_cast<int>((a_is_start ? tb : ta).nodes.size());
  res.seconds = elapsed();
  return res;
}

Validation validate_trajectory(const Trajectory& traj, const Scene& scene, const RobotModel& model,
                               const RobotState* goal, double dt) {
  traj.check();
  if (traj.n_joints != model.n_joints) return fail("joint_limit", 0.0, 0.0, "joint count mismatch");
  const KinodynamicLimits& lim = model.limits;
  const Evaluator ev(traj);
  const double tf = traj.t_f();
  const int steps = std::max(1, static_cast<int>(std::ceil(tf / dt - 1e-9)));
  const int N = model.n_joints;
  Eigen::MatrixXd cur, mid;
  Vec2 pos = traj.start_xy;
  auto speed_dir = [](const Eigen::MatrixXd& m) {
    return Vec2(m(0, 1) * std::cos(m(1, 0)), m(0, 1) * std::sin(m(1, 0)));
  };
  ev.eval(0.0, cur);
  Vec2 f_prev = speed_dir(cur);
  double t_prev = 0.0;
  const double rel = 1.0 + 1e-9;
  for (int i = 0; i <= steps; ++i) {
    const double t = (i == steps) ? tf : i * dt;
    if (i > 0) {
      ev.eval(0.5 * (t_prev + t), mid);
      ev.eval(t, cur);
      const Vec2 f_cur = speed_dir(cur);
      pos += (t - t_prev) / 6.0 * (f_prev + 4.0 * speed_dir(mid) + f_cur);
      f_prev = f_cur;
      t_prev = t;
    }
    RobotState s;
    s.x = pos.x();
    s.y = pos.y();
    s.theta = wrap_angle(cur(1, 0));
    s.q = cur.col(0).tail(N);

    const double checks[4][2] = {{cur(0, 1), lim.v_max}, {cur(1, 1), lim.omega_max},
                                 {cur(0, 2), lim.a_max}, {cur(1, 2), lim.alpha_max}};
    const char* names[4] = {"v", "omega", "a", "alpha"};
    for (int c = 0; c < 4; ++c) {
      if (std::abs(checks[c][0]) > checks[c][1] * rel)
        return fail(names[c], t, checks[c][0], std::string(names[c]) + " limit exceeded");
    }
    for (int j = 0; j < N; ++j) {
      if (std::abs(cur(2 + j, 1)) > lim.qd_max * rel)
        return fail("qd", t, cur(2 + j, 1), "joint " + std::to_string(j) + " velocity limit exceeded");
      if (std::abs(cur(2 + j, 2)) > lim.qdd_max * rel)
        return fail("qdd", t, cur(2 + j, 2), "joint " + std::to_string(j) + " acceleration limit exceeded");
    }
    int bad = -1;
    if (!joints_ok(model, s.q, &bad))
      return fail("joint_limit", t, s.q[bad], "joint " + std::to_string(bad) + " outside its range");
    const double c = state_clearance(scene, model, s);
    if (!(c > 0.0)) return fail("clearance", t, c, "collision sphere touches an obstacle");
  }
  if (goal) {
    const double dp = (pos - goal->xy()).norm();
    if (dp > 1e-3) return fail("goal", tf, dp, "final base position misses the goal");
    const double dth = std::abs(shortest_arc(cur(1, 0), goal->theta));
    if (dth > 1e-3) return fail("goal", tf, dth, "final heading misses the goal");
    const double dq = N ? (cur.col(0).tail(N) - goal->q).cwiseAbs().maxCoeff() : 0.0;
    if (dq > 1e-6) return fail("goal", tf, dq, "final joints miss the goal");
  }
  return {};
}

Validation validate_path(const WaypointPath& w, const Scene& scene, const RobotModel& model) {
  if (w.empty()) return fail("clearance", 0.0, 0.0, "empty path");
  auto check = [&](const RobotState& s, double param) -> Validation {
    int bad = -1;
    if (!joints_ok(model, s.q, &bad))
      return fail("joint_limit", param, s.q[bad], "joint " + std::to_string(bad) + " outside its range");
    const double c = state_clearance(scene, model, s);
    if (!(c > 0.0)) return fail("clearance", param, c, "collision sphere touches an obstacle");
    return {};
  };
  if (Validation v = check(w.front(), 0.0); !v.ok) return v;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const int n = segment_steps(w[i - 1], w[i]);
    for (int k = 1; k <= n; ++k) {
      const double u = static_cast<double>(k) / n;
      if (Validation v = check(interpolate(w[i - 1], w[i], u), i - 1 + u); !v.ok) return v;
    }
  }
  return {};
}

RobotState random_valid_state(const Scene& scene, const RobotModel& model, const Vec2& xy, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    RobotState s;
    s.x = xy.x();
    s.y = xy.y();
    s.theta = uniform(rng, -kPi, kPi);
    s.q = sample_joints(model, rng, 0.5);
    if (state_valid(scene, model, s, 0.05)) return s;
  }
  throw std::runtime_error("no valid boundary state found");
}

PlanningTask make_task(ScenePreset preset, std::uint64_t scene_seed, double density, const RobotModel& model) {
  PlanningTask t{generate_scene(preset, scene_seed, density), {}, {}};
  Rng rng(derive_seed(scene_seed, 0xc011));
  t.start = random_valid_state(t.scene, model, t.scene.start_xy(), rng);
  t.goal = random_valid_state(t.scene, model, t.scene.goal_xy(), rng);
  return t;
}

namespace {

struct TaskOutcome {
  bool recorded = false;
  bool planned = false, optimized = false, validated = false;
  std::string failure;
  DatasetRecord record;
  Scene scene;
};

// Relative spread of consecutive base steps.
double unit_step_spread(const Path& p) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (int k = 1; k < p.length(); ++k) {
    const double d = (p.states.row(k).head<2>() - p.states.row(k - 1).head<2>()).norm();
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return hi > 0.0 ? (hi - lo) / hi : 0.0;
}

TaskOutcome collect_one(const CollectConfig& cfg, const RobotModel& model, int i) {
  TaskOutcome out;
  const std::uint64_t scene_seed = cfg.seed + static_cast<std::uint64_t>(i);
  RobotState start, goal;
  try {
    PlanningTask t = make_task(cfg.preset, scene_seed, cfg.density, model);
    out.scene = std::move(t.scene);
    start = t.start;
    goal = t.goal;
  } catch (const std::exception& e) {
    out.failure = "task " + std::to_string(i) + ": " + e.what();
    return out;
  }
  const Scene& scene = out.scene;
  PlanQuery q;
  q.scene = &scene;
  q.model = &model;
  q.start = start;
  q.goal = goal;
  q.time_budget = cfg.budget;
  q.max_iterations = cfg.max_iterations;
  q.seed = derive_seed(scene_seed, 1);
  const PlanResult plan = rrt_connect(q);
  if (!plan.success) {
    out.failure = "task " + std::to_string(i) + ": planner found no path";
    return out;
  }
  out.planned = true;
  const WaypointPath pruned = prune(plan.path, scene, model, derive_seed(scene_seed, 2));
  OptProblem prob;
  prob.scene = &scene;
  prob.model = &model;
  prob.start = start;
  prob.goal = goal;
  const Trajectory init = init_from_path(path_from_states(pruned), model, cfg.pieces);
  const OptResult opt = optimize(prob, init);
  if (opt.status != OptStatus::kSuccess) {
    out.failure = "task " + std::to_string(i) + ": optimizer " + status_name(opt.status);
    return out;
  }
  out.optimized = true;
  if (const Validation v = validate_trajectory(opt.traj, scene, model, &goal); !v.ok) {
    out.failure = "task " + std::to_string(i) + ": trajectory rejected (" + v.channel + ")";
    return out;
  }
  out.validated = true;
  const Path world = resample_trajectory(opt.traj, cfg.n_tau);
  if (unit_step_spread(world) > 1e-9) {
    out.failure = "task " + std::to_string(i) + ": base path doubles back, no equal-chord resampling";
    return out;
  }
  if (const Validation v = validate_path(path_states(world), scene, model); !v.ok) {
    out.failure = "task " + std::to_string(i) + ": resampled path rejected (" + v.channel + ")";
    return out;
  }
  DatasetRecord r;
  r.path = to_task_frame(world, task_frame(start, goal));
  r.start = start;
  r.goal = goal;
  r.scene_ref = "scenes/scene_" + std::to_string(i) + ".json";
  quantize_record(r);
  out.record = std::move(r);
  out.recorded = true;
  return out;
}

}  // namespace

CollectStats collect_dataset(const CollectConfig& cfg, const RobotModel& model, const std::string& dir) {
  if (cfg.n_tasks <= 0) throw std::invalid_argument("collect_dataset needs n_tasks > 0");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "scenes");
  std::vector<TaskOutcome> outcomes(cfg.n_tasks);
  std::atomic<int> next{0};
  auto run = [&] {
    for (int i = next.fetch_add(1); i < cfg.n_tasks; i = next.fetch_add(1)) {
      try {
        outcomes[i] = collect_one(cfg, model, i);
      } catch (const std::exception& e) {
        outcomes[i].failure = "task " + std::to_string(i) + ": " + e.what();
      }
      if (cfg.verbose)
        std::cerr << "task " << i << (outcomes[i].recorded ? " recorded" : " failed: " + outcomes[i].failure) << "\n";
    }
  };
  const int workers = std::clamp(worker_count(), 1, cfg.n_tasks);
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
  }

  CollectStats stats;
  std::vector<DatasetRecord> records;
  for (int i = 0; i < cfg.n_tasks; ++i) {
    TaskOutcome& o = outcomes[i];
    ++stats.attempted;
    stats.planned += o.planned;
    stats.optimized += o.optimized;
    stats.validated += o.validated;
    if (!o.recorded) {
      stats.failures.push_back(o.failure);
      continue;
    }
    ++stats.recorded;
    save_scene(o.scene, (fs::path(dir) / o.record.scene_ref).string());
    records.push_back(std::move(o.record));
  }
  save_records((fs::path(dir) / "records.bin").string(), records);
  nlohmann::json manifest = {{"preset", preset_name(cfg.preset)},
                             {"density", cfg.density},
                             {"n_tasks", cfg.n_tasks},
                             {"seed", cfg.seed},
                             {"n_tau", cfg.n_tau},
                             {"recorded", stats.recorded},
                             {"planned", stats.planned},
                             {"optimized", stats.optimized},
                             {"validated", stats.validated},
                             {"failures", stats.failures},
                             {"robot", robot_to_json(model)}};
  std::ofstream((fs::path(dir) / "manifest.json").string()) << manifest.dump(1) << "\n";
  return stats;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.records = load_records((fs::path(dir) / "records.bin").string());
  std::map<std::string, Scene> cache;
  for (const auto& r : d.records) {
    auto it = cache.find(r.scene_ref);
    if (it == cache.end()) it = cache.emplace(r.scene_ref, load_scene((fs::path(dir) / r.scene_ref).string())).first;
    d.scenes.push_back(it->second);
  }
  return d;
}

}  // namespace momaplan
