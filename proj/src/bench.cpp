#include "momaplan/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <thread>

#include "momaplan/collision.hpp"

namespace momaplan {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void pin_row(Eigen::MatrixXd& m, int row, const RobotState& s) {
  m(row, 0) = s.x;
  m(row, 1) = s.y;
  m(row, 2) = std::cos(s.theta);
  m(row, 3) = std::sin(s.theta);
  for (int j = 0; j < s.q.size(); ++j) m(row, 4 + j) = s.q[j];
}

std::string count_statuses(const std::vector<OptStatus>& st) {
  int ok = 0, failed = 0, diverged = 0, cancelled = 0;
  for (auto s : st) {
    ok += s == OptStatus::kSuccess;
    failed += s == OptStatus::kFailed;
    diverged += s == OptStatus::kDiverged;
    cancelled += s == OptStatus::kCancelled;
  }
  return std::to_string(st.size()) + " ranks: " + std::to_string(ok) + " converged without validating, " +
         std::to_string(failed) + " failed, " + std::to_string(diverged) + " diverged, " + std::to_string(cancelled) +
         " cancelled";
}

}  // namespace

SamplerKind parse_sampler(const std::string& name) {
  if (name == "ptdm") return SamplerKind::kPtdm;
  if (name == "vanilla") return SamplerKind::kVanilla;
  if (name == "classical") return SamplerKind::kClassical;
  throw std::invalid_argument("unknown pipeline '" + name + "' (ptdm, vanilla, classical)");
}

std::string sampler_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::kPtdm: return "ptdm";
    case SamplerKind::kVanilla: return "vanilla";
    case SamplerKind::kClassical: return "classical";
  }
  return "?";
}

void PlannerPipeline::check() const {
  if (!scene || !model) throw std::invalid_argument("pipeline needs a scene and a robot model");
  if (n_samples < 1) throw std::invalid_argument("pipeline needs at least one sample");
  if (kind == SamplerKind::kClassical) return;
  if (!net) throw std::invalid_argument(sampler_name(kind) + " pipeline is missing network weights");
  if (net->config().n_joints != model->n_joints) throw std::invalid_argument("network and robot joint counts differ");
  if (kind == SamplerKind::kPtdm) {
    if (!library) throw std::invalid_argument("ptdm pipeline is missing the primitive library");
    if (library->size() != net->config().n_primitives)
      throw std::invalid_argument("library size does not match the network head");
  }
  if (schedule.t_max < 1) throw std::invalid_argument("pipeline has no noise schedule");
}

PlanOutcome plan(const PlannerPipeline& p, const RobotState& start, const RobotState& goal) {
  PlanOutcome out;
  try {
    p.check();
  } catch (const std::exception& e) {
    out.stage = "input";
    out.message = e.what();
    return out;
  }
  const Scene& scene = *p.scene;
  const RobotModel& model = *p.model;
  std::vector<Trajectory> seeds;
  std::vector<double> prep_seconds;

  const auto f0 = Clock::now();
  if (p.kind == SamplerKind::kClassical) {
    PlanQuery q;
    q.scene = &scene;
    q.model = &model;
    q.start = start;
    q.goal = goal;
    q.time_budget = p.rrt_budget;
    q.max_iterations = p.rrt_iterations;
    q.seed = derive_seed(p.seed, 1);
    PlanResult r;
    try {
      r = rrt_connect(q);
    } catch (const std::exception& e) {
      out.stage = "input";
      out.message = e.what();
      return out;
    }
    out.timings.frontend_cost = r.iterations;
    if (!r.success) {
      out.timings.frontend = since(f0);
      out.timings.total = out.timings.frontend;
      out.stage = "sampler";
      out.message = "rrt-connect found no path in " + std::to_string(r.iterations) + " iterations";
      return out;
    }
    const WaypointPath pruned = prune(r.path, scene, model, derive_seed(p.seed, 2));
    out.samples.push_back(path_from_states(pruned));
    out.timings.frontend = since(f0);
    out.timings.frontend_shared = out.timings.frontend;
    out.timings.sample_seconds = {0.0};
    out.timings.sample_calls = {r.iterations};
    const auto b0 = Clock::now();
    seeds.push_back(init_from_path(out.samples.back(), model, p.pieces));
    prep_seconds.push_back(since(b0));
  } else {
    try {
      const TaskFrame frame = task_frame(start, goal);
      Eigen::MatrixX3d pts = sample_surface(scene, p.n_points, derive_seed(p.seed, 0x9c1d)).points;
      for (int i = 0; i < pts.rows(); ++i) pts.row(i) = frame.to_task(Vec3(pts.row(i).transpose())).transpose();
      const PreparedInput input = prepare_input(pts, frame.to_task(start), frame.to_task(goal), model, p.net->config());
      SampleRequest req;
      req.n_samples = p.n_samples;
      req.ddim_steps = p.ddim_steps;
      req.seed = p.seed;
      const SampleResult s = p.kind == SamplerKind::kPtdm ? sample_ptdm(*p.net, input, *p.library, p.schedule, req)
                                                          : sample_vanilla_ddpm(*p.net, input, p.schedule, req);
      const long per_rank = s.denoiser_calls / static_cast<long>(s.features.size());
      for (const auto& f : s.features) {
        Path w = from_task_frame(path_from_features(f, model, Frame::kTask), frame);
        // boundary states are given, not sampled
        pin_row(w.states, 0, start);
        pin_row(w.states, w.length() - 1, goal);
        out.samples.push_back(std::move(w));
        out.timings.sample_calls.push_back(per_rank);
      }
      out.timings.sample_seconds = s.sample_seconds;
      out.timings.frontend_cost = s.denoiser_calls;
    } catch (const std::exception& e) {
      out.timings.frontend = since(f0);
      out.timings.total = out.timings.frontend;
      out.stage = "sampler";
      out.message = e.what();
      return out;
    }
    out.timings.frontend = since(f0);
    double sampled = 0.0;
    for (double t : out.timings.sample_seconds) sampled += t;
    out.timings.frontend_shared = std::max(0.0, out.timings.frontend - sampled);
    for (std::size_t r = 0; r < out.samples.size(); ++r) {
      const auto b0 = Clock::now();
      const WaypointPath pruned = prune(path_states(out.samples[r]), scene, model, derive_seed(p.seed, 0x7a00 + r));
      seeds.push_back(init_from_path(path_from_states(pruned), model, p.pieces));
      prep_seconds.push_back(since(b0));
    }
  }

  const auto b0 = Clock::now();
  OptProblem prob;
  prob.scene = &scene;
  prob.model = &model;
  prob.start = start;
  prob.goal = goal;
  prob.config = p.opt;
  out.backend = optimize_parallel(prob, seeds, p.opt_workers);
  // per-rank backend time includes that rank's pruning and initialization
  for (std::size_t r = 0; r < prep_seconds.size(); ++r) out.backend.rank_seconds[r] += prep_seconds[r];
  out.timings.backend = since(b0);
  for (double t : prep_seconds) out.timings.backend += t;
  out.timings.backend_cost = out.backend.total_iterations;
  out.timings.total = out.timings.frontend + out.timings.backend;
  if (!out.backend.success) {
    out.stage = "optimize";
    out.message = "no validated trajectory; " + count_statuses(out.backend.statuses);
    return out;
  }
  out.success = true;
  out.traj = out.backend.best.traj;
  return out;
}

std::vector<Obstacle> swept_body(const Path& world, const RobotModel& model, double resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("swept_body: resolution must be > 0");
  const WaypointPath w = path_states(world);
  std::vector<Obstacle> spheres;
  auto add = [&](const CollisionPoints& c) {
    for (int k = 0; k < c.centers.rows(); ++k) spheres.push_back(Obstacle::sphere(c.centers.row(k).transpose(), c.radii[k]));
  };
  if (w.empty()) return spheres;
  CollisionPoints prev = collision_points(model, w.front());
  add(prev);
  for (std::size_t i = 1; i < w.size(); ++i) {
    const CollisionPoints next = collision_points(model, w[i]);
    const double move = (next.centers - prev.centers).rowwise().norm().maxCoeff();
    const int steps = std::max(1, static_cast<int>(std::ceil(move / (0.5 * resolution))));
    for (int k = 1; k < steps; ++k) add(collision_points(model, interpolate(w[i - 1], w[i], static_cast<double>(k) / steps)));
    add(next);
    prev = next;
  }
  return spheres;
}

namespace {

// Swept bodies rasterized on one shared lattice box.
struct SweptGrids {
  std::vector<VoxelGrid> grids;
};

SweptGrids rasterize(const std::vector<Path>& paths, const RobotModel& model, double resolution) {
  std::vector<std::vector<Obstacle>> bodies;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : paths) {
    bodies.push_back(swept_body(p, model, resolution));
    for (const auto& s : bodies.back()) {
      Vec3 a, b;
      s.aabb(a, b);
      lo = lo.cwiseMin(a);
      hi = hi.cwiseMax(b);
    }
  }
  SweptGrids g;
  if (!std::isfinite(lo.x())) lo = hi = Vec3::Zero();
  const VoxelGrid empty = empty_grid(lo, hi, resolution);
  for (const auto& b : bodies) {
    g.grids.push_back(empty);
    voxelize_into(b, g.grids.back());
  }
  return g;
}

// Diversity of the first n bodies.
double prefix_diversity(const SweptGrids& g, int n) {
  if (n < 1 || n > static_cast<int>(g.grids.size())) throw std::invalid_argument("diversity: bad sample count");
  const std::size_t cells = g.grids.front().occupancy.size();
  std::vector<std::uint8_t> uni(cells, 0);
  for (int i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cells; ++c) uni[c] |= g.grids[i].occupancy[c];
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    std::int64_t inter = 0, join = 0;
    const auto& occ = g.grids[i].occupancy;
    for (std::size_t c = 0; c < cells; ++c) {
      inter += occ[c] && uni[c];
      join += occ[c] || uni[c];
    }
    sum += join > 0 ? static_cast<double>(inter) / static_cast<double>(join) : 1.0;
  }
  return 1.0 - sum / n;
}

}  // namespace

double diversity_score(const std::vector<Path>& world_paths, const RobotModel& model, double resolution) {
  if (world_paths.empty()) throw std::invalid_argument("diversity_score needs at least one path");
  return prefix_diversity(rasterize(world_paths, model, resolution), static_cast<int>(world_paths.size()));
}

nlohmann::json SuiteSpec::to_json() const {
  return {{"preset", preset_name(preset)}, {"density", density}, {"n_tasks", n_tasks}, {"seed", seed}};
}

SuiteSpec SuiteSpec::from_json(const nlohmann::json& j) {
  SuiteSpec s;
  s.preset = parse_preset(j.value("preset", std::string("cuboids")));
  s.density = j.value("density", s.density);
  s.n_tasks = j.value("n_tasks", s.n_tasks);
  s.seed = j.value("seed", s.seed);
  if (s.n_tasks < 1) throw std::invalid_argument("suite needs n_tasks >= 1");
  if (!(s.density >= 0.0)) throw std::invalid_argument("suite density must be >= 0");
  return s;
}

SuiteSpec load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open suite file " + path);
  return SuiteSpec::from_json(nlohmann::json::parse(in));
}

std::vector<SuiteTask> make_suite(const SuiteSpec& spec, const RobotModel& model) {
  std::vector<SuiteTask> tasks;
  for (std::uint64_t seed = spec.seed; static_cast<int>(tasks.size()) < spec.n_tasks; ++seed) {
    if (seed - spec.seed > static_cast<std::uint64_t>(10 * spec.n_tasks + 100))
      throw std::runtime_error("suite generation keeps failing to place boundary states");
    try {
      SuiteTask t{static_cast<int>(tasks.size()), seed, make_task(spec.preset, seed, spec.density, model)};
      tasks.push_back(std::move(t));
    } catch (const std::runtime_error&) {
      // scene without room for the robot at its start or goal; try the next seed
    }
  }
  return tasks;
}

TimingMode parse_timing(const std::string& name) {
  if (name == "wall") return TimingMode::kWall;
  if (name == "iterations") return TimingMode::kIterations;
  throw std::invalid_argument("unknown timing mode '" + name + "' (wall, iterations)");
}

namespace {

struct TaskRun {
  PlanOutcome outcome;
  SweptGrids grids;
};

// Metrics of the first n ranks of a run made with at least n samples.
TaskMetrics prefix_metrics(const TaskRun& run, int task, int n, TimingMode timing) {
  const PlanOutcome& o = run.outcome;
  TaskMetrics m;
  m.task = task;
  const bool wall = timing == TimingMode::kWall;
  if (o.samples.empty()) {
    m.failure = o.stage + ": " + o.message;
    m.frontend = wall ? 1e3 * o.timings.frontend : static_cast<double>(o.timings.frontend_cost);
    m.tp = m.frontend;
    return m;
  }
  n = std::min<int>(n, static_cast<int>(o.samples.size()));
  m.frontend = wall ? o.timings.frontend_shared : 0.0;
  for (int r = 0; r < n; ++r)
    m.frontend += wall ? o.timings.sample_seconds[r] : static_cast<double>(o.timings.sample_calls[r]);
  const int w = o.backend.winner;
  m.success = o.backend.success && w < n;
  const int last = m.success ? w : n - 1;
  for (int r = 0; r <= last; ++r)
    m.backend += wall ? o.backend.rank_seconds[r] : static_cast<double>(o.backend.rank_iterations[r]);
  if (wall) {
    m.frontend *= 1e3;
    m.backend *= 1e3;
  }
  m.tp = m.frontend + m.backend;
  if (m.success) {
    m.winner = w;
    m.td = o.traj.t_f();
  } else {
    m.failure = o.success ? "optimize: no validated trajectory among the first " + std::to_string(n) + " ranks"
                          : o.stage + ": " + o.message;
  }
  m.sampled = true;
  m.ds = prefix_diversity(run.grids, n);
  return m;
}

void aggregate(EvalReport& r, const EvalReport* baseline) {
  const int n = static_cast<int>(r.tasks.size());
  int succ = 0, with_ds = 0;
  double tp = 0.0, fe = 0.0, td = 0.0, ds = 0.0;
  for (const auto& t : r.tasks) {
    tp += t.tp;
    fe += t.frontend;
    if (t.success) {
      ++succ;
      td += t.td;
    }
    if (t.sampled) {
      ds += t.ds;
      ++with_ds;
    }
  }
  r.sr = n ? 100.0 * succ / n : 0.0;
  r.mean_tp = n ? tp / n : 0.0;
  r.mean_frontend = n ? fe / n : 0.0;
  r.mean_td = succ ? td / succ : 0.0;
  r.mean_ds = with_ds ? ds / with_ds : 0.0;
  r.pr = 0.0;
  r.pr_pairs = 0;
  if (baseline) {
    double sum = 0.0;
    for (int i = 0; i < n && i < static_cast<int>(baseline->tasks.size()); ++i) {
      const auto& a = r.tasks[i];
      const auto& b = baseline->tasks[i];
      if (a.success && b.success && b.td > 0.0) {
        sum += a.td / b.td;
        ++r.pr_pairs;
      }
    }
    r.pr = r.pr_pairs ? sum / r.pr_pairs : 0.0;
  }
}

}  // namespace

Evaluation evaluate(const EvalConfig& cfg, const RobotModel& model, Network<float>* net, const PrimitiveLibrary* library,
                    const NoiseSchedule& schedule) {
  if (cfg.n_samples < 1) throw std::invalid_argument("evaluate needs n_samples >= 1");
  for (int n : cfg.sweep)
    if (n < 1) throw std::invalid_argument("sweep sample counts must be >= 1");
  const std::vector<SuiteTask> suite = make_suite(cfg.suite, model);
  const int n_tasks = static_cast<int>(suite.size());
  int n_max = cfg.n_samples;
  for (int n : cfg.sweep) n_max = std::max(n_max, n);

  Evaluation ev;
  ev.timing = cfg.timing;
  std::vector<SamplerKind> kinds;
  for (auto k : cfg.pipelines) {
    if (k == SamplerKind::kClassical) continue;  // always run as the baseline
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
  }

  auto make_pipeline = [&](SamplerKind kind, const SuiteTask& t, int n) {
    PlannerPipeline p;
    p.scene = &t.task.scene;
    p.model = &model;
    p.net = net;
    p.library = library;
    p.schedule = schedule;
    p.kind = kind;
    p.n_samples = n;
    p.ddim_steps = cfg.ddim_steps;
    p.n_points = cfg.n_points;
    p.rrt_iterations = cfg.rrt_iterations;
    p.opt = cfg.opt;
    p.opt_workers = 1;
    p.seed = derive_seed(cfg.seed, t.scene_seed);
    return p;
  };

  // artifacts are checked once per pipeline so a missing file yields one error
  std::vector<std::string> errors(kinds.size());
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    if (suite.empty()) break;
    try {
      make_pipeline(kinds[k], suite.front(), n_max).check();
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }

  std::vector<TaskRun> base_runs(n_tasks);
  std::vector<std::vector<TaskRun>> runs(kinds.size(), std::vector<TaskRun>(n_tasks));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) {
      const SuiteTask& t = suite[i];
      base_runs[i].outcome = plan(make_pipeline(SamplerKind::kClassical, t, 1), t.task.start, t.task.goal);
      base_runs[i].grids = rasterize(base_runs[i].outcome.samples, model, cfg.resolution);
      for (std::size_t k = 0; k < kinds.size(); ++k) {
        if (!errors[k].empty()) continue;
        TaskRun& r = runs[k][i];
        r.outcome = plan(make_pipeline(kinds[k], t, n_max), t.task.start, t.task.goal);
        r.grids = rasterize(r.outcome.samples, model, cfg.resolution);
      }
      if (cfg.verbose) {
        std::string line = "task " + std::to_string(i) + ": classical " + (base_runs[i].outcome.success ? "ok" : "fail");
        for (std::size_t k = 0; k < kinds.size(); ++k)
          if (errors[k].empty()) line += ", " + sampler_name(kinds[k]) + (runs[k][i].outcome.success ? " ok" : " fail");
        std::cerr << line << "\n";
      }
    }
  };
  {
    const int workers = std::clamp(cfg.workers > 0 ? cfg.workers : worker_count(), 1, std::max(1, n_tasks));
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }

  ev.baseline.pipeline = "classical";
  ev.baseline.n_samples = 1;
  std::vector<Trajectory> base_traj(n_tasks);
  for (int i = 0; i < n_tasks; ++i) {
    ev.baseline.tasks.push_back(prefix_metrics(base_runs[i], i, 1, cfg.timing));
    if (base_runs[i].outcome.success) base_traj[i] = base_runs[i].outcome.traj;
  }
  aggregate(ev.baseline, nullptr);
  ev.trajectories.emplace_back("classical", std::move(base_traj));

  for (std::size_t k = 0; k < kinds.size(); ++k) {
    EvalReport rep;
    rep.pipeline = sampler_name(kinds[k]);
    rep.n_samples = cfg.n_samples;
    rep.error = errors[k];
    if (rep.error.empty()) {
      std::vector<Trajectory> trajs(n_tasks);
      for (int i = 0; i < n_tasks; ++i) {
        rep.tasks.push_back(prefix_metrics(runs[k][i], i, cfg.n_samples, cfg.timing));
        if (rep.tasks.back().success) trajs[i] = runs[k][i].outcome.traj;
      }
      aggregate(rep, &ev.baseline);
      ev.trajectories.emplace_back(rep.pipeline, std::move(trajs));
      for (int n : cfg.sweep) {
        EvalReport s;
        for (int i = 0; i < n_tasks; ++i) s.tasks.push_back(prefix_metrics(runs[k][i], i, n, cfg.timing));
        aggregate(s, nullptr);
        ev.sweep.push_back({rep.pipeline, n, s.sr, s.mean_ds, s.mean_tp, s.mean_frontend});
      }
    }
    ev.reports.push_back(std::move(rep));
  }
  return ev;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

void write_line_chart(const std::string& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series) {
  const double W = 640, H = 420, L = 70, R = 150, T = 40, B = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = 0.0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0, y1 = 1.0;
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
        << "\" stroke=\"#ddd\"/>\n";
  }
  std::vector<double> ticks;
  for (const auto& s : series)
    for (double x : s.x)
      if (std::find(ticks.begin(), ticks.end(), x) == ticks.end()) ticks.push_back(x);
  for (double xv : ticks)
    out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  out << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 5];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    out << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    const double ly = T + 10 + 20 * static_cast<double>(k);
    out << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 40 << "\" y2=\"" << ly
        << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 46 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void write_report(const Evaluation& e, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "plots");
  fs::create_directories(fs::path(dir) / "trajectories");
  const std::string unit = e.timing == TimingMode::kWall ? "ms" : "iterations";

  std::vector<const EvalReport*> all{&e.baseline};
  for (const auto& r : e.reports) all.push_back(&r);
  {
    std::ofstream out((fs::path(dir) / "report.csv").string());
    out << "pipeline,n_samples,tasks,sr_percent,mean_tp,mean_frontend,mean_td_s,mean_ds,pr_vs_classical_baseline,"
           "pr_pairs,tp_unit,error\n";
    for (const auto* r : all) {
      const bool base = r == &e.baseline;
      out << r->pipeline << "," << r->n_samples << "," << r->tasks.size() << "," << num(r->sr) << "," << num(r->mean_tp)
          << "," << num(r->mean_frontend) << "," << num(r->mean_td) << "," << num(r->mean_ds) << ","
          << (base ? std::string("1") : num(r->pr)) << "," << (base ? 0 : r->pr_pairs) << "," << unit << ","
          << csv_field(r->error) << "\n";
    }
  }
  {
    std::ofstream out((fs::path(dir) / "tasks.csv").string());
    out << "pipeline,task,success,frontend,backend,tp,td_s,ds,winner,failure\n";
    for (const auto* r : all)
      for (const auto& t : r->tasks)
        out << r->pipeline << "," << t.task << "," << (t.success ? 1 : 0) << "," << num(t.frontend) << ","
            << num(t.backend) << "," << num(t.tp) << "," << num(t.td) << "," << num(t.ds) << "," << t.winner << ","
            << csv_field(t.failure) << "\n";
  }
  std::vector<Series> ds_series, tp_series;
  {
    std::ofstream ds((fs::path(dir) / "ds_vs_n.csv").string()), tp((fs::path(dir) / "tp_vs_n.csv").string());
    ds << "pipeline,n_samples,mean_ds\n";
    tp << "pipeline,n_samples,mean_tp,mean_frontend,sr_percent,tp_unit\n";
    for (const auto& s : e.sweep) {
      ds << s.pipeline << "," << s.n << "," << num(s.mean_ds) << "\n";
      tp << s.pipeline << "," << s.n << "," << num(s.mean_tp) << "," << num(s.mean_frontend) << "," << num(s.sr) << ","
         << unit << "\n";
      if (ds_series.empty() || ds_series.back().name != s.pipeline) {
        ds_series.push_back({s.pipeline, {}, {}});
        tp_series.push_back({s.pipeline, {}, {}});
      }
      ds_series.back().x.push_back(s.n);
      ds_series.back().y.push_back(s.mean_ds);
      tp_series.back().x.push_back(s.n);
      tp_series.back().y.push_back(s.mean_tp);
    }
  }
  write_line_chart((fs::path(dir) / "plots" / "ds_vs_n.svg").string(), "Diversity score vs sample count",
                   "samples N", "mean D.S.", ds_series);
  write_line_chart((fs::path(dir) / "plots" / "tp_vs_n.svg").string(), "Planning time vs sample count", "samples N",
                   "mean T.P. (" + unit + ")", tp_series);
  std::vector<Series> sr;
  for (const auto& s : e.sweep) {
    if (sr.empty() || sr.back().name != s.pipeline) sr.push_back({s.pipeline, {}, {}});
    sr.back().x.push_back(s.n);
    sr.back().y.push_back(s.sr);
  }
  write_line_chart((fs::path(dir) / "plots" / "sr_vs_n.svg").string(), "Success rate vs sample count", "samples N",
                   "S.R. (%)", sr);
  for (const auto& [name, trajs] : e.trajectories) {
    const EvalReport* rep = nullptr;
    for (const auto* r : all)
      if (r->pipeline == name) rep = r;
    for (std::size_t i = 0; i < trajs.size(); ++i)
      if (rep && i < rep->tasks.size() && rep->tasks[i].success)
        save_trajectory(trajs[i], (fs::path(dir) / "trajectories" / (name + "_" + std::to_string(i) + ".json")).string());
  }
}

}  // namespace momaplan
