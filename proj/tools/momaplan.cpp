#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "momaplan/bench.hpp"
#include "momaplan/classical.hpp"
#include "momaplan/collision.hpp"
#include "momaplan/primitive.hpp"
#include "momaplan/training.hpp"

using namespace momaplan;

namespace {

RobotModel robot_or_default(const std::string& path) {
  return path.empty() ? RobotModel::default_model() : load_robot(path);
}

// "x,y,theta,q1,...,qN"
RobotState parse_state(const std::string& text, const RobotModel& model) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (static_cast<int>(v.size()) != 3 + model.n_joints)
    throw std::invalid_argument("state '" + text + "' needs x,y,theta and " + std::to_string(model.n_joints) + " joints");
  RobotState s;
  s.x = v[0];
  s.y = v[1];
  s.theta = v[2];
  s.q = Eigen::Map<Eigen::VectorXd>(v.data() + 3, model.n_joints);
  return s;
}

NetConfig net_config(const std::string& name) {
  if (name == "toy") return NetConfig::toy();
  if (name == "default") return NetConfig{};
  std::ifstream in(name);
  if (!in) throw std::runtime_error("unknown network config '" + name + "' (toy, default, or a JSON file)");
  return NetConfig::from_json(nlohmann::json::parse(in));
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-body motion planning for a differential-drive mobile manipulator"};
  app.require_subcommand(1);
  std::string robot_path;
  auto add_robot = [&](CLI::App* c) { c->add_option("--robot", robot_path, "robot model JSON (default model when omitted)"); };

  // scene gen
  auto* scene = app.add_subcommand("scene", "scene utilities");
  scene->require_subcommand(1);
  auto* scene_gen = scene->add_subcommand("gen", "generate a procedural scene");
  std::string preset = "cuboids", out;
  double density = 0.2;
  std::uint64_t seed = 0;
  int cloud = 0;
  scene_gen->add_option("--preset", preset, "cuboids or mixed");
  scene_gen->add_option("--density", density, "obstacle density scale");
  scene_gen->add_option("--seed", seed);
  scene_gen->add_option("--cloud", cloud, "also write this many surface points as CSV next to the scene");
  scene_gen->add_option("--out", out, "scene JSON")->required();
  add_robot(scene_gen);

  // robot export
  auto* robot = app.add_subcommand("robot", "robot model utilities");
  robot->require_subcommand(1);
  auto* robot_export = robot->add_subcommand("export", "write the robot model as JSON");
  robot_export->add_option("--out", out, "robot model JSON")->required();
  add_robot(robot_export);

  // data collect
  auto* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  auto* collect = data->add_subcommand("collect", "plan, optimize and record truth paths");
  CollectConfig cc;
  std::string collect_preset = "cuboids";
  collect->add_option("--preset", collect_preset);
  collect->add_option("--density", cc.density);
  collect->add_option("--tasks,--n-tasks", cc.n_tasks);
  collect->add_option("--seed", cc.seed);
  collect->add_option("--budget", cc.budget, "planner seconds per task");
  collect->add_option("--iterations", cc.max_iterations, "planner iteration budget (overrides --budget)");
  collect->add_option("--n-tau", cc.n_tau);
  collect->add_flag("--verbose", cc.verbose);
  collect->add_option("--out", out, "dataset directory")->required();
  add_robot(collect);

  // primitives build
  auto* prims = app.add_subcommand("primitives", "motion primitive library");
  prims->require_subcommand(1);
  auto* build = prims->add_subcommand("build", "cluster dataset paths into primitives");
  std::string data_dir;
  ClusterConfig kc;
  build->add_option("--data", data_dir, "dataset directory")->required();
  build->add_option("--k", kc.k);
  build->add_option("--iters", kc.max_iters);
  build->add_flag("--base-only", kc.base_only);
  build->add_option("--seed", seed);
  build->add_option("--out", out, "library file")->required();
  add_robot(build);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the task encoder and denoiser");
  std::string lib_path, config_name = "toy", loss_csv;
  TrainConfig tc;
  int points = 512, t_trunc = 50;
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--lib", lib_path)->required();
  train_cmd->add_option("--config", config_name, "toy, default, or a JSON network config");
  train_cmd->add_option("--epochs", tc.epochs);
  train_cmd->add_option("--batch", tc.batch);
  train_cmd->add_option("--lr", tc.adam.lr);
  train_cmd->add_option("--vanilla-fraction", tc.vanilla_fraction);
  train_cmd->add_option("--points", points, "surface points per task");
  train_cmd->add_option("--t-trunc", t_trunc);
  train_cmd->add_option("--seed", tc.seed);
  train_cmd->add_option("--curves,--loss-csv", loss_csv, "per-epoch loss CSV");
  train_cmd->add_flag("--verbose", tc.verbose);
  train_cmd->add_option("--out", out, "weights file")->required();
  add_robot(train_cmd);

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "plan one task");
  std::string scene_path, weights_path, pipeline = "ptdm", start_text, goal_text;
  int samples = 8;
  long rrt_iterations = 20000;
  plan_cmd->add_option("--scene", scene_path)->required();
  plan_cmd->add_option("--pipeline", pipeline, "ptdm, vanilla or classical");
  plan_cmd->add_option("--weights", weights_path);
  plan_cmd->add_option("--lib", lib_path);
  plan_cmd->add_option("--samples", samples);
  plan_cmd->add_option("--start", start_text, "x,y,theta,q1..qN (random valid state at the scene start when omitted)");
  plan_cmd->add_option("--goal", goal_text, "x,y,theta,q1..qN (random valid state at the scene goal when omitted)");
  plan_cmd->add_option("--points", points);
  plan_cmd->add_option("--t-trunc", t_trunc);
  plan_cmd->add_option("--rrt-iterations", rrt_iterations);
  plan_cmd->add_option("--seed", seed);
  plan_cmd->add_option("--out", out, "trajectory JSON");
  add_robot(plan_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate pipelines on a task suite");
  std::string suite_path, timing = "wall";
  std::vector<std::string> pipelines{"ptdm"};
  EvalConfig ec;
  eval_cmd->add_option("--suite", suite_path, "suite JSON {preset, density, n_tasks, seed}")->required();
  eval_cmd->add_option("--pipeline", pipelines, "ptdm and/or vanilla; the classical baseline always runs")->delimiter(',');
  eval_cmd->add_option("--weights", weights_path);
  eval_cmd->add_option("--lib", lib_path);
  eval_cmd->add_option("--samples", ec.n_samples);
  eval_cmd->add_option("--sweep", ec.sweep, "sample counts for the D.S./T.P. tables")->delimiter(',');
  eval_cmd->add_option("--timing", timing, "wall or iterations");
  eval_cmd->add_option("--points", ec.n_points);
  eval_cmd->add_option("--t-trunc", t_trunc);
  eval_cmd->add_option("--rrt-iterations", ec.rrt_iterations);
  eval_cmd->add_option("--seed", ec.seed);
  eval_cmd->add_flag("--verbose", ec.verbose);
  eval_cmd->add_option("--out", out, "report directory")->required();
  add_robot(eval_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    const RobotModel model = robot_or_default(robot_path);

    if (scene_gen->parsed()) {
      const Scene s = generate_scene(parse_preset(preset), seed, density);
      save_scene(s, out);
      if (cloud > 0) {
        const PointCloud pc = sample_surface(s, cloud, derive_seed(seed, 0x9c1d));
        std::ofstream csv(out + ".points.csv");
        csv << "x,y,z\n";
        char buf[96];
        for (int i = 0; i < pc.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", pc.points(i, 0), pc.points(i, 1), pc.points(i, 2));
          csv << buf;
        }
      }
      std::cout << "wrote " << out << " (" << s.obstacles().size() << " obstacles)\n";
      return 0;
    }

    if (robot_export->parsed()) {
      save_robot(model, out);
      std::cout << "wrote " << out << " (" << model.n_joints << " joints)\n";
      return 0;
    }

    if (collect->parsed()) {
      cc.preset = parse_preset(collect_preset);
      const CollectStats st = collect_dataset(cc, model, out);
      std::cout << "recorded " << st.recorded << " of " << st.attempted << " tasks (planned " << st.planned
                << ", optimized " << st.optimized << ", validated " << st.validated << ")\n";
      return 0;
    }

    if (build->parsed()) {
      const Dataset d = load_dataset(data_dir);
      std::vector<Path> paths;
      for (const auto& r : d.records) paths.push_back(r.path);
      const PrimitiveLibrary lib = build_library(paths, model, kc, seed);
      save_library(lib, out);
      std::cout << "wrote " << lib.size() << " primitives from " << paths.size() << " paths, inertia " << lib.inertia
                << " after " << lib.iterations << " iterations\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      NetConfig cfg = net_config(config_name);
      const PrimitiveLibrary lib = load_library(lib_path);
      cfg.n_primitives = lib.size();
      cfg.n_joints = model.n_joints;
      cfg.n_tau = lib.n_tau;
      const Dataset d = load_dataset(data_dir);
      std::vector<TrainingSample> samples_set;
      for (std::size_t i = 0; i < d.records.size(); ++i)
        samples_set.push_back(make_training_sample(std::make_shared<const Scene>(d.scenes[i]), d.records[i], lib, model,
                                                   cfg, points, i));
      Network<float> net(cfg, tc.seed);
      const auto curve = train(net, samples_set, lib, build_schedule(cfg.t_max, t_trunc), model, tc);
      save_network(net, out);
      if (!loss_csv.empty()) write_loss_csv(curve, loss_csv);
      std::cout << "trained on " << samples_set.size() << " samples, loss " << curve.front().loss << " -> "
                << curve.back().loss << "\n";
      return 0;
    }

    std::optional<Network<float>> net;
    std::optional<PrimitiveLibrary> lib;
    if (!weights_path.empty()) net.emplace(load_network(weights_path));
    if (!lib_path.empty()) lib.emplace(load_library(lib_path));
    const int t_max = net ? net->config().t_max : 1200;

    if (plan_cmd->parsed()) {
      const Scene s = load_scene(scene_path);
      Rng rng(derive_seed(seed, 0xc011));
      const RobotState start =
          start_text.empty() ? random_valid_state(s, model, s.start_xy(), rng) : parse_state(start_text, model);
      const RobotState goal =
          goal_text.empty() ? random_valid_state(s, model, s.goal_xy(), rng) : parse_state(goal_text, model);
      PlannerPipeline p;
      p.scene = &s;
      p.model = &model;
      p.net = net ? &*net : nullptr;
      p.library = lib ? &*lib : nullptr;
      p.schedule = build_schedule(t_max, t_trunc);
      p.kind = parse_sampler(pipeline);
      p.n_samples = samples;
      p.n_points = points;
      p.rrt_iterations = rrt_iterations;
      p.opt_workers = 0;
      p.seed = seed;
      const PlanOutcome o = plan(p, start, goal);
      nlohmann::json j = {{"success", o.success},
                          {"frontend_ms", 1e3 * o.timings.frontend},
                          {"backend_ms", 1e3 * o.timings.backend},
                          {"tp_ms", 1e3 * o.timings.total},
                          {"denoiser_calls", p.kind == SamplerKind::kClassical ? 0 : o.timings.frontend_cost},
                          {"optimizer_iterations", o.timings.backend_cost}};
      if (o.success) {
        j["t_f"] = o.traj.t_f();
        j["winner"] = o.backend.winner;
        if (!out.empty()) save_trajectory(o.traj, out);
      } else {
        j["stage"] = o.stage;
        j["message"] = o.message;
      }
      std::cout << j.dump(1) << "\n";
      return o.success ? 0 : 2;
    }

    if (eval_cmd->parsed()) {
      ec.suite = load_suite(suite_path);
      ec.timing = parse_timing(timing);
      ec.pipelines.clear();
      for (const auto& name : pipelines) ec.pipelines.push_back(parse_sampler(name));
      const Evaluation e =
          evaluate(ec, model, net ? &*net : nullptr, lib ? &*lib : nullptr, build_schedule(t_max, t_trunc));
      write_report(e, out);
      write_json(ec.suite.to_json(), (std::filesystem::path(out) / "suite.json").string());
      std::printf("%-10s %6s %10s %10s %8s %8s\n", "pipeline", "S.R.", "T.P.", "T.D.", "D.S.", "P.R.");
      std::vector<const EvalReport*> all{&e.baseline};
      for (const auto& r : e.reports) all.push_back(&r);
      for (const auto* r : all) {
        if (!r->error.empty()) {
          std::printf("%-10s error: %s\n", r->pipeline.c_str(), r->error.c_str());
          continue;
        }
        std::printf("%-10s %5.1f%% %10.3f %10.3f %8.4f %8.4f\n", r->pipeline.c_str(), r->sr, r->mean_tp, r->mean_td,
                    r->mean_ds, r == &e.baseline ? 1.0 : r->pr);
      }
      std::cout << "T.P. unit: " << (ec.timing == TimingMode::kWall ? "ms" : "iterations") << "; report in " << out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
