#include "doctest.h"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "momaplan/collision.hpp"
#include "momaplan/training.hpp"
#include "oracles.hpp"

using namespace momaplan;

namespace {

using oracle::fd_grad;
using oracle::rel_err;

Eigen::MatrixXd random_path(Rng& rng, int n, double x0, double y0, double step) {
  return oracle::random_feature_path(rng, n, x0, y0, step);
}

RobotState state(double x, double y, double th) {
  RobotState s;
  s.x = x;
  s.y = y;
  s.theta = th;
  s.q = Eigen::VectorXd::Zero(7);
  return s;
}

// Straight-line record between the scene's designated start and goal.
DatasetRecord straight_record(const Scene& scene, const RobotModel& m, Rng& rng) {
  const Vec2 a = scene.start_xy(), b = scene.goal_xy();
  const double heading = std::atan2(b.y() - a.y(), b.x() - a.x());
  RobotState s = state(a.x(), a.y(), heading), g = state(b.x(), b.y(), heading);
  s.q = sample_joints(m, rng, 0.4);
  g.q = sample_joints(m, rng, 0.4);
  WaypointPath w;
  for (int i = 0; i <= 4; ++i) w.push_back(interpolate(s, g, i / 4.0));
  DatasetRecord r;
  r.path = to_task_frame(resample_uniform(w, 64), task_frame(s, g));
  r.start = s;
  r.goal = g;
  r.scene_ref = "inline";
  return r;
}

struct ToySet {
  PrimitiveLibrary lib;
  std::vector<TrainingSample> samples;
};

ToySet toy_set(int n, const NetConfig& cfg, const RobotModel& m) {
  Rng rng(17);
  std::vector<DatasetRecord> recs;
  std::vector<std::shared_ptr<const Scene>> scenes;
  for (int i = 0; i < n; ++i) {
    scenes.push_back(std::make_shared<const Scene>(generate_scene(ScenePreset::kCuboids, 100 + i, 0.2)));
    recs.push_back(straight_record(*scenes.back(), m, rng));
  }
  std::vector<Path> paths;
  for (const auto& r : recs) paths.push_back(r.path);
  ClusterConfig cc;
  cc.k = cfg.n_primitives;
  ToySet t;
  t.lib = build_library(paths, m, cc, 1);
  for (int i = 0; i < n; ++i) t.samples.push_back(make_training_sample(scenes[i], recs[i], t.lib, m, cfg, 256, i));
  return t;
}

}  // namespace

TEST_CASE("safety loss values and gradient") {
  RobotModel single = RobotModel::default_model();
  single.spheres.resize(1);
  single.spheres[0] = {0, Vec3(0, 0, 0.3), 0.3};
  const Scene scene = Scene::open({Obstacle::sphere(Vec3(2.0, 0, 0.3), 0.5)});
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 11);
  p.col(2).setOnes();
  p(0, 0) = -5;
  p(1, 0) = 2.0 - 0.5 - 0.3 + 0.1;  // sdf = r - 0.1
  p(2, 0) = 8;
  CHECK(loss_safe(p, scene, single).value == doctest::Approx(0.1 / 3).epsilon(1e-12));
  p(1, 0) = -3;
  CHECK(loss_safe(p, scene, single).value == 0.0);

  const RobotModel m = RobotModel::default_model();
  const Scene busy = generate_scene(ScenePreset::kMixed, 4, 1.0);
  Rng rng(1);
  int active = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd path = random_path(rng, 6, uniform(rng, -4, 0), uniform(rng, -4, 4), 0.5);
    const LossGrad lg = loss_safe(path, busy, m);
    if (lg.value == 0.0) continue;
    ++active;
    const Eigen::MatrixXd fd = fd_grad([&](const Eigen::MatrixXd& x) { return loss_safe(x, busy, m).value; }, path);
    CHECK(rel_err(lg.grad, fd) < 1e-4);
  }
  CHECK(active >= 5);
}

TEST_CASE("smoothness loss values and gradient") {
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(3, 11);
  truth.col(2).setOnes();
  truth(1, 0) = 0.5;
  truth(2, 0) = 1.0;
  CHECK(loss_smooth(truth, truth).value == 0.0);
  Eigen::MatrixXd longer = truth;
  longer(1, 1) = std::sqrt(0.75 * 0.75 - 0.25);
  CHECK(loss_smooth(longer, truth).value == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd a = random_path(rng, 8, 0, 0, 0.3), b = random_path(rng, 8, 0, 0, 0.25);
    const LossGrad lg = loss_smooth(a, b);
    const Eigen::MatrixXd fd = fd_grad([&](const Eigen::MatrixXd& x) { return loss_smooth(x, b).value; }, a);
    CHECK(rel_err(lg.grad, fd) < 1e-4);
  }
  CHECK_THROWS(loss_smooth(truth, Eigen::MatrixXd::Zero(4, 11)));
}

TEST_CASE("uniformity loss values and gradient") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 11), truth = p;
  p(1, 0) = 0.1;
  p(2, 0) = 0.4;
  truth(1, 0) = 0.2;
  truth(2, 0) = 0.4;
  CHECK(loss_unip(p, truth).value == doctest::Approx(0.1 / std::sqrt(2 * 0.4)).epsilon(1e-12));
  CHECK(loss_unip(p, truth).value == doctest::Approx(0.1118).epsilon(1e-3));
  CHECK(loss_unip(truth, truth).value == doctest::Approx(0.0).epsilon(1e-15));
  const Eigen::MatrixXd still = Eigen::MatrixXd::Zero(3, 11);
  CHECK(loss_unip(p, still).value == doctest::Approx(0.1).epsilon(1e-12));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd a = random_path(rng, 10, 0, 0, 0.3), b = random_path(rng, 10, 0, 0, 0.3);
    const LossGrad lg = loss_unip(a, b);
    const Eigen::MatrixXd fd = fd_grad([&](const Eigen::MatrixXd& x) { return loss_unip(x, b).value; }, a);
    CHECK(rel_err(lg.grad, fd) < 1e-4);
  }
}

TEST_CASE("focal loss values and gradient") {
  Eigen::VectorXd sure(3);
  sure << 1000, 0, 0;
  CHECK(loss_focal(sure, 0, 2.0).value == 0.0);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd z(6);
    for (int i = 0; i < 6; ++i) z[i] = uniform(rng, -3, 3);
    const int truth = trial % 6;
    const Eigen::VectorXd p = z.array().exp() / z.array().exp().sum();
    CHECK(loss_focal(z, truth, 0.0).value == doctest::Approx(-std::log(p[truth])).epsilon(1e-12));
    CHECK(loss_focal(z, truth, 2.0).value ==
          doctest::Approx(-(1 - p[truth]) * (1 - p[truth]) * std::log(p[truth])).epsilon(1e-12));
    for (double gamma : {0.0, 2.0}) {
      const FocalGrad fg = loss_focal(z, truth, gamma);
      Eigen::MatrixXd zm = z;
      const Eigen::MatrixXd fd = fd_grad([&](const Eigen::MatrixXd& x) { return loss_focal(x.col(0), truth, gamma).value; }, zm);
      CHECK(rel_err(fg.grad, fd) < 1e-6);
    }
  }
  CHECK_THROWS(loss_focal(sure, 3, 2.0));
}

TEST_CASE("feature to world map and its gradient") {
  const RobotModel m = RobotModel::default_model();
  TaskFrame f;
  f.origin = Vec2(1.5, -2.0);
  f.theta_d = 0.8;
  Rng rng(5);
  Eigen::MatrixXd feat = random_path(rng, 5, 0, 0, 0.3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) feat(i, 4 + j) = uniform(rng, -1, 1);
  Path task;
  task.frame = Frame::kTask;
  task.states = path_from_features(feat, m, Frame::kTask).states;
  CHECK((features_to_world(feat, f, m) - from_task_frame(task, f).states).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(5, 11);
  const Eigen::MatrixXd g = world_grad_to_features(w, f, m);
  const Eigen::MatrixXd fd =
      fd_grad([&](const Eigen::MatrixXd& x) { return features_to_world(x, f, m).cwiseProduct(w).sum(); }, feat);
  CHECK(rel_err(g, fd) < 1e-8);
}

TEST_CASE("truth paths of a valid sample have no geometric loss") {
  const RobotModel m = RobotModel::default_model();
  NetConfig cfg = NetConfig::toy();
  cfg.n_primitives = 2;
  auto scene = std::make_shared<const Scene>(Scene::open({Obstacle::cuboid(Vec3(3, 3, 0.5), Vec3(0.5, 0.5, 0.5))}));
  const RobotState s = state(-2, -1, 0.3), g = state(2, 1, -0.4);
  WaypointPath w{s, interpolate(s, g, 0.5), g};
  DatasetRecord r;
  r.path = to_task_frame(resample_uniform(w, 64), task_frame(s, g));
  r.start = s;
  r.goal = g;
  PrimitiveLibrary lib;
  lib.centroids = {path_features(r.path, m), Eigen::MatrixXd::Zero(64, 11)};
  const TrainingSample sample = make_training_sample(scene, r, lib, m, cfg, 200, 1);
  CHECK(sample.truth_primitive == 0);
  for (int i = 0; i < 64; ++i) REQUIRE(state_clearance(*scene, m, state_from_path_state(m, sample.truth_world.row(i).transpose())) > 0);
  const LossWeights lw;
  const GeometricTerms geo = geometric_terms(sample.truth, sample, m, lw);
  CHECK(geo.safe == 0.0);
  CHECK(geo.smooth == 0.0);
  CHECK(geo.unip <= 1e-6);
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(2);
  onehot[0] = 60.0;
  CHECK(loss_focal(onehot, 0, lw.gamma).value < 1e-20);
}

TEST_CASE("anchored noising endpoints") {
  const NoiseSchedule s = build_schedule();
  Rng rng(6);
  const Eigen::MatrixXd truth = gaussian_matrix(64, 11, rng), prim = gaussian_matrix(64, 11, rng);
  NoiseDraw d;
  d.eps = gaussian_matrix(64, 11, rng);
  d.t = s.t_trunc;
  CHECK((noised_input(truth, prim, s, d) - forward_truncated(prim, s, d.eps)).cwiseAbs().maxCoeff() < 1e-12);
  d.t = 1;
  const double u = 1.0 / s.t_trunc;
  CHECK((noised_input(truth, prim, s, d) - forward_marginal((1 - u) * truth + u * prim, s, 1, d.eps)).cwiseAbs().maxCoeff() <
        1e-12);
  d.vanilla = true;
  d.t = 900;
  CHECK(noised_input(truth, prim, s, d) == forward_marginal(truth, s, 900, d.eps));
  int vanilla = 0;
  for (int i = 0; i < 4000; ++i) {
    const NoiseDraw x = draw_noise(s, 2, 2, 0.25, rng);
    vanilla += x.vanilla;
    CHECK(x.t >= 1);
    CHECK(x.t <= (x.vanilla ? 1200 : 50));
  }
  CHECK(std::abs(vanilla / 4000.0 - 0.25) < 0.03);
}

TEST_CASE("total loss composition and full-parameter gradient") {
  const RobotModel m = RobotModel::default_model();
  NetConfig cfg = NetConfig::toy();
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.ff = 16;
  cfg.point_hidden = 8;
  cfg.point_tokens = 8;
  cfg.n_primitives = 4;
  cfg.fusion_blocks = 1;
  const ToySet set = toy_set(6, cfg, m);
  const NoiseSchedule s = build_schedule();
  const LossWeights lw;
  Rng rng(7);
  const NoiseDraw draw = draw_noise(s, 64, 11, 0.0, rng);
  const TrainingSample& sample = set.samples[2];

  Network<float> nf(cfg, 3);
  ad::Tape<float> tape;
  LossBreakdown br;
  tape.backward(total_loss(tape, nf, sample, set.lib, s, draw, m, lw, &br));
  CHECK(br.total == doctest::Approx(br.recon + br.p_truth * br.geometric + br.focal).epsilon(1e-5));

  // geometric weights enter linearly
  LossWeights doubled = lw;
  doubled.safe *= 2;
  doubled.smooth *= 2;
  doubled.unip *= 2;
  ad::Tape<float> t2(false);
  LossBreakdown b2;
  total_loss(t2, nf, sample, set.lib, s, draw, m, doubled, &b2);
  CHECK(b2.total - br.total == doctest::Approx(br.p_truth * br.geometric).epsilon(1e-4));

  Network<double> nd(cfg, nf.params().cast<double>());
  const double h = 1e-5;
  int checked = 0;
  for (auto& p : nd.params().all()) {
    const auto& gf = nf.params().get(p.name).grad;
    for (std::size_t i = 0; i < p.value.size(); i += 1 + p.value.size() / 5) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      ad::Tape<double> a(false);
      const double fp = total_loss(a, nd, sample, set.lib, s, draw, m, lw).item();
      p.value[i] = keep - h;
      ad::Tape<double> b(false);
      const double fm = total_loss(b, nd, sample, set.lib, s, draw, m, lw).item();
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      INFO(p.name << "[" << i << "] fd=" << fd << " analytic=" << gf[i]);
      CHECK(std::abs(fd - gf[i]) <= 1e-2 * std::max(std::abs(fd), 1e-2));
      ++checked;
    }
  }
  CHECK(checked > 150);
}

TEST_CASE("training reduces the loss and is reproducible") {
  const RobotModel m = RobotModel::default_model();
  NetConfig cfg = NetConfig::toy();
  cfg.n_primitives = 8;
  const ToySet set = toy_set(200, cfg, m);
  const NoiseSchedule s = build_schedule();
  TrainConfig tc;
  tc.epochs = 50;
  tc.seed = 5;
  tc.adam.lr = 1e-3;
  const auto t0 = std::chrono::steady_clock::now();
  Network<float> net(cfg, 5);
  const auto curve = train(net, set.samples, set.lib, s, m, tc);
  MESSAGE("50 epochs in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s; loss "
                          << curve.front().loss << " -> " << curve.back().loss);
  REQUIRE(curve.size() == 50);
  CHECK(curve.back().loss <= 0.5 * curve.front().loss);

  const std::string file = (std::filesystem::temp_directory_path() / "momaplan_loss.csv").string();
  write_loss_csv(curve, file);
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,loss,recon,geometric,focal");
  std::filesystem::remove(file);

  TrainConfig quick = tc;
  quick.epochs = 2;
  const std::vector<TrainingSample> few(set.samples.begin(), set.samples.begin() + 24);
  Network<float> a(cfg, 8), b(cfg, 8);
  train(a, few, set.lib, s, m, quick);
  train(b, few, set.lib, s, m, quick);
  for (std::size_t k = 0; k < a.params().all().size(); ++k) CHECK(a.params().all()[k].value == b.params().all()[k].value);
  CHECK_THROWS(train(a, {}, set.lib, s, m, quick));
}
