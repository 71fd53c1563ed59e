#include "momaplan/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "momaplan/collision.hpp"

namespace momaplan {

void LossWeights::check() const {
  if (safe < 0 || smooth < 0 || unip < 0 || recon < 0 || focal < 0 || gamma < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

LossGrad loss_safe(const Eigen::MatrixXd& path, const Scene& scene, const RobotModel& model) {
  LossGrad out;
  out.grad = Eigen::MatrixXd::Zero(path.rows(), path.cols());
  const int n = static_cast<int>(path.rows());
  const double reach = chain_reach(model) + 0.05;
  std::vector<int> subset;
  Eigen::MatrixX3d centers;
  for (int i = 0; i < n; ++i) {
    const double c = path(i, 2), s = path(i, 3);
    const double r2 = c * c + s * s;
    RobotState st;
    st.x = path(i, 0);
    st.y = path(i, 1);
    st.theta = r2 > 0 ? std::atan2(s, c) : 0.0;
    st.q = path.row(i).tail(model.n_joints).transpose();
    const ChainPose pose = chain_pose(model, st);
    collision_centers(model, pose, centers);
    scene.nearby(pose.t[0], reach, subset);
    if (subset.empty()) continue;
    for (int k = 0; k < model.sphere_count(); ++k) {
      Vec3 g;
      const double d = scene.sdf_subset(centers.row(k).transpose(), subset, &g);
      const double v = model.spheres[k].radius - d;
      if (v <= 0) continue;
      out.value += v / n;
      const Eigen::MatrixXd J = sphere_jacobian(model, pose, k);
      const Eigen::RowVectorXd dstate = -(g.transpose() * J) / n;
      out.grad(i, 0) += dstate[0];
      out.grad(i, 1) += dstate[1];
      if (r2 > 0) {
        out.grad(i, 2) += dstate[2] * (-s / r2);
        out.grad(i, 3) += dstate[2] * (c / r2);
      }
      out.grad.row(i).tail(model.n_joints) += dstate.tail(model.n_joints);
    }
  }
  return out;
}

namespace {

struct ChannelTotals {
  double p = 0, theta = 0, q = 0;
};

ChannelTotals channel_totals(const Eigen::MatrixXd& m, Eigen::MatrixXd* grad_p, Eigen::MatrixXd* grad_theta,
                             Eigen::MatrixXd* grad_q) {
  ChannelTotals t;
  for (int i = 1; i < m.rows(); ++i) {
    const Eigen::Vector2d dp = m.row(i).segment<2>(0) - m.row(i - 1).segment<2>(0);
    const Eigen::Vector2d dh = m.row(i).segment<2>(2) - m.row(i - 1).segment<2>(2);
    const Eigen::RowVectorXd dq = m.row(i).tail(m.cols() - 4) - m.row(i - 1).tail(m.cols() - 4);
    const double np = dp.norm(), nh = dh.norm();
    t.p += np;
    t.theta += nh;
    t.q += dq.cwiseAbs().sum();
    if (grad_p && np > 0) {
      grad_p->row(i).segment<2>(0) += dp.transpose() / np;
      grad_p->row(i - 1).segment<2>(0) -= dp.transpose() / np;
    }
    if (grad_theta && nh > 0) {
      grad_theta->row(i).segment<2>(2) += dh.transpose() / nh;
      grad_theta->row(i - 1).segment<2>(2) -= dh.transpose() / nh;
    }
    if (grad_q) {
      for (int j = 0; j < dq.size(); ++j) {
        const double sg = dq[j] > 0 ? 1.0 : dq[j] < 0 ? -1.0 : 0.0;
        (*grad_q)(i, 4 + j) += sg;
        (*grad_q)(i - 1, 4 + j) -= sg;
      }
    }
  }
  return t;
}

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() < 4 || a.rows() < 2) {
    throw std::invalid_argument("path and truth shapes do not match");
  }
}

}  // namespace

LossGrad loss_smooth(const Eigen::MatrixXd& path, const Eigen::MatrixXd& truth) {
  require_same_shape(path, truth);
  const Eigen::Index r = path.rows(), c = path.cols();
  Eigen::MatrixXd gp = Eigen::MatrixXd::Zero(r, c), gt = gp, gq = gp;
  const ChannelTotals a = channel_totals(path, &gp, &gt, &gq);
  const ChannelTotals b = channel_totals(truth, nullptr, nullptr, nullptr);
  LossGrad out;
  out.grad = Eigen::MatrixXd::Zero(r, c);
  if (a.p > b.p) {
    out.value += a.p - b.p;
    out.grad += gp;
  }
  if (a.theta > b.theta) {
    out.value += a.theta - b.theta;
    out.grad += gt;
  }
  if (a.q > b.q) {
    out.value += a.q - b.q;
    out.grad += gq;
  }
  return out;
}

LossGrad loss_unip(const Eigen::MatrixXd& path, const Eigen::MatrixXd& truth) {
  require_same_shape(path, truth);
  const int m = static_cast<int>(path.rows()) - 1;
  std::vector<double> len(m);
  std::vector<Eigen::Vector2d> dir(m);
  double mean = 0.0;
  for (int i = 0; i < m; ++i) {
    const Eigen::Vector2d d = path.row(i + 1).segment<2>(0) - path.row(i).segment<2>(0);
    len[i] = d.norm();
    dir[i] = len[i] > 0 ? Eigen::Vector2d(d / len[i]) : Eigen::Vector2d::Zero();
    mean += len[i];
  }
  mean /= m;
  double var = 0.0;
  for (double l : len) var += (l - mean) * (l - mean);
  var /= m;
  const double sd = std::sqrt(var);
  const ChannelTotals tt = channel_totals(truth, nullptr, nullptr, nullptr);
  const double denom = tt.p > 0 ? std::sqrt(m * tt.p) : 1.0;
  LossGrad out;
  out.value = sd / denom;
  out.grad = Eigen::MatrixXd::Zero(path.rows(), path.cols());
  if (sd > 0) {
    for (int i = 0; i < m; ++i) {
      const double dl = (len[i] - mean) / (m * sd * denom);
      out.grad.row(i + 1).segment<2>(0) += dl * dir[i].transpose();
      out.grad.row(i).segment<2>(0) -= dl * dir[i].transpose();
    }
  }
  return out;
}

FocalGrad loss_focal(const Eigen::VectorXd& logits, int truth, double gamma) {
  if (truth < 0 || truth >= logits.size()) throw std::out_of_range("truth primitive index out of range");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - mx).exp();
  p /= p.sum();
  const double pt = p[truth];
  const double logp = (logits[truth] - mx) - std::log((logits.array() - mx).exp().sum());
  const double one = 1.0 - pt;
  FocalGrad out;
  out.value = -std::pow(one, gamma) * logp;
  // dL/dpt, then softmax Jacobian
  const double dpt = (gamma > 0 ? gamma * std::pow(one, gamma - 1) * logp : 0.0) - std::pow(one, gamma) / pt;
  out.grad = -dpt * pt * p;
  out.grad[truth] += dpt * pt;
  return out;
}

Eigen::MatrixXd features_to_world(const Eigen::MatrixXd& f, const TaskFrame& frame, const RobotModel& model) {
  const Eigen::Rotation2Dd R(frame.theta_d);
  const Eigen::Matrix2d M = R.toRotationMatrix();
  Eigen::MatrixXd w(f.rows(), f.cols());
  for (int i = 0; i < f.rows(); ++i) {
    w.row(i).segment<2>(0) = (M * f.row(i).segment<2>(0).transpose() + frame.origin).transpose();
    w.row(i).segment<2>(2) = (M * f.row(i).segment<2>(2).transpose()).transpose();
    for (int j = 0; j < model.n_joints; ++j) w(i, 4 + j) = denormalize_joint(model, j, f(i, 4 + j));
  }
  return w;
}

Eigen::MatrixXd world_grad_to_features(const Eigen::MatrixXd& g, const TaskFrame& frame, const RobotModel& model) {
  const Eigen::Matrix2d Mt = Eigen::Rotation2Dd(frame.theta_d).toRotationMatrix().transpose();
  Eigen::MatrixXd out(g.rows(), g.cols());
  for (int i = 0; i < g.rows(); ++i) {
    out.row(i).segment<2>(0) = (Mt * g.row(i).segment<2>(0).transpose()).transpose();
    out.row(i).segment<2>(2) = (Mt * g.row(i).segment<2>(2).transpose()).transpose();
    for (int j = 0; j < model.n_joints; ++j) out(i, 4 + j) = g(i, 4 + j) * 0.5 * (model.q_max[j] - model.q_min[j]);
  }
  return out;
}

TrainingSample make_training_sample(std::shared_ptr<const Scene> scene, const DatasetRecord& record,
                                    const PrimitiveLibrary& lib, const RobotModel& model, const NetConfig& config,
                                    int n_points, std::uint64_t seed) {
  if (record.path.frame != Frame::kTask) throw std::invalid_argument("dataset paths must be stored in the task frame");
  TrainingSample s;
  s.scene = std::move(scene);
  s.frame = task_frame(record.start, record.goal);
  s.truth = path_features(record.path, model);
  s.truth_world = from_task_frame(record.path, s.frame).states;
  s.truth_primitive = truth_primitive(lib, s.truth).index;
  Eigen::MatrixX3d pts = sample_surface(*s.scene, n_points, seed).points;
  for (int i = 0; i < pts.rows(); ++i) pts.row(i) = s.frame.to_task(Vec3(pts.row(i).transpose())).transpose();
  s.input = prepare_input(pts, s.frame.to_task(record.start), s.frame.to_task(record.goal), model, config);
  return s;
}

GeometricTerms geometric_terms(const Eigen::MatrixXd& features, const TrainingSample& sample, const RobotModel& model,
                               const LossWeights& w) {
  const Eigen::MatrixXd world = features_to_world(features, sample.frame, model);
  const LossGrad a = loss_safe(world, *sample.scene, model);
  const LossGrad b = loss_smooth(world, sample.truth_world);
  const LossGrad c = loss_unip(world, sample.truth_world);
  GeometricTerms g;
  g.safe = a.value;
  g.smooth = b.value;
  g.unip = c.value;
  g.weighted = w.safe * a.value + w.smooth * b.value + w.unip * c.value;
  g.grad = world_grad_to_features(w.safe * a.grad + w.smooth * b.grad + w.unip * c.grad, sample.frame, model);
  return g;
}

NoiseDraw draw_noise(const NoiseSchedule& s, int rows, int cols, double vanilla_fraction, Rng& rng) {
  NoiseDraw d;
  d.vanilla = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < vanilla_fraction;
  d.t = std::uniform_int_distribution<int>(1, d.vanilla ? s.t_max : s.t_trunc)(rng);
  d.eps = gaussian_matrix(rows, cols, rng);
  return d;
}

Eigen::MatrixXd noised_input(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& prim, const NoiseSchedule& s,
                             const NoiseDraw& draw) {
  if (draw.vanilla) return forward_marginal(truth, s, draw.t, draw.eps);
  const double u = static_cast<double>(draw.t) / s.t_trunc;
  return forward_marginal((1.0 - u) * truth + u * prim, s, draw.t, draw.eps);
}

namespace {

template <typename T>
std::vector<T> flatten(const Eigen::MatrixXd& m) {
  std::vector<T> v(m.size());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = static_cast<T>(m(i, j));
  return v;
}

Eigen::MatrixXd unflatten(const auto& v, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[i * cols + j];
  return m;
}

}  // namespace

template <typename T>
ad::Var<T> total_loss(ad::Tape<T>& tape, Network<T>& net, const TrainingSample& sample, const PrimitiveLibrary& lib,
                      const NoiseSchedule& s, const NoiseDraw& draw, const RobotModel& model, const LossWeights& w,
                      LossBreakdown* breakdown) {
  const int rows = static_cast<int>(sample.truth.rows()), cols = static_cast<int>(sample.truth.cols());
  const Eigen::MatrixXd x = noised_input(sample.truth, lib.centroids.at(sample.truth_primitive), s, draw);
  const TaskEncoding<T> enc = net.encode(tape, sample.input);
  const ad::Var<T> pred = net.denoise(tape, tape.constant({rows, cols}, flatten<T>(x)), draw.t, enc);
  const ad::Var<T> logits = net.primitive_logits(tape, enc);

  const ad::Var<T> recon = ad::mean(ad::square(ad::sub(pred, tape.constant({rows, cols}, flatten<T>(sample.truth)))));
  const GeometricTerms geo = geometric_terms(unflatten(pred.value(), rows, cols), sample, model, w);
  std::vector<double> ggrad(geo.grad.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) ggrad[i * cols + j] = geo.grad(i, j);
  const ad::Var<T> geo_v = ad::external_scalar(pred, geo.weighted, std::move(ggrad));
  const ad::Var<T> p_truth = ad::element(ad::softmax(logits), sample.truth_primitive);

  Eigen::VectorXd lz(logits.size());
  for (int i = 0; i < lz.size(); ++i) lz[i] = logits.value()[i];
  const FocalGrad focal = loss_focal(lz, sample.truth_primitive, w.gamma);
  const ad::Var<T> focal_v =
      ad::external_scalar(logits, focal.value, std::vector<double>(focal.grad.data(), focal.grad.data() + focal.grad.size()));

  const ad::Var<T> total =
      ad::add(ad::add(ad::scale(recon, w.recon), ad::mul(p_truth, geo_v)), ad::scale(focal_v, w.focal));
  if (breakdown) {
    breakdown->total = total.item();
    breakdown->recon = recon.item();
    breakdown->geometric = geo.weighted;
    breakdown->focal = focal.value;
    breakdown->p_truth = p_truth.item();
    breakdown->t = draw.t;
  }
  return total;
}

template ad::Var<float> total_loss(ad::Tape<float>&, Network<float>&, const TrainingSample&, const PrimitiveLibrary&,
                                   const NoiseSchedule&, const NoiseDraw&, const RobotModel&, const LossWeights&,
                                   LossBreakdown*);
template ad::Var<double> total_loss(ad::Tape<double>&, Network<double>&, const TrainingSample&, const PrimitiveLibrary&,
                                    const NoiseSchedule&, const NoiseDraw&, const RobotModel&, const LossWeights&,
                                    LossBreakdown*);

std::vector<EpochStats> train(Network<float>& net, const std::vector<TrainingSample>& data, const PrimitiveLibrary& lib,
                              const NoiseSchedule& s, const RobotModel& model, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  if (cfg.batch < 1 || cfg.epochs < 1) throw std::invalid_argument("epochs and batch size must be positive");
  cfg.weights.check();
  if (lib.size() != net.config().n_primitives) throw std::invalid_argument("library size does not match the network head");
  ad::AdamState adam;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, 0x5f1e));
  std::vector<EpochStats> curve;
  ad::Tape<float> tape;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    EpochStats st;
    st.epoch = epoch;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
      net.params().zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainingSample& sample = data[order[k]];
        Rng rng(derive_seed(derive_seed(cfg.seed, epoch), order[k]));
        const NoiseDraw draw =
            draw_noise(s, static_cast<int>(sample.truth.rows()), static_cast<int>(sample.truth.cols()), cfg.vanilla_fraction, rng);
        tape.clear();
        LossBreakdown br;
        const auto loss = total_loss(tape, net, sample, lib, s, draw, model, cfg.weights, &br);
        if (!std::isfinite(br.total)) {
          throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                   std::to_string(order[k]) + ", t=" + std::to_string(br.t) + " (recon " +
                                   std::to_string(br.recon) + ", geometric " + std::to_string(br.geometric) +
                                   ", focal " + std::to_string(br.focal) + ")");
        }
        tape.backward(ad::scale(loss, 1.0 / static_cast<double>(b1 - b0)));
        st.loss += br.total;
        st.recon += br.recon;
        st.geometric += br.p_truth * br.geometric;
        st.focal += br.focal;
      }
      ad::adam_step(net.params(), adam, cfg.adam);
    }
    const double n = static_cast<double>(data.size());
    st.loss /= n;
    st.recon /= n;
    st.geometric /= n;
    st.focal /= n;
    if (cfg.verbose) std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, st.loss);
    curve.push_back(st);
  }
  return curve;
}

void write_loss_csv(const std::vector<EpochStats>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,loss,recon,geometric,focal\n";
  char buf[160];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.loss, e.recon, e.geometric, e.focal);
    out << buf;
  }
}

}  // namespace momaplan
