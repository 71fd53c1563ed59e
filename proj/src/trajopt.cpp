#include "momaplan/trajopt.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "momaplan/classical.hpp"
#include "momaplan/collision.hpp"
#include "momaplan/lbfgs.hpp"

namespace momaplan {

namespace {

using Coeffs = std::array<double, 6>;

// Quintic Hermite in normalized time s in [0, 1]; velocities and accelerations
// are pre-scaled by T and T^2.
Coeffs hermite(double p0, double v0, double a0, double p1, double v1, double a1) {
  const double dp = p1 - p0;
  return {p0,
          v0,
          0.5 * a0,
          10.0 * dp - 6.0 * v0 - 4.0 * v1 - 1.5 * a0 + 0.5 * a1,
          -15.0 * dp + 8.0 * v0 + 7.0 * v1 + 1.5 * a0 - a1,
          6.0 * dp - 3.0 * v0 - 3.0 * v1 - 0.5 * a0 + 0.5 * a1};
}

// Transpose of the Hermite map: gradient w.r.t. (p0, v0, a0, p1, v1, a1).
std::array<double, 6> hermite_transpose(const double* g) {
  return {g[0] - 10.0 * g[3] + 15.0 * g[4] - 6.0 * g[5],
          g[1] - 6.0 * g[3] + 8.0 * g[4] - 3.0 * g[5],
          0.5 * g[2] - 1.5 * g[3] + 1.5 * g[4] - 0.5 * g[5],
          10.0 * g[3] - 15.0 * g[4] + 6.0 * g[5],
          -4.0 * g[3] + 7.0 * g[4] - 3.0 * g[5],
          0.5 * g[3] - g[4] + 0.5 * g[5]};
}

double poly(const double* c, double s) {
  return ((((c[5] * s + c[4]) * s + c[3]) * s + c[2]) * s + c[1]) * s + c[0];
}
double poly_d(const double* c, double s) {
  return (((5.0 * c[5] * s + 4.0 * c[4]) * s + 3.0 * c[3]) * s + 2.0 * c[2]) * s + c[1];
}
double poly_dd(const double* c, double s) {
  return ((20.0 * c[5] * s + 12.0 * c[4]) * s + 6.0 * c[3]) * s + 2.0 * c[2];
}
double poly_ddd(const double* c, double s) { return (60.0 * c[5] * s + 24.0 * c[4]) * s + 6.0 * c[3]; }

// Knot representation shared by the initializer and the objective.
struct Knots {
  std::vector<Eigen::VectorXd> p, v, a;  // M + 1 entries of channel vectors
  std::vector<double> durations;
};

Trajectory from_knots(int n_joints, const Vec2& start_xy, const Knots& k) {
  Trajectory t;
  t.n_joints = n_joints;
  t.start_xy = start_xy;
  t.durations = k.durations;
  const int M = static_cast<int>(k.durations.size());
  const int C = n_joints + 2;
  for (int i = 0; i < M; ++i) {
    const double T = k.durations[i];
    Eigen::MatrixXd c(C, 6);
    for (int ch = 0; ch < C; ++ch) {
      const Coeffs s = hermite(k.p[i][ch], k.v[i][ch] * T, k.a[i][ch] * T * T, k.p[i + 1][ch], k.v[i + 1][ch] * T,
                               k.a[i + 1][ch] * T * T);
      double scale = 1.0;
      for (int d = 0; d < 6; ++d) {
        c(ch, d) = s[d] / scale;
        scale *= T;
      }
    }
    t.coefficients.push_back(c);
  }
  return t;
}

// Piece index and local time for t, with knot times belonging to the next piece.
int locate(const Trajectory& traj, double t, double& local) {
  const int M = traj.pieces();
  double t0 = 0.0;
  for (int k = 0; k < M; ++k) {
    if (t < t0 + traj.durations[k] || k == M - 1) {
      local = std::clamp(t - t0, 0.0, traj.durations[k]);
      return k;
    }
    t0 += traj.durations[k];
  }
  local = 0.0;
  return 0;
}

// Integral of a'(cos, sin) over local times [u0, u1] of piece k.
Vec2 integrate_piece(const Trajectory& traj, int k, double u0, double u1, const std::vector<double>& nodes,
                     const std::vector<double>& weights) {
  const Eigen::MatrixXd& c = traj.coefficients[k];
  Vec2 out = Vec2::Zero();
  if (u1 <= u0) return out;
  std::array<double, 6> a, th;
  for (int d = 0; d < 6; ++d) {
    a[d] = c(0, d);
    th[d] = c(1, d);
  }
  const double h = u1 - u0;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const double u = u0 + h * nodes[n];
    const double v = poly_d(a.data(), u);
    const double ang = poly(th.data(), u);
    out += weights[n] * h * v * Vec2(std::cos(ang), std::sin(ang));
  }
  return out;
}

const std::vector<double>& cached_nodes(int n, bool weights) {
  thread_local std::vector<std::pair<std::vector<double>, std::vector<double>>> cache(65);
  if (n < 1 || n > 64) throw std::invalid_argument("quadrature nodes must be in [1, 64]");
  if (cache[n].first.empty()) gauss_legendre(n, cache[n].first, cache[n].second);
  return weights ? cache[n].second : cache[n].first;
}

Eigen::VectorXd channel_values(const RobotState& s) {
  Eigen::VectorXd v(2 + s.q.size());
  v[0] = 0.0;
  v[1] = s.theta;
  v.tail(s.q.size()) = s.q;
  return v;
}

}  // namespace

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw std::invalid_argument("gauss_legendre needs n >= 1");
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    // map [-1, 1] to [0, 1]
    nodes[n - 1 - i] = 0.5 * (x + 1.0);
    weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
}

double Trajectory::t_f() const {
  double t = 0.0;
  for (double d : durations) t += d;
  return t;
}

double Trajectory::a_f() const {
  const auto& c = coefficients.back();
  return poly(c.row(0).eval().data(), durations.back());
}

double Trajectory::theta_f() const {
  const auto& c = coefficients.back();
  return poly(c.row(1).eval().data(), durations.back());
}

void Trajectory::check() const {
  if (durations.empty()) throw std::invalid_argument("trajectory has no pieces");
  if (coefficients.size() != durations.size()) throw std::invalid_argument("trajectory piece count mismatch");
  for (std::size_t k = 0; k < durations.size(); ++k) {
    if (!(durations[k] > 0.0) || !std::isfinite(durations[k]))
      throw std::invalid_argument("trajectory durations must be positive");
    if (coefficients[k].rows() != channels() || coefficients[k].cols() != 6)
      throw std::invalid_argument("trajectory coefficients must be channels x 6");
  }
}

ChannelState evaluate_channels(const Trajectory& traj, double t) {
  double u = 0.0;
  const int k = locate(traj, t, u);
  const int C = traj.channels();
  ChannelState s;
  s.p.resize(C);
  s.v.resize(C);
  s.acc.resize(C);
  s.jerk.resize(C);
  for (int ch = 0; ch < C; ++ch) {
    const Eigen::RowVectorXd row = traj.coefficients[k].row(ch);
    s.p[ch] = poly(row.data(), u);
    s.v[ch] = poly_d(row.data(), u);
    s.acc[ch] = poly_dd(row.data(), u);
    s.jerk[ch] = poly_ddd(row.data(), u);
  }
  return s;
}

Vec2 base_position(const Trajectory& traj, double t, int nodes) {
  const auto& x = cached_nodes(nodes, false);
  const auto& w = cached_nodes(nodes, true);
  double u = 0.0;
  const int k = locate(traj, t, u);
  Vec2 p = traj.start_xy;
  for (int i = 0; i < k; ++i) p += integrate_piece(traj, i, 0.0, traj.durations[i], x, w);
  return p + integrate_piece(traj, k, 0.0, u, x, w);
}

RobotState trajectory_state(const Trajectory& traj, double t, int nodes) {
  const ChannelState c = evaluate_channels(traj, t);
  const Vec2 xy = base_position(traj, t, nodes);
  RobotState s;
  s.x = xy.x();
  s.y = xy.y();
  s.theta = wrap_angle(c.p[1]);
  s.q = c.p.tail(traj.n_joints);
  return s;
}

Vec2 boundary_residual(const Trajectory& traj, const RobotState& start, const RobotState& goal, int nodes) {
  const auto& x = cached_nodes(nodes, false);
  const auto& w = cached_nodes(nodes, true);
  Vec2 integral = Vec2::Zero();
  for (int k = 0; k < traj.pieces(); ++k) integral += integrate_piece(traj, k, 0.0, traj.durations[k], x, w);
  return integral + start.xy() - goal.xy();
}

WaypointPath trajectory_waypoints(const Trajectory& traj, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const auto& x = cached_nodes(8, false);
  const auto& w = cached_nodes(8, true);
  const double tf = traj.t_f();
  const int steps = std::max(1, static_cast<int>(std::ceil(tf / dt - 1e-9)));
  WaypointPath out;
  Vec2 pos = traj.start_xy;
  double t_prev = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double t = (i == steps) ? tf : i * dt;
    // integrate [t_prev, t], splitting at knots
    double a = t_prev;
    while (a < t) {
      double u0 = 0.0;
      const int k = locate(traj, a, u0);
      double piece_end = 0.0;
      for (int j = 0; j <= k; ++j) piece_end += traj.durations[j];
      const double b = (k == traj.pieces() - 1) ? t : std::min(t, piece_end);
      pos += integrate_piece(traj, k, u0, u0 + (b - a), x, w);
      if (b <= a) break;
      a = b;
    }
    t_prev = t;
    const ChannelState c = evaluate_channels(traj, t);
    RobotState s;
    s.x = pos.x();
    s.y = pos.y();
    s.theta = wrap_angle(c.p[1]);
    s.q = c.p.tail(traj.n_joints);
    out.push_back(s);
  }
  return out;
}

Path resample_trajectory(const Trajectory& traj, int n_tau, double dt) {
  const WaypointPath w = trajectory_waypoints(traj, dt);
  const int n = static_cast<int>(w.size());
  // Small reversals of the arc length (in-place turns) would make the base
  // polyline double back; keep only states that advance along the arc.
  std::vector<double> a(n);
  for (int i = 0; i < n; ++i) a[i] = evaluate_channels(traj, std::min(i * dt, traj.t_f())).p[0];
  a[n - 1] = evaluate_channels(traj, traj.t_f()).p[0];
  std::vector<double> suffix(n + 1, std::numeric_limits<double>::infinity());
  for (int i = n - 1; i >= 0; --i) suffix[i] = std::min(suffix[i + 1], a[i]);
  WaypointPath kept{w.front()};
  double prefix = a[0];
  for (int i = 1; i + 1 < n; ++i) {
    if (a[i] > prefix && a[i] < suffix[i + 1]) {
      kept.push_back(w[i]);
      prefix = a[i];
    } else if (std::abs(a[i] - a[i - 1]) == 0.0 && a[i] == prefix) {
      kept.push_back(w[i]);  // stationary base: joint or heading motion only
    }
  }
  if (n > 1) kept.push_back(w.back());
  return resample_uniform(kept, n_tau);
}

Trajectory init_from_path(const Path& p, const RobotModel& model, int pieces) {
  if (p.frame != Frame::kWorld) throw std::invalid_argument("init_from_path expects a world-frame path");
  if (p.length() < 2) throw std::invalid_argument("init_from_path needs at least two states");
  if (pieces < 3) throw std::invalid_argument("init_from_path needs at least three pieces");
  if (p.n_joints() != model.n_joints) throw std::invalid_argument("path joint count does not match the model");
  const WaypointPath w = path_states(p);
  const int n = static_cast<int>(w.size());
  const int N = model.n_joints, C = N + 2, M = pieces;
  const KinodynamicLimits& lim = model.limits;

  std::vector<double> cum(n, 0.0);
  for (int i = 1; i < n; ++i) cum[i] = cum[i - 1] + std::hypot(w[i].x - w[i - 1].x, w[i].y - w[i - 1].y);
  const double L = cum.back();
  const double th_s = w.front().theta;

  Knots k;
  k.p.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.v.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.a.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.durations.assign(M, 0.0);

  auto max_dq = [&](int i) { return N ? (k.p[i + 1].tail(N) - k.p[i].tail(N)).cwiseAbs().maxCoeff() : 0.0; };
  auto rot_time = [&](double d) {
    d = std::abs(d);
    return std::max({0.2, 1.875 * d / (0.7 * lim.omega_max), std::sqrt(5.774 * d / (0.7 * lim.alpha_max))});
  };

  if (L < 1e-6) {
    // stationary base: spread heading and joint motion evenly over all pieces
    const double dth = shortest_arc(th_s, w.back().theta);
    for (int i = 0; i <= M; ++i) {
      const double u = static_cast<double>(i) / M;
      const double f = u * (n - 1);
      const int j = std::min(n - 2, static_cast<int>(f));
      const double r = f - j;
      k.p[i][0] = 0.0;
      k.p[i][1] = th_s + u * dth;
      if (N) k.p[i].tail(N) = (1.0 - r) * w[j].q + r * w[j + 1].q;
    }
    k.p[M].tail(N) = w.back().q;
    for (int i = 0; i < M; ++i) {
      const double dq = max_dq(i);
      const double scale = (i == 0 || i == M - 1) ? 1.5 : 1.0;
      k.durations[i] = scale * std::max({0.1, std::abs(k.p[i + 1][1] - k.p[i][1]) / (0.6 * lim.omega_max),
                                         dq / (0.6 * lim.qd_max), std::sqrt(dq / (0.3 * lim.qdd_max))});
    }
    for (int i = 1; i < M; ++i)
      k.v[i] = (k.p[i + 1] - k.p[i - 1]) / (k.durations[i - 1] + k.durations[i]);
    return from_knots(N, w.front().xy(), k);
  }

  // position and joints at arc length A along the polyline
  auto at_arc = [&](double A, Vec2& xy, Eigen::VectorXd& q) {
    A = std::clamp(A, 0.0, L);
    int i = 1;
    while (i < n - 1 && (cum[i] < A || cum[i] == cum[i - 1])) ++i;
    while (i > 1 && cum[i] == cum[i - 1]) --i;
    const double seg = cum[i] - cum[i - 1];
    const double r = seg > 0.0 ? std::clamp((A - cum[i - 1]) / seg, 0.0, 1.0) : 1.0;
    xy = (1.0 - r) * w[i - 1].xy() + r * w[i].xy();
    q = (1.0 - r) * w[i - 1].q + r * w[i].q;
  };

  const int Mt = M - 2;
  const double delta = L / (2.0 * Mt);
  std::vector<double> arc(Mt + 1), head(Mt + 1);
  double prev = th_s;
  for (int i = 0; i <= Mt; ++i) {
    arc[i] = L * i / Mt;
    Vec2 a, b;
    Eigen::VectorXd qa, qb;
    at_arc(arc[i] - delta, a, qa);
    at_arc(arc[i] + delta, b, qb);
    const Vec2 d = b - a;
    double h = d.norm() > 1e-9 ? std::atan2(d.y(), d.x()) : prev;
    h = prev + shortest_arc(prev, h);
    head[i] = h;
    prev = h;
  }

  k.p[0][1] = th_s;
  if (N) k.p[0].tail(N) = w.front().q;
  for (int i = 0; i <= Mt; ++i) {
    Vec2 xy;
    Eigen::VectorXd q;
    at_arc(arc[i], xy, q);
    k.p[i + 1][0] = arc[i];
    k.p[i + 1][1] = head[i];
    if (N) k.p[i + 1].tail(N) = q;
  }
  if (N) {
    k.p[1].tail(N) = w.front().q;
    k.p[Mt + 1].tail(N) = w.back().q;
  }
  k.p[M][0] = L;
  k.p[M][1] = head[Mt] + shortest_arc(head[Mt], w.back().theta);
  if (N) k.p[M].tail(N) = w.back().q;

  // trapezoidal timing along the arc
  const double vc = 0.6 * lim.v_max, ac = 0.5 * lim.a_max;
  const double da = vc * vc / (2.0 * ac);
  auto time_at = [&](double A) {
    if (L >= 2.0 * da) {
      const double ta = vc / ac, total = 2.0 * ta + (L - 2.0 * da) / vc;
      if (A <= da) return std::sqrt(2.0 * A / ac);
      if (A <= L - da) return ta + (A - da) / vc;
      return total - std::sqrt(2.0 * std::max(0.0, L - A) / ac);
    }
    if (A <= 0.5 * L) return std::sqrt(2.0 * A / ac);
    return 2.0 * std::sqrt(L / ac) - std::sqrt(2.0 * std::max(0.0, L - A) / ac);
  };
  k.durations[0] = rot_time(k.p[1][1] - k.p[0][1]);
  k.durations[M - 1] = rot_time(k.p[M][1] - k.p[M - 1][1]);
  for (int i = 1; i <= Mt; ++i) {
    const double dq = max_dq(i);
    k.durations[i] = std::max({time_at(arc[i]) - time_at(arc[i - 1]),
                               std::abs(k.p[i + 1][1] - k.p[i][1]) / (0.6 * lim.omega_max),
                               dq / (0.6 * lim.qd_max), 0.05});
  }
  k.durations[1] = std::max(k.durations[1], 1.0);
  for (int i = 2; i <= M - 2; ++i)
    k.v[i] = (k.p[i + 1] - k.p[i - 1]) / (k.durations[i - 1] + k.durations[i]);
  return from_knots(N, w.front().xy(), k);
}

nlohmann::json trajectory_to_json(const Trajectory& traj) {
  traj.check();
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& c : traj.coefficients) {
    nlohmann::json piece = nlohmann::json::array();
    for (int ch = 0; ch < c.rows(); ++ch) {
      std::vector<double> row(6);
      for (int d = 0; d < 6; ++d) row[d] = c(ch, d);
      piece.push_back(row);
    }
    coeffs.push_back(piece);
  }
  return {{"pieces", traj.pieces()},
          {"n_joints", traj.n_joints},
          {"start_xy", {traj.start_xy.x(), traj.start_xy.y()}},
          {"durations", traj.durations},
          {"coefficients", coeffs},
          {"t_f", traj.t_f()}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.n_joints = j.at("n_joints").get<int>();
  t.start_xy = Vec2(j.at("start_xy").at(0).get<double>(), j.at("start_xy").at(1).get<double>());
  t.durations = j.at("durations").get<std::vector<double>>();
  for (const auto& piece : j.at("coefficients")) {
    Eigen::MatrixXd c(t.channels(), 6);
    if (static_cast<int>(piece.size()) != t.channels()) throw std::invalid_argument("trajectory channel mismatch");
    for (int ch = 0; ch < t.channels(); ++ch)
      for (int d = 0; d < 6; ++d) c(ch, d) = piece.at(ch).at(d).get<double>();
    t.coefficients.push_back(c);
  }
  if (j.at("pieces").get<int>() != t.pieces()) throw std::invalid_argument("trajectory piece count mismatch");
  t.check();
  return t;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << trajectory_to_json(traj).dump(1) << "\n";
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return trajectory_from_json(nlohmann::json::parse(in));
}

void OptWeights::check() const {
  if (!(time > 0 && jerk > 0 && clearance > 0 && limits > 0))
    throw std::invalid_argument("optimization weights must be positive");
}

std::string status_name(OptStatus s) {
  switch (s) {
    case OptStatus::kSuccess: return "success";
    case OptStatus::kFailed: return "failed";
    case OptStatus::kDiverged: return "diverged";
    case OptStatus::kCancelled: return "cancelled";
  }
  return "unknown";
}

TrajectoryObjective::TrajectoryObjective(const OptProblem& problem, const Trajectory& reference)
    : problem_(problem) {
  if (!problem.scene || !problem.model) throw std::invalid_argument("optimization problem needs a scene and a model");
  problem.config.weights.check();
  reference.check();
  if (reference.n_joints != problem.model->n_joints) throw std::invalid_argument("trajectory joint count mismatch");
  pieces_ = reference.pieces();
  channels_ = reference.channels();
  n_vars_ = channels_ * (pieces_ - 1) * 3 + 2 + pieces_;
  start_xy_ = reference.start_xy;
  start_values_ = reference.coefficients.front().col(0);
  goal_values_ = channel_values(problem.goal);
  const double th_f = reference.theta_f();
  theta_target_ = th_f + shortest_arc(th_f, problem.goal.theta);
}

Eigen::VectorXd TrajectoryObjective::pack(const Trajectory& traj) const {
  if (traj.pieces() != pieces_ || traj.channels() != channels_)
    throw std::invalid_argument("trajectory layout does not match the objective");
  Eigen::VectorXd x(n_vars_);
  const int M = pieces_;
  for (int ch = 0; ch < channels_; ++ch) {
    for (int k = 1; k < M; ++k) {
      const int i = ((ch * (M - 1)) + (k - 1)) * 3;
      x[i] = traj.coefficients[k](ch, 0);
      x[i + 1] = traj.coefficients[k](ch, 1);
      x[i + 2] = 2.0 * traj.coefficients[k](ch, 2);
    }
  }
  const int ia = channels_ * (M - 1) * 3;
  x[ia] = traj.a_f();
  x[ia + 1] = traj.theta_f();
  for (int k = 0; k < M; ++k) x[ia + 2 + k] = std::log(traj.durations[k]);
  return x;
}

Trajectory TrajectoryObjective::unpack(const Eigen::VectorXd& x) const {
  const int M = pieces_, C = channels_;
  const int ia = C * (M - 1) * 3;
  Knots k;
  k.p.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.v.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.a.assign(M + 1, Eigen::VectorXd::Zero(C));
  k.p[0] = start_values_;
  k.p[M] = goal_values_;
  k.p[M][0] = x[ia];
  k.p[M][1] = x[ia + 1];
  for (int ch = 0; ch < C; ++ch) {
    for (int i = 1; i < M; ++i) {
      const int j = ((ch * (M - 1)) + (i - 1)) * 3;
      k.p[i][ch] = x[j];
      k.v[i][ch] = x[j + 1];
      k.a[i][ch] = x[j + 2];
    }
  }
  for (int i = 0; i < M; ++i) k.durations.push_back(std::exp(x[ia + 2 + i]));
  Trajectory t = from_knots(C - 2, start_xy_, k);
  // keep the start exact even where the Hermite map rounds
  for (int ch = 0; ch < C; ++ch) t.coefficients[0](ch, 0) = start_values_[ch];
  return t;
}

double TrajectoryObjective::evaluate(const Eigen::VectorXd& x, double w_b, Eigen::VectorXd& grad,
                                     int* violations) const {
  const OptConfig& cfg = problem_.config;
  const RobotModel& model = *problem_.model;
  const Scene& scene = *problem_.scene;
  const KinodynamicLimits& lim = model.limits;
  const int M = pieces_, C = channels_, N = C - 2, K = cfg.samples_per_piece;
  const int ia = C * (M - 1) * 3, ith = ia + 1, iz = ia + 2;
  grad.setZero(n_vars_);
  int viol = 0;

  auto var = [&](int ch, int k, int d) { return ((ch * (M - 1)) + (k - 1)) * 3 + d; };
  auto knot = [&](int ch, int k, int d) -> double {
    if (k == 0) return d == 0 ? start_values_[ch] : 0.0;
    if (k == M) {
      if (d != 0) return 0.0;
      if (ch == 0) return x[ia];
      if (ch == 1) return x[ith];
      return goal_values_[ch];
    }
    return x[var(ch, k, d)];
  };
  auto knot_grad = [&](int ch, int k, int d, double g) {
    if (k == 0) return;
    if (k == M) {
      if (d == 0 && ch < 2) grad[ch == 0 ? ia : ith] += g;
      return;
    }
    grad[var(ch, k, d)] += g;
  };

  std::vector<double> T(M);
  for (int k = 0; k < M; ++k) {
    T[k] = std::exp(x[iz + k]);
    if (!std::isfinite(T[k]) || T[k] <= 0.0) return std::numeric_limits<double>::infinity();
  }

  // normalized-time coefficients and their gradients
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>> cs(M), gc(M);
  std::vector<double> gT(M, 0.0);
  for (int k = 0; k < M; ++k) {
    cs[k].resize(C, 6);
    gc[k].setZero(C, 6);
    for (int ch = 0; ch < C; ++ch) {
      const double t = T[k];
      const Coeffs c = hermite(knot(ch, k, 0), knot(ch, k, 1) * t, knot(ch, k, 2) * t * t, knot(ch, k + 1, 0),
                               knot(ch, k + 1, 1) * t, knot(ch, k + 1, 2) * t * t);
      for (int d = 0; d < 6; ++d) cs[k](ch, d) = c[d];
    }
  }

  double f = 0.0;
  const OptWeights& w = cfg.weights;

  // time and jerk
  for (int k = 0; k < M; ++k) {
    f += w.time * T[k];
    gT[k] += w.time;
    const double inv5 = 1.0 / std::pow(T[k], 5);
    for (int ch = 0; ch < C; ++ch) {
      const double al = 6.0 * cs[k](ch, 3), be = 24.0 * cs[k](ch, 4), ga = 60.0 * cs[k](ch, 5);
      const double J = al * al + al * be + (be * be + 2.0 * al * ga) / 3.0 + be * ga / 2.0 + ga * ga / 5.0;
      f += w.jerk * J * inv5;
      gT[k] += -5.0 * w.jerk * J * inv5 / T[k];
      const double s = w.jerk * inv5;
      gc[k](ch, 3) += s * 6.0 * (2.0 * al + be + 2.0 * ga / 3.0);
      gc[k](ch, 4) += s * 24.0 * (al + 2.0 * be / 3.0 + ga / 2.0);
      gc[k](ch, 5) += s * 60.0 * (2.0 * al / 3.0 + be / 2.0 + 2.0 * ga / 5.0);
    }
  }

  // hinge helper: returns d(penalty)/d(value)
  auto hinge = [&](double value, double bound, double weight) {
    const double h = std::abs(value) - bound;
    if (h <= 0.0) return 0.0;
    f += weight * h * h;
    return 2.0 * weight * h * (value > 0 ? 1.0 : -1.0);
  };

  const auto& gx8 = cached_nodes(8, false);
  const auto& gw8 = cached_nodes(8, true);
  const double reach = chain_reach(model) + cfg.margin + 0.05;
  std::vector<double> dX(static_cast<std::size_t>(M) * K, 0.0), dY(static_cast<std::size_t>(M) * K, 0.0);
  std::vector<int> subset;
  Eigen::MatrixX3d centers;
  Vec2 pos = start_xy_;
  const double ls = cfg.limit_scale;

  for (int k = 0; k < M; ++k) {
    const double t = T[k];
    const double* ca = cs[k].row(0).data();
    const double* cth = cs[k].row(1).data();
    for (int j = 1; j <= K; ++j) {
      const double s0 = static_cast<double>(j - 1) / K, s1 = static_cast<double>(j) / K;
      for (std::size_t n = 0; n < gx8.size(); ++n) {
        const double s = s0 + (s1 - s0) * gx8[n];
        const double ang = poly(cth, s);
        pos += gw8[n] * (s1 - s0) * poly_d(ca, s) * Vec2(std::cos(ang), std::sin(ang));
      }
      const double s = s1;
      double sp[6], dsp[6], ddsp[6];
      sp[0] = 1.0;
      for (int d = 1; d < 6; ++d) sp[d] = sp[d - 1] * s;
      dsp[0] = 0.0;
      ddsp[0] = ddsp[1] = 0.0;
      for (int d = 1; d < 6; ++d) dsp[d] = d * sp[d - 1];
      for (int d = 2; d < 6; ++d) ddsp[d] = d * (d - 1) * sp[d - 2];

      RobotState st;
      st.x = pos.x();
      st.y = pos.y();
      st.q.resize(N);
      for (int ch = 0; ch < C; ++ch) {
        const double* c = cs[k].row(ch).data();
        const double val = poly(c, s), vel = poly_d(c, s) / t, acc = poly_dd(c, s) / (t * t);
        double vb, ab;
        if (ch == 0) {
          vb = lim.v_max;
          ab = lim.a_max;
        } else if (ch == 1) {
          vb = lim.omega_max;
          ab = lim.alpha_max;
        } else {
          vb = lim.qd_max;
          ab = lim.qdd_max;
        }
        if (std::abs(vel) > vb || std::abs(acc) > ab) ++viol;
        double gv = hinge(vel, ls * vb, w.limits);
        if (ch == 0 && vel < 0.0) {
          // forward driving only, so the base path never doubles back
          f += w.limits * vel * vel;
          gv += 2.0 * w.limits * vel;
        }
        const double ga = hinge(acc, ls * ab, w.limits);
        for (int d = 0; d < 6; ++d) gc[k](ch, d) += gv * dsp[d] / t + ga * ddsp[d] / (t * t);
        gT[k] += gv * (-vel / t) + ga * (-2.0 * acc / t);
        if (ch == 1) st.theta = val;
        if (ch >= 2) {
          const int jn = ch - 2;
          st.q[jn] = val;
          if (val < model.q_min[jn] || val > model.q_max[jn]) ++viol;
          const double lo = model.q_min[jn] + cfg.joint_margin, hi = model.q_max[jn] - cfg.joint_margin;
          double gq = 0.0;
          if (val > hi) {
            f += w.limits * (val - hi) * (val - hi);
            gq = 2.0 * w.limits * (val - hi);
          } else if (val < lo) {
            f += w.limits * (lo - val) * (lo - val);
            gq = -2.0 * w.limits * (lo - val);
          }
          for (int d = 0; d < 6; ++d) gc[k](ch, d) += gq * sp[d];
        }
      }

      // clearance at the collision spheres
      const ChainPose pose = chain_pose(model, st);
      scene.nearby(pose.t[0], reach, subset);
      if (subset.empty()) continue;
      collision_centers(model, pose, centers);
      Eigen::VectorXd gs = Eigen::VectorXd::Zero(3 + N);
      bool any = false;
      for (int sp_i = 0; sp_i < model.sphere_count(); ++sp_i) {
        Vec3 g;
        const double d = scene.sdf_subset(centers.row(sp_i).transpose(), subset, &g) - model.spheres[sp_i].radius;
        if (d <= 0.0) ++viol;
        if (d >= cfg.margin) continue;
        const double h = cfg.margin - d;
        f += w.clearance * h * h;
        const Vec3 dc = -2.0 * w.clearance * h * g;
        gs += sphere_jacobian(model, pose, sp_i).transpose() * dc;
        any = true;
      }
      if (!any) continue;
      dX[k * K + j - 1] = gs[0];
      dY[k * K + j - 1] = gs[1];
      for (int d = 0; d < 6; ++d) gc[k](1, d) += gs[2] * sp[d];
      for (int jn = 0; jn < N; ++jn)
        for (int d = 0; d < 6; ++d) gc[k](2 + jn, d) += gs[3 + jn] * sp[d];
    }
  }

  // sample positions depend on every earlier sub-interval
  double Gx = 0.0, Gy = 0.0;
  for (int k = M - 1; k >= 0; --k) {
    const double* ca = cs[k].row(0).data();
    const double* cth = cs[k].row(1).data();
    for (int j = K; j >= 1; --j) {
      Gx += dX[k * K + j - 1];
      Gy += dY[k * K + j - 1];
      if (Gx == 0.0 && Gy == 0.0) continue;
      const double s0 = static_cast<double>(j - 1) / K, s1 = static_cast<double>(j) / K;
      for (std::size_t n = 0; n < gx8.size(); ++n) {
        const double s = s0 + (s1 - s0) * gx8[n];
        const double wh = gw8[n] * (s1 - s0);
        const double ang = poly(cth, s), c = std::cos(ang), sn = std::sin(ang), va = poly_d(ca, s);
        const double ga = wh * (Gx * c + Gy * sn), gth = wh * va * (-Gx * sn + Gy * c);
        double p = 1.0;
        for (int d = 0; d < 6; ++d) {
          if (d > 0) gc[k](0, d) += ga * d * (d > 1 ? p / s : 1.0);
          gc[k](1, d) += gth * p;
          p *= s;
        }
      }
    }
  }

  // boundary penalty from the 16-node quadrature
  const auto& gx16 = cached_nodes(16, false);
  const auto& gw16 = cached_nodes(16, true);
  Vec2 r = start_xy_ - problem_.goal.xy();
  for (int k = 0; k < M; ++k) {
    const double* ca = cs[k].row(0).data();
    const double* cth = cs[k].row(1).data();
    for (std::size_t n = 0; n < gx16.size(); ++n) {
      const double s = gx16[n], ang = poly(cth, s);
      r += gw16[n] * poly_d(ca, s) * Vec2(std::cos(ang), std::sin(ang));
    }
  }
  const double eth = x[ith] - theta_target_;
  f += w_b * (r.squaredNorm() + eth * eth);
  grad[ith] += 2.0 * w_b * eth;
  const Vec2 G = 2.0 * w_b * r;
  for (int k = 0; k < M; ++k) {
    const double* ca = cs[k].row(0).data();
    const double* cth = cs[k].row(1).data();
    for (std::size_t n = 0; n < gx16.size(); ++n) {
      const double s = gx16[n], ang = poly(cth, s), c = std::cos(ang), sn = std::sin(ang);
      const double ga = gw16[n] * (G.x() * c + G.y() * sn);
      const double gth = gw16[n] * poly_d(ca, s) * (-G.x() * sn + G.y() * c);
      double p = 1.0;
      for (int d = 0; d < 6; ++d) {
        if (d > 0) gc[k](0, d) += ga * d * (d > 1 ? p / s : 1.0);
        gc[k](1, d) += gth * p;
        p *= s;
      }
    }
  }

  // chain through the Hermite map
  for (int k = 0; k < M; ++k) {
    const double t = T[k];
    for (int ch = 0; ch < C; ++ch) {
      const auto gu = hermite_transpose(gc[k].row(ch).data());
      const double v0 = knot(ch, k, 1), a0 = knot(ch, k, 2), v1 = knot(ch, k + 1, 1), a1 = knot(ch, k + 1, 2);
      knot_grad(ch, k, 0, gu[0]);
      knot_grad(ch, k, 1, gu[1] * t);
      knot_grad(ch, k, 2, gu[2] * t * t);
      knot_grad(ch, k + 1, 0, gu[3]);
      knot_grad(ch, k + 1, 1, gu[4] * t);
      knot_grad(ch, k + 1, 2, gu[5] * t * t);
      gT[k] += gu[1] * v0 + gu[2] * 2.0 * a0 * t + gu[4] * v1 + gu[5] * 2.0 * a1 * t;
    }
    grad[iz + k] += gT[k] * t;
  }
  if (violations) *violations = viol;
  return f;
}

OptResult optimize(const OptProblem& problem, const Trajectory& traj0, std::stop_token stop) {
  const OptConfig& cfg = problem.config;
  TrajectoryObjective obj(problem, traj0);
  Eigen::VectorXd x = obj.pack(traj0);
  OptResult out;
  out.traj = traj0;
  double w_b = cfg.boundary_weight;
  int left = cfg.max_iters;
  Eigen::VectorXd g;
  if (!x.allFinite() || !std::isfinite(obj.evaluate(x, w_b, g))) {
    out.status = OptStatus::kDiverged;
    out.objective = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  bool cancelled = false, diverged = false;
  for (int round = 0; round < cfg.max_rounds && left > 0; ++round) {
    LbfgsConfig lc;
    lc.memory = cfg.lbfgs_memory;
    lc.max_iters = std::min(left, cfg.round_iters);
    lc.rel_tol = 1e-10;
    const Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& gr) { return obj.evaluate(v, w_b, gr); };
    const LbfgsResult res = lbfgs_minimize(f, x, lc, [&] { return stop.stop_requested(); });
    out.iterations += res.iterations;
    left -= std::max(1, res.iterations);
    out.rounds = round + 1;
    if (res.status == LbfgsStatus::kDiverged) {
      diverged = true;
      break;
    }
    x = res.x;
    if (res.status == LbfgsStatus::kStopped) {
      cancelled = true;
      break;
    }
    const Trajectory t = obj.unpack(x);
    const double resid = boundary_residual(t, problem.start, problem.goal).norm();
    const double herr = std::abs(t.theta_f() - obj.theta_target());
    if (resid < cfg.tolerance && herr < cfg.tolerance) break;
    if (round + 1 < cfg.max_rounds) w_b *= cfg.escalation;
  }
  out.traj = obj.unpack(x);
  out.final_weight = w_b;
  out.objective = obj.evaluate(x, w_b, g, &out.violations);
  out.residual = boundary_residual(out.traj, problem.start, problem.goal).norm();
  out.heading_error = std::abs(out.traj.theta_f() - obj.theta_target());
  if (diverged) {
    out.status = OptStatus::kDiverged;
  } else if (cancelled) {
    out.status = OptStatus::kCancelled;
  } else if (out.residual < cfg.tolerance && out.heading_error < cfg.tolerance && out.violations == 0) {
    out.status = OptStatus::kSuccess;
  } else {
    out.status = OptStatus::kFailed;
  }
  return out;
}

ParallelResult optimize_parallel(const OptProblem& problem, const std::vector<Trajectory>& seeds, int workers) {
  const auto t0 = std::chrono::steady_clock::now();
  ParallelResult out;
  const int n = static_cast<int>(seeds.size());
  if (n == 0) throw std::invalid_argument("optimize_parallel needs at least one seed");
  if (workers <= 0) workers = worker_count();
  workers = std::clamp(workers, 1, n);

  std::vector<std::stop_source> sources(n);
  std::vector<OptResult> results(n);
  std::vector<char> validated(n, 0);
  std::vector<double> rank_seconds(n, 0.0);
  std::atomic<int> next{0};
  std::atomic<int> best_success{n};
  std::mutex mu;

  auto run = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= n) return;
      if (r > best_success.load()) {
        results[r].status = OptStatus::kCancelled;
        results[r].traj = seeds[r];
        continue;
      }
      OptResult res;
      const auto r0 = std::chrono::steady_clock::now();
      try {
        res = optimize(problem, seeds[r], sources[r].get_token());
      } catch (const std::exception&) {
        res.status = OptStatus::kFailed;
        res.traj = seeds[r];
        res.objective = std::numeric_limits<double>::infinity();
      }
      bool ok = false;
      if (res.status == OptStatus::kSuccess)
        ok = validate_trajectory(res.traj, *problem.scene, *problem.model, &problem.goal).ok;
      rank_seconds[r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
      std::lock_guard lock(mu);
      results[r] = std::move(res);
      validated[r] = ok;
      if (ok && r < best_success.load()) {
        best_success.store(r);
        for (int i = r + 1; i < n; ++i) sources[i].request_stop();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (int i = 1; i < workers; ++i) pool.emplace_back(run);
  run();
  pool.clear();

  for (int r = 0; r < n; ++r) {
    out.statuses.push_back(results[r].status);
    out.rank_iterations.push_back(results[r].iterations);
  }
  out.rank_seconds = rank_seconds;
  const int win = best_success.load();
  if (win < n) {
    out.success = true;
    out.winner = win;
    out.best = results[win];
    for (int r = 0; r <= win; ++r) out.total_iterations += results[r].iterations;
  } else {
    int best = 0;
    for (int r = 0; r < n; ++r) {
      out.total_iterations += results[r].iterations;
      const double fr = std::isfinite(results[r].objective) ? results[r].objective : 1e300;
      const double fb = std::isfinite(results[best].objective) ? results[best].objective : 1e300;
      if (fr < fb) best = r;
    }
    out.best = results[best];
    out.winner = -1;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace momaplan
