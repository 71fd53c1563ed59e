#include "momaplan/robot.hpp"

#include <fstream>
#include <stdexcept>

namespace momaplan {

RobotModel RobotModel::default_model() {
  RobotModel m;
  m.n_joints = 7;
  m.links.push_back(Vec3(0.0, 0.0, 0.35));
  for (double len : {0.16, 0.11, 0.32, 0.09, 0.32, 0.09, 0.16}) m.links.push_back(Vec3(0.0, 0.0, len));
  m.q_min.resize(7);
  m.q_max.resize(7);
  for (int i = 0; i < 7; ++i) {
    m.axes.push_back(i % 2 == 0 ? JointAxis::kZ : JointAxis::kY);
    const double lim = i % 2 == 0 ? 2.8 : 1.7;
    m.q_min[i] = -lim;
    m.q_max[i] = lim;
  }
  m.spheres.push_back({0, Vec3(0.0, 0.0, 0.15), 0.32});
  m.spheres.push_back({0, Vec3(0.0, 0.0, 0.35), 0.32});
  for (int j = 2; j <= 8; ++j) {
    for (double f : {0.25, 0.75}) m.spheres.push_back({j, f * m.links[j - 1], 0.06});
  }
  m.check();
  return m;
}

void RobotModel::check() const {
  if (n_joints < 1) throw std::invalid_argument("robot needs at least one joint");
  if (static_cast<int>(links.size()) != n_joints + 1) throw std::invalid_argument("robot needs N_m + 1 link vectors");
  if (static_cast<int>(axes.size()) != n_joints) throw std::invalid_argument("robot needs one axis per joint");
  if (q_min.size() != n_joints || q_max.size() != n_joints) throw std::invalid_argument("joint limit size mismatch");
  for (int i = 0; i < n_joints; ++i) {
    if (!(q_min[i] < q_max[i])) throw std::invalid_argument("joint limits need q_min < q_max");
  }
  if (!(base_radius > 0.0 && base_height > 0.0)) throw std::invalid_argument("base dimensions must be > 0");
  if (spheres.empty()) throw std::invalid_argument("robot needs collision spheres");
  for (const auto& s : spheres) {
    if (s.radius <= 0.0) throw std::invalid_argument("collision radii must be > 0");
    if (s.link < 0 || s.link > n_joints + 1) throw std::invalid_argument("collision sphere link out of range");
  }
}

double RobotModel::max_sphere_radius() const {
  double r = 0.0;
  for (const auto& s : spheres) r = std::max(r, s.radius);
  return r;
}

Vec3 TaskFrame::to_task(const Vec3& p) const {
  return rot_z(-theta_d) * (p - Vec3(origin.x(), origin.y(), 0.0));
}

Vec3 TaskFrame::to_world(const Vec3& p) const {
  return rot_z(theta_d) * p + Vec3(origin.x(), origin.y(), 0.0);
}

Vec2 TaskFrame::to_task(const Vec2& p) const {
  const double c = std::cos(theta_d), s = std::sin(theta_d);
  const Vec2 d = p - origin;
  return Vec2(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
}

Vec2 TaskFrame::to_world(const Vec2& p) const {
  const double c = std::cos(theta_d), s = std::sin(theta_d);
  return Vec2(c * p.x() - s * p.y(), s * p.x() + c * p.y()) + origin;
}

RobotState TaskFrame::to_task(const RobotState& s) const {
  RobotState out = s;
  const Vec2 p = to_task(s.xy());
  out.x = p.x();
  out.y = p.y();
  out.theta = wrap_angle(s.theta - theta_d);
  return out;
}

RobotState TaskFrame::to_world(const RobotState& s) const {
  RobotState out = s;
  const Vec2 p = to_world(s.xy());
  out.x = p.x();
  out.y = p.y();
  out.theta = wrap_angle(s.theta + theta_d);
  return out;
}

TaskFrame task_frame(const RobotState& start, const RobotState& goal) {
  TaskFrame f;
  f.origin = start.xy();
  const Vec2 d = goal.xy() - start.xy();
  f.theta_d = (d.x() == 0.0 && d.y() == 0.0) ? start.theta : std::atan2(d.y(), d.x());
  return f;
}

namespace {

Mat3 joint_rotation(JointAxis axis, double q) { return axis == JointAxis::kZ ? rot_z(q) : rot_y(q); }

Vec3 axis_vector(JointAxis axis) { return axis == JointAxis::kZ ? Vec3::UnitZ() : Vec3::UnitY(); }

}  // namespace

ChainPose chain_pose(const RobotModel& model, const RobotState& s) {
  const int n = model.n_joints;
  if (s.q.size() != n) throw std::invalid_argument("state joint count does not match the robot model");
  ChainPose pose;
  pose.t.resize(n + 2);
  pose.r_cum.resize(n + 2);
  pose.joint_axis_world.assign(n + 1, Vec3::Zero());
  pose.t[0] = Vec3(s.x, s.y, 0.0);
  pose.r_cum[0] = rot_z(s.theta);
  pose.r_cum[1] = pose.r_cum[0];
  for (int j = 2; j <= n + 1; ++j) {
    const int i = j - 2;  // joint q_i, 1-based; i = 0 keeps R_cum(2) = R_theta
    pose.r_cum[j] = i == 0 ? pose.r_cum[1] : Mat3(pose.r_cum[j - 1] * joint_rotation(model.axes[i - 1], s.q[i - 1]));
  }
  for (int j = 1; j <= n + 1; ++j) pose.t[j] = pose.t[j - 1] + pose.r_cum[j] * model.links[j - 1];
  for (int i = 1; i <= n; ++i) {
    // joint i is applied after R_cum(i+1), so its world axis is R_cum(i+1) * axis_i
    pose.joint_axis_world[i] = pose.r_cum[i + 1] * axis_vector(model.axes[i - 1]);
  }
  return pose;
}

std::vector<Keypoint> keypoints(const RobotModel& model, const RobotState& s) {
  const ChainPose pose = chain_pose(model, s);
  std::vector<Keypoint> kp(model.n_joints + 2);
  kp[0] = {pose.t[0], std::cos(s.theta)};
  kp[1] = {pose.t[1], std::sin(s.theta)};
  for (int j = 2; j <= model.n_joints + 1; ++j) kp[j] = {pose.t[j], normalize_joint(model, j - 2, s.q[j - 2])};
  return kp;
}

void point_jacobian(const RobotModel& model, const ChainPose& pose, int link, const Vec3& p,
                    Eigen::Ref<Eigen::MatrixXd> jac) {
  jac.setZero();
  jac(0, 0) = 1.0;
  jac(1, 1) = 1.0;
  const Vec3 d0 = p - pose.t[0];
  jac.col(2) = Vec3::UnitZ().cross(d0);
  // joint i pivots at t_{i+1} and moves every link j >= i + 2
  for (int i = 1; i <= model.n_joints && i + 2 <= link; ++i) {
    jac.col(2 + i) = pose.joint_axis_world[i].cross(p - pose.t[i + 1]);
  }
}

Eigen::MatrixXd keypoints_jacobian(const RobotModel& model, const RobotState& s) {
  const ChainPose pose = chain_pose(model, s);
  const int nk = model.n_joints + 2;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * nk, 3 + model.n_joints);
  // keypoint k_j is the far end of link j, i.e. it moves like a point attached to link j
  for (int j = 0; j < nk; ++j) point_jacobian(model, pose, j, pose.t[j], jac.block(3 * j, 0, 3, 3 + model.n_joints));
  return jac;
}

double normalize_joint(const RobotModel& model, int i, double q) {
  return ((q - model.q_min[i]) - (model.q_max[i] - q)) / (model.q_max[i] - model.q_min[i]);
}

double denormalize_joint(const RobotModel& model, int i, double qn) {
  return 0.5 * (qn * (model.q_max[i] - model.q_min[i]) + model.q_max[i] + model.q_min[i]);
}

void collision_centers(const RobotModel& model, const ChainPose& pose, Eigen::MatrixX3d& centers) {
  centers.resize(model.sphere_count(), 3);
  for (int k = 0; k < model.sphere_count(); ++k) {
    const auto& sp = model.spheres[k];
    const Vec3 origin = sp.link == 0 ? pose.t[0] : pose.t[sp.link - 1];
    centers.row(k) = (origin + pose.r_cum[sp.link] * sp.offset).transpose();
  }
}

CollisionPoints collision_points(const RobotModel& model, const RobotState& s) {
  CollisionPoints cp;
  collision_centers(model, chain_pose(model, s), cp.centers);
  cp.radii.resize(model.sphere_count());
  for (int k = 0; k < model.sphere_count(); ++k) cp.radii[k] = model.spheres[k].radius;
  return cp;
}

Eigen::MatrixXd sphere_jacobian(const RobotModel& model, const ChainPose& pose, int k) {
  const auto& sp = model.spheres[k];
  const Vec3 origin = sp.link == 0 ? pose.t[0] : pose.t[sp.link - 1];
  const Vec3 p = origin + pose.r_cum[sp.link] * sp.offset;
  Eigen::MatrixXd jac(3, 3 + model.n_joints);
  point_jacobian(model, pose, sp.link, p, jac);
  return jac;
}

RobotState state_from_path_state(const RobotModel& model, const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (row.size() != model.state_dim()) throw std::invalid_argument("path state has the wrong width");
  if (row[2] == 0.0 && row[3] == 0.0) throw std::invalid_argument("degenerate heading");
  RobotState s;
  s.x = row[0];
  s.y = row[1];
  s.theta = std::atan2(row[3], row[2]);
  s.q = row.tail(model.n_joints);
  return s;
}

Eigen::VectorXd path_state_from_state(const RobotState& s) {
  Eigen::VectorXd row(4 + s.q.size());
  row << s.x, s.y, std::cos(s.theta), std::sin(s.theta), s.q;
  return row;
}

bool within_limits(const RobotModel& model, const RobotState& s, double tol) {
  for (int i = 0; i < model.n_joints; ++i) {
    if (s.q[i] < model.q_min[i] - tol || s.q[i] > model.q_max[i] + tol) return false;
  }
  return true;
}

Eigen::VectorXd sample_joints(const RobotModel& model, Rng& rng, double spread) {
  Eigen::VectorXd q(model.n_joints);
  for (int i = 0; i < model.n_joints; ++i) {
    const double mid = 0.5 * (model.q_min[i] + model.q_max[i]);
    const double half = 0.5 * (model.q_max[i] - model.q_min[i]) * spread;
    q[i] = uniform(rng, mid - half, mid + half);
  }
  return q;
}

namespace {

nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 json_vec3(const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); }

}  // namespace

nlohmann::json robot_to_json(const RobotModel& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["N_m"] = m.n_joints;
  j["links"] = nlohmann::json::array();
  for (const auto& l : m.links) j["links"].push_back(vec3_json(l));
  j["axes"] = nlohmann::json::array();
  for (auto a : m.axes) j["axes"].push_back(a == JointAxis::kZ ? "Z" : "Y");
  j["limits"] = nlohmann::json::array();
  for (int i = 0; i < m.n_joints; ++i) j["limits"].push_back({m.q_min[i], m.q_max[i]});
  j["base"] = {{"radius", m.base_radius}, {"height", m.base_height}};
  j["collision_points"] = nlohmann::json::array();
  for (const auto& s : m.spheres) {
    j["collision_points"].push_back({{"link", s.link}, {"offset", vec3_json(s.offset)}, {"radius", s.radius}});
  }
  const auto& k = m.limits;
  j["kinodynamic"] = {{"v_max", k.v_max},     {"omega_max", k.omega_max}, {"a_max", k.a_max},
                      {"alpha_max", k.alpha_max}, {"qd_max", k.qd_max},   {"qdd_max", k.qdd_max}};
  return j;
}

RobotModel robot_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw std::runtime_error("unsupported robot file version");
  RobotModel m;
  m.n_joints = j.at("N_m");
  for (const auto& l : j.at("links")) m.links.push_back(json_vec3(l));
  for (const auto& a : j.at("axes")) {
    const std::string s = a;
    if (s != "Z" && s != "Y") throw std::runtime_error("joint axis must be Z or Y");
    m.axes.push_back(s == "Z" ? JointAxis::kZ : JointAxis::kY);
  }
  m.q_min.resize(m.n_joints);
  m.q_max.resize(m.n_joints);
  const auto& lim = j.at("limits");
  if (static_cast<int>(lim.size()) != m.n_joints) throw std::runtime_error("joint limit count mismatch");
  for (int i = 0; i < m.n_joints; ++i) {
    m.q_min[i] = lim[i].at(0);
    m.q_max[i] = lim[i].at(1);
  }
  if (j.contains("base")) {
    m.base_radius = j["base"].value("radius", m.base_radius);
    m.base_height = j["base"].value("height", m.base_height);
  }
  for (const auto& c : j.at("collision_points")) {
    m.spheres.push_back({c.at("link").get<int>(), json_vec3(c.at("offset")), c.at("radius").get<double>()});
  }
  if (j.contains("kinodynamic")) {
    const auto& k = j["kinodynamic"];
    m.limits.v_max = k.value("v_max", m.limits.v_max);
    m.limits.omega_max = k.value("omega_max", m.limits.omega_max);
    m.limits.a_max = k.value("a_max", m.limits.a_max);
    m.limits.alpha_max = k.value("alpha_max", m.limits.alpha_max);
    m.limits.qd_max = k.value("qd_max", m.limits.qd_max);
    m.limits.qdd_max = k.value("qdd_max", m.limits.qdd_max);
  }
  m.check();
  return m;
}

void save_robot(const RobotModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << robot_to_json(model).dump(1) << "\n";
}

RobotModel load_robot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return robot_from_json(nlohmann::json::parse(in));
}

}  // namespace momaplan
