#include "momaplan/collision.hpp"

#include <algorithm>
#include <limits>

namespace momaplan {

double chain_reach(const RobotModel& model) {
  double r = 0.0;
  for (const auto& l : model.links) r += l.norm();
  for (const auto& s : model.spheres) r = std::max(r, s.offset.norm() + s.radius);
  return r + model.max_sphere_radius();
}

double state_clearance(const Scene& scene, const RobotModel& model, const RobotState& s, int* worst_sphere) {
  const ChainPose pose = chain_pose(model, s);
  Eigen::MatrixX3d centers;
  collision_centers(model, pose, centers);
  thread_local std::vector<int> subset;
  scene.nearby(pose.t[0], chain_reach(model) + 0.05, subset);
  double best = std::numeric_limits<double>::infinity();
  int worst = -1;
  if (subset.empty()) {
    if (worst_sphere) *worst_sphere = -1;
    return best;
  }
  for (int k = 0; k < model.sphere_count(); ++k) {
    const double c = scene.sdf_subset(centers.row(k).transpose(), subset, nullptr) - model.spheres[k].radius;
    if (c < best) {
      best = c;
      worst = k;
    }
  }
  if (worst_sphere) *worst_sphere = worst;
  return best;
}

bool state_valid(const Scene& scene, const RobotModel& model, const RobotState& s, double margin) {
  return within_limits(model, s) && state_clearance(scene, model, s) > margin;
}

RobotState interpolate(const RobotState& a, const RobotState& b, double u) {
  RobotState s;
  s.x = a.x + u * (b.x - a.x);
  s.y = a.y + u * (b.y - a.y);
  s.theta = wrap_angle(a.theta + u * shortest_arc(a.theta, b.theta));
  s.q = a.q + u * (b.q - a.q);
  return s;
}

int segment_steps(const RobotState& a, const RobotState& b, double pos_step, double rot_step) {
  const double dp = std::hypot(b.x - a.x, b.y - a.y);
  double dr = std::abs(shortest_arc(a.theta, b.theta));
  if (a.q.size() > 0) dr = std::max(dr, (b.q - a.q).cwiseAbs().maxCoeff());
  const int n = static_cast<int>(std::ceil(std::max(dp / pos_step, dr / rot_step)));
  return std::max(1, n);
}

bool segment_free(const Scene& scene, const RobotModel& model, const RobotState& a, const RobotState& b,
                  double pos_step, double rot_step, double margin) {
  const int n = segment_steps(a, b, pos_step, rot_step);
  for (int k = 1; k <= n; ++k) {
    const RobotState s = k == n ? b : interpolate(a, b, static_cast<double>(k) / n);
    if (!state_valid(scene, model, s, margin)) return false;
  }
  return true;
}

double state_metric(const RobotState& a, const RobotState& b) {
  const double dp2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
  const double dth = 0.5 * shortest_arc(a.theta, b.theta);
  const double dq2 = (0.3 * (b.q - a.q)).squaredNorm();
  return std::sqrt(dp2 + dth * dth + dq2);
}

}  // namespace momaplan
