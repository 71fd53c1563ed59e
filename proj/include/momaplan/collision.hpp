#pragma once

#include "momaplan/robot.hpp"
#include "momaplan/scene.hpp"

namespace momaplan {

/// Upper bound on how far any collision sphere reaches from the base origin.
double chain_reach(const RobotModel& model);

/// min_k sdf(c_k) - r_k over the robot's collision spheres.
double state_clearance(const Scene& scene, const RobotModel& model, const RobotState& s, int* worst_sphere = nullptr);

/// Joint limits hold and every sphere clears the scene by more than `margin`.
bool state_valid(const Scene& scene, const RobotModel& model, const RobotState& s, double margin = 0.0);

/// Straight interpolation in the full state space: linear base position,
/// shortest-arc heading, linear joints.
RobotState interpolate(const RobotState& a, const RobotState& b, double u);

/// Number of sub-steps so that no step moves the base more than `pos_step`
/// or any angle more than `rot_step`.
int segment_steps(const RobotState& a, const RobotState& b, double pos_step = 0.02, double rot_step = 0.05);

/// Checks the interior and the far endpoint of the segment a -> b; `a` itself is assumed checked.
bool segment_free(const Scene& scene, const RobotModel& model, const RobotState& a, const RobotState& b,
                  double pos_step = 0.02, double rot_step = 0.05, double margin = 0.0);

/// Weighted state metric: base position 1.0, heading 0.5, joints 0.3 each.
double state_metric(const RobotState& a, const RobotState& b);

}  // namespace momaplan
