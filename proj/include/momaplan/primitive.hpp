#pragma once

#include <string>
#include <vector>

#include "momaplan/path.hpp"

namespace momaplan {

/// K centroid paths in the task-frame feature space (normalized joints).
struct PrimitiveLibrary {
  int n_tau = 64;
  int n_joints = 7;
  std::vector<Eigen::MatrixXd> centroids;
  int iterations = 0;
  double inertia = 0.0;
  std::vector<double> inertia_history;

  int size() const { return static_cast<int>(centroids.size()); }
  Path centroid_path(int k, const RobotModel& model) const;
};

struct ClusterConfig {
  int k = 32;
  int max_iters = 100;
  bool base_only = false;  // cluster on the first four columns only
};

PrimitiveLibrary build_library(const std::vector<Eigen::MatrixXd>& features, const ClusterConfig& config,
                               std::uint64_t seed);
PrimitiveLibrary build_library(const std::vector<Path>& dataset, const RobotModel& model,
                               const ClusterConfig& config, std::uint64_t seed);

struct PrimitiveMatch {
  int index = -1;
  double distance = 0.0;
};

/// Nearest centroid under the Frobenius distance; ties go to the lowest index.
PrimitiveMatch truth_primitive(const PrimitiveLibrary& lib, const Eigen::MatrixXd& features);
PrimitiveMatch truth_primitive(const PrimitiveLibrary& lib, const Path& path, const RobotModel& model);

void save_library(const PrimitiveLibrary& lib, const std::string& path);
PrimitiveLibrary load_library(const std::string& path);

}  // namespace momaplan
