#pragma once

#include <memory>
#include <string>
#include <vector>

#include "momaplan/diffusion.hpp"
#include "momaplan/path.hpp"
#include "momaplan/scene.hpp"

namespace momaplan {

struct LossWeights {
  double safe = 50.0;
  double smooth = 0.1;
  double unip = 20.0;
  double recon = 1.0;
  double focal = 1.0;
  double gamma = 2.0;

  void check() const;
};

struct LossGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;  // same shape as the input path matrix
};

// Geometric losses act on path matrices [x, y, c, s, q] with raw joint angles.

/// (1/N) sum_i sum_j ReLU(r_j - sdf(c_ij)) with the heading taken as atan2(s, c).
LossGrad loss_safe(const Eigen::MatrixXd& path, const Scene& scene, const RobotModel& model);
LossGrad loss_smooth(const Eigen::MatrixXd& path, const Eigen::MatrixXd& truth);
LossGrad loss_unip(const Eigen::MatrixXd& path, const Eigen::MatrixXd& truth);

struct FocalGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};
FocalGrad loss_focal(const Eigen::VectorXd& logits, int truth, double gamma);

/// Task-frame features (normalized joints) to the world path matrix, and the matching gradient pull-back.
Eigen::MatrixXd features_to_world(const Eigen::MatrixXd& features, const TaskFrame& frame, const RobotModel& model);
Eigen::MatrixXd world_grad_to_features(const Eigen::MatrixXd& grad, const TaskFrame& frame, const RobotModel& model);

struct TrainingSample {
  std::shared_ptr<const Scene> scene;
  TaskFrame frame;
  Eigen::MatrixXd truth;        // task-frame features
  Eigen::MatrixXd truth_world;  // world path matrix
  int truth_primitive = -1;
  PreparedInput input;
};

TrainingSample make_training_sample(std::shared_ptr<const Scene> scene, const DatasetRecord& record,
                                    const PrimitiveLibrary& lib, const RobotModel& model, const NetConfig& config,
                                    int n_points, std::uint64_t seed);

/// Weighted sum of the geometric losses and its gradient with respect to predicted features.
struct GeometricTerms {
  double safe = 0.0, smooth = 0.0, unip = 0.0;
  double weighted = 0.0;
  Eigen::MatrixXd grad;
};
GeometricTerms geometric_terms(const Eigen::MatrixXd& features, const TrainingSample& sample, const RobotModel& model,
                               const LossWeights& w);

struct LossBreakdown {
  double total = 0.0, recon = 0.0, geometric = 0.0, focal = 0.0, p_truth = 0.0;
  int t = 0;
};

struct NoiseDraw {
  int t = 1;
  bool vanilla = false;  // untruncated draw used to train the baseline sampler
  Eigen::MatrixXd eps;
};

NoiseDraw draw_noise(const NoiseSchedule& s, int rows, int cols, double vanilla_fraction, Rng& rng);

/// Noisy input: anchored blend toward the primitive for truncated draws, plain marginal otherwise.
Eigen::MatrixXd noised_input(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& prim, const NoiseSchedule& s,
                             const NoiseDraw& draw);

/// Records the full loss graph on `tape` and returns its scalar output.
template <typename T>
ad::Var<T> total_loss(ad::Tape<T>& tape, Network<T>& net, const TrainingSample& sample, const PrimitiveLibrary& lib,
                      const NoiseSchedule& s, const NoiseDraw& draw, const RobotModel& model, const LossWeights& w,
                      LossBreakdown* breakdown = nullptr);

struct TrainConfig {
  int epochs = 50;
  int batch = 16;
  ad::AdamConfig adam;
  LossWeights weights;
  double vanilla_fraction = 0.25;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0, recon = 0.0, geometric = 0.0, focal = 0.0;
};

std::vector<EpochStats> train(Network<float>& net, const std::vector<TrainingSample>& data, const PrimitiveLibrary& lib,
                              const NoiseSchedule& s, const RobotModel& model, const TrainConfig& config);

void write_loss_csv(const std::vector<EpochStats>& curve, const std::string& path);

}  // namespace momaplan
