#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "momaplan/robot.hpp"
#include "momaplan/tensor.hpp"

namespace momaplan {

struct NetConfig {
  int d_model = 128;
  int heads = 4;
  int ff = 256;
  int fusion_blocks = 2;
  int layers = 2;        // denoiser transformer layers
  int point_tokens = 64;  // G
  double grid = 0.5;
  int point_hidden = 64;
  int n_tau = 64;
  int n_joints = 7;
  int n_primitives = 32;
  int t_max = 1200;

  int state_dim() const { return 4 + n_joints; }
  int keypoint_tokens() const { return 2 * (n_joints + 2); }
  int memory_tokens() const { return keypoint_tokens() + point_tokens; }
  void check() const;
  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
  /// Small configuration used by the tests and the acceptance run.
  static NetConfig toy();
};

/// Network inputs that do not depend on weights; precomputed once per task.
struct PreparedInput {
  int n_points = 0;
  std::vector<double> point_features;  // n_points x 6: [p, p - cell center]
  std::vector<int> groups;             // token index per point
  std::vector<double> keypoints;       // keypoint_tokens x 4: position, feature
  std::vector<double> boundary;        // 2 x state_dim, joints normalized
};

/// `task_points`, `start` and `goal` must already be in the task frame.
PreparedInput prepare_input(const Eigen::MatrixX3d& task_points, const RobotState& start, const RobotState& goal,
                            const RobotModel& model, const NetConfig& config);

template <typename T>
struct TaskEncoding {
  ad::Var<T> memory;  // memory_tokens x d_model
  ad::Var<T> pooled;  // 1 x d_model
};

/// Cross-attention keys and values of the memory, one pair per denoiser layer.
template <typename T>
struct MemoryCache {
  std::vector<ad::Var<T>> keys, values;
};

template <typename T>
struct DenoiseOutput {
  ad::Var<T> path;  // n_tau x state_dim, in feature space
};

template <typename T>
class Network {
 public:
  Network(const NetConfig& config, std::uint64_t seed);
  Network(const NetConfig& config, ad::ParamSet<T> params);

  const NetConfig& config() const { return config_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

  TaskEncoding<T> encode(ad::Tape<T>& tape, const PreparedInput& in);
  MemoryCache<T> cache(ad::Tape<T>& tape, const TaskEncoding<T>& enc);
  /// `tau` holds n_tau x state_dim features; t in [1, t_max].
  ad::Var<T> denoise(ad::Tape<T>& tape, const ad::Var<T>& tau, int t, const TaskEncoding<T>& enc,
                     const MemoryCache<T>* cache = nullptr);
  ad::Var<T> primitive_logits(ad::Tape<T>& tape, const TaskEncoding<T>& enc);

  /// Attention probabilities recorded by the last forward pass when enabled.
  void record_attention(bool on) { record_attention_ = on; }
  const std::vector<ad::Var<T>>& attention_maps() const { return attention_maps_; }

 private:
  ad::Var<T> linear(ad::Tape<T>& tape, const std::string& name, const ad::Var<T>& x);
  ad::Var<T> norm(ad::Tape<T>& tape, const std::string& name, const ad::Var<T>& x);
  ad::Var<T> mlp(ad::Tape<T>& tape, const std::string& name, const ad::Var<T>& x);
  ad::Var<T> attend(const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v);
  ad::Var<T> self_attention(ad::Tape<T>& tape, const std::string& name, const ad::Var<T>& x);
  ad::Var<T> cross_attention(ad::Tape<T>& tape, const std::string& name, const ad::Var<T>& x,
                             const ad::Var<T>& k, const ad::Var<T>& v);
  void build(std::uint64_t seed);

  NetConfig config_;
  ad::ParamSet<T> params_;
  bool record_attention_ = false;
  std::vector<ad::Var<T>> attention_maps_;
};

extern template class Network<float>;
extern template class Network<double>;

/// Weights plus the configuration in one NMWT file.
void save_network(const Network<float>& net, const std::string& path);
Network<float> load_network(const std::string& path);

}  // namespace momaplan
