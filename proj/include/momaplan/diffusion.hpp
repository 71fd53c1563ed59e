#pragma once

#include <functional>
#include <vector>

#include "momaplan/net.hpp"
#include "momaplan/primitive.hpp"

namespace momaplan {

/// Per-step alphas indexed 1..t_max; index 0 holds the t = 0 convention (alpha_bar = 1).
struct NoiseSchedule {
  int t_max = 0;
  int t_trunc = 0;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta(int t) const { return 1.0 - alpha.at(t); }
  /// Builds from explicit alphas (alpha^1, alpha^2, ...).
  static NoiseSchedule from_alphas(const std::vector<double>& alphas, int t_trunc);
};

NoiseSchedule build_schedule(int t_max = 1200, int t_trunc = 50, double beta_min = 1e-4, double beta_max = 2e-2);

Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0.
Eigen::MatrixXd forward_marginal(const Eigen::MatrixXd& x0, const NoiseSchedule& s, int t, const Eigen::MatrixXd& eps);
Eigen::MatrixXd forward_truncated(const Eigen::MatrixXd& prim, const NoiseSchedule& s, const Eigen::MatrixXd& eps);
/// One application of the per-step kernel q(x_t | x_{t-1}).
Eigen::MatrixXd forward_step(const Eigen::MatrixXd& prev, const NoiseSchedule& s, int t, const Eigen::MatrixXd& eps);

/// Descending DDIM timesteps starting at `from`; the implicit final target is 0.
std::vector<int> ddim_steps(int from, int n_steps);

/// Maps (x_t, t) to a prediction of x_0.
using Denoiser = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)>;

/// Deterministic DDIM over `steps`; `trace` receives each iterate when given.
Eigen::MatrixXd ddim_sample(const Eigen::MatrixXd& x_start, const std::vector<int>& steps, const NoiseSchedule& s,
                            const Denoiser& denoiser, std::vector<Eigen::MatrixXd>* trace = nullptr);

/// x0-parameterized ancestral sampling from t_max down to 1.
Eigen::MatrixXd ddpm_sample(const Eigen::MatrixXd& x_start, const NoiseSchedule& s, const Denoiser& denoiser, Rng& rng);

struct PrimitiveChoice {
  int index = -1;
  double probability = 0.0;
};

/// Top-n by softmax probability, descending; ties go to the lower index.
std::vector<PrimitiveChoice> select_primitives(const Eigen::VectorXd& logits, int n);

struct SampleRequest {
  int n_samples = 1;
  int ddim_steps = 2;
  std::uint64_t seed = 0;
};

struct SampleResult {
  std::vector<Eigen::MatrixXd> features;  // task-frame feature matrices, headings unit-projected
  std::vector<int> primitives;            // empty for vanilla sampling
  long denoiser_calls = 0;
  double seconds = 0.0;
  std::vector<double> sample_seconds;  // per rank, reverse process only
};

/// Rescales each heading pair to unit length; a vanished pair becomes (1, 0).
void project_headings(Eigen::MatrixXd& features);

/// PTDM core: truncated forward from each primitive with rank-seeded noise, then DDIM.
SampleResult sample_from_primitives(const std::vector<Eigen::MatrixXd>& primitives, const NoiseSchedule& s,
                                    const Denoiser& denoiser, const SampleRequest& req);
SampleResult sample_ptdm(Network<float>& net, const PreparedInput& input, const PrimitiveLibrary& lib,
                         const NoiseSchedule& s, const SampleRequest& req);
SampleResult sample_vanilla(const NoiseSchedule& s, int rows, int cols, const Denoiser& denoiser,
                            const SampleRequest& req);
SampleResult sample_vanilla_ddpm(Network<float>& net, const PreparedInput& input, const NoiseSchedule& s,
                                 const SampleRequest& req);

/// No-grad network denoiser bound to one encoding.
class NetworkDenoiser {
 public:
  NetworkDenoiser(Network<float>& net, const PreparedInput& input);
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& x, int t);
  Eigen::VectorXd logits();

 private:
  Network<float>& net_;
  ad::Tape<float> tape_;
  TaskEncoding<float> enc_;
  MemoryCache<float> cache_;
  std::size_t mark_ = 0;
};

}  // namespace momaplan
