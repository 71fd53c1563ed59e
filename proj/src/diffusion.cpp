#include "momaplan/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace momaplan {

NoiseSchedule NoiseSchedule::from_alphas(const std::vector<double>& alphas, int t_trunc) {
  NoiseSchedule s;
  s.t_max = static_cast<int>(alphas.size());
  if (s.t_max < 1) throw std::invalid_argument("schedule needs at least one step");
  if (t_trunc < 1 || t_trunc >= s.t_max) {
    throw std::invalid_argument("truncation step " + std::to_string(t_trunc) + " must lie in [1, " +
                                std::to_string(s.t_max - 1) + "]");
  }
  s.t_trunc = t_trunc;
  s.alpha.assign(1, 1.0);
  s.alpha_bar.assign(1, 1.0);
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alphas must lie in (0, 1)");
    s.alpha.push_back(a);
    s.alpha_bar.push_back(s.alpha_bar.back() * a);
  }
  return s;
}

NoiseSchedule build_schedule(int t_max, int t_trunc, double beta_min, double beta_max) {
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("schedule bounds must satisfy 0 < beta_min < beta_max < 1");
  }
  if (t_max < 2) throw std::invalid_argument("schedule needs at least two steps");
  std::vector<double> alphas(t_max);
  const double a = std::sqrt(beta_min), b = std::sqrt(beta_max);
  for (int t = 1; t <= t_max; ++t) {
    const double r = a + (b - a) * (t - 1) / (t_max - 1);
    alphas[t - 1] = 1.0 - r * r;
  }
  return NoiseSchedule::from_alphas(alphas, t_trunc);
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

Eigen::MatrixXd forward_marginal(const Eigen::MatrixXd& x0, const NoiseSchedule& s, int t, const Eigen::MatrixXd& eps) {
  if (t < 0 || t > s.t_max) throw std::out_of_range("timestep out of range");
  if (t == 0) return x0;
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw std::invalid_argument("noise shape mismatch");
  const double ab = s.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::MatrixXd forward_truncated(const Eigen::MatrixXd& prim, const NoiseSchedule& s, const Eigen::MatrixXd& eps) {
  return forward_marginal(prim, s, s.t_trunc, eps);
}

Eigen::MatrixXd forward_step(const Eigen::MatrixXd& prev, const NoiseSchedule& s, int t, const Eigen::MatrixXd& eps) {
  if (t < 1 || t > s.t_max) throw std::out_of_range("timestep out of range");
  return std::sqrt(s.alpha[t]) * prev + std::sqrt(1.0 - s.alpha[t]) * eps;
}

std::vector<int> ddim_steps(int from, int n_steps) {
  if (n_steps < 1 || n_steps > from) {
    throw std::invalid_argument("DDIM step count " + std::to_string(n_steps) + " must lie in [1, " + std::to_string(from) + "]");
  }
  std::vector<int> steps;
  if (n_steps == 2) return {from, (from + 1) / 2};
  for (int i = 0; i < n_steps; ++i) {
    const int t = static_cast<int>(std::lround(from * static_cast<double>(n_steps - i) / n_steps));
    steps.push_back(std::max(t, 1));
  }
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

Eigen::MatrixXd ddim_sample(const Eigen::MatrixXd& x_start, const std::vector<int>& steps, const NoiseSchedule& s,
                            const Denoiser& denoiser, std::vector<Eigen::MatrixXd>* trace) {
  Eigen::MatrixXd x = x_start;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const int next = i + 1 < steps.size() ? steps[i + 1] : 0;
    const Eigen::MatrixXd x0 = denoiser(x, t);
    if (next == 0) {
      x = x0;
    } else {
      const double ab = s.alpha_bar[t], an = s.alpha_bar[next];
      const Eigen::MatrixXd eps_hat = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
      x = std::sqrt(an) * x0 + std::sqrt(1.0 - an) * eps_hat;
    }
    if (trace) trace->push_back(x);
  }
  return x;
}

Eigen::MatrixXd ddpm_sample(const Eigen::MatrixXd& x_start, const NoiseSchedule& s, const Denoiser& denoiser, Rng& rng) {
  Eigen::MatrixXd x = x_start;
  for (int t = s.t_max; t >= 1; --t) {
    const Eigen::MatrixXd x0 = denoiser(x, t);
    if (t == 1) {
      x = x0;
      break;
    }
    const double ab = s.alpha_bar[t], ap = s.alpha_bar[t - 1], beta = s.beta(t);
    const double c0 = std::sqrt(ap) * beta / (1.0 - ab);
    const double ct = std::sqrt(s.alpha[t]) * (1.0 - ap) / (1.0 - ab);
    const double var = beta * (1.0 - ap) / (1.0 - ab);
    x = c0 * x0 + ct * x + std::sqrt(var) * gaussian_matrix(static_cast<int>(x.rows()), static_cast<int>(x.cols()), rng);
  }
  return x;
}

std::vector<PrimitiveChoice> select_primitives(const Eigen::VectorXd& logits, int n) {
  const int k = static_cast<int>(logits.size());
  if (n < 1 || n > k) throw std::invalid_argument("cannot select " + std::to_string(n) + " of " + std::to_string(k) + " primitives");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - mx).exp();
  p /= p.sum();
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  std::vector<PrimitiveChoice> out;
  for (int i = 0; i < n; ++i) out.push_back({order[i], p[order[i]]});
  return out;
}

void project_headings(Eigen::MatrixXd& f) {
  for (int i = 0; i < f.rows(); ++i) {
    const double n = std::hypot(f(i, 2), f(i, 3));
    if (n > 1e-12) {
      f(i, 2) /= n;
      f(i, 3) /= n;
    } else {
      f(i, 2) = 1.0;
      f(i, 3) = 0.0;
    }
  }
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SampleResult sample_from_primitives(const std::vector<Eigen::MatrixXd>& primitives, const NoiseSchedule& s,
                                    const Denoiser& denoiser, const SampleRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> steps = ddim_steps(s.t_trunc, req.ddim_steps);
  long calls = 0;
  auto counted = [&](const Eigen::MatrixXd& x, int t) {
    ++calls;
    return denoiser(x, t);
  };
  SampleResult out;
  for (std::size_t r = 0; r < primitives.size(); ++r) {
    // noise depends on the rank only, so fewer samples give a prefix of more samples
    const auto r0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(req.seed, 0xd1f0 + r));
    const auto& prim = primitives[r];
    const Eigen::MatrixXd eps = gaussian_matrix(static_cast<int>(prim.rows()), static_cast<int>(prim.cols()), rng);
    Eigen::MatrixXd x = ddim_sample(forward_truncated(prim, s, eps), steps, s, counted);
    project_headings(x);
    out.features.push_back(std::move(x));
    out.sample_seconds.push_back(seconds_since(r0));
  }
  out.denoiser_calls = calls;
  out.seconds = seconds_since(t0);
  return out;
}

SampleResult sample_vanilla(const NoiseSchedule& s, int rows, int cols, const Denoiser& denoiser,
                            const SampleRequest& req) {
  if (req.n_samples < 1) throw std::invalid_argument("need at least one sample");
  const auto t0 = std::chrono::steady_clock::now();
  long calls = 0;
  auto counted = [&](const Eigen::MatrixXd& x, int t) {
    ++calls;
    return denoiser(x, t);
  };
  SampleResult out;
  for (int r = 0; r < req.n_samples; ++r) {
    const auto r0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(req.seed, 0xdd90 + r));
    Eigen::MatrixXd x = ddpm_sample(gaussian_matrix(rows, cols, rng), s, counted, rng);
    project_headings(x);
    out.features.push_back(std::move(x));
    out.sample_seconds.push_back(seconds_since(r0));
  }
  out.denoiser_calls = calls;
  out.seconds = seconds_since(t0);
  return out;
}

NetworkDenoiser::NetworkDenoiser(Network<float>& net, const PreparedInput& input) : net_(net), tape_(false) {
  enc_ = net_.encode(tape_, input);
  cache_ = net_.cache(tape_, enc_);
  mark_ = tape_.size();
}

Eigen::MatrixXd NetworkDenoiser::operator()(const Eigen::MatrixXd& x, int t) {
  const int rows = static_cast<int>(x.rows()), cols = static_cast<int>(x.cols());
  std::vector<float> v(x.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) v[i * cols + j] = static_cast<float>(x(i, j));
  const auto out = net_.denoise(tape_, tape_.constant({rows, cols}, std::move(v)), t, enc_, &cache_);
  Eigen::MatrixXd y(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) y(i, j) = out.value()[i * cols + j];
  tape_.truncate(mark_);
  return y;
}

Eigen::VectorXd NetworkDenoiser::logits() {
  const auto l = net_.primitive_logits(tape_, enc_);
  Eigen::VectorXd v(l.size());
  for (int i = 0; i < v.size(); ++i) v[i] = l.value()[i];
  tape_.truncate(mark_);
  return v;
}

SampleResult sample_ptdm(Network<float>& net, const PreparedInput& input, const PrimitiveLibrary& lib,
                         const NoiseSchedule& s, const SampleRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  if (lib.size() != net.config().n_primitives) throw std::invalid_argument("library size does not match the network head");
  NetworkDenoiser den(net, input);
  const auto picks = select_primitives(den.logits(), req.n_samples);
  std::vector<Eigen::MatrixXd> prims;
  std::vector<int> idx;
  for (const auto& p : picks) {
    prims.push_back(lib.centroids[p.index]);
    idx.push_back(p.index);
  }
  SampleResult out = sample_from_primitives(prims, s, std::ref(den), req);
  out.primitives = idx;
  out.seconds = seconds_since(t0);
  return out;
}

SampleResult sample_vanilla_ddpm(Network<float>& net, const PreparedInput& input, const NoiseSchedule& s,
                                 const SampleRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  if (s.t_max > net.config().t_max) throw std::invalid_argument("schedule is longer than the network timestep range");
  NetworkDenoiser den(net, input);
  SampleResult out = sample_vanilla(s, net.config().n_tau, net.config().state_dim(), std::ref(den), req);
  out.seconds = seconds_since(t0);
  return out;
}

}  // namespace momaplan
