#include "momaplan/primitive.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

namespace momaplan {

Path PrimitiveLibrary::centroid_path(int k, const RobotModel& model) const {
  Path p = path_from_features(centroids.at(k), model, Frame::kTask);
  return p;
}

namespace {

double sq_dist(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool base_only) {
  if (base_only) return (a.leftCols(4) - b.leftCols(4)).squaredNorm();
  return (a - b).squaredNorm();
}

// Nearest-centroid assignment; chunks run on separate threads but each point is independent.
void assign(const std::vector<Eigen::MatrixXd>& x, const std::vector<Eigen::MatrixXd>& centers, bool base_only,
            std::vector<int>& labels, std::vector<double>& dist) {
  const int n = static_cast<int>(x.size());
  labels.resize(n);
  dist.resize(n);
  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < static_cast<int>(centers.size()); ++k) {
        const double d = sq_dist(x[i], centers[k], base_only);
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      labels[i] = best;
      dist[i] = bd;
    }
  };
  const int workers = std::min(worker_count(), std::max(1, n / 256));
  if (workers <= 1) {
    work(0, n);
    return;
  }
  std::vector<std::jthread> pool;
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work, w * chunk, std::min(n, (w + 1) * chunk));
}

float as_f32(double v) { return static_cast<float>(v); }

}  // namespace

PrimitiveLibrary build_library(const std::vector<Eigen::MatrixXd>& x, const ClusterConfig& cfg, std::uint64_t seed) {
  const int n = static_cast<int>(x.size());
  const int K = cfg.k;
  if (K < 2) throw std::invalid_argument("primitive library needs K >= 2");
  if (n < K) throw std::invalid_argument("dataset has " + std::to_string(n) + " paths, fewer than K = " + std::to_string(K));
  for (const auto& m : x) {
    if (m.rows() != x[0].rows() || m.cols() != x[0].cols()) throw std::invalid_argument("dataset paths differ in shape");
  }
  Rng rng(derive_seed(seed, 0xc1u));

  // k-means++ seeding
  std::vector<Eigen::MatrixXd> centers;
  centers.push_back(x[std::uniform_int_distribution<int>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = sq_dist(x[i], centers[0], cfg.base_only);
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (double v : d2) total += v;
    int pick = 0;
    if (total > 0.0) {
      const double u = uniform(rng, 0.0, total);
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
    }
    centers.push_back(x[pick]);
    for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x[i], centers.back(), cfg.base_only));
  }

  PrimitiveLibrary lib;
  lib.n_tau = static_cast<int>(x[0].rows());
  lib.n_joints = static_cast<int>(x[0].cols()) - 4;
  std::vector<int> labels, prev;
  std::vector<double> dist;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    assign(x, centers, cfg.base_only, labels, dist);
    double inertia = 0.0;
    for (double v : dist) inertia += v;
    lib.inertia_history.push_back(inertia);
    if (labels == prev) break;
    prev = labels;

    std::vector<Eigen::MatrixXd> sums(K, Eigen::MatrixXd::Zero(x[0].rows(), x[0].cols()));
    std::vector<int> counts(K, 0);
    for (int i = 0; i < n; ++i) {
      sums[labels[i]] += x[i];
      ++counts[labels[i]];
    }
    std::vector<char> taken(n, 0);
    for (int k = 0; k < K; ++k) {
      if (counts[k] > 0) {
        centers[k] = sums[k] / counts[k];
        continue;
      }
      // empty cluster: reseed from the point farthest from its centroid
      int far = -1;
      for (int i = 0; i < n; ++i) {
        if (!taken[i] && (far < 0 || dist[i] > dist[far])) far = i;
      }
      taken[far] = 1;
      centers[k] = x[far];
      dist[far] = 0.0;
    }
  }
  lib.iterations = iter;
  lib.centroids.clear();
  for (auto& c : centers) lib.centroids.push_back(c.unaryExpr([](double v) { return static_cast<double>(as_f32(v)); }));
  assign(x, lib.centroids, cfg.base_only, labels, dist);
  lib.inertia = 0.0;
  for (double v : dist) lib.inertia += v;
  return lib;
}

PrimitiveLibrary build_library(const std::vector<Path>& dataset, const RobotModel& model, const ClusterConfig& cfg,
                               std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> x;
  for (const auto& p : dataset) {
    if (p.frame != Frame::kTask) throw std::invalid_argument("primitive library expects task-frame paths");
    x.push_back(path_features(p, model));
  }
  return build_library(x, cfg, seed);
}

PrimitiveMatch truth_primitive(const PrimitiveLibrary& lib, const Eigen::MatrixXd& f) {
  PrimitiveMatch m;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < lib.size(); ++k) {
    if (lib.centroids[k].rows() != f.rows() || lib.centroids[k].cols() != f.cols()) {
      throw std::invalid_argument("truth_primitive: shape mismatch");
    }
    const double d = (lib.centroids[k] - f).squaredNorm();
    if (d < best) {
      best = d;
      m.index = k;
    }
  }
  m.distance = std::sqrt(best);
  return m;
}

PrimitiveMatch truth_primitive(const PrimitiveLibrary& lib, const Path& path, const RobotModel& model) {
  return truth_primitive(lib, path_features(path, model));
}

namespace {

constexpr char kLibMagic[4] = {'N', 'M', 'P', 'L'};
constexpr std::uint32_t kLibVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated primitive library");
  return v;
}

}  // namespace

void save_library(const PrimitiveLibrary& lib, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kLibMagic, 4);
  put<std::uint32_t>(out, kLibVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(lib.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(lib.n_tau));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(lib.n_joints));
  for (const auto& c : lib.centroids) {
    for (int i = 0; i < c.rows(); ++i)
      for (int j = 0; j < c.cols(); ++j) put<float>(out, as_f32(c(i, j)));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(lib.iterations));
  put<double>(out, lib.inertia);
}

PrimitiveLibrary load_library(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kLibMagic, 4) != 0) throw std::runtime_error(path + " is not a primitive library");
  if (get<std::uint32_t>(in) != kLibVersion) throw std::runtime_error("unsupported primitive library version");
  PrimitiveLibrary lib;
  const auto K = get<std::uint32_t>(in);
  lib.n_tau = static_cast<int>(get<std::uint32_t>(in));
  lib.n_joints = static_cast<int>(get<std::uint32_t>(in));
  for (std::uint32_t k = 0; k < K; ++k) {
    Eigen::MatrixXd c(lib.n_tau, 4 + lib.n_joints);
    for (int i = 0; i < c.rows(); ++i)
      for (int j = 0; j < c.cols(); ++j) c(i, j) = get<float>(in);
    lib.centroids.push_back(std::move(c));
  }
  lib.iterations = static_cast<int>(get<std::uint32_t>(in));
  lib.inertia = get<double>(in);
  return lib;
}

}  // namespace momaplan
