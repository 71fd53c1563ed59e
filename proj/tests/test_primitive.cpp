#include "doctest.h"

#include <filesystem>
#include <limits>

#include "momaplan/primitive.hpp"

using namespace momaplan;

namespace {

Eigen::MatrixXd filled(double v) { return Eigen::MatrixXd::Constant(4, 6, v); }

// Independent nearest-centroid scan.
int scan(const std::vector<Eigen::MatrixXd>& centers, const Eigen::MatrixXd& x) {
  int best = 0;
  for (std::size_t k = 1; k < centers.size(); ++k) {
    if ((centers[k] - x).norm() < (centers[best] - x).norm()) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace

TEST_CASE("two separated pairs match the exhaustive optimum") {
  std::vector<Eigen::MatrixXd> x{filled(0.0), filled(0.2), filled(5.0), filled(5.3)};
  ClusterConfig cfg;
  cfg.k = 2;
  const PrimitiveLibrary lib = build_library(x, cfg, 3);

  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < 15; ++mask) {
    Eigen::MatrixXd s[2] = {filled(0), filled(0)};
    int c[2] = {0, 0};
    for (int i = 0; i < 4; ++i) {
      s[(mask >> i) & 1] += x[i];
      ++c[(mask >> i) & 1];
    }
    double cost = 0.0;
    for (int i = 0; i < 4; ++i) cost += (x[i] - s[(mask >> i) & 1] / c[(mask >> i) & 1]).squaredNorm();
    best = std::min(best, cost);
  }
  CHECK(lib.inertia == doctest::Approx(best).epsilon(1e-6));
  const bool first_low = lib.centroids[0](0, 0) < 1.0;
  CHECK(lib.centroids[first_low ? 0 : 1](0, 0) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(lib.centroids[first_low ? 1 : 0](0, 0) == doctest::Approx(5.15).epsilon(1e-6));
}

TEST_CASE("K equal to the dataset size reproduces the dataset") {
  Rng rng(2);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < 6; ++i) x.push_back(filled(static_cast<float>(uniform(rng, -1, 1))));
  ClusterConfig cfg;
  cfg.k = 6;
  const PrimitiveLibrary lib = build_library(x, cfg, 1);
  CHECK(lib.inertia == 0.0);
  for (const auto& p : x) CHECK(lib.centroids[scan(lib.centroids, p)] == p);
}

TEST_CASE("inertia is non-increasing and assignments are nearest") {
  Rng rng(5);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < 300; ++i) {
    Eigen::MatrixXd m(64, 11);
    const double cx = std::floor(uniform(rng, 0, 6));
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 11; ++c) m(r, c) = cx + 0.3 * uniform(rng, -1, 1);
    x.push_back(m);
  }
  ClusterConfig cfg;
  cfg.k = 8;
  const PrimitiveLibrary lib = build_library(x, cfg, 4);
  for (std::size_t i = 1; i < lib.inertia_history.size(); ++i) {
    CHECK(lib.inertia_history[i] <= lib.inertia_history[i - 1] * (1 + 1e-12));
  }
  for (int a = 0; a < lib.size(); ++a)
    for (int b = a + 1; b < lib.size(); ++b) CHECK(lib.centroids[a] != lib.centroids[b]);
  for (const auto& p : x) CHECK(truth_primitive(lib, p).index == scan(lib.centroids, p));

  const PrimitiveLibrary again = build_library(x, cfg, 4);
  for (int k = 0; k < lib.size(); ++k) CHECK(again.centroids[k] == lib.centroids[k]);
  CHECK_THROWS(build_library(std::vector<Eigen::MatrixXd>(x.begin(), x.begin() + 5), cfg, 1));
}

TEST_CASE("truth primitive lookup and tie-break") {
  PrimitiveLibrary lib;
  for (int k = 0; k < 10; ++k) lib.centroids.push_back(filled(k));
  CHECK(truth_primitive(lib, filled(5)).index == 5);
  lib.centroids[2] = filled(-1.0);
  lib.centroids[9] = filled(1.0);
  lib.centroids[0] = filled(7);
  lib.centroids[1] = filled(8);
  for (int k = 3; k < 9; ++k) lib.centroids[k] = filled(10 + k);
  CHECK(truth_primitive(lib, filled(0.0)).index == 2);
}

TEST_CASE("library file round trip") {
  Rng rng(8);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < 40; ++i) x.push_back(Eigen::MatrixXd::Random(64, 11));
  ClusterConfig cfg;
  cfg.k = 4;
  const PrimitiveLibrary lib = build_library(x, cfg, 2);
  const std::string file = (std::filesystem::temp_directory_path() / "momaplan_lib.bin").string();
  save_library(lib, file);
  const PrimitiveLibrary back = load_library(file);
  REQUIRE(back.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(back.centroids[k] == lib.centroids[k]);
  CHECK(back.iterations == lib.iterations);
  CHECK(back.inertia == lib.inertia);
  std::filesystem::remove(file);
}
