#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dp2guard/defense.hpp"
#include "dp2guard/errors.hpp"
#include "test_util.hpp"

using namespace dp2guard;

namespace {

// Independent O(N^2 d) oracle: explicit loops, full sort.
Eigen::VectorXd brute_median_cosines(const Eigen::MatrixXd& g) {
  const Eigen::Index n = g.rows();
  auto dot = [&](Eigen::Index a, Eigen::Index b) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < g.cols(); ++k) s += g(a, k) * g(b, k);
    return s;
  };
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ni = std::sqrt(dot(i, i));
    if (ni == 0.0) continue;
    std::vector<double> cs;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double nj = std::sqrt(dot(j, j));
      cs.push_back(nj == 0.0 ? 0.0 : std::clamp(dot(i, j) / (ni * nj), -1.0, 1.0));
    }
    std::sort(cs.begin(), cs.end());
    const std::size_t m = cs.size();
    out(i) = m % 2 ? cs[m / 2] : 0.5 * (cs[m / 2 - 1] + cs[m / 2]);
  }
  return out;
}

Eigen::VectorXd power_iteration_direction(const Eigen::MatrixXd& g) {
  const Eigen::MatrixXd a = g.transpose() * g;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.rows()) / std::sqrt(static_cast<double>(a.rows()));
  for (int it = 0; it < 5000; ++it) {
    Eigen::VectorXd next = a * v;
    next.normalize();
    if ((next - v).norm() < 1e-15) break;
    v = next;
  }
  return v;
}

}  // namespace

TEST_CASE("rank-one rows give the row direction with a positive dominant entry") {
  const Eigen::Vector3d u(1.0, -4.0, 2.0);
  Eigen::MatrixXd g(3, 3);
  g.row(0) = 2.0 * u.transpose();
  g.row(1) = -1.0 * u.transpose();
  g.row(2) = 0.5 * u.transpose();
  const Eigen::VectorXd v = top_direction(g);
  CHECK((v - (-u / u.norm())).norm() < 1e-12);
  CHECK(v(1) > 0.0);
}

TEST_CASE("orthogonal rows pick the larger axis") {
  Eigen::MatrixXd g(2, 2);
  g << 3.0, 0.0, 0.0, 1.0;
  const Eigen::VectorXd v = top_direction(g);
  CHECK(std::fabs(v(0) - 1.0) < 1e-12);
  CHECK(std::fabs(v(1)) < 1e-12);
}

TEST_CASE("a zero matrix is degenerate") {
  CHECK_THROWS_AS(top_direction(Eigen::MatrixXd::Zero(4, 5)), DegenerateError);
}

TEST_CASE("top direction agrees with a dense SVD") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng = testutil::rng_for(seed);
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.uniform_index(20));
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.uniform_index(60));
    const Eigen::MatrixXd g = testutil::random_matrix(n, d, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinV);
    const double align = std::fabs(top_direction(g).dot(svd.matrixV().col(0)));
    REQUIRE(align >= 1.0 - 1e-8);
  }
}

TEST_CASE("spectral score examples") {
  const Eigen::Vector2d v1(1.0, 0.0);
  Eigen::MatrixXd g(2, 2);
  g << 0.0, 5.0, 3.0, 0.0;
  const Eigen::VectorXd s = spectral_scores(g, v1);
  CHECK(s(0) == 0.0);
  CHECK(s(1) == 9.0);
}

TEST_CASE("spectral scores match a power-iteration oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 1);
    const Eigen::MatrixXd g = testutil::random_matrix(5, 8, rng);
    const Eigen::VectorXd s = spectral_scores(g, top_direction(g));
    const Eigen::VectorXd oracle = (g * power_iteration_direction(g)).array().square().matrix();
    REQUIRE((s - oracle).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("median cosine examples") {
  Eigen::MatrixXd same(4, 3);
  for (int i = 0; i < 4; ++i) same.row(i) << 1.0, 2.0, 3.0;
  CHECK((median_cosines(same).array() == 1.0).all());

  Eigen::MatrixXd g(3, 2);
  g << 1.0, 1.0, 1.0, 1.0, -1.0, -1.0;
  const Eigen::VectorXd c = median_cosines(g);
  CHECK(c(2) == doctest::Approx(-1.0));
  CHECK(std::fabs(c(0)) < 1e-15);
  CHECK(std::fabs(c(1)) < 1e-15);

  Eigen::MatrixXd z(3, 2);
  z << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  CHECK(median_cosines(z)(0) == 0.0);
}

TEST_CASE("median cosines equal the brute-force oracle exactly") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 2);
    const Eigen::Index n = seed == 0 ? 6 : 2 + static_cast<Eigen::Index>(rng.uniform_index(15));
    const Eigen::MatrixXd g = testutil::random_matrix(n, seed == 0 ? 4 : 10, rng);
    const Eigen::VectorXd c = median_cosines(g);
    const Eigen::VectorXd o = brute_median_cosines(g);
    for (Eigen::Index i = 0; i < n; ++i) REQUIRE(c(i) == o(i));
  }
}

TEST_CASE("clustering separates a single far outlier") {
  std::vector<FeatureVector> f(9, FeatureVector{0.0, 1.0});
  f.push_back({100.0, -1.0});
  SeededRng rng = testutil::rng_for(3);
  const DetectionResult r = cluster_and_select(f, rng);
  CHECK(r.benign_set == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(r.centroid.s == 0.0);
  CHECK(r.centroid.c == 1.0);
  CHECK_FALSE(r.is_benign(9));
}

TEST_CASE("identical features keep every client") {
  std::vector<FeatureVector> f(6, FeatureVector{2.0, 0.5});
  SeededRng rng = testutil::rng_for(4);
  const DetectionResult r = cluster_and_select(f, rng);
  CHECK(r.benign_set.size() == 6);
  CHECK(r.centroid.s == 2.0);
}

TEST_CASE("equal-size clusters break the tie on higher mean cosine") {
  std::vector<FeatureVector> f{{0.0, 0.9}, {0.0, 0.9}, {50.0, -0.9}, {50.0, -0.9}};
  SeededRng rng = testutil::rng_for(5);
  const DetectionResult r = cluster_and_select(f, rng);
  CHECK(r.benign_set == std::vector<std::size_t>{0, 1});
}

TEST_CASE("centroid is reported in raw feature units") {
  std::vector<FeatureVector> f{{1.0, 0.2}, {3.0, 0.4}, {2.0, 0.3}, {1000.0, -0.9}};
  SeededRng rng = testutil::rng_for(6);
  const DetectionResult r = cluster_and_select(f, rng);
  REQUIRE(r.benign_set == std::vector<std::size_t>{0, 1, 2});
  CHECK(r.centroid.s == doctest::Approx(2.0));
  CHECK(r.centroid.c == doctest::Approx(0.3));
}

TEST_CASE("detection is permutation equivariant") {
  SeededRng rng = testutil::rng_for(7);
  Eigen::MatrixXd g = testutil::random_matrix(12, 20, rng);
  for (int i = 0; i < 4; ++i) g.row(i) = g.row(i) * 0.1 + Eigen::RowVectorXd::Constant(20, 5.0);
  g = center_rows(g);
  const std::vector<std::size_t> perm = rng.permutation(12);
  Eigen::MatrixXd gp(12, 20);
  for (std::size_t i = 0; i < 12; ++i) gp.row(static_cast<Eigen::Index>(i)) = g.row(static_cast<Eigen::Index>(perm[i]));
  const auto f = extract_features(g);
  const auto fp = extract_features(gp);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(fp[i].s == doctest::Approx(f[perm[i]].s).epsilon(1e-9));
    CHECK(fp[i].c == doctest::Approx(f[perm[i]].c).epsilon(1e-9));
  }
  SeededRng a = testutil::rng_for(8), b = testutil::rng_for(8);
  const DetectionResult r = detect(g, a);
  const DetectionResult rp = detect(gp, b);
  std::vector<std::size_t> mapped;
  for (std::size_t i : rp.benign_set) mapped.push_back(perm[i]);
  std::sort(mapped.begin(), mapped.end());
  CHECK(mapped == r.benign_set);
}

TEST_CASE("common rescaling leaves cosines unchanged and scales spectral scores") {
  SeededRng rng = testutil::rng_for(9);
  Eigen::MatrixXd g = testutil::random_matrix(10, 15, rng);
  for (int i = 0; i < 3; ++i) g.row(i) *= 6.0;
  g = center_rows(g);
  const auto f = extract_features(g);
  for (double lambda : {4.0, 3.7}) {
    const auto fs = extract_features(lambda * g);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (lambda == 4.0) CHECK(fs[i].c == f[i].c);
      else CHECK(fs[i].c == doctest::Approx(f[i].c).epsilon(1e-12));
      CHECK(fs[i].s == doctest::Approx(lambda * lambda * f[i].s).epsilon(1e-9));
    }
    SeededRng a = testutil::rng_for(10), b = testutil::rng_for(10);
    CHECK(detect(g, a).benign_set == detect(lambda * g, b).benign_set);
  }
}

TEST_CASE("all-zero centered matrix marks everyone benign") {
  SeededRng rng = testutil::rng_for(11);
  const DetectionResult r = detect(Eigen::MatrixXd::Zero(5, 7), rng);
  CHECK(r.benign_set.size() == 5);
}

TEST_CASE("large-norm outliers are flagged") {
  SeededRng rng = testutil::rng_for(12);
  Eigen::MatrixXd g = testutil::random_matrix(20, 30, rng);
  for (int i = 0; i < 5; ++i) g.row(i) = Eigen::RowVectorXd::Constant(30, -8.0);
  SeededRng c = testutil::rng_for(13);
  const DetectionResult r = detect(center_rows(g), c);
  for (std::size_t i = 0; i < 5; ++i) CHECK_FALSE(r.is_benign(i));
  CHECK(r.benign_set.size() >= 10);
}

TEST_CASE("stack and center helpers") {
  const std::vector<Eigen::VectorXd> rows{Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 6)};
  const GradientMatrix m = stack_rows(rows);
  CHECK(m(1, 1) == 6.0);
  const GradientMatrix c = center_rows(m);
  CHECK(c(0, 0) == -1.0);
  CHECK(c(1, 1) == 2.0);
}
