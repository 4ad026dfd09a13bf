#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dp2guard/baselines.hpp"
#include "dp2guard/defense.hpp"
#include "dp2guard/errors.hpp"
#include "test_util.hpp"

using namespace dp2guard;

namespace {

std::vector<GradientVector> cluster(std::size_t n, const GradientVector& mu, double sigma, SeededRng& rng) {
  std::vector<GradientVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    GradientVector g = mu;
    for (Eigen::Index k = 0; k < g.size(); ++k) g(k) += sigma * rng.normal();
    out.push_back(g);
  }
  return out;
}

// Krum scores by explicit enumeration of every neighbour set is exponential;
// sorting all distances per client is the textbook definition.
std::vector<std::size_t> brute_krum(const std::vector<GradientVector>& g, std::size_t f, std::size_t m) {
  const std::size_t n = g.size();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < g[i].size(); ++k) s += (g[i](k) - g[j](k)) * (g[i](k) - g[j](k));
        d.push_back(s);
      }
    std::sort(d.begin(), d.end());
    double score = 0.0;
    for (std::size_t k = 0; k < n - f - 2; ++k) score += d[k];
    scored.push_back({score, i});
  }
  std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < m; ++k) out.push_back(scored[k].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("FedAvg examples") {
  const GradientVector g = (GradientVector(2) << 1.5, -2.0).finished();
  const std::vector<GradientVector> one{g};
  CHECK(fedavg(one) == g);
  const std::vector<GradientVector> pair{g, -g};
  CHECK(fedavg(pair).norm() == 0.0);
  const std::vector<double> w{0.25, 0.75};
  CHECK(fedavg(pair, w) == 0.5 * g * -1.0);
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(fedavg(pair, bad), WeightError);
}

TEST_CASE("Multi-Krum never selects a far outlier") {
  SeededRng rng = testutil::rng_for(1);
  auto g = cluster(4, GradientVector::Zero(3), 0.1, rng);
  g.push_back(GradientVector::Constant(3, 100.0));
  const auto sel = multi_krum_select(g, 1, 2);
  CHECK(sel.size() == 2);
  CHECK(std::find(sel.begin(), sel.end(), 4u) == sel.end());
  CHECK(sel == brute_krum(g, 1, 2));
}

TEST_CASE("Multi-Krum matches the brute-force scorer") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 2);
    const std::size_t n = 5 + rng.uniform_index(10);
    const std::size_t f = rng.uniform_index((n - 3) / 2 + 1);
    const std::size_t m = 1 + rng.uniform_index(n - f);
    const auto g = cluster(n, testutil::random_vector(6, rng), 1.0, rng);
    REQUIRE(multi_krum_select(g, f, m) == brute_krum(g, f, m));
  }
}

TEST_CASE("Multi-Krum edge cases") {
  const GradientVector v = (GradientVector(2) << 1.0, 2.0).finished();
  const std::vector<GradientVector> same(5, v);
  CHECK(multi_krum(same, 1, 3) == v);
  SeededRng rng = testutil::rng_for(3);
  const auto g = cluster(6, GradientVector::Zero(4), 1.0, rng);
  CHECK((multi_krum(g, 0, 6) - fedavg(g)).norm() < 1e-15);
  CHECK_THROWS_AS(multi_krum_select(g, 2, 1), TooFewClients);
  CHECK_THROWS_AS(multi_krum_select(g, 1, 6), PreconditionError);
}

TEST_CASE("DnC on a clean cluster keeps the mean close") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 4);
    const std::size_t n = 20;
    const double sigma = 0.5;
    const GradientVector mu = testutil::random_vector(30, rng);
    const auto g = cluster(n, mu, sigma, rng);
    SeededRng d = testutil::rng_for(seed, 5);
    const GradientVector out = dnc(g, DncConfig::defaults(n, 0, 30), d);
    const double rms = (out - mu).norm() / std::sqrt(30.0);
    REQUIRE(rms <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("DnC filters a large-norm outlier") {
  int filtered = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 6);
    auto g = cluster(15, GradientVector::Zero(50), 1.0, rng);
    g[7] = testutil::random_vector(50, rng, 5.0, 10.0);
    SeededRng d = testutil::rng_for(seed, 7);
    const auto sel = dnc_select(g, DncConfig::defaults(15, 1, 50), d);
    if (std::find(sel.begin(), sel.end(), 7u) == sel.end()) ++filtered;
  }
  CHECK(filtered >= 95);
}

TEST_CASE("DnC with every coordinate matches the defense spectral ranking") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 8);
    const auto g = cluster(12, testutil::random_vector(10, rng), 1.0, rng);
    DncConfig cfg;
    cfg.n_iters = 1;
    cfg.sub_dim = 10;
    cfg.filter_frac = 0.05;  // removes exactly one client
    SeededRng d = testutil::rng_for(seed, 9);
    const auto sel = dnc_select(g, cfg, d);
    REQUIRE(sel.size() == 11);
    const GradientMatrix c = center_rows(stack_rows(g));
    Eigen::Index top = 0;
    spectral_scores(c, top_direction(c)).maxCoeff(&top);
    CHECK(std::find(sel.begin(), sel.end(), static_cast<std::size_t>(top)) == sel.end());
  }
}

TEST_CASE("FLTrust examples") {
  const GradientVector root = (GradientVector(3) << 1.0, 2.0, 2.0).finished();
  const std::vector<GradientVector> same(4, root);
  CHECK((fltrust(same, root) - root).norm() < 1e-12);
  const std::vector<GradientVector> opposite(4, -root);
  CHECK(fltrust(opposite, root) == root);
  const std::vector<GradientVector> mixed{2.0 * root, -root};
  const GradientVector out = fltrust(mixed, root);
  CHECK((out - root).norm() < 1e-12);
  CHECK(fltrust_scores(mixed, root)[1] == 0.0);
}

TEST_CASE("baselines are permutation invariant and norm bounded") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 10);
    auto g = cluster(9, testutil::random_vector(5, rng), 1.0, rng);
    auto p = g;
    std::reverse(p.begin(), p.end());
    double max_norm = 0.0;
    for (const auto& x : g) max_norm = std::max(max_norm, x.norm());
    const GradientVector root = testutil::random_vector(5, rng);

    CHECK((fedavg(g) - fedavg(p)).norm() < 1e-12);
    CHECK((multi_krum(g, 2, 5) - multi_krum(p, 2, 5)).norm() < 1e-12);
    CHECK((fltrust(g, root) - fltrust(p, root)).norm() < 1e-12);
    CHECK(fedavg(g).norm() <= max_norm + 1e-12);
    CHECK(multi_krum(g, 2, 5).norm() <= max_norm + 1e-12);
    CHECK(fltrust(g, root).norm() <= root.norm() + 1e-12);
    SeededRng d = testutil::rng_for(seed, 11);
    CHECK(dnc(g, DncConfig::defaults(9, 2, 5), d).norm() <= max_norm + 1e-12);
  }
}

TEST_CASE("FedAvg with uniform weights equals Multi-Krum selecting everyone") {
  SeededRng rng = testutil::rng_for(12);
  const auto g = cluster(7, testutil::random_vector(4, rng), 1.0, rng);
  const std::vector<double> w(7, 1.0 / 7.0);
  CHECK((fedavg(g, w) - fedavg(g)).norm() < 1e-15);
  CHECK(multi_krum(g, 0, 7) == fedavg(g));
}

TEST_CASE("DnC defaults") {
  const DncConfig c = DncConfig::defaults(20, 4, 50000);
  CHECK(c.sub_dim == 1000);
  CHECK(c.n_iters == 1);
  CHECK(c.filter_frac == doctest::Approx(0.3));
  CHECK(DncConfig::defaults(20, 19, 10).filter_frac < 1.0);
}
