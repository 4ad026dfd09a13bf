#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "dp2guard/errors.hpp"
#include "dp2guard/trust.hpp"
#include "test_util.hpp"

using namespace dp2guard;

TEST_CASE("direct trust examples") {
  CHECK(direct_trust({1.0, 0.5}, {1.0, 0.5}) == 1.0);
  CHECK(direct_trust({1.0, 0.5}, {1.0, -0.5}) == 0.5);
  CHECK(direct_trust({3.0, 0.0}, {0.0, 0.0}) == 0.25);
}

TEST_CASE("initial trust is one for every client") {
  const TrustState s = TrustState::initial(4, 0.5);
  CHECK(s.trust == std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(TrustState::initial(3, 1.0), PreconditionError);
  CHECK_THROWS_AS(TrustState::initial(3, -0.1), PreconditionError);
}

TEST_CASE("update examples") {
  const std::vector<double> gamma{0.3, 0.0};
  TrustState s = TrustState::initial(2, 0.0);
  CHECK(update_trust(s, gamma).trust == gamma);
  TrustState h = TrustState::initial(2, 0.5);
  CHECK(update_trust(h, gamma).trust[1] == 0.5);
  CHECK(update_trust(h, gamma).round == h.round + 1);
}

TEST_CASE("constant gamma converges geometrically") {
  TrustState s = TrustState::initial(1, 0.5);
  const std::vector<double> g{0.2};
  for (int t = 0; t < 50; ++t) s = update_trust(s, g);
  CHECK(std::fabs(s.trust[0] - 0.2) <= std::ldexp(1.0, -50));
}

TEST_CASE("weight examples") {
  TrustState s = TrustState::initial(4, 0.5);
  for (double w : weights(s)) CHECK(w == 0.25);
  s.trust = {0.9, 0.1};
  const auto w = weights(s);
  CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("weights sum to one and are scale invariant") {
  SeededRng rng = testutil::rng_for(1);
  for (int rep = 0; rep < 100; ++rep) {
    TrustState s = TrustState::initial(10, 0.5);
    for (double& t : s.trust) t = 0.01 + rng.uniform();
    const auto w = weights(s);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
    TrustState scaled = s;
    const double lambda = 0.1 + 10 * rng.uniform();
    for (double& t : scaled.trust) t *= lambda;
    const auto ws = weights(scaled);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::fabs(ws[i] - w[i]) <= 1e-15);
  }
}

TEST_CASE("higher gamma every round keeps higher trust") {
  SeededRng rng = testutil::rng_for(2);
  TrustState s = TrustState::initial(2, 0.5);
  for (int t = 0; t < 30; ++t) {
    const double b = 0.5 * rng.uniform();
    const std::vector<double> g{b + 0.01 + 0.4 * rng.uniform(), b};
    s = update_trust(s, g);
    CHECK(s.trust[0] > s.trust[1]);
  }
}

TEST_CASE("repeated exclusion decays trust by beta each round") {
  TrustState s = TrustState::initial(1, 0.5);
  const std::vector<double> zero{0.0};
  double prev = s.trust[0];
  for (int k = 1; k <= 10; ++k) {
    s = update_trust(s, zero);
    CHECK(s.trust[0] <= std::pow(0.5, k) * 1.0);
    CHECK(s.trust[0] <= 0.5 * prev);
    prev = s.trust[0];
  }
}

TEST_CASE("round gammas exclude non-benign clients") {
  DetectionResult d;
  d.features = {{0.0, 1.0}, {1.0, 1.0}, {5.0, -1.0}};
  d.benign_set = {0, 1};
  d.centroid = {0.0, 1.0};
  const auto g = round_gammas(d);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.5);
  CHECK(g[2] == 0.0);
}

TEST_CASE("hard exclusion zeroes flagged clients") {
  TrustState s = TrustState::initial(3, 0.5);
  s.trust = {0.6, 0.2, 0.2};
  DetectionResult d;
  d.benign_set = {0, 1};
  const auto soft = weights(s, ExclusionMode::Soft, d);
  const auto hard = weights(s, ExclusionMode::Hard, d);
  CHECK(soft[2] == doctest::Approx(0.2));
  CHECK(hard[2] == 0.0);
  CHECK(hard[0] == doctest::Approx(0.75));
  TrustState zero = s;
  zero.trust = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(weights(zero), AllZeroTrust);
}

TEST_CASE("gamma length must match the client count") {
  TrustState s = TrustState::initial(3, 0.5);
  const std::vector<double> g{1.0};
  CHECK_THROWS(update_trust(s, g));
}
