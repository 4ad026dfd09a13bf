#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "dp2guard/errors.hpp"
#include "dp2guard/numeric.hpp"
#include "test_util.hpp"

using namespace dp2guard;

TEST_CASE("encode examples") {
  CHECK(encode_fixed(Eigen::Vector2d(0.0, 0.0), 16).words == RingWords::Zero(2));
  RingVector one = encode_fixed(Eigen::VectorXd::Constant(1, 1.0), 16);
  CHECK(one.words(0) == 65536u);
  RingVector half = encode_fixed(Eigen::VectorXd::Constant(1, -0.5), 16);
  CHECK(half.words(0) == std::numeric_limits<std::uint64_t>::max() - 32768u + 1u);
}

TEST_CASE("decode examples") {
  RingVector r(1, 16);
  r.words(0) = 65536;
  CHECK(decode_fixed(r)(0) == 1.0);
  r.words(0) = 0;
  CHECK(decode_fixed(r)(0) == 0.0);
}

TEST_CASE("round trip error is at most half a quantum") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SeededRng rng = testutil::rng_for(seed);
    const Eigen::VectorXd v = testutil::random_vector(20, rng, -100.0, 100.0);
    const Eigen::VectorXd back = decode_fixed(encode_fixed(v, 16));
    REQUIRE((back - v).lpNorm<Eigen::Infinity>() <= std::ldexp(1.0, -17));
  }
}

TEST_CASE("round trip bound scales with scale_bits") {
  SeededRng rng = testutil::rng_for(9);
  for (int bits : {4, 10, 24, 30}) {
    const Eigen::VectorXd v = testutil::random_vector(50, rng, -10.0, 10.0);
    CHECK((decode_fixed(encode_fixed(v, bits)) - v).lpNorm<Eigen::Infinity>() <= std::ldexp(1.0, -bits - 1));
  }
}

TEST_CASE("encode rejects unrepresentable entries") {
  Eigen::VectorXd v(1);
  v(0) = std::ldexp(1.0, 63 - 16);
  CHECK_THROWS_AS(encode_fixed(v, 16), OverflowError);
  v(0) = std::nan("");
  CHECK_THROWS_AS(encode_fixed(v, 16), OverflowError);
  v(0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(encode_fixed(v, 16), OverflowError);
  v(0) = std::ldexp(1.0, 63 - 16) * 0.99;
  CHECK_NOTHROW(encode_fixed(v, 16));
}

TEST_CASE("ring identities") {
  SeededRng rng = testutil::rng_for(10);
  const RingVector a = uniform_ring(64, 16, rng);
  const RingVector zero(64, 16);
  CHECK(ring_sub(a, a) == zero);
  CHECK(ring_add(a, zero) == a);
  CHECK_THROWS_AS(ring_add(a, RingVector(63, 16)), DimensionMismatch);
}

TEST_CASE("adding then subtracting a uniform mask is exact") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SeededRng rng = testutil::rng_for(seed, 1);
    const RingVector x = encode_fixed(testutil::random_vector(100, rng, -1e6, 1e6));
    const RingVector m = uniform_ring(100, 16, rng);
    REQUIRE(ring_sub(ring_add(x, m), m) == x);
  }
}

TEST_CASE("a masked fixed value is uniform in its low byte") {
  const RingVector x = encode_fixed(Eigen::VectorXd::Constant(1000, 3.25));
  SeededRng rng = testutil::rng_for(11);
  std::vector<std::uint64_t> words;
  for (int s = 0; s < 100; ++s) {
    const RingVector masked = ring_add(x, uniform_ring(1000, 16, rng));
    for (Eigen::Index k = 0; k < masked.size(); ++k) words.push_back(masked.words(k));
  }
  REQUIRE(words.size() >= 100000);
  CHECK(testutil::chi_square_low8(words) < testutil::kChi2Crit255);
}

TEST_CASE("ring_scale multiplies modulo 2^64") {
  RingVector r = encode_fixed(Eigen::Vector3d(1.0, -2.0, 0.5));
  const GradientVector back = decode_fixed(ring_scale(r, 3));
  CHECK(back(0) == 3.0);
  CHECK(back(1) == -6.0);
  CHECK(back(2) == 1.5);
}

TEST_CASE("clip_linf bounds every entry") {
  const GradientVector v = (GradientVector(4) << 5.0, -7.0, 0.5, -0.25).finished();
  const GradientVector c = clip_linf(v, 1.0);
  CHECK(c(0) == 1.0);
  CHECK(c(1) == -1.0);
  CHECK(c(2) == 0.5);
  CHECK(c(3) == -0.25);
  CHECK(clip_bound(16) == std::ldexp(1.0, 14));
}

TEST_CASE("serialize round trip and malformed input") {
  SeededRng rng = testutil::rng_for(12);
  const RingVector r = uniform_ring(17, 20, rng);
  const auto bytes = serialize(r);
  CHECK(bytes.size() == 4 + 1 + 17 * 8);
  CHECK(deserialize_ring(bytes) == r);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialize_ring(longer), FormatError);
  auto shorter = bytes;
  shorter.pop_back();
  CHECK_THROWS_AS(deserialize_ring(shorter), FormatError);
}

TEST_CASE("all_finite") {
  GradientVector v = GradientVector::Ones(3);
  CHECK(all_finite(v));
  v(1) = std::nan("");
  CHECK_FALSE(all_finite(v));
}
