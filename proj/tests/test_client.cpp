#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dp2guard/client.hpp"
#include "test_util.hpp"

using namespace dp2guard;

namespace {

ClientState make_client(std::uint32_t id, Role role, std::uint64_t seed = 1) {
  SeededRng rng = SeededRng::derive(seed, 500 + id, 0, Purpose::Data);
  return ClientState{id, synth_dataset(64, 5, 4, 3.0, rng), std::move(role)};
}

ModelParams zero_model() {
  SeededRng rng = testutil::rng_for(0);
  return ModelParams::make(ModelKind::LogReg, 5, 4, 1, rng);
}

}  // namespace

TEST_CASE("a zero gradient splits into negated shares") {
  SeededRng rng = testutil::rng_for(1);
  const auto [s1, s2] = split_and_mask(GradientVector::Zero(50), rng);
  for (Eigen::Index k = 0; k < 50; ++k) CHECK(s1.payload.words(k) == 0 - s2.payload.words(k));
  CHECK(s1.share_index == 1);
  CHECK(s2.share_index == 2);
}

TEST_CASE("shares reconstruct the quantized gradient exactly for every stream") {
  SeededRng src = testutil::rng_for(2);
  for (int rep = 0; rep < 100; ++rep) {
    const GradientVector g = testutil::random_vector(40, src, -1000.0, 1000.0);
    const RingVector expect = encode_fixed(g, 16);
    SeededRng a = testutil::rng_for(rep, 10), b = testutil::rng_for(rep, 11);
    const auto pa = split_and_mask(g, a);
    const auto pb = split_and_mask(g, b);
    REQUIRE(pa.first.payload + pa.second.payload == expect);
    REQUIRE(pb.first.payload + pb.second.payload == expect);
    REQUIRE_FALSE(pa.first.payload == pb.first.payload);
    REQUIRE((decode_fixed(expect) - g).lpNorm<Eigen::Infinity>() <= std::ldexp(1.0, -17));
  }
}

TEST_CASE("splitting is deterministic") {
  const GradientVector g = GradientVector::LinSpaced(30, -3.0, 3.0);
  SeededRng a = testutil::rng_for(3), b = testutil::rng_for(3);
  const auto pa = split_and_mask(g, a, 16, 7, 4);
  const auto pb = split_and_mask(g, b, 16, 7, 4);
  CHECK(pa.first.payload == pb.first.payload);
  CHECK(pa.second.payload == pb.second.payload);
  CHECK(pa.first.client_id == 7);
  CHECK(pa.second.round == 4);
}

TEST_CASE("a single share is uniform on its low byte") {
  const GradientVector g = GradientVector::Constant(100000, 0.5);
  SeededRng rng = testutil::rng_for(4);
  const auto [s1, s2] = split_and_mask(g, rng);
  std::vector<std::uint64_t> w1(s1.payload.words.data(), s1.payload.words.data() + s1.payload.size());
  std::vector<std::uint64_t> w2(s2.payload.words.data(), s2.payload.words.data() + s2.payload.size());
  CHECK(testutil::chi_square_low8(w1) < testutil::kChi2Crit255);
  CHECK(testutil::chi_square_low8(w2) < testutil::kChi2Crit255);
}

TEST_CASE("masking work is linear in the dimension") {
  MaskingStats small, large;
  SeededRng rng = testutil::rng_for(5);
  split_and_mask(GradientVector::Zero(1000), rng, 16, 0, 0, &small);
  split_and_mask(GradientVector::Zero(10000), rng, 16, 0, 0, &large);
  REQUIRE(small.word_ops > 0);
  CHECK(large.word_ops == 10 * small.word_ops);
}

TEST_CASE("honest clients report their local update") {
  const ClientState c = make_client(3, Honest{});
  RoundContext ctx;
  ctx.seed = 9;
  ctx.round = 2;
  const ModelParams w = zero_model();
  SeededRng train = SeededRng::derive(9, 3, 2, Purpose::LocalTraining);
  CHECK(client_gradient(c, w, ctx) == local_update(w, c.local_data, ctx.training, train));
}

TEST_CASE("label-flip clients train on their flipped data") {
  const LabelFlipSpec spec{1, 0.5};
  const ClientState c = make_client(4, Malicious{spec});
  RoundContext ctx;
  ctx.seed = 9;
  ctx.round = 1;
  ctx.training.mode = LocalMode::Full;
  const ModelParams w = zero_model();
  const Dataset flipped = flipped_local_data(c, spec, 9);
  CHECK((client_gradient(c, w, ctx) - local_grad(w, flipped)).norm() == 0.0);
  CHECK_FALSE((local_grad(w, flipped) - local_grad(w, c.local_data)).norm() == 0.0);
  ctx.round = 5;
  CHECK((client_gradient(c, w, ctx) - local_grad(w, flipped)).norm() == 0.0);
}

TEST_CASE("adaptive clients need the benign set") {
  const ClientState c = make_client(5, Malicious{MinMaxSpec{}});
  RoundContext ctx;
  const ModelParams w = zero_model();
  CHECK_THROWS_AS(client_gradient(c, w, ctx), PreconditionError);
  AttackKnowledge k;
  k.benign = {GradientVector::Ones(w.size()), GradientVector::Zero(w.size())};
  CHECK(client_gradient(c, w, ctx, &k) == minmax_attack(k.benign, MinMaxSpec{}).gradient);
}

TEST_CASE("client_round clips before splitting") {
  const ClientState c = make_client(6, Malicious{FangSpec{1e9, 0.5, 1e-5}});
  RoundContext ctx;
  ctx.seed = 2;
  const ModelParams w = zero_model();
  AttackKnowledge k;
  k.benign = {GradientVector::Ones(w.size())};
  const auto [s1, s2] = client_round(c, w, ctx, &k);
  const GradientVector sum = decode_fixed(s1.payload + s2.payload);
  CHECK(sum.lpNorm<Eigen::Infinity>() == clip_bound(ctx.scale_bits));
}
