#include "dp2guard/client.hpp"

#include "dp2guard/errors.hpp"

namespace dp2guard {

std::pair<MaskedShare, MaskedShare> split_and_mask(const GradientVector& g, SeededRng& rng, int scale_bits,
                                                   std::uint32_t client_id, std::uint32_t round,
                                                   MaskingStats* stats) {
  const RingVector encoded = encode_fixed(g, scale_bits);
  const Eigen::Index d = encoded.size();
  const RingVector g1 = uniform_ring(d, scale_bits, rng);
  const RingVector g2 = encoded - g1;
  const RingVector mask = uniform_ring(d, scale_bits, rng);
  MaskedShare s1{client_id, round, 1, g1 + mask};
  MaskedShare s2{client_id, round, 2, g2 - mask};
  if (stats) stats->word_ops += 6 * static_cast<std::size_t>(d);  // encode, g1, g2, mask, two combines
  return {std::move(s1), std::move(s2)};
}

Dataset flipped_local_data(const ClientState& state, const LabelFlipSpec& spec, std::uint64_t seed) {
  SeededRng rng = SeededRng::derive(seed, state.client_id, 0, Purpose::LabelFlip);
  return label_flip(state.local_data, spec.l_flip, spec.fraction, rng);
}

GradientVector client_gradient(const ClientState& state, const ModelParams& global, const RoundContext& ctx,
                               const AttackKnowledge* knowledge) {
  SeededRng train_rng = SeededRng::derive(ctx.seed, state.client_id, ctx.round, Purpose::LocalTraining);
  if (!state.is_malicious()) return local_update(global, state.local_data, ctx.training, train_rng);

  const AttackSpec& attack = std::get<Malicious>(state.role).attack;
  if (const auto* flip = std::get_if<LabelFlipSpec>(&attack))
    return local_update(global, flipped_local_data(state, *flip, ctx.seed), ctx.training, train_rng);

  if (!knowledge || knowledge->benign.empty())
    throw PreconditionError("client_gradient: adaptive attack needs the benign gradient set");
  if (const auto* fang = std::get_if<FangSpec>(&attack)) {
    const DefenseOracle accept_all = [](const GradientVector&) { return true; };
    return fang_attack(knowledge->benign, *fang, knowledge->accepts ? knowledge->accepts : accept_all).gradient;
  }
  if (const auto* mm = std::get_if<MinMaxSpec>(&attack)) return minmax_attack(knowledge->benign, *mm).gradient;
  return minsum_attack(knowledge->benign, std::get<MinSumSpec>(attack)).gradient;
}

std::pair<MaskedShare, MaskedShare> client_round(const ClientState& state, const ModelParams& global,
                                                 const RoundContext& ctx, const AttackKnowledge* knowledge) {
  if (global.size() < 1) throw DimensionMismatch("client_round: empty model");
  const GradientVector g = clip_linf(client_gradient(state, global, ctx, knowledge), clip_bound(ctx.scale_bits));
  SeededRng rng = SeededRng::derive(ctx.seed, state.client_id, ctx.round, Purpose::ShareSplit);
  return split_and_mask(g, rng, ctx.scale_bits, state.client_id, ctx.round);
}

}  // namespace dp2guard
