#pragma once

// Client side of a round: local training (or attack crafting), clipping,
// additive splitting and masking into two ring shares.

#include <cstdint>
#include <utility>
#include <variant>

#include "dp2guard/attacks.hpp"
#include "dp2guard/data.hpp"
#include "dp2guard/model.hpp"
#include "dp2guard/numeric.hpp"

namespace dp2guard {

struct Honest {};
struct Malicious {
  AttackSpec attack;
};
using Role = std::variant<Honest, Malicious>;

struct ClientState {
  std::uint32_t client_id = 0;
  Dataset local_data;
  Role role = Honest{};

  bool is_malicious() const { return std::holds_alternative<Malicious>(role); }
};

struct MaskedShare {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  std::uint8_t share_index = 1;  // 1 -> S1, 2 -> S2
  RingVector payload;
};

/// Everything a client needs from the harness for one round.
struct RoundContext {
  std::uint64_t seed = 0;
  std::uint32_t round = 0;
  int scale_bits = kDefaultScaleBits;
  TrainingConfig training;
};

/// Side channel modelling full-knowledge adversaries: the honest gradients
/// of the round and a plaintext simulation of the aggregation rule.
struct AttackKnowledge {
  std::vector<GradientVector> benign;
  DefenseOracle accepts;
};

/// Counts ring-word writes performed while masking.
struct MaskingStats {
  std::size_t word_ops = 0;
};

/// g = g1 + g2 with g1 uniform; then (g1 + m, g2 - m) with m uniform.
/// The pair is just a fresh additive sharing of encode(g).
std::pair<MaskedShare, MaskedShare> split_and_mask(const GradientVector& g, SeededRng& rng,
                                                   int scale_bits = kDefaultScaleBits,
                                                   std::uint32_t client_id = 0, std::uint32_t round = 0,
                                                   MaskingStats* stats = nullptr);

/// The (unclipped) gradient this client submits. Malicious clients running
/// Fang / Min-Max / Min-Sum require `knowledge`.
GradientVector client_gradient(const ClientState& state, const ModelParams& global,
                               const RoundContext& ctx, const AttackKnowledge* knowledge = nullptr);

/// The client's poisoned dataset for label flipping: fixed for the whole
/// experiment because the flip subset is drawn from a round-independent stream.
Dataset flipped_local_data(const ClientState& state, const LabelFlipSpec& spec, std::uint64_t seed);

/// client_gradient -> clip -> split_and_mask.
std::pair<MaskedShare, MaskedShare> client_round(const ClientState& state, const ModelParams& global,
                                                 const RoundContext& ctx,
                                                 const AttackKnowledge* knowledge = nullptr);

}  // namespace dp2guard
