#pragma once

#include <span>
#include <vector>

#include "dp2guard/defense.hpp"

namespace dp2guard {

enum class ExclusionMode {
  Soft,  // excluded clients get gamma = 0; their decayed trust still weights in
  Hard,  // excluded clients additionally get weight 0 for the round
};

/// Per-client EMA trust, indexed by client position. Initial trust is 1.
struct TrustState {
  std::vector<double> trust;
  double beta = 0.5;
  std::size_t round = 0;

  static TrustState initial(std::size_t n_clients, double beta);
};

/// gamma = 1 / (1 + ||f - mu||_2) on raw (un-normalised) features.
double direct_trust(const FeatureVector& f, const FeatureVector& mu);

/// Direct trust for every client of a round; clients outside the benign set get 0.
std::vector<double> round_gammas(const DetectionResult& detection);

/// trust_i <- beta * trust_i + (1 - beta) * gamma_i.
TrustState update_trust(const TrustState& state, std::span<const double> gamma);

/// tau_i = trust_i / sum_j trust_j. Throws AllZeroTrust if the sum is not positive.
std::vector<double> weights(const TrustState& state);
/// As above; in Hard mode clients outside `benign` are zeroed before normalising.
std::vector<double> weights(const TrustState& state, ExclusionMode mode,
                            const DetectionResult& detection);

}  // namespace dp2guard
