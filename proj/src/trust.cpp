#include "dp2guard/trust.hpp"

#include <cmath>

#include "dp2guard/errors.hpp"

namespace dp2guard {

TrustState TrustState::initial(std::size_t n_clients, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw PreconditionError("trust: beta must be in [0, 1)");
  return TrustState{std::vector<double>(n_clients, 1.0), beta, 0};
}

double direct_trust(const FeatureVector& f, const FeatureVector& mu) {
  return 1.0 / (1.0 + std::hypot(f.s - mu.s, f.c - mu.c));
}

std::vector<double> round_gammas(const DetectionResult& detection) {
  std::vector<double> gamma(detection.features.size(), 0.0);
  for (std::size_t i : detection.benign_set) gamma[i] = direct_trust(detection.features[i], detection.centroid);
  return gamma;
}

TrustState update_trust(const TrustState& state, std::span<const double> gamma) {
  if (gamma.size() != state.trust.size()) throw DimensionMismatch("update_trust: client count mismatch");
  TrustState next = state;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    if (!(gamma[i] >= 0.0 && gamma[i] <= 1.0)) throw PreconditionError("update_trust: gamma outside [0, 1]");
    next.trust[i] = state.beta * state.trust[i] + (1.0 - state.beta) * gamma[i];
  }
  ++next.round;
  return next;
}

namespace {
std::vector<double> normalise(std::vector<double> t) {
  double total = 0.0;
  for (double x : t) total += x;
  if (!(total > 0.0)) throw AllZeroTrust("weights: trust sums to zero");
  for (double& x : t) x /= total;
  return t;
}
}  // namespace

std::vector<double> weights(const TrustState& state) { return normalise(state.trust); }

std::vector<double> weights(const TrustState& state, ExclusionMode mode,
                            const DetectionResult& detection) {
  if (mode == ExclusionMode::Soft) return weights(state);
  std::vector<double> t(state.trust.size(), 0.0);
  for (std::size_t i : detection.benign_set) t[i] = state.trust[i];
  return normalise(std::move(t));
}

}  // namespace dp2guard
