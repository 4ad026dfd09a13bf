#pragma once

// Plaintext comparison aggregators.

#include <optional>
#include <span>
#include <vector>

#include "dp2guard/numeric.hpp"
#include "dp2guard/rng.hpp"

namespace dp2guard {

/// Mean, or weighted sum when `weights` is non-empty (weights used as given).
GradientVector fedavg(std::span<const GradientVector> gradients, std::span<const double> weights = {});

/// Indices (ascending) of the m clients with the lowest Krum scores; a
/// client's score is the sum of squared distances to its N - f - 2 nearest
/// neighbours. Throws TooFewClients unless N >= 2f + 3.
std::vector<std::size_t> multi_krum_select(std::span<const GradientVector> gradients, std::size_t f,
                                           std::size_t m);
GradientVector multi_krum(std::span<const GradientVector> gradients, std::size_t f, std::size_t m);

struct DncConfig {
  std::size_t n_iters = 1;
  Eigen::Index sub_dim = 1000;
  double filter_frac = 0.1;  // fraction of all clients removed per iteration
  std::size_t assumed_malicious = 1;

  /// 1.5 * assumed_malicious / N, capped below 1.
  static DncConfig defaults(std::size_t n_clients, std::size_t assumed_malicious, Eigen::Index d);
};

/// Survivors (ascending) after spectral filtering on random coordinate subsets.
std::vector<std::size_t> dnc_select(std::span<const GradientVector> gradients, const DncConfig& cfg,
                                    SeededRng& rng);
GradientVector dnc(std::span<const GradientVector> gradients, const DncConfig& cfg, SeededRng& rng);

/// ReLU-clipped cosine trust against the root gradient.
std::vector<double> fltrust_scores(std::span<const GradientVector> gradients, const GradientVector& root);
GradientVector fltrust(std::span<const GradientVector> gradients, const GradientVector& root);

}  // namespace dp2guard
