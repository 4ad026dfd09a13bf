#pragma once

// Poisoning attacks: label flipping plus the Fang, Min-Max and Min-Sum
// crafted-gradient attacks.

#include <functional>
#include <span>
#include <variant>

#include "dp2guard/data.hpp"
#include "dp2guard/numeric.hpp"
#include "dp2guard/rng.hpp"

namespace dp2guard {

/// Direction of the Min-Max / Min-Sum perturbation.
enum class Direction {
  PlusMean,   // +mean / ||mean||
  MinusMean,  // -mean / ||mean||
  Sign,       // -sign(mean)
};

struct LabelFlipSpec {
  int l_flip = 5;
  double fraction = 0.3;
};

struct FangSpec {
  double lambda0 = 10.0;
  double step = 0.5;  // multiplicative shrink factor
  double gamma_min = 1e-5;
};

struct ScaleSearchSpec {
  double gamma0 = 10.0;
  double step = 5.0;
  double gamma_min = 1e-5;
  Direction direction = Direction::PlusMean;
};
struct MinMaxSpec : ScaleSearchSpec {};
struct MinSumSpec : ScaleSearchSpec {};

using AttackSpec = std::variant<LabelFlipSpec, FangSpec, MinMaxSpec, MinSumSpec>;

/// Whether the target aggregation rule would accept a crafted gradient.
using DefenseOracle = std::function<bool(const GradientVector&)>;

struct AttackResult {
  GradientVector gradient;
  double scale = 0.0;          // lambda for Fang, gamma for Min-Max / Min-Sum
  std::size_t evaluations = 0; // oracle / constraint evaluations
  bool accepted = true;        // Fang: whether any candidate passed the oracle
};

/// Relabels a uniformly chosen floor(fraction * n) subset to (y + l_flip) mod L.
Dataset label_flip(const Dataset& dataset, int l_flip, double fraction, SeededRng& rng);

/// mean - lambda * sign(mean), lambda shrunk by `step` from lambda0 until the
/// oracle accepts or lambda < gamma_min (then the gamma_min candidate is returned).
AttackResult fang_attack(std::span<const GradientVector> benign, const FangSpec& spec,
                         const DefenseOracle& accepts);

/// mean + gamma * dir with the largest gamma keeping every distance to a
/// benign gradient within the benign diameter.
AttackResult minmax_attack(std::span<const GradientVector> benign, const ScaleSearchSpec& spec);

/// mean + gamma * dir with the largest gamma keeping the sum of squared
/// distances to the benign set within the largest such sum of any benign point.
AttackResult minsum_attack(std::span<const GradientVector> benign, const ScaleSearchSpec& spec);

GradientVector benign_mean(std::span<const GradientVector> benign);
/// Zero vector when the mean is zero.
GradientVector perturbation_direction(const GradientVector& mean, Direction direction);

/// Largest feasible scale for a convex feasibility set containing 0:
/// probe gamma0, expand while feasible, then bisect until the bracket is
/// narrower than gamma_min. Returns the feasible end of the bracket.
double scale_search(const std::function<bool(double)>& feasible, const ScaleSearchSpec& spec,
                    std::size_t* evaluations = nullptr);

}  // namespace dp2guard
