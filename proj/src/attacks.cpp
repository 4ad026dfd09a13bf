#include "dp2guard/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "dp2guard/errors.hpp"

namespace dp2guard {

Dataset label_flip(const Dataset& dataset, int l_flip, double fraction, SeededRng& rng) {
  if (l_flip < 1 || l_flip >= dataset.num_classes)
    throw PreconditionError("label_flip: l_flip must be in [1, L)");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("label_flip: fraction must be in (0, 1]");
  Dataset out = dataset;
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(dataset.size()) + 1e-9));
  const std::vector<std::size_t> perm = rng.permutation(dataset.size());
  for (std::size_t k = 0; k < count; ++k) {
    int& y = out.labels[perm[k]];
    y = (y + l_flip) % dataset.num_classes;
  }
  return out;
}

GradientVector benign_mean(std::span<const GradientVector> benign) {
  if (benign.empty()) throw PreconditionError("attack: benign set is empty");
  GradientVector sum = GradientVector::Zero(benign.front().size());
  for (const auto& g : benign) {
    if (g.size() != sum.size()) throw DimensionMismatch("attack: benign gradients differ in length");
    sum += g;
  }
  return sum / static_cast<double>(benign.size());
}

GradientVector perturbation_direction(const GradientVector& mean, Direction direction) {
  const double norm = mean.norm();
  if (norm == 0.0) return GradientVector::Zero(mean.size());
  switch (direction) {
    case Direction::PlusMean:
      return mean / norm;
    case Direction::MinusMean:
      return -mean / norm;
    case Direction::Sign:
      return -mean.array().sign().matrix();
  }
  return mean / norm;
}

AttackResult fang_attack(std::span<const GradientVector> benign, const FangSpec& spec,
                         const DefenseOracle& accepts) {
  if (!(spec.gamma_min > 0.0)) throw PreconditionError("fang: gamma_min must be positive");
  if (!(spec.step > 0.0 && spec.step < 1.0)) throw PreconditionError("fang: step must be in (0, 1)");
  const GradientVector mean = benign_mean(benign);
  const GradientVector sign = mean.array().sign().matrix();
  AttackResult result;
  for (double lambda = spec.lambda0; lambda >= spec.gamma_min; lambda *= spec.step) {
    GradientVector candidate = mean - lambda * sign;
    ++result.evaluations;
    if (accepts(candidate)) {
      result.gradient = std::move(candidate);
      result.scale = lambda;
      return result;
    }
  }
  result.gradient = mean - spec.gamma_min * sign;
  result.scale = spec.gamma_min;
  result.accepted = false;
  return result;
}

double scale_search(const std::function<bool(double)>& feasible, const ScaleSearchSpec& spec,
                    std::size_t* evaluations) {
  if (!(spec.gamma_min > 0.0)) throw PreconditionError("scale_search: gamma_min must be positive");
  if (!(spec.gamma0 > 0.0 && spec.step > 0.0)) throw PreconditionError("scale_search: gamma0 and step must be positive");
  std::size_t evals = 0;
  auto probe = [&](double g) {
    ++evals;
    return feasible(g);
  };
  double lo = 0.0;
  double hi = spec.gamma0;
  if (probe(spec.gamma0)) {
    lo = spec.gamma0;
    double step = spec.step;
    // Expansion is bounded: the step doubles, so 1100 probes exceed any double.
    for (int i = 0; i < 1100; ++i) {
      if (!probe(lo + step)) break;
      lo += step;
      step *= 2.0;
    }
    hi = lo + step;
  }
  while (hi - lo >= spec.gamma_min) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (probe(mid)) lo = mid;
    else hi = mid;
  }
  if (evaluations) *evaluations = evals;
  return lo;
}

namespace {

double max_pairwise_distance(std::span<const GradientVector> benign) {
  double best = 0.0;
  for (std::size_t i = 0; i < benign.size(); ++i)
    for (std::size_t j = i + 1; j < benign.size(); ++j) best = std::max(best, (benign[i] - benign[j]).norm());
  return best;
}

double sum_sq_distances(std::span<const GradientVector> benign, const GradientVector& x) {
  double total = 0.0;
  for (const auto& g : benign) total += (x - g).squaredNorm();
  return total;
}

AttackResult scaled_attack(std::span<const GradientVector> benign, const ScaleSearchSpec& spec,
                           const std::function<bool(const GradientVector&)>& within_budget) {
  if (benign.size() < 2) throw PreconditionError("attack: need at least two benign gradients");
  const GradientVector mean = benign_mean(benign);
  const GradientVector dir = perturbation_direction(mean, spec.direction);
  AttackResult result;
  result.gradient = mean;
  if (max_pairwise_distance(benign) == 0.0 || dir.squaredNorm() == 0.0) return result;
  result.scale = scale_search([&](double gamma) { return within_budget(mean + gamma * dir); }, spec,
                              &result.evaluations);
  result.gradient = mean + result.scale * dir;
  return result;
}

}  // namespace

AttackResult minmax_attack(std::span<const GradientVector> benign, const ScaleSearchSpec& spec) {
  const double bound = max_pairwise_distance(benign);
  return scaled_attack(benign, spec, [&](const GradientVector& x) {
    for (const auto& g : benign)
      if ((x - g).norm() > bound) return false;
    return true;
  });
}

AttackResult minsum_attack(std::span<const GradientVector> benign, const ScaleSearchSpec& spec) {
  double budget = 0.0;
  for (const auto& g : benign) budget = std::max(budget, sum_sq_distances(benign, g));
  return scaled_attack(benign, spec, [&](const GradientVector& x) { return sum_sq_distances(benign, x) <= budget; });
}

}  // namespace dp2guard
