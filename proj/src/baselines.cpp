#include "dp2guard/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dp2guard/defense.hpp"
#include "dp2guard/errors.hpp"

namespace dp2guard {

GradientVector fedavg(std::span<const GradientVector> gradients, std::span<const double> weights) {
  if (gradients.empty()) throw PreconditionError("fedavg: no gradients");
  if (!weights.empty() && weights.size() != gradients.size())
    throw WeightError("fedavg: one weight per gradient required");
  GradientVector sum = GradientVector::Zero(gradients.front().size());
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (gradients[i].size() != sum.size()) throw DimensionMismatch("fedavg: gradients differ in length");
    if (weights.empty()) sum += gradients[i];
    else sum += weights[i] * gradients[i];
  }
  if (weights.empty()) sum /= static_cast<double>(gradients.size());
  return sum;
}

std::vector<std::size_t> multi_krum_select(std::span<const GradientVector> gradients, std::size_t f,
                                           std::size_t m) {
  const std::size_t n = gradients.size();
  if (n < 2 * f + 3) throw TooFewClients("multi_krum: need N >= 2f + 3");
  if (m < 1 || m > n - f) throw PreconditionError("multi_krum: m must be in [1, N - f]");
  Eigen::MatrixXd dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (gradients[i] - gradients[j]).squaredNorm();
  const std::size_t neighbours = n - f - 2;
  std::vector<double> score(n, 0.0);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.push_back(dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    std::sort(row.begin(), row.end());
    score[i] = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

GradientVector multi_krum(std::span<const GradientVector> gradients, std::size_t f, std::size_t m) {
  const std::vector<std::size_t> chosen = multi_krum_select(gradients, f, m);
  std::vector<GradientVector> picked;
  picked.reserve(chosen.size());
  for (std::size_t i : chosen) picked.push_back(gradients[i]);
  return fedavg(picked);
}

DncConfig DncConfig::defaults(std::size_t n_clients, std::size_t assumed_malicious, Eigen::Index d) {
  DncConfig cfg;
  cfg.n_iters = 1;
  cfg.sub_dim = std::min<Eigen::Index>(d, 1000);
  cfg.assumed_malicious = assumed_malicious;
  cfg.filter_frac = std::min(1.5 * static_cast<double>(assumed_malicious) / static_cast<double>(n_clients), 0.99);
  if (cfg.filter_frac <= 0.0) cfg.filter_frac = 1.0 / (2.0 * static_cast<double>(n_clients));
  return cfg;
}

std::vector<std::size_t> dnc_select(std::span<const GradientVector> gradients, const DncConfig& cfg,
                                    SeededRng& rng) {
  const std::size_t n = gradients.size();
  if (n < 2) throw PreconditionError("dnc: need at least two gradients");
  if (!(cfg.filter_frac > 0.0 && cfg.filter_frac < 1.0)) throw PreconditionError("dnc: filter_frac must be in (0, 1)");
  const Eigen::Index d = gradients.front().size();
  const Eigen::Index sub = std::clamp<Eigen::Index>(cfg.sub_dim, 1, d);
  const auto remove = std::min<std::size_t>(
      n - 1, static_cast<std::size_t>(std::ceil(cfg.filter_frac * static_cast<double>(n) - 1e-9)));

  std::vector<bool> good(n, true);
  std::vector<double> last_score(n, 0.0);
  for (std::size_t it = 0; it < std::max<std::size_t>(cfg.n_iters, 1); ++it) {
    std::vector<std::size_t> coords;
    if (sub == d) {
      coords.resize(static_cast<std::size_t>(d));
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      coords = rng.permutation(static_cast<std::size_t>(d));
      coords.resize(static_cast<std::size_t>(sub));
      std::sort(coords.begin(), coords.end());
    }
    Eigen::MatrixXd g(static_cast<Eigen::Index>(n), sub);
    for (std::size_t i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < sub; ++k)
        g(static_cast<Eigen::Index>(i), k) = gradients[i](static_cast<Eigen::Index>(coords[static_cast<std::size_t>(k)]));
    const Eigen::MatrixXd centered = center_rows(g);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    if (centered.norm() > 1e-12) {
      Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
      score = (centered * svd.matrixV().col(0)).array().square().matrix();
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(static_cast<Eigen::Index>(a)) > score(static_cast<Eigen::Index>(b)); });
    for (std::size_t k = 0; k < remove; ++k) good[order[k]] = false;
    for (std::size_t i = 0; i < n; ++i) last_score[i] = score(static_cast<Eigen::Index>(i));
  }
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i)
    if (good[i]) survivors.push_back(i);
  if (survivors.empty()) {
    // every client was filtered at some iteration: keep the least suspicious
    survivors.push_back(static_cast<std::size_t>(std::min_element(last_score.begin(), last_score.end()) - last_score.begin()));
  }
  return survivors;
}

GradientVector dnc(std::span<const GradientVector> gradients, const DncConfig& cfg, SeededRng& rng) {
  const std::vector<std::size_t> keep = dnc_select(gradients, cfg, rng);
  std::vector<GradientVector> picked;
  for (std::size_t i : keep) picked.push_back(gradients[i]);
  return fedavg(picked);
}

std::vector<double> fltrust_scores(std::span<const GradientVector> gradients, const GradientVector& root) {
  const double root_norm = root.norm();
  if (!(root_norm > 0.0)) throw PreconditionError("fltrust: root gradient must be non-zero");
  std::vector<double> out;
  out.reserve(gradients.size());
  for (const auto& g : gradients) {
    const double n = g.norm();
    out.push_back(n > 0.0 ? std::max(0.0, g.dot(root) / (n * root_norm)) : 0.0);
  }
  return out;
}

GradientVector fltrust(std::span<const GradientVector> gradients, const GradientVector& root) {
  const std::vector<double> score = fltrust_scores(gradients, root);
  const double root_norm = root.norm();
  GradientVector sum = GradientVector::Zero(root.size());
  double total = 0.0;
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (score[i] <= 0.0) continue;
    sum += score[i] * (root_norm / gradients[i].norm()) * gradients[i];
    total += score[i];
  }
  if (total <= 0.0) return root;
  return sum / total;
}

}  // namespace dp2guard
