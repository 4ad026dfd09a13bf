#include "dp2guard/defense.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dp2guard/errors.hpp"

namespace dp2guard {

namespace {

double sequential_dot(const GradientMatrix& g, Eigen::Index a, Eigen::Index b) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < g.cols(); ++k) acc += g(a, k) * g(b, k);
  return acc;
}

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

bool DetectionResult::is_benign(std::size_t row) const {
  return std::binary_search(benign_set.begin(), benign_set.end(), row);
}

Eigen::VectorXd top_direction(const GradientMatrix& g) {
  if (g.rows() < 1 || g.cols() < 1) throw DegenerateError("top_direction: empty matrix");
  if (g.norm() < 1e-12) throw DegenerateError("top_direction: matrix is numerically zero");
  const Eigen::MatrixXd gram = g * g.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw DegenerateError("top_direction: eigensolver failed");
  const Eigen::VectorXd u = eig.eigenvectors().col(gram.rows() - 1);
  Eigen::VectorXd v = g.transpose() * u;
  const double norm = v.norm();
  if (norm < 1e-300) throw DegenerateError("top_direction: null projection");
  v /= norm;
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0.0) v = -v;
  return v;
}

Eigen::VectorXd median_cosines(const GradientMatrix& g) {
  const Eigen::Index n = g.rows();
  Eigen::VectorXd norms(n);
  for (Eigen::Index i = 0; i < n; ++i) norms(i) = std::sqrt(sequential_dot(g, i, i));
  Eigen::MatrixXd cos = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double c = 0.0;
      if (norms(i) > 0.0 && norms(j) > 0.0)
        c = std::clamp(sequential_dot(g, i, j) / (norms(i) * norms(j)), -1.0, 1.0);
      cos(i, j) = c;
      cos(j, i) = c;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (norms(i) == 0.0 || n < 2) continue;
    scratch.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) scratch.push_back(cos(i, j));
    out(i) = median_of(scratch);
  }
  return out;
}

DetectionResult cluster_and_select(std::span<const FeatureVector> features, SeededRng& rng) {
  const std::size_t n = features.size();
  if (n < 2) throw PreconditionError("cluster_and_select: need at least two clients");

  DetectionResult result;
  result.features.assign(features.begin(), features.end());
  result.cluster.assign(n, 0);

  // z-score normalisation per feature
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = features[i].s;
    x(static_cast<Eigen::Index>(i), 1) = features[i].c;
  }
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double mean = x.col(k).mean();
    const double var = (x.col(k).array() - mean).square().mean();
    double sd = std::sqrt(var);
    if (sd < 1e-12) sd = 1.0;
    x.col(k) = (x.col(k).array() - mean) / sd;
  }

  auto finish_all_benign = [&]() {
    result.benign_set.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.benign_set[i] = i;
  };

  // k-means++ seeding
  Eigen::Matrix2d centers;
  const auto first = static_cast<Eigen::Index>(rng.uniform_index(n));
  centers.row(0) = x.row(first);
  Eigen::VectorXd d2(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) d2(i) = (x.row(i) - centers.row(0)).squaredNorm();
  const double total = d2.sum();
  bool degenerate = !(total > 0.0);
  if (!degenerate) {
    const double target = rng.uniform() * total;
    double acc = 0.0;
    Eigen::Index second = x.rows() - 1;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      acc += d2(i);
      if (acc > target && d2(i) > 0.0) {
        second = i;
        break;
      }
    }
    while (d2(second) == 0.0) --second;  // the last row may coincide with the first centre
    centers.row(1) = x.row(second);

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double a = (x.row(i) - centers.row(0)).squaredNorm();
        const double b = (x.row(i) - centers.row(1)).squaredNorm();
        const int label = b < a ? 1 : 0;
        if (label != assign[static_cast<std::size_t>(i)]) {
          assign[static_cast<std::size_t>(i)] = label;
          changed = true;
        }
      }
      if (!changed) break;
      std::array<Eigen::RowVector2d, 2> sum{Eigen::RowVector2d::Zero(), Eigen::RowVector2d::Zero()};
      std::array<std::size_t, 2> count{0, 0};
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto label = static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]);
        sum[label] += x.row(i);
        ++count[label];
      }
      for (std::size_t k = 0; k < 2; ++k)
        if (count[k] > 0) centers.row(static_cast<Eigen::Index>(k)) = sum[k] / static_cast<double>(count[k]);
    }
    result.cluster = assign;
  }

  if (degenerate) {
    finish_all_benign();
  } else {
    std::array<std::size_t, 2> count{0, 0};
    std::array<double, 2> csum{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      ++count[static_cast<std::size_t>(result.cluster[i])];
      csum[static_cast<std::size_t>(result.cluster[i])] += features[i].c;
    }
    int keep = count[1] > count[0] ? 1 : 0;
    if (count[0] == count[1] && csum[1] / static_cast<double>(count[1]) > csum[0] / static_cast<double>(count[0])) keep = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (result.cluster[i] == keep) result.benign_set.push_back(i);
  }

  FeatureVector mu;
  for (std::size_t i : result.benign_set) {
    mu.s += features[i].s;
    mu.c += features[i].c;
  }
  mu.s /= static_cast<double>(result.benign_set.size());
  mu.c /= static_cast<double>(result.benign_set.size());
  result.centroid = mu;
  return result;
}

std::vector<FeatureVector> extract_features(const GradientMatrix& g) {
  const Eigen::VectorXd v1 = top_direction(g);
  const Eigen::VectorXd s = spectral_scores(g, v1);
  const Eigen::VectorXd c = median_cosines(g);
  std::vector<FeatureVector> out(static_cast<std::size_t>(g.rows()));
  for (Eigen::Index i = 0; i < g.rows(); ++i) out[static_cast<std::size_t>(i)] = {s(i), c(i)};
  return out;
}

DetectionResult detect(const GradientMatrix& g, SeededRng& rng) {
  if (g.rows() < 2) throw PreconditionError("detect: need at least two clients");
  if (g.norm() < 1e-12) {
    std::vector<FeatureVector> zeros(static_cast<std::size_t>(g.rows()));
    return cluster_and_select(zeros, rng);
  }
  const std::vector<FeatureVector> f = extract_features(g);
  return cluster_and_select(f, rng);
}

GradientMatrix stack_rows(std::span<const Eigen::VectorXd> rows) {
  if (rows.empty()) return {};
  GradientMatrix g(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != g.cols()) throw DimensionMismatch("stack_rows: ragged rows");
    g.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return g;
}

GradientMatrix center_rows(const GradientMatrix& g) {
  return g.rowwise() - g.colwise().mean();
}

}  // namespace dp2guard
