#pragma once

// Hybrid anomaly detection over centered gradients: spectral projection
// score, median pairwise cosine, and 2-means clustering of the features.

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "dp2guard/rng.hpp"

namespace dp2guard {

/// N x d, row i is client i's centered gradient.
using GradientMatrix = Eigen::MatrixXd;

struct FeatureVector {
  double s = 0.0;  // spectral score, >= 0
  double c = 0.0;  // median cosine, in [-1, 1]
};

struct DetectionResult {
  std::vector<std::size_t> benign_set;  // row indices, ascending
  std::vector<FeatureVector> features;  // per row
  std::vector<int> cluster;             // per row, 0 or 1
  FeatureVector centroid;               // benign cluster mean, raw feature space

  bool is_benign(std::size_t row) const;
};

/// Top right singular vector of G (unit norm, largest-magnitude entry
/// positive), computed from the N x N Gram matrix. Throws DegenerateError
/// when ||G||_F < 1e-12.
Eigen::VectorXd top_direction(const GradientMatrix& g);

/// s_i = (row_i . v1)^2.
template <class Derived, class VecDerived>
Eigen::VectorXd spectral_scores(const Eigen::MatrixBase<Derived>& g,
                                const Eigen::MatrixBase<VecDerived>& v1) {
  return (g * v1).array().square().matrix();
}

/// Median over j != i of cos(row_i, row_j); zero rows contribute and
/// receive cosine 0. Dot products use a fixed sequential reduction order.
Eigen::VectorXd median_cosines(const GradientMatrix& g);

/// z-score each feature, run seeded k-means++ 2-means (<= 100 Lloyd
/// iterations) and keep the larger cluster; ties go to the higher mean c.
DetectionResult cluster_and_select(std::span<const FeatureVector> features, SeededRng& rng);

std::vector<FeatureVector> extract_features(const GradientMatrix& g);

/// Features + clustering in one call. An all-zero matrix marks every row benign.
DetectionResult detect(const GradientMatrix& g, SeededRng& rng);

/// Row-stack vectors of equal length.
GradientMatrix stack_rows(std::span<const Eigen::VectorXd> rows);
/// Subtract the column mean from every row.
GradientMatrix center_rows(const GradientMatrix& g);

}  // namespace dp2guard
