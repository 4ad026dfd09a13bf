#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dp2guard/rng.hpp"

namespace dp2guard {

/// Row i of `features` is sample i. Labels lie in [0, num_classes).
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }
  bool empty() const { return labels.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const;
  /// First n samples (all of them when n >= size()).
  Dataset head(std::size_t n) const;
  /// Throws PreconditionError if a label is out of range or a feature is not finite.
  void validate() const;
};

enum class PartitionMode { Iid, Dirichlet };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignment;  // client -> sample indices
  PartitionMode mode = PartitionMode::Iid;
  double alpha = 0.0;
};

/// IID: shuffled equal split of floor(n / n_clients) samples each.
/// Dirichlet: per class, proportions ~ Dir(alpha) across clients. A draw
/// leaving a client empty is redrawn, up to 100 attempts.
PartitionPlan partition(const Dataset& dataset, std::size_t n_clients, PartitionMode mode,
                        double alpha, SeededRng& rng);

/// Reads IDX image/label files (gzip-compressed or plain); pixels scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Gaussian blobs with identity covariance. Class means sit at pairwise
/// distance `separation` (exact when L <= p).
Dataset synth_dataset(std::size_t n, Eigen::Index p, int num_classes, double separation,
                      SeededRng& rng);

/// One row per sample, features then label.
void write_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path, int num_classes);

/// Histogram of labels for the given indices.
std::vector<std::size_t> class_histogram(const Dataset& dataset,
                                         std::span<const std::size_t> indices);

}  // namespace dp2guard
