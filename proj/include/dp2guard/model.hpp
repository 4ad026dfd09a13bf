#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dp2guard/data.hpp"
#include "dp2guard/numeric.hpp"
#include "dp2guard/rng.hpp"

namespace dp2guard {

enum class ModelKind { LogReg, Mlp };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Feed-forward softmax classifier. LogReg has one affine layer; Mlp has a
/// ReLU hidden layer. Flattened layout: per layer, weight (column-major)
/// then bias.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  /// Zero weights for LogReg; Glorot-uniform weights and zero bias for Mlp.
  static ModelParams make(ModelKind kind, Eigen::Index input_dim, int num_classes,
                          Eigen::Index hidden, SeededRng& rng);

  const std::vector<Layer>& layers() const { return layers_; }
  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  Eigen::Index num_outputs() const { return layers_.back().weight.rows(); }
  Eigen::Index size() const;

  GradientVector flatten() const;
  /// Same architecture, parameters taken from `flat`.
  ModelParams unflatten(const GradientVector& flat) const;

 private:
  std::vector<Layer> layers_;
};

/// Mean softmax cross-entropy.
double loss(const ModelParams& w, const Dataset& batch);
/// Gradient of `loss` w.r.t. the flattened parameters.
GradientVector local_grad(const ModelParams& w, const Dataset& batch);
ModelParams sgd_step(const ModelParams& w, const GradientVector& g, double lr);

Eigen::MatrixXd predict_proba(const ModelParams& w, const Eigen::MatrixXd& features);
double accuracy(const ModelParams& w, const Dataset& data);

enum class LocalMode {
  Epoch,      // one pass of minibatch SGD; emits (w_t - w_local) / lr
  MiniBatch,  // gradient of a single random minibatch
  Full,       // gradient over the whole local dataset
};

struct TrainingConfig {
  LocalMode mode = LocalMode::Epoch;
  double lr = 0.01;
  std::size_t batch_size = 32;
};

/// The gradient a client reports for round t given its local data.
GradientVector local_update(const ModelParams& w, const Dataset& data, const TrainingConfig& cfg,
                            SeededRng& rng);

}  // namespace dp2guard
