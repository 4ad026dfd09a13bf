#include "dp2guard/model.hpp"

#include <cmath>

#include "dp2guard/errors.hpp"

namespace dp2guard {

namespace {

void softmax_rows(Eigen::MatrixXd& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

void check_batch(const ModelParams& w, const Dataset& batch) {
  if (batch.empty()) throw ShapeMismatch("batch is empty");
  if (batch.dim() != w.input_dim())
    throw ShapeMismatch("feature dimension " + std::to_string(batch.dim()) +
                        " does not match model input " + std::to_string(w.input_dim()));
  for (int y : batch.labels)
    if (y < 0 || y >= w.num_outputs()) throw ShapeMismatch("label outside model classes");
}

/// Activations per layer: acts[0] = input, acts[k] = output of layer k-1
/// (post-ReLU for hidden layers, raw logits for the last).
std::vector<Eigen::MatrixXd> forward(const ModelParams& w, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(w.layers().size() + 1);
  acts.push_back(x);
  for (std::size_t k = 0; k < w.layers().size(); ++k) {
    const Layer& layer = w.layers()[k];
    Eigen::MatrixXd z = acts.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (k + 1 < w.layers().size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

ModelParams ModelParams::make(ModelKind kind, Eigen::Index input_dim, int num_classes,
                              Eigen::Index hidden, SeededRng& rng) {
  if (input_dim < 1 || num_classes < 1) throw PreconditionError("model dimensions must be positive");
  std::vector<Layer> layers;
  if (kind == ModelKind::LogReg) {
    layers.push_back({Eigen::MatrixXd::Zero(num_classes, input_dim), Eigen::VectorXd::Zero(num_classes)});
    return ModelParams(std::move(layers));
  }
  if (hidden < 1) throw PreconditionError("hidden width must be positive");
  auto glorot = [&rng](Eigen::Index out, Eigen::Index in) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    Eigen::MatrixXd m(out, in);
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * a;
    return m;
  };
  layers.push_back({glorot(hidden, input_dim), Eigen::VectorXd::Zero(hidden)});
  layers.push_back({glorot(num_classes, hidden), Eigen::VectorXd::Zero(num_classes)});
  return ModelParams(std::move(layers));
}

Eigen::Index ModelParams::size() const {
  Eigen::Index d = 0;
  for (const auto& l : layers_) d += l.weight.size() + l.bias.size();
  return d;
}

GradientVector ModelParams::flatten() const {
  GradientVector out(size());
  Eigen::Index pos = 0;
  for (const auto& l : layers_) {
    out.segment(pos, l.weight.size()) = l.weight.reshaped();
    pos += l.weight.size();
    out.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return out;
}

ModelParams ModelParams::unflatten(const GradientVector& flat) const {
  if (flat.size() != size()) throw DimensionMismatch("unflatten: length does not match model");
  std::vector<Layer> layers = layers_;
  Eigen::Index pos = 0;
  for (auto& l : layers) {
    l.weight.reshaped() = flat.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
  return ModelParams(std::move(layers));
}

Eigen::MatrixXd predict_proba(const ModelParams& w, const Eigen::MatrixXd& features) {
  Eigen::MatrixXd logits = std::move(forward(w, features).back());
  softmax_rows(logits);
  return logits;
}

double loss(const ModelParams& w, const Dataset& batch) {
  check_batch(w, batch);
  const Eigen::MatrixXd logits = std::move(forward(w, batch.features).back());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, batch.labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(batch.size());
}

GradientVector local_grad(const ModelParams& w, const Dataset& batch) {
  check_batch(w, batch);
  std::vector<Eigen::MatrixXd> acts = forward(w, batch.features);
  const double n = static_cast<double>(batch.size());

  Eigen::MatrixXd delta = std::move(acts.back());
  softmax_rows(delta);
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, batch.labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= n;

  const auto& layers = w.layers();
  std::vector<Layer> grads(layers.size());
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Eigen::MatrixXd& input = acts[k];
    grads[k].weight = delta.transpose() * input;
    grads[k].bias = delta.colwise().sum().transpose();
    if (k > 0) {
      Eigen::MatrixXd back = delta * layers[k].weight;
      delta = (input.array() > 0.0).select(back, 0.0);
    }
  }
  return ModelParams(std::move(grads)).flatten();
}

ModelParams sgd_step(const ModelParams& w, const GradientVector& g, double lr) {
  if (g.size() != w.size()) throw DimensionMismatch("sgd_step: gradient length mismatch");
  return w.unflatten(w.flatten() - lr * g);
}

double accuracy(const ModelParams& w, const Dataset& data) {
  if (data.empty()) return 0.0;
  const Eigen::MatrixXd probs = predict_proba(w, data.features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

GradientVector local_update(const ModelParams& w, const Dataset& data, const TrainingConfig& cfg,
                            SeededRng& rng) {
  if (data.empty()) throw ShapeMismatch("local dataset is empty");
  if (cfg.batch_size == 0) throw PreconditionError("batch_size must be positive");
  switch (cfg.mode) {
    case LocalMode::Full:
      return local_grad(w, data);
    case LocalMode::MiniBatch: {
      const std::size_t b = std::min(cfg.batch_size, data.size());
      std::vector<std::size_t> perm = rng.permutation(data.size());
      perm.resize(b);
      return local_grad(w, data.subset(perm));
    }
    case LocalMode::Epoch: {
      if (!(cfg.lr > 0.0)) throw PreconditionError("epoch mode needs lr > 0");
      const std::vector<std::size_t> perm = rng.permutation(data.size());
      const GradientVector start = w.flatten();
      ModelParams local = w;
      for (std::size_t begin = 0; begin < perm.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(begin + cfg.batch_size, perm.size());
        const Dataset batch = data.subset(std::span<const std::size_t>(perm).subspan(begin, end - begin));
        local = sgd_step(local, local_grad(local, batch), cfg.lr);
      }
      return (start - local.flatten()) / cfg.lr;
    }
  }
  throw PreconditionError("unknown local mode");
}

}  // namespace dp2guard
