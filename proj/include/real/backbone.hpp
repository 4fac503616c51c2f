#pragma once

// Bias-free fully connected networks with explicit backpropagation.
//
// `Mlp` is used for the feature backbone and for the SimSiam projector and
// predictor heads: ReLU on hidden layers, identity on the output layer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "real/errors.hpp"
#include "real/numkit.hpp"

namespace real {

class Mlp {
 public:
  Mlp() = default;

  /// He-normal initialization, one derived stream per layer.
  Mlp(std::vector<std::size_t> widths, RngSeed seed) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw Error(ErrorKind::parameter, "mlp needs at least two widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const double scale = std::sqrt(2.0 / static_cast<double>(widths_[l]));
      weights_.push_back(gaussian_matrix(widths_[l], widths_[l + 1], scale, derive_seed(seed, l)));
    }
  }

  static Mlp from_weights(std::vector<Matrix> weights) {
    if (weights.empty()) throw Error(ErrorKind::parameter, "mlp needs at least one layer");
    Mlp m;
    m.widths_.push_back(weights.front().rows());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != m.widths_.back()) {
        throw Error(ErrorKind::shape, "mlp layer " + std::to_string(l) + " input width " +
                                          std::to_string(weights[l].rows()) + " != " +
                                          std::to_string(m.widths_.back()));
      }
      if (!all_finite(weights[l])) {
        throw Error(ErrorKind::data, "mlp layer " + std::to_string(l) + " has non-finite weights");
      }
      m.widths_.push_back(weights[l].cols());
    }
    m.weights_ = std::move(weights);
    return m;
  }

  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  const std::vector<Matrix>& weights() const { return weights_; }

  /// Mutable weight access; refused once frozen.
  std::vector<Matrix>& mutable_weights() {
    require_unfrozen("weight mutation");
    return weights_;
  }

  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  void require_unfrozen(const char* what) const {
    if (frozen_) throw Error(ErrorKind::frozen, std::string(what) + " on a frozen network");
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Matrix> weights_;
  bool frozen_ = false;
};

/// Layer inputs saved by the forward pass; activations[l] feeds layer l,
/// activations.back() is the network output.
struct ForwardCache {
  std::vector<Matrix> activations;
};

struct BackwardResult {
  std::vector<Matrix> weight_grads;
  Matrix input_grad;
};

inline ForwardCache forward_cached(const Mlp& net, const Matrix& x) {
  if (x.cols() != net.input_width()) {
    throw Error(ErrorKind::shape, "forward: input width " + std::to_string(x.cols()) +
                                      " != " + std::to_string(net.input_width()));
  }
  ForwardCache cache;
  cache.activations.reserve(net.layer_count() + 1);
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Matrix z = matmul(cache.activations.back(), net.weights()[l]);
    if (l + 1 < net.layer_count()) {
      for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
    }
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

inline Matrix forward(const Mlp& net, const Matrix& x) {
  return std::move(forward_cached(net, x).activations.back());
}

/// Gradients of Σ upstream ⊙ output with respect to every weight and the input.
inline BackwardResult backward_impl(const Mlp& net, const ForwardCache& cache,
                                    const Matrix& upstream, bool want_weights) {
  const Matrix& out = cache.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw Error(ErrorKind::shape, "backward: upstream" + upstream.shape_str() +
                                      " vs output" + out.shape_str());
  }
  BackwardResult res;
  if (want_weights) res.weight_grads.resize(net.layer_count());
  Matrix delta = upstream;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    if (l + 1 < net.layer_count()) {
      // ReLU mask from this layer's output.
      const Matrix& a = cache.activations[l + 1];
      auto d = delta.values();
      auto av = a.values();
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(av[i] > 0.0)) d[i] = 0.0;
    }
    if (want_weights) res.weight_grads[l] = matmul_tn(cache.activations[l], delta);
    delta = matmul_nt(delta, net.weights()[l]);
  }
  res.input_grad = std::move(delta);
  return res;
}

inline BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Matrix& upstream) {
  net.require_unfrozen("backward");
  return backward_impl(net, cache, upstream, true);
}

inline BackwardResult backward(const Mlp& net, const Matrix& x, const Matrix& upstream) {
  return backward(net, forward_cached(net, x), upstream);
}

/// Linear classifier on top of embeddings (no bias).
struct LinearHead {
  Matrix weight;  // d_cnn x C

  static LinearHead init(std::size_t d_in, std::size_t classes, RngSeed seed) {
    return LinearHead{gaussian_matrix(d_in, classes, 1.0 / std::sqrt(static_cast<double>(d_in)), seed)};
  }
};

struct LrSchedule {
  std::vector<double> milestones{0.5, 0.75};  // fractions of total epochs
  double divisor = 10.0;
};

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  LrSchedule schedule{};
  RngSeed seed{};

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::parameter, "lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw Error(ErrorKind::parameter, "momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw Error(ErrorKind::parameter, "weight decay must be >= 0");
    if (epochs < 1) throw Error(ErrorKind::parameter, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::parameter, "batch size must be >= 1");
    if (!(schedule.divisor > 0.0)) throw Error(ErrorKind::parameter, "lr divisor must be > 0");
  }

  /// Step decay: lr divided by `divisor` once per milestone already passed.
  double lr_at(std::size_t epoch) const {
    double r = lr;
    for (double m : schedule.milestones)
      if (static_cast<double>(epoch) >= m * static_cast<double>(epochs)) r /= schedule.divisor;
    return r;
  }
};

/// v ← momentum·v + g + weight_decay·w;  w ← w − lr·v.
inline void sgd_step(Matrix& weights, const Matrix& grads, Matrix& velocity, double lr,
                     double momentum, double weight_decay) {
  if (grads.rows() != weights.rows() || grads.cols() != weights.cols() ||
      velocity.rows() != weights.rows() || velocity.cols() != weights.cols()) {
    throw Error(ErrorKind::shape, "sgd_step: weights" + weights.shape_str() + " grads" +
                                      grads.shape_str() + " velocity" + velocity.shape_str());
  }
  auto w = weights.values();
  auto g = grads.values();
  auto v = velocity.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
    w[i] -= lr * v[i];
  }
}

/// Momentum buffers for a list of parameter tensors.
class SgdState {
 public:
  SgdState() = default;
  explicit SgdState(const std::vector<const Matrix*>& params) {
    for (const Matrix* p : params) velocity_.emplace_back(p->rows(), p->cols());
  }

  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
            double lr, const TrainConfig& cfg) {
    if (params.size() != velocity_.size() || grads.size() != velocity_.size()) {
      throw Error(ErrorKind::shape, "sgd: parameter count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i)
      sgd_step(*params[i], *grads[i], velocity_[i], lr, cfg.momentum, cfg.weight_decay);
  }

 private:
  std::vector<Matrix> velocity_;
};

struct CrossEntropy {
  double loss = 0.0;    // mean over rows
  Matrix logit_grad;    // d loss / d logits
  Matrix probabilities;
};

/// Mean softmax cross-entropy of `logits` against one-hot rows.
inline CrossEntropy softmax_cross_entropy(const Matrix& logits, const Matrix& labels_onehot) {
  if (logits.rows() != labels_onehot.rows() || logits.cols() != labels_onehot.cols()) {
    throw Error(ErrorKind::shape, "cross entropy: logits" + logits.shape_str() + " vs labels" +
                                      labels_onehot.shape_str());
  }
  for (std::size_t i = 0; i < labels_onehot.rows(); ++i) {
    std::size_t ones = 0;
    bool ok = true;
    for (double v : labels_onehot.row(i)) {
      if (v == 1.0) ++ones;
      else if (v != 0.0) ok = false;
    }
    if (!ok || ones != 1) {
      throw LocatedError(ErrorKind::data, i, "label row " + std::to_string(i) + " is not one-hot");
    }
  }
  const std::size_t n = logits.rows();
  CrossEntropy ce;
  ce.probabilities = Matrix(n, logits.cols());
  ce.logit_grad = Matrix(n, logits.cols());
  if (n == 0) return ce;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_sum = std::log(sum);
    auto p = ce.probabilities.row(i);
    auto y = labels_onehot.row(i);
    auto g = ce.logit_grad.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double log_p = z[j] - zmax - log_sum;
      p[j] = std::exp(log_p);
      if (y[j] == 1.0) ce.loss -= log_p;
      g[j] = (p[j] - y[j]) * inv_n;
    }
  }
  ce.loss *= inv_n;
  return ce;
}

/// Deterministic per-epoch minibatch order.
inline std::vector<std::size_t> epoch_order(std::size_t n, RngSeed seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 1000003ULL + epoch));
  rng.shuffle(order);
  return order;
}

struct SupervisedResult {
  Mlp net;
  LinearHead head;
  std::vector<double> epoch_loss;  // mean training loss over each epoch's batches
  double initial_loss = 0.0;       // full-batch loss before the first step
  double final_loss = 0.0;         // full-batch loss after the last step
};

inline double supervised_loss(const Mlp& net, const LinearHead& head, const Matrix& x,
                              const Matrix& y) {
  return softmax_cross_entropy(matmul(forward(net, x), head.weight), y).loss;
}

/// Supervised stream: softmax cross-entropy on backbone·head, minibatch SGD.
inline SupervisedResult train_supervised(Mlp net, LinearHead head, const Matrix& data,
                                         const Matrix& labels_onehot, const TrainConfig& cfg) {
  cfg.validate();
  net.require_unfrozen("train_supervised");
  if (data.rows() != labels_onehot.rows()) {
    throw Error(ErrorKind::shape, "train_supervised: data" + data.shape_str() + " vs labels" +
                                      labels_onehot.shape_str());
  }
  if (head.weight.rows() != net.output_width() || head.weight.cols() != labels_onehot.cols()) {
    throw Error(ErrorKind::shape, "train_supervised: head" + head.weight.shape_str() +
                                      " incompatible with backbone/labels");
  }
  SupervisedResult res;
  res.initial_loss = supervised_loss(net, head, data, labels_onehot);

  std::vector<const Matrix*> cparams;
  for (const Matrix& w : net.weights()) cparams.push_back(&w);
  cparams.push_back(&head.weight);
  SgdState state(cparams);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    const auto order = epoch_order(data.rows(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + b, e - b);
      const Matrix xb = select_rows(data, idx);
      const Matrix yb = select_rows(labels_onehot, idx);
      const ForwardCache cache = forward_cached(net, xb);
      const Matrix& emb = cache.activations.back();
      const CrossEntropy ce = softmax_cross_entropy(matmul(emb, head.weight), yb);
      if (!std::isfinite(ce.loss)) {
        throw LocatedError(ErrorKind::training, epoch,
                           "train_supervised: non-finite loss at epoch " + std::to_string(epoch));
      }
      const Matrix head_grad = matmul_tn(emb, ce.logit_grad);
      const BackwardResult bw = backward(net, cache, matmul_nt(ce.logit_grad, head.weight));

      std::vector<Matrix*> params;
      for (Matrix& w : net.mutable_weights()) params.push_back(&w);
      params.push_back(&head.weight);
      std::vector<const Matrix*> grads;
      for (const Matrix& g : bw.weight_grads) grads.push_back(&g);
      grads.push_back(&head_grad);
      state.step(params, grads, lr, cfg);

      loss_sum += ce.loss;
      ++batches;
    }
    res.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  res.final_loss = supervised_loss(net, head, data, labels_onehot);
  if (!std::isfinite(res.final_loss)) {
    throw LocatedError(ErrorKind::training, cfg.epochs, "train_supervised: diverged");
  }
  res.net = std::move(net);
  res.head = std::move(head);
  return res;
}

}  // namespace real
