#pragma once

// Self-supervised contrastive stream (SimSiam style): two augmented views,
// a projector and a predictor, negative cosine similarity with stop-gradient
// on the projector outputs.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "real/backbone.hpp"
#include "real/errors.hpp"
#include "real/numkit.hpp"

namespace real {

using Projector = Mlp;  // d_cnn -> d_proj -> d_proj
using Predictor = Mlp;  // d_proj -> d_pred_hidden -> d_proj

inline Projector make_projector(std::size_t d_cnn, std::size_t d_proj, RngSeed seed) {
  return Projector({d_cnn, d_proj, d_proj}, seed);
}

inline Predictor make_predictor(std::size_t d_proj, std::size_t d_hidden, RngSeed seed) {
  return Predictor({d_proj, d_hidden, d_proj}, seed);
}

/// Vector-space augmentation: additive Gaussian jitter followed by zeroing
/// each coordinate independently with probability `mask_prob`.
class AugmentationPolicy {
 public:
  AugmentationPolicy(double jitter_std, double mask_prob, RngSeed seed)
      : jitter_(jitter_std), mask_(mask_prob), rng_(seed) {
    if (!(jitter_std >= 0.0) || !std::isfinite(jitter_std)) {
      throw Error(ErrorKind::parameter, "augmentation jitter must be >= 0");
    }
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) {
      throw Error(ErrorKind::parameter, "augmentation mask probability must be in [0, 1)");
    }
    if (jitter_std == 0.0 && mask_prob == 0.0) {
      throw Error(ErrorKind::parameter, "augmentation must have jitter > 0 or mask > 0");
    }
  }

  double jitter_std() const noexcept { return jitter_; }
  double mask_prob() const noexcept { return mask_; }

  Matrix apply(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.values()) {
      if (jitter_ > 0.0) v += jitter_ * rng_.normal();
      if (mask_ > 0.0 && rng_.uniform() < mask_) v = 0.0;
    }
    return out;
  }

 private:
  double jitter_;
  double mask_;
  Rng rng_;
};

inline std::pair<Matrix, Matrix> augment_two_views(AugmentationPolicy& policy, const Matrix& x) {
  Matrix a = policy.apply(x);
  Matrix b = policy.apply(x);
  return {std::move(a), std::move(b)};
}

namespace detail {

inline double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

inline void require_cosine_inputs(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::shape, std::string(op) + ": a" + a.shape_str() + " vs b" + b.shape_str());
  }
}

}  // namespace detail

struct CosineTerms {
  double sum = 0.0;  // Σ_i cos(target_i, x_i)
  Matrix x_grad;     // ∂(Σ cos)/∂x, target held constant
};

/// Row cosines of `x` against fixed `target` with the gradient on `x` only.
inline CosineTerms row_cosines(const Matrix& target, const Matrix& x) {
  detail::require_cosine_inputs(target, x, "cosine");
  CosineTerms out;
  out.x_grad = Matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto t = target.row(i);
    auto xi = x.row(i);
    const double nt = detail::row_norm(t);
    const double nx = detail::row_norm(xi);
    if (!(nt > 0.0) || !(nx > 0.0)) {
      throw LocatedError(ErrorKind::degenerate_row, i,
                         "cosine: zero-norm row " + std::to_string(i));
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) dot += t[j] * xi[j];
    const double c = dot / (nt * nx);
    out.sum += c;
    auto g = out.x_grad.row(i);
    for (std::size_t j = 0; j < xi.size(); ++j)
      g[j] = t[j] / (nt * nx) - c * xi[j] / (nx * nx);
  }
  return out;
}

/// −Σ_i ⟨z1_i, z2_i⟩ / (‖z1_i‖‖z2_i‖), summed over rows.
inline double negative_cosine(const Matrix& z1, const Matrix& z2) {
  return -row_cosines(z1, z2).sum;
}

struct SsclBranches {
  Matrix proj1, proj2, pred1, pred2;
};

/// ½ L_cos(proj1, pred2) + ½ L_cos(proj2, pred1).
inline double sscl_loss_from_branches(const SsclBranches& b) {
  return 0.5 * negative_cosine(b.proj1, b.pred2) + 0.5 * negative_cosine(b.proj2, b.pred1);
}

struct SsclGradients {
  std::vector<Matrix> backbone;
  std::vector<Matrix> projector;
  std::vector<Matrix> predictor;
  // Direct gradients on the stop-gradient targets; zero by construction.
  Matrix proj1_target;
  Matrix proj2_target;
};

struct SsclEvaluation {
  double loss = 0.0;
  SsclBranches branches;
  SsclGradients grads;
};

namespace detail {
inline void accumulate(std::vector<Matrix>& into, std::vector<Matrix> from) {
  if (into.empty()) {
    into = std::move(from);
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}
}  // namespace detail

/// Loss and gradients for one pair of views. Projector outputs act as
/// constants when they are the cosine target; gradients reach the projector
/// and backbone only through the predictor branch.
inline SsclEvaluation sscl_forward_loss(const Mlp& backbone, const Projector& projector,
                                        const Predictor& predictor, const Matrix& x_aug1,
                                        const Matrix& x_aug2) {
  if (x_aug1.rows() != x_aug2.rows() || x_aug1.cols() != x_aug2.cols()) {
    throw Error(ErrorKind::shape, "sscl: views" + x_aug1.shape_str() + " vs " + x_aug2.shape_str());
  }
  if (projector.input_width() != backbone.output_width() ||
      predictor.input_width() != projector.output_width() ||
      predictor.output_width() != projector.output_width()) {
    throw Error(ErrorKind::shape, "sscl: backbone/projector/predictor widths inconsistent");
  }
  const ForwardCache b1 = forward_cached(backbone, x_aug1);
  const ForwardCache b2 = forward_cached(backbone, x_aug2);
  const ForwardCache j1 = forward_cached(projector, b1.activations.back());
  const ForwardCache j2 = forward_cached(projector, b2.activations.back());
  const ForwardCache p1 = forward_cached(predictor, j1.activations.back());
  const ForwardCache p2 = forward_cached(predictor, j2.activations.back());

  SsclEvaluation ev;
  ev.branches = {j1.activations.back(), j2.activations.back(), p1.activations.back(),
                 p2.activations.back()};
  const CosineTerms c12 = row_cosines(ev.branches.proj1, ev.branches.pred2);
  const CosineTerms c21 = row_cosines(ev.branches.proj2, ev.branches.pred1);
  ev.loss = -0.5 * c12.sum - 0.5 * c21.sum;

  const Matrix g_pred1 = -0.5 * c21.x_grad;
  const Matrix g_pred2 = -0.5 * c12.x_grad;

  auto through = [&](const ForwardCache& pc, const ForwardCache& jc, const ForwardCache& bc,
                     const Matrix& g_pred) {
    BackwardResult pr = backward(predictor, pc, g_pred);
    BackwardResult jr = backward(projector, jc, pr.input_grad);
    BackwardResult br = backward(backbone, bc, jr.input_grad);
    detail::accumulate(ev.grads.predictor, std::move(pr.weight_grads));
    detail::accumulate(ev.grads.projector, std::move(jr.weight_grads));
    detail::accumulate(ev.grads.backbone, std::move(br.weight_grads));
  };
  through(p1, j1, b1, g_pred1);
  through(p2, j2, b2, g_pred2);
  ev.grads.proj1_target = Matrix(ev.branches.proj1.rows(), ev.branches.proj1.cols());
  ev.grads.proj2_target = Matrix(ev.branches.proj2.rows(), ev.branches.proj2.cols());
  return ev;
}

/// Mean over embedding coordinates of the per-coordinate standard deviation
/// of L2-normalized rows. Values near zero indicate collapse.
inline double normalized_embedding_std(const Matrix& emb) {
  if (emb.rows() < 2 || emb.cols() == 0) return 0.0;
  Matrix z = emb;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    const double n = detail::row_norm(r);
    if (n > 0.0)
      for (double& v : r) v /= n;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < z.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) mean += z(i, j);
    mean /= static_cast<double>(z.rows());
    double var = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) var += (z(i, j) - mean) * (z(i, j) - mean);
    total += std::sqrt(var / static_cast<double>(z.rows()));
  }
  return total / static_cast<double>(z.cols());
}

struct SsclResult {
  Mlp backbone;
  std::vector<double> epoch_loss;      // mean per-sample L_SSCL per epoch
  std::vector<double> embedding_std;   // collapse monitor per epoch
};

/// Trains backbone, projector and predictor on L_SSCL; returns only the backbone.
/// Batch gradients are divided by the batch size.
inline SsclResult pretrain_sscl(Mlp backbone, Projector projector, Predictor predictor,
                                const Matrix& data, AugmentationPolicy policy,
                                const TrainConfig& cfg) {
  cfg.validate();
  backbone.require_unfrozen("pretrain_sscl");
  std::vector<const Matrix*> cparams;
  for (const Mlp* m : {&backbone, &projector, &predictor})
    for (const Matrix& w : m->weights()) cparams.push_back(&w);
  SgdState state(cparams);

  SsclResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    const auto order = epoch_order(data.rows(), cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const std::size_t n = e - b;
      const Matrix xb = select_rows(data, std::span<const std::size_t>(order.data() + b, n));
      const auto [v1, v2] = augment_two_views(policy, xb);
      SsclEvaluation ev = sscl_forward_loss(backbone, projector, predictor, v1, v2);
      if (!std::isfinite(ev.loss)) {
        throw LocatedError(ErrorKind::training, epoch,
                           "pretrain_sscl: non-finite loss at epoch " + std::to_string(epoch));
      }
      if (ev.loss < -static_cast<double>(n) * (1.0 + 1e-12)) {
        throw Error(ErrorKind::contract, "pretrain_sscl: loss below -batch_size");
      }
      const double inv = 1.0 / static_cast<double>(n);
      std::vector<Matrix*> params;
      std::vector<Matrix> scaled;
      for (auto* group : {&ev.grads.backbone, &ev.grads.projector, &ev.grads.predictor})
        for (Matrix& g : *group) scaled.push_back(inv * g);
      for (Matrix& w : backbone.mutable_weights()) params.push_back(&w);
      for (Matrix& w : projector.mutable_weights()) params.push_back(&w);
      for (Matrix& w : predictor.mutable_weights()) params.push_back(&w);
      std::vector<const Matrix*> grads;
      for (const Matrix& g : scaled) grads.push_back(&g);
      state.step(params, grads, lr, cfg);
      loss_sum += ev.loss;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(data.rows()));
    res.embedding_std.push_back(normalized_embedding_std(forward(backbone, data)));
  }
  res.backbone = std::move(backbone);
  return res;
}

}  // namespace real
