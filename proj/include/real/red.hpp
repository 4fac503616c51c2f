#pragma once

// Representation-enhancing distillation: the self-supervised student is
// pulled toward the supervised teacher's embeddings (cosine) and toward the
// labels (cross-entropy through a temporary linear head), then frozen.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "real/backbone.hpp"
#include "real/errors.hpp"
#include "real/numkit.hpp"
#include "real/sscl.hpp"

namespace real {

struct RedConfig {
  double lambda = 0.4;
  std::size_t epochs = 20;
  TrainConfig sgd{};

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw Error(ErrorKind::parameter, "red lambda must be in [0, 1]");
    }
    if (epochs < 1) throw Error(ErrorKind::parameter, "red epochs must be >= 1");
    sgd.validate();
  }
};

/// Grid used by the (λ, e) search.
inline std::vector<double> red_lambda_grid() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}
inline std::vector<std::size_t> red_epoch_grid() { return {5, 10, 15, 20, 30, 40, 50}; }

/// Flattening is the identity for vector inputs, so this is the backbone output.
inline Matrix extract_embeddings(const Mlp& backbone, const Matrix& x) {
  return forward(backbone, x);
}

/// −(1/N) Σ_i cos(teacher_i, student_i).
inline double feature_loss(const Matrix& student_emb, const Matrix& teacher_emb) {
  const std::size_t n = student_emb.rows();
  if (n == 0) return 0.0;
  return -row_cosines(teacher_emb, student_emb).sum / static_cast<double>(n);
}

/// Gradient of feature_loss on the student embeddings; teacher is constant.
inline Matrix feature_loss_grad(const Matrix& student_emb, const Matrix& teacher_emb) {
  const std::size_t n = student_emb.rows();
  if (n == 0) return Matrix(0, student_emb.cols());
  return (-1.0 / static_cast<double>(n)) * row_cosines(teacher_emb, student_emb).x_grad;
}

/// Mean cross-entropy of softmax(backbone(x)·head) against one-hot labels.
inline double label_loss(const Mlp& student, const LinearHead& head, const Matrix& x,
                         const Matrix& labels_onehot) {
  if (head.weight.cols() != labels_onehot.cols()) {
    throw Error(ErrorKind::shape, "label_loss: head has " + std::to_string(head.weight.cols()) +
                                      " classes, labels " + std::to_string(labels_onehot.cols()));
  }
  return softmax_cross_entropy(matmul(extract_embeddings(student, x), head.weight), labels_onehot)
      .loss;
}

inline double red_loss(double feature, double label, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorKind::parameter, "red_loss: lambda must be in [0, 1]");
  }
  return lambda * feature + (1.0 - lambda) * label;
}

struct RedEvaluation {
  double feature = 0.0;
  double label = 0.0;
  double total = 0.0;
  std::vector<Matrix> backbone_grads;
  Matrix head_grad;
};

/// L_RED and its gradients on the student backbone and head.
inline RedEvaluation red_forward_loss(const Mlp& student, const Matrix& teacher_emb,
                                      const LinearHead& head, const Matrix& x,
                                      const Matrix& labels_onehot, double lambda) {
  const ForwardCache cache = forward_cached(student, x);
  const Matrix& emb = cache.activations.back();
  if (teacher_emb.rows() != emb.rows() || teacher_emb.cols() != emb.cols()) {
    throw Error(ErrorKind::shape, "red: teacher embeddings" + teacher_emb.shape_str() +
                                      " vs student" + emb.shape_str());
  }
  RedEvaluation ev;
  const CrossEntropy ce = softmax_cross_entropy(matmul(emb, head.weight), labels_onehot);
  ev.feature = feature_loss(emb, teacher_emb);
  ev.label = ce.loss;
  ev.total = red_loss(ev.feature, ev.label, lambda);

  Matrix emb_grad = lambda * feature_loss_grad(emb, teacher_emb);
  emb_grad += (1.0 - lambda) * matmul_nt(ce.logit_grad, head.weight);
  ev.head_grad = (1.0 - lambda) * matmul_tn(emb, ce.logit_grad);
  ev.backbone_grads = backward(student, cache, emb_grad).weight_grads;
  return ev;
}

struct DistillResult {
  Mlp student;  // frozen
  std::vector<double> feature_loss;  // full-batch values after each epoch
  std::vector<double> label_loss;
  std::vector<double> total_loss;
  double initial_feature = 0.0;
  double initial_label = 0.0;
  double initial_total = 0.0;
};

/// Minimizes L_RED over the student backbone and `head` for cfg.epochs epochs.
/// The head is discarded afterwards; the teacher is read-only.
inline DistillResult distill(Mlp student, const Mlp& teacher, LinearHead head,
                             const Matrix& data, const Matrix& labels_onehot,
                             const RedConfig& cfg) {
  cfg.validate();
  student.require_unfrozen("distill");
  if (teacher.output_width() != student.output_width() ||
      teacher.input_width() != student.input_width()) {
    throw Error(ErrorKind::shape, "distill: teacher and student widths differ");
  }
  const std::vector<Matrix> teacher_before = teacher.weights();
  const Matrix teacher_emb = extract_embeddings(teacher, data);

  TrainConfig sgd = cfg.sgd;
  sgd.epochs = cfg.epochs;

  std::vector<const Matrix*> cparams;
  for (const Matrix& w : student.weights()) cparams.push_back(&w);
  cparams.push_back(&head.weight);
  SgdState state(cparams);

  DistillResult res;
  auto full_batch = [&](double& f, double& l, double& t) {
    const Matrix emb = extract_embeddings(student, data);
    f = feature_loss(emb, teacher_emb);
    l = softmax_cross_entropy(matmul(emb, head.weight), labels_onehot).loss;
    t = red_loss(f, l, cfg.lambda);
  };
  full_batch(res.initial_feature, res.initial_label, res.initial_total);

  for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
    const double lr = sgd.lr_at(epoch);
    const auto order = epoch_order(data.rows(), sgd.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += sgd.batch_size) {
      const std::size_t e = std::min(order.size(), b + sgd.batch_size);
      std::span<const std::size_t> idx(order.data() + b, e - b);
      const RedEvaluation ev =
          red_forward_loss(student, select_rows(teacher_emb, idx), head,
                           select_rows(data, idx), select_rows(labels_onehot, idx), cfg.lambda);
      if (!std::isfinite(ev.total)) {
        throw LocatedError(ErrorKind::training, epoch,
                           "distill: non-finite loss at epoch " + std::to_string(epoch));
      }
      std::vector<Matrix*> params;
      for (Matrix& w : student.mutable_weights()) params.push_back(&w);
      params.push_back(&head.weight);
      std::vector<const Matrix*> grads;
      for (const Matrix& g : ev.backbone_grads) grads.push_back(&g);
      grads.push_back(&ev.head_grad);
      state.step(params, grads, lr, sgd);
    }
    double f = 0.0, l = 0.0, t = 0.0;
    full_batch(f, l, t);
    res.feature_loss.push_back(f);
    res.label_loss.push_back(l);
    res.total_loss.push_back(t);
  }
  if (teacher.weights() != teacher_before) {
    throw Error(ErrorKind::contract, "distill: teacher weights changed");
  }
  student.freeze();
  res.student = std::move(student);
  return res;
}

}  // namespace real
