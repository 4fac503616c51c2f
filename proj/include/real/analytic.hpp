#pragma once

// Buffer layer and recursive least-squares analytic classifier.
//
// The classifier keeps only the ridge weight W_A (d_B x C) and the
// autocorrelation memory R = (XᵀX + γI)⁻¹ over every feature row seen so far.
// New rows are absorbed through the Woodbury form of the inverse update, so
// the result after any sequence of updates equals a single ridge solve over
// the union of all rows without ever holding those rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "real/errors.hpp"
#include "real/numkit.hpp"

namespace real {

enum class BufferActivation : std::uint32_t { identity = 0, relu = 1 };

/// Frozen random linear expansion d_cnn -> d_B.
class BufferLayer {
 public:
  BufferLayer(std::size_t d_cnn, std::size_t d_b, RngSeed seed, double scale = 0.0,
              BufferActivation act = BufferActivation::identity)
      : seed_(seed),
        scale_(scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(d_cnn))),
        act_(act),
        weight_(gaussian_matrix(d_cnn, d_b, scale_, seed)) {}

  /// Test hook and checkpoint restore: adopt an explicit weight.
  static BufferLayer from_weight(Matrix weight, RngSeed seed = {}, double scale = 0.0,
                                 BufferActivation act = BufferActivation::identity) {
    if (weight.empty() || !all_finite(weight)) {
      throw Error(ErrorKind::data, "buffer weight must be non-empty and finite");
    }
    return BufferLayer(std::move(weight), seed, scale, act);
  }

  std::size_t d_cnn() const noexcept { return weight_.rows(); }
  std::size_t d_b() const noexcept { return weight_.cols(); }
  RngSeed seed() const noexcept { return seed_; }
  double scale() const noexcept { return scale_; }
  BufferActivation activation() const noexcept { return act_; }
  const Matrix& weight() const noexcept { return weight_; }

 private:
  BufferLayer(Matrix weight, RngSeed seed, double scale, BufferActivation act)
      : seed_(seed), scale_(scale), act_(act), weight_(std::move(weight)) {}

  RngSeed seed_;
  double scale_;
  BufferActivation act_;
  Matrix weight_;
};

inline Matrix buffer_project(const BufferLayer& layer, const Matrix& embeddings) {
  if (embeddings.cols() != layer.d_cnn()) {
    throw Error(ErrorKind::shape, "buffer_project: embedding width " +
                                      std::to_string(embeddings.cols()) + " != d_cnn " +
                                      std::to_string(layer.d_cnn()));
  }
  Matrix out = matmul(embeddings, layer.weight());
  if (layer.activation() == BufferActivation::relu) {
    for (double& v : out.values()) v = std::max(v, 0.0);
  }
  return out;
}

struct AnalyticClassifier {
  Matrix weight;        // W_A, d_B x classes_seen
  Matrix memory;        // R, d_B x d_B
  double gamma = 1e-2;
  std::size_t classes_seen = 0;
  std::size_t phase_index = 0;

  std::size_t d_b() const noexcept { return memory.rows(); }
};

/// Rows per Woodbury block in phase_update; bounds the inner inverse size.
inline constexpr std::size_t kDefaultUpdateChunk = 256;

namespace detail {

inline void require_one_hot(const Matrix& labels) {
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    std::size_t ones = 0;
    bool ok = true;
    for (double v : labels.row(i)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ok = false;
      }
    }
    if (!ok || ones != 1) {
      throw LocatedError(ErrorKind::data, i,
                         "label row " + std::to_string(i) + " is not one-hot");
    }
  }
}

inline void require_gamma(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorKind::parameter, "gamma must be positive and finite");
  }
}

inline AnalyticClassifier ridge_solve(const Matrix& features, const Matrix& labels, double gamma,
                                      const char* op) {
  if (features.rows() == 0) {
    throw Error(ErrorKind::empty_base, std::string(op) + ": no base rows");
  }
  if (features.rows() != labels.rows()) {
    throw Error(ErrorKind::shape, std::string(op) + ": features" + features.shape_str() +
                                      " vs labels" + labels.shape_str());
  }
  require_gamma(gamma);
  require_one_hot(labels);
  AnalyticClassifier clf;
  clf.gamma = gamma;
  clf.memory = gram_inverse(features, gamma);
  clf.weight = matmul(clf.memory, matmul_tn(features, labels));
  clf.classes_seen = labels.cols();
  clf.phase_index = 0;
  return clf;
}

}  // namespace detail

/// Analytic initialization on the base phase.
inline AnalyticClassifier ainit(const Matrix& features, const Matrix& labels_onehot,
                                double gamma) {
  return detail::ridge_solve(features, labels_onehot, gamma, "ainit");
}

/// Closed-form ridge fit over every row at once. Needs all historical rows,
/// so it is a reference for checking recursive runs, never part of the
/// incremental path.
inline AnalyticClassifier joint_fit(const Matrix& features_all, const Matrix& labels_all,
                                    double gamma) {
  return detail::ridge_solve(features_all, labels_all, gamma, "joint_fit");
}

inline AnalyticClassifier expand_classes(AnalyticClassifier clf, std::size_t new_classes) {
  if (new_classes == 0) return clf;
  clf.weight = pad_cols(clf.weight, new_classes);
  clf.classes_seen += new_classes;
  return clf;
}

namespace detail {

/// One Woodbury block: R ← R − R Xᵀ (I + X R Xᵀ)⁻¹ X R, then
/// W ← W + R Xᵀ (Y − X W) with the updated R.
inline void woodbury_block(AnalyticClassifier& clf, const Matrix& x, const Matrix& y) {
  const Matrix rxt = matmul_nt(clf.memory, x);                 // d_B x n
  const Matrix inner = add_diagonal(symmetrize(matmul(x, rxt)), 1.0);  // n x n
  const Matrix inner_inv = sym_inverse(inner);
  const Matrix gain = matmul(rxt, inner_inv);                   // d_B x n
  clf.memory = symmetrize(clf.memory - matmul_nt(gain, rxt));
  const Matrix residual = y - matmul(x, clf.weight);
  clf.weight += matmul(matmul_nt(clf.memory, x), residual);
}

}  // namespace detail

/// Absorbs one phase of rows. Labels must already span classes_seen columns
/// (call expand_classes first). Large phases are processed in blocks of
/// `chunk` rows; the result does not depend on the blocking.
inline AnalyticClassifier phase_update(AnalyticClassifier clf, const Matrix& features,
                                       const Matrix& labels_onehot,
                                       std::size_t chunk = kDefaultUpdateChunk) {
  if (features.rows() != labels_onehot.rows()) {
    throw Error(ErrorKind::shape, "phase_update: features" + features.shape_str() +
                                      " vs labels" + labels_onehot.shape_str());
  }
  if (features.rows() > 0 && features.cols() != clf.d_b()) {
    throw Error(ErrorKind::shape, "phase_update: feature width " +
                                      std::to_string(features.cols()) + " != d_B " +
                                      std::to_string(clf.d_b()));
  }
  if (labels_onehot.cols() > clf.classes_seen) {
    throw Error(ErrorKind::protocol, "phase_update: labels have " +
                                         std::to_string(labels_onehot.cols()) +
                                         " columns but classifier has " +
                                         std::to_string(clf.classes_seen) +
                                         "; expand first");
  }
  if (features.rows() > 0 && labels_onehot.cols() != clf.classes_seen) {
    throw Error(ErrorKind::shape, "phase_update: label width " +
                                      std::to_string(labels_onehot.cols()) +
                                      " != classes_seen " + std::to_string(clf.classes_seen));
  }
  if (chunk == 0) throw Error(ErrorKind::parameter, "phase_update: chunk must be >= 1");
  for (std::size_t begin = 0; begin < features.rows(); begin += chunk) {
    const std::size_t end = std::min(features.rows(), begin + chunk);
    detail::woodbury_block(clf, row_slice(features, begin, end),
                           row_slice(labels_onehot, begin, end));
  }
  ++clf.phase_index;
  return clf;
}

/// The two additive parts of a phase update on the zero-padded previous
/// weight W′: W_k = W′ + new_knowledge − correction, with
/// new_knowledge = R_k Xᵀ Y and correction = R_k Xᵀ X W′.
struct UpdateDecomposition {
  Matrix padded_previous;
  Matrix new_knowledge;
  Matrix correction;
  Matrix updated_memory;
};

inline UpdateDecomposition decompose_update(const AnalyticClassifier& clf,
                                            const Matrix& features,
                                            const Matrix& labels_onehot) {
  AnalyticClassifier probe = clf;
  probe.weight = Matrix(clf.d_b(), clf.classes_seen);
  probe = phase_update(probe, features, labels_onehot,
                       std::max<std::size_t>(features.rows(), 1));
  UpdateDecomposition d;
  d.padded_previous = clf.weight;
  d.updated_memory = probe.memory;
  const Matrix rxt = matmul_nt(probe.memory, features);
  d.new_knowledge = matmul(rxt, labels_onehot);
  d.correction = matmul(rxt, matmul(features, clf.weight));
  return d;
}

inline Matrix logits(const AnalyticClassifier& clf, const Matrix& features) {
  if (features.cols() != clf.d_b()) {
    throw Error(ErrorKind::shape, "predict: feature width " + std::to_string(features.cols()) +
                                      " != d_B " + std::to_string(clf.d_b()));
  }
  return matmul(features, clf.weight);
}

/// Row-wise argmax; ties resolve to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Matrix& scores) {
  std::vector<std::size_t> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto r = scores.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
      if (r[j] > r[best]) best = j;
    out[i] = best;
  }
  return out;
}

inline std::vector<std::size_t> predict(const AnalyticClassifier& clf, const Matrix& features) {
  return argmax_rows(logits(clf, features));
}

/// Expands class indices into an N x num_classes one-hot matrix.
template <typename Index>
Matrix one_hot(std::span<const Index> labels, std::size_t num_classes) {
  Matrix y(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= num_classes) {
      throw LocatedError(ErrorKind::data, i,
                         "label " + std::to_string(c) + " at row " + std::to_string(i) +
                             " outside " + std::to_string(num_classes) + " classes");
    }
    y(i, c) = 1.0;
  }
  return y;
}

template <typename Index>
Matrix one_hot(const std::vector<Index>& labels, std::size_t num_classes) {
  return one_hot(std::span<const Index>(labels), num_classes);
}

}  // namespace real
