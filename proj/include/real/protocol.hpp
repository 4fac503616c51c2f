#pragma once

// Class-incremental experiment orchestration: synthetic benchmark data,
// phase plans, the audited per-phase data store, the end-to-end pipeline
// (supervised + contrastive pretraining, distillation, analytic phases),
// and accuracy metrics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "real/analytic.hpp"
#include "real/backbone.hpp"
#include "real/errors.hpp"
#include "real/numkit.hpp"
#include "real/red.hpp"
#include "real/sscl.hpp"

namespace real {

struct LabeledSet {
  Matrix x;
  std::vector<std::uint32_t> y;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return y.size(); }
};

struct Dataset {
  LabeledSet train;
  LabeledSet test;
};

inline LabeledSet subset(const LabeledSet& s, std::span<const std::size_t> idx) {
  LabeledSet out;
  out.x = select_rows(s.x, idx);
  out.num_classes = s.num_classes;
  out.y.reserve(idx.size());
  for (std::size_t i : idx) out.y.push_back(s.y[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Gaussian class blobs. Class centers are drawn as N(0, separation²/dim · I);
/// samples add isotropic N(0, noise²) noise.
struct SyntheticSpec {
  std::size_t classes = 20;
  std::size_t dim = 32;
  std::size_t train_per_class = 60;
  std::size_t test_per_class = 30;
  double separation = 4.0;
  double noise = 1.0;
  RngSeed seed{7};
};

inline Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.dim < 1 || spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw Error(ErrorKind::parameter, "synthetic: classes >= 2, dim/train/test counts >= 1");
  }
  if (!(spec.separation > 0.0) || !(spec.noise > 0.0)) {
    throw Error(ErrorKind::parameter, "synthetic: separation and noise must be positive");
  }
  const Matrix centers = gaussian_matrix(
      spec.classes, spec.dim, spec.separation / std::sqrt(static_cast<double>(spec.dim)),
      derive_seed(spec.seed, 0));
  Rng rng(derive_seed(spec.seed, 1));
  auto draw = [&](std::size_t per_class) {
    LabeledSet s;
    s.num_classes = spec.classes;
    s.x = Matrix(spec.classes * per_class, spec.dim);
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i, ++r) {
        for (std::size_t j = 0; j < spec.dim; ++j)
          s.x(r, j) = centers(c, j) + spec.noise * rng.normal();
        s.y.push_back(static_cast<std::uint32_t>(c));
      }
    }
    return s;
  };
  Dataset d;
  d.train = draw(spec.train_per_class);
  d.test = draw(spec.test_per_class);
  return d;
}

/// Deterministic per-class split: the first ⌈fraction·n_c⌉ rows of each class
/// (after a seeded shuffle) go to the second set.
inline std::pair<LabeledSet, LabeledSet> stratified_split(const LabeledSet& s, double fraction,
                                                          RngSeed seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::parameter, "split fraction must be in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(s.num_classes);
  for (std::size_t i = 0; i < s.size(); ++i) by_class[s.y[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> keep, held;
  for (auto& rows : by_class) {
    rng.shuffle(rows);
    const auto n_held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(rows.size())));
    for (std::size_t i = 0; i < rows.size(); ++i) (i < n_held ? held : keep).push_back(rows[i]);
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {subset(s, keep), subset(s, held)};
}

// ---------------------------------------------------------------------------
// Phase plan

struct PhasePlan {
  std::size_t total_classes = 0;
  std::size_t phases = 0;                        // K
  std::vector<std::uint32_t> class_order;        // classifier column j holds class_order[j]
  std::vector<std::vector<std::uint32_t>> groups;  // groups[0] = base, groups[k] = phase k

  const std::vector<std::uint32_t>& base() const { return groups.front(); }

  /// Phase owning each class.
  std::vector<std::size_t> phase_of_class() const {
    std::vector<std::size_t> out(total_classes, 0);
    for (std::size_t k = 0; k < groups.size(); ++k)
      for (auto c : groups[k]) out[c] = k;
    return out;
  }

  /// Classifier column of each class.
  std::vector<std::size_t> column_of_class() const {
    std::vector<std::size_t> out(total_classes, 0);
    for (std::size_t j = 0; j < class_order.size(); ++j) out[class_order[j]] = j;
    return out;
  }

  /// Number of classes in phases 0..k.
  std::size_t classes_through(std::size_t k) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i <= k; ++i) n += groups[i].size();
    return n;
  }
};

/// Base phase holds ⌊n/2⌋ classes; the rest split evenly over K phases.
/// Class order is a seeded shuffle and does not depend on K.
inline PhasePlan make_phase_plan(std::size_t num_classes, std::size_t k, RngSeed seed) {
  if (num_classes < 2) throw Error(ErrorKind::plan, "phase plan needs at least 2 classes");
  if (k < 1) throw Error(ErrorKind::plan, "phase plan needs K >= 1");
  const std::size_t base = num_classes / 2;
  const std::size_t rest = num_classes - base;
  if (rest % k != 0) {
    std::string valid;
    for (std::size_t d = 1; d <= rest; ++d)
      if (rest % d == 0) valid += (valid.empty() ? "" : ",") + std::to_string(d);
    throw Error(ErrorKind::plan, std::to_string(rest) + " incremental classes not divisible by K=" +
                                     std::to_string(k) + "; valid K: " + valid);
  }
  PhasePlan plan;
  plan.total_classes = num_classes;
  plan.phases = k;
  plan.class_order.resize(num_classes);
  std::iota(plan.class_order.begin(), plan.class_order.end(), std::uint32_t{0});
  Rng rng(seed);
  rng.shuffle(plan.class_order);
  plan.groups.emplace_back(plan.class_order.begin(),
                           plan.class_order.begin() + static_cast<std::ptrdiff_t>(base));
  const std::size_t per = rest / k;
  for (std::size_t p = 0; p < k; ++p) {
    auto first = plan.class_order.begin() + static_cast<std::ptrdiff_t>(base + p * per);
    plan.groups.emplace_back(first, first + static_cast<std::ptrdiff_t>(per));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Audited training data access

struct AccessRecord {
  std::string stage;
  std::size_t active_phase = 0;  // phase being learned when the read happened
  std::size_t phase_read = 0;    // phase whose training rows were read
  std::size_t rows = 0;
};

/// Hands out per-phase training rows and logs every read. During phase
/// k >= 1 only phase k rows may be read; anything else is an exemplar
/// violation and throws.
class PhaseDataStore {
 public:
  PhaseDataStore(const LabeledSet& train, const PhasePlan& plan) {
    const auto owner = plan.phase_of_class();
    std::vector<std::vector<std::size_t>> rows(plan.groups.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.y[i] >= plan.total_classes) {
        throw LocatedError(ErrorKind::data, i, "training label outside the plan's classes");
      }
      rows[owner[train.y[i]]].push_back(i);
    }
    for (const auto& r : rows) parts_.push_back(subset(train, r));
  }

  std::size_t phase_count() const noexcept { return parts_.size(); }

  const LabeledSet& read(std::size_t phase, std::size_t active_phase, const std::string& stage) {
    if (phase >= parts_.size()) throw Error(ErrorKind::protocol, "no such phase");
    log_.push_back({stage, active_phase, phase, parts_[phase].size()});
    if (active_phase >= 1 && phase != active_phase) {
      throw Error(ErrorKind::exemplar_violation,
                  "stage " + stage + " read phase " + std::to_string(phase) +
                      " training rows while learning phase " + std::to_string(active_phase));
    }
    return parts_[phase];
  }

  const std::vector<AccessRecord>& log() const noexcept { return log_; }

  /// Reads of earlier-phase training rows made while learning phase >= 1.
  std::size_t earlier_phase_reads() const {
    std::size_t n = 0;
    for (const auto& r : log_)
      if (r.active_phase >= 1 && r.phase_read < r.active_phase) ++n;
    return n;
  }

 private:
  std::vector<LabeledSet> parts_;
  std::vector<AccessRecord> log_;
};

// ---------------------------------------------------------------------------
// Pipeline

/// Which representation-learning recipe produces the frozen backbone.
enum class PipelineArm {
  full,          // contrastive pretraining + distillation with λ
  sscl_only,     // contrastive pretraining, no distillation
  sscl_label,    // contrastive pretraining + distillation with λ = 0
  sscl_teacher,  // contrastive pretraining + distillation with λ = 1
  sl_only,       // supervised backbone only
};

inline const char* arm_name(PipelineArm a) {
  switch (a) {
    case PipelineArm::full: return "full";
    case PipelineArm::sscl_only: return "sscl_only";
    case PipelineArm::sscl_label: return "sscl_label";
    case PipelineArm::sscl_teacher: return "sscl_teacher";
    case PipelineArm::sl_only: return "sl_only";
  }
  return "?";
}

inline PipelineArm parse_arm(const std::string& s) {
  for (auto a : {PipelineArm::full, PipelineArm::sscl_only, PipelineArm::sscl_label,
                 PipelineArm::sscl_teacher, PipelineArm::sl_only})
    if (s == arm_name(a)) return a;
  throw Error(ErrorKind::config, "unknown pipeline arm '" + s + "'");
}

struct PipelineSeeds {
  RngSeed data{7};
  RngSeed plan{11};
  RngSeed init{13};
  RngSeed shuffle{17};
  RngSeed augment{19};
  RngSeed buffer{23};
};

struct PipelineConfig {
  SyntheticSpec synthetic{};
  std::vector<std::size_t> hidden{64};
  std::size_t d_cnn = 32;
  TrainConfig sl{0.05, 0.9, 5e-4, 30, 32, {}, {}};
  TrainConfig sscl{0.05, 0.9, 5e-4, 30, 64, {}, {}};
  double jitter = 0.3;
  double mask = 0.2;
  std::size_t d_proj = 0;         // 0 → d_cnn
  std::size_t d_pred_hidden = 0;  // 0 → d_proj
  RedConfig red{0.4, 20, TrainConfig{0.01, 0.9, 5e-4, 20, 32, {}, {}}};
  double gamma = 1e-2;
  std::size_t d_b = 512;
  double buffer_scale = 0.0;      // 0 → 1/√d_cnn
  std::size_t update_chunk = kDefaultUpdateChunk;
  std::size_t phases = 5;
  PipelineArm arm = PipelineArm::full;
  PipelineSeeds seeds{};

  std::vector<std::size_t> backbone_widths(std::size_t d_in) const {
    std::vector<std::size_t> w{d_in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(d_cnn);
    return w;
  }
};

/// Labels of a set remapped to classifier columns.
inline Matrix plan_one_hot(const LabeledSet& s, const PhasePlan& plan, std::size_t columns) {
  const auto col = plan.column_of_class();
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) idx[i] = col[s.y[i]];
  return one_hot(idx, columns);
}

class StageTimer {
 public:
  template <typename F>
  auto run(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        record(stage, t0);
      } else {
        auto r = f();
        record(stage, t0);
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage, e);
    }
  }

  const std::map<std::string, double>& seconds() const { return seconds_; }

 private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
    seconds_[stage] +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  std::map<std::string, double> seconds_;
};

/// Output of the base-phase representation learning.
struct BaseModel {
  Mlp backbone;  // frozen
  std::vector<double> sl_loss;
  std::vector<double> sscl_loss;
  std::vector<double> sscl_embedding_std;
  std::vector<double> red_feature_loss;
  std::vector<double> red_label_loss;
  std::vector<double> red_total_loss;
};

struct PretrainedStreams {
  std::optional<Mlp> teacher;  // supervised stream
  std::optional<Mlp> student;  // contrastive stream
  std::vector<double> sl_loss;
  std::vector<double> sscl_loss;
  std::vector<double> sscl_embedding_std;
};

inline bool arm_needs_sl(PipelineArm a) {
  return a == PipelineArm::full || a == PipelineArm::sscl_teacher || a == PipelineArm::sl_only;
}
inline bool arm_needs_sscl(PipelineArm a) { return a != PipelineArm::sl_only; }

inline PretrainedStreams pretrain_streams(const LabeledSet& base, const PhasePlan& plan,
                                          const PipelineConfig& cfg, bool want_sl,
                                          bool want_sscl, StageTimer& timer) {
  PretrainedStreams out;
  const std::size_t d_in = base.x.cols();
  const Matrix y = plan_one_hot(base, plan, plan.base().size());
  if (want_sl) {
    timer.run("pretrain_sl", [&] {
      TrainConfig tc = cfg.sl;
      tc.seed = derive_seed(cfg.seeds.shuffle, 1);
      auto r = train_supervised(Mlp(cfg.backbone_widths(d_in), derive_seed(cfg.seeds.init, 1)),
                                LinearHead::init(cfg.d_cnn, y.cols(), derive_seed(cfg.seeds.init, 2)),
                                base.x, y, tc);
      out.sl_loss = r.epoch_loss;
      out.teacher = std::move(r.net);
      out.teacher->freeze();
    });
  }
  if (want_sscl) {
    timer.run("pretrain_sscl", [&] {
      const std::size_t d_proj = cfg.d_proj ? cfg.d_proj : cfg.d_cnn;
      const std::size_t d_hid = cfg.d_pred_hidden ? cfg.d_pred_hidden : d_proj;
      TrainConfig tc = cfg.sscl;
      tc.seed = derive_seed(cfg.seeds.shuffle, 2);
      auto r = pretrain_sscl(Mlp(cfg.backbone_widths(d_in), derive_seed(cfg.seeds.init, 3)),
                             make_projector(cfg.d_cnn, d_proj, derive_seed(cfg.seeds.init, 4)),
                             make_predictor(d_proj, d_hid, derive_seed(cfg.seeds.init, 5)), base.x,
                             AugmentationPolicy(cfg.jitter, cfg.mask, cfg.seeds.augment), tc);
      out.sscl_loss = r.epoch_loss;
      out.sscl_embedding_std = r.embedding_std;
      out.student = std::move(r.backbone);
    });
  }
  return out;
}

/// Turns pretrained streams into the frozen backbone for `arm`.
inline BaseModel finish_base(const PretrainedStreams& streams, const LabeledSet& base,
                             const PhasePlan& plan, const PipelineConfig& cfg, PipelineArm arm,
                             StageTimer& timer) {
  BaseModel bm;
  bm.sl_loss = streams.sl_loss;
  bm.sscl_loss = streams.sscl_loss;
  bm.sscl_embedding_std = streams.sscl_embedding_std;
  if (arm == PipelineArm::sl_only) {
    bm.backbone = *streams.teacher;
    bm.backbone.freeze();
    return bm;
  }
  if (arm == PipelineArm::sscl_only) {
    bm.backbone = *streams.student;
    bm.backbone.freeze();
    return bm;
  }
  RedConfig rc = cfg.red;
  if (arm == PipelineArm::sscl_label) rc.lambda = 0.0;
  if (arm == PipelineArm::sscl_teacher) rc.lambda = 1.0;
  rc.sgd.seed = derive_seed(cfg.seeds.shuffle, 3);
  const Matrix y = plan_one_hot(base, plan, plan.base().size());
  // λ = 0 never looks at the teacher; the student stands in so the shapes check out.
  const Mlp& teacher = streams.teacher ? *streams.teacher : *streams.student;
  timer.run("distill", [&] {
    auto r = distill(*streams.student, teacher,
                     LinearHead::init(cfg.d_cnn, y.cols(), derive_seed(cfg.seeds.init, 6)), base.x,
                     y, rc);
    bm.backbone = std::move(r.student);
    bm.red_feature_loss = std::move(r.feature_loss);
    bm.red_label_loss = std::move(r.label_loss);
    bm.red_total_loss = std::move(r.total_loss);
  });
  return bm;
}

struct SplitAccuracy {
  double base = 0.0;
  double incremental = 0.0;
  std::size_t base_rows = 0;
  std::size_t incremental_rows = 0;
  std::size_t base_correct = 0;
  std::size_t incremental_correct = 0;
};

/// Maps test rows to classifier columns and returns predicted original class ids.
inline std::vector<std::uint32_t> predict_classes(const AnalyticClassifier& clf, const Mlp& backbone,
                                                  const BufferLayer& buffer, const Matrix& x,
                                                  const PhasePlan& plan) {
  const auto cols = predict(clf, buffer_project(buffer, extract_embeddings(backbone, x)));
  std::vector<std::uint32_t> out(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) out[i] = plan.class_order[cols[i]];
  return out;
}

/// Accuracy on base-class test rows and on incremental-class test rows.
inline SplitAccuracy evaluate_split(const AnalyticClassifier& clf, const Mlp& backbone,
                                    const BufferLayer& buffer, const LabeledSet& test,
                                    const PhasePlan& plan) {
  if (clf.classes_seen != plan.total_classes) {
    throw Error(ErrorKind::evaluation, "evaluate_split: classifier covers " +
                                           std::to_string(clf.classes_seen) + " of " +
                                           std::to_string(plan.total_classes) + " classes");
  }
  const auto owner = plan.phase_of_class();
  const auto pred = predict_classes(clf, backbone, buffer, test.x, plan);
  SplitAccuracy s;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool ok = pred[i] == test.y[i];
    if (owner[test.y[i]] == 0) {
      ++s.base_rows;
      s.base_correct += ok;
    } else {
      ++s.incremental_rows;
      s.incremental_correct += ok;
    }
  }
  if (s.base_rows == 0 || s.incremental_rows == 0) {
    throw Error(ErrorKind::evaluation, "evaluate_split: empty base or incremental test split");
  }
  s.base = static_cast<double>(s.base_correct) / static_cast<double>(s.base_rows);
  s.incremental =
      static_cast<double>(s.incremental_correct) / static_cast<double>(s.incremental_rows);
  return s;
}

struct Metrics {
  double average = 0.0;  // Ā
  double last = 0.0;     // A_K
};

inline Metrics metrics(std::span<const double> accuracies) {
  if (accuracies.empty()) throw Error(ErrorKind::data, "metrics: empty accuracy list");
  double sum = 0.0;
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    const double a = accuracies[i];
    if (!(a >= 0.0 && a <= 1.0)) {
      throw LocatedError(ErrorKind::data, i, "metrics: accuracy " + std::to_string(i) +
                                                 " outside [0, 1]");
    }
    sum += a;
  }
  return {sum / static_cast<double>(accuracies.size()), accuracies.back()};
}

inline Metrics metrics(const std::vector<double>& accuracies) {
  return metrics(std::span<const double>(accuracies));
}

struct AnalyticRun {
  AnalyticClassifier classifier;
  std::vector<double> accuracies;  // A_0 .. A_K on cumulative test sets
  std::vector<double> extra_accuracies;  // same, on the optional second evaluation set
  std::vector<AccessRecord> access_log;
  std::size_t earlier_phase_reads = 0;
};

/// Accuracy on test rows whose class belongs to phases 0..k.
inline double cumulative_accuracy(const AnalyticClassifier& clf, const Mlp& backbone,
                                  const BufferLayer& buffer, const LabeledSet& test,
                                  const PhasePlan& plan, std::size_t k) {
  const auto owner = plan.phase_of_class();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (owner[test.y[i]] <= k) rows.push_back(i);
  if (rows.empty()) throw Error(ErrorKind::evaluation, "no test rows for phases 0.." + std::to_string(k));
  const LabeledSet part = subset(test, rows);
  const auto pred = predict_classes(clf, backbone, buffer, part.x, plan);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < part.size(); ++i) correct += pred[i] == part.y[i];
  return static_cast<double>(correct) / static_cast<double>(part.size());
}

/// Analytic initialization on phase 0 followed by K recursive updates. Every
/// training read goes through the audited store.
inline AnalyticRun run_analytic_phases(const Mlp& backbone, const BufferLayer& buffer,
                                       PhaseDataStore& store, const LabeledSet& test,
                                       const PhasePlan& plan, double gamma, std::size_t chunk,
                                       StageTimer& timer, const LabeledSet* extra = nullptr) {
  AnalyticRun run;
  auto score = [&](std::size_t k) {
    run.accuracies.push_back(cumulative_accuracy(run.classifier, backbone, buffer, test, plan, k));
    if (extra)
      run.extra_accuracies.push_back(
          cumulative_accuracy(run.classifier, backbone, buffer, *extra, plan, k));
  };
  auto features = [&](const LabeledSet& s) {
    return buffer_project(buffer, extract_embeddings(backbone, s.x));
  };
  timer.run("ainit", [&] {
    const LabeledSet& base = store.read(0, 0, "ainit");
    run.classifier = ainit(features(base), plan_one_hot(base, plan, plan.base().size()), gamma);
  });
  score(0);
  for (std::size_t k = 1; k <= plan.phases; ++k) {
    timer.run("phase_update", [&] {
      const LabeledSet& part = store.read(k, k, "phase_update");
      run.classifier = expand_classes(std::move(run.classifier), plan.groups[k].size());
      run.classifier = phase_update(std::move(run.classifier), features(part),
                                    plan_one_hot(part, plan, plan.classes_through(k)), chunk);
    });
    score(k);
  }
  run.access_log = store.log();
  run.earlier_phase_reads = store.earlier_phase_reads();
  return run;
}

struct CilRunReport {
  PipelineConfig config;
  PhasePlan plan;
  std::vector<double> accuracies;
  Metrics summary;
  SplitAccuracy split;
  BaseModel base;
  std::vector<AccessRecord> access_log;
  std::size_t earlier_phase_reads = 0;
  std::map<std::string, double> seconds;  // wall clock per stage
  AnalyticClassifier classifier;
  std::optional<BufferLayer> buffer;
};

inline BufferLayer make_buffer(const PipelineConfig& cfg) {
  return BufferLayer(cfg.d_cnn, cfg.d_b, cfg.seeds.buffer, cfg.buffer_scale);
}

/// Analytic stage on an already frozen backbone.
inline CilRunReport run_cil_on_backbone(const Dataset& data, const PhasePlan& plan,
                                        const PipelineConfig& cfg, BaseModel base,
                                        PhaseDataStore& store, StageTimer& timer) {
  CilRunReport rep;
  rep.config = cfg;
  rep.plan = plan;
  rep.buffer = make_buffer(cfg);
  AnalyticRun run = run_analytic_phases(base.backbone, *rep.buffer, store, data.test, plan,
                                        cfg.gamma, cfg.update_chunk, timer);
  rep.accuracies = run.accuracies;
  rep.summary = metrics(rep.accuracies);
  rep.split = evaluate_split(run.classifier, base.backbone, *rep.buffer, data.test, plan);
  rep.access_log = std::move(run.access_log);
  rep.earlier_phase_reads = run.earlier_phase_reads;
  rep.classifier = std::move(run.classifier);
  rep.base = std::move(base);
  rep.seconds = timer.seconds();
  return rep;
}

/// Full pipeline for cfg.arm.
inline CilRunReport run_cil(const Dataset& data, const PhasePlan& plan, const PipelineConfig& cfg) {
  if (data.train.num_classes != plan.total_classes) {
    throw Error(ErrorKind::plan, "dataset has " + std::to_string(data.train.num_classes) +
                                     " classes, plan " + std::to_string(plan.total_classes));
  }
  StageTimer timer;
  PhaseDataStore store(data.train, plan);
  const LabeledSet& base = store.read(0, 0, "pretrain");
  const auto streams =
      pretrain_streams(base, plan, cfg, arm_needs_sl(cfg.arm), arm_needs_sscl(cfg.arm), timer);
  BaseModel bm = finish_base(streams, base, plan, cfg, cfg.arm, timer);
  return run_cil_on_backbone(data, plan, cfg, std::move(bm), store, timer);
}

/// The four contrastive arms (pretraining only, +labels, +teacher, +both)
/// sharing one set of pretrained streams.
inline std::vector<CilRunReport> run_ablation(const Dataset& data, const PhasePlan& plan,
                                              const PipelineConfig& cfg) {
  StageTimer shared;
  PhaseDataStore store(data.train, plan);
  const LabeledSet& base = store.read(0, 0, "pretrain");
  const auto streams = pretrain_streams(base, plan, cfg, true, true, shared);
  std::vector<CilRunReport> out;
  for (auto arm : {PipelineArm::sscl_only, PipelineArm::sscl_label, PipelineArm::sscl_teacher,
                   PipelineArm::full}) {
    PipelineConfig c = cfg;
    c.arm = arm;
    StageTimer timer = shared;
    PhaseDataStore arm_store = store;
    out.push_back(run_cil_on_backbone(data, plan, c, finish_base(streams, base, plan, c, arm, timer),
                                      arm_store, timer));
  }
  return out;
}

struct GridCell {
  double lambda = 0.0;
  std::size_t epochs = 0;
  std::vector<double> validation_accuracies;
  Metrics validation{};
  std::vector<double> test_accuracies;
  Metrics test{};
};

struct GridSearchResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;  // index into cells, chosen on validation Ā
  PhasePlan plan;
};

/// (λ, e) grid over a 90/10 train/validation split of the training data.
/// Pretraining streams are shared across cells; each cell distills and runs
/// the analytic phases, scored on validation and test.
inline GridSearchResult grid_search(const Dataset& data, const PhasePlan& plan,
                                    const PipelineConfig& cfg, const std::vector<double>& lambdas,
                                    const std::vector<std::size_t>& epochs,
                                    double validation_fraction = 0.1) {
  if (lambdas.empty() || epochs.empty()) throw Error(ErrorKind::parameter, "empty search grid");
  auto [train, validation] =
      stratified_split(data.train, validation_fraction, derive_seed(cfg.seeds.data, 99));
  StageTimer timer;
  PhaseDataStore store(train, plan);
  const LabeledSet& base = store.read(0, 0, "pretrain");
  const auto streams = pretrain_streams(base, plan, cfg, true, true, timer);
  GridSearchResult res;
  res.plan = plan;
  for (double lambda : lambdas) {
    for (std::size_t e : epochs) {
      PipelineConfig c = cfg;
      c.arm = PipelineArm::full;
      c.red.lambda = lambda;
      c.red.epochs = e;
      BaseModel bm = finish_base(streams, base, plan, c, c.arm, timer);
      const BufferLayer buffer = make_buffer(c);
      PhaseDataStore cell_store(train, plan);
      AnalyticRun run = run_analytic_phases(bm.backbone, buffer, cell_store, validation, plan,
                                            c.gamma, c.update_chunk, timer, &data.test);
      GridCell cell;
      cell.lambda = lambda;
      cell.epochs = e;
      cell.validation_accuracies = run.accuracies;
      cell.validation = metrics(run.accuracies);
      cell.test_accuracies = run.extra_accuracies;
      cell.test = metrics(cell.test_accuracies);
      res.cells.push_back(std::move(cell));
    }
  }
  for (std::size_t i = 1; i < res.cells.size(); ++i)
    if (res.cells[i].validation.average > res.cells[res.best].validation.average) res.best = i;
  return res;
}

}  // namespace real
