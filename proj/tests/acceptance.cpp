// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "real/io.hpp"
#include "real/report.hpp"

using namespace real;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kInvarianceTol = 1e-8;
constexpr double kInvarianceSeconds = 30.0;
constexpr double kMemoryTol = 1e-8;
constexpr double kPhaseCountTol = 1e-10;
constexpr double kGradientTol = 1e-4;
constexpr double kGradientSeconds = 60.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kEfficacySlack = 0.02;
constexpr double kResumeTol = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << o.detail << std::endl;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1 and 2: recursive classifier against the joint solution

struct SweepConfig {
  std::size_t d_b, phases, rows;
  double gamma;
  std::uint64_t seed;
};

std::vector<SweepConfig> sweep_configs() {
  std::vector<SweepConfig> out;
  const double gammas[] = {1e-3, 1e-2, 1.0};
  std::uint64_t seed = 1;
  std::size_t g = 0;
  for (std::size_t d_b : {16u, 64u, 128u})
    for (std::size_t k : {1u, 2u, 5u, 10u})
      for (std::size_t rows : {400u, 2000u}) out.push_back({d_b, k, rows, gammas[g++ % 3], seed++});
  return out;
}

struct SweepResult {
  double max_weight_rel = 0.0;
  double max_memory_abs = 0.0;
  double recursive_seconds = 0.0;
};

// Buffer-projected features of a 20-class Gaussian blob problem. The 32-wide
// embedding is expanded to d_B with a random buffer, as in the pipeline.
SweepResult run_sweep() {
  SweepResult res;
  for (const auto& c : sweep_configs()) {
    const std::size_t classes = 20, d_cnn = 32;
    const PhasePlan plan = make_phase_plan(classes, c.phases, RngSeed{c.seed});
    SyntheticSpec spec;
    spec.classes = classes;
    spec.dim = d_cnn;
    spec.train_per_class = c.rows / classes;
    spec.test_per_class = 1;
    spec.seed = RngSeed{c.seed + 1000};
    const LabeledSet train = make_synthetic(spec).train;
    const BufferLayer buffer(d_cnn, c.d_b, RngSeed{c.seed + 2000});
    PhaseDataStore store(train, plan);

    std::vector<Matrix> xs, ys;
    Matrix all_x;
    AnalyticClassifier clf;
    const auto t0 = Clock::now();
    for (std::size_t k = 0; k <= c.phases; ++k) {
      const LabeledSet& part = store.read(k, k, "sweep");
      const Matrix x = buffer_project(buffer, part.x);
      const Matrix y = plan_one_hot(part, plan, plan.classes_through(k));
      if (k == 0) {
        clf = ainit(x, y, c.gamma);
      } else {
        clf = expand_classes(std::move(clf), plan.groups[k].size());
        clf = phase_update(std::move(clf), x, y);
      }
      xs.push_back(x);
      ys.push_back(y);
      all_x = k == 0 ? x : vstack(all_x, x);
      const Matrix direct = oracle::regularized_gram_inverse(all_x, c.gamma);
      res.max_memory_abs = std::max(res.max_memory_abs, max_abs_diff(clf.memory, direct));
    }
    Matrix all_y = pad_cols(ys[0], classes - ys[0].cols());
    for (std::size_t k = 1; k < ys.size(); ++k) all_y = vstack(all_y, pad_cols(ys[k], classes - ys[k].cols()));
    const AnalyticClassifier joint = joint_fit(all_x, all_y, c.gamma);
    res.recursive_seconds += seconds_since(t0);
    res.max_weight_rel = std::max(res.max_weight_rel, rel_frobenius(clf.weight, joint.weight));
  }
  return res;
}

// ---------------------------------------------------------------------------
// 4: gradient suite

double check_layers(Mlp& net, const std::vector<Matrix>& grads, const std::function<double()>& loss) {
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const Matrix numeric = oracle::finite_difference(net.mutable_weights()[l], loss);
    worst = std::max(worst, oracle::gradient_rel_error(grads[l], numeric));
  }
  return worst;
}

Matrix labels_for(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(RngSeed{seed});
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(classes);
  return one_hot(y, classes);
}

std::map<std::string, double> gradient_suite() {
  std::map<std::string, double> worst;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RngSeed seed{1000 + s};
    const Matrix x = gaussian_matrix(6, 5, 1.0, derive_seed(seed, 0));
    const Matrix y = labels_for(6, 4, seed.value);

    {  // cross-entropy through backbone and head
      Mlp net({5, 16, 16, 12}, derive_seed(seed, 1));
      LinearHead head = LinearHead::init(12, 4, derive_seed(seed, 2));
      const ForwardCache cache = forward_cached(net, x);
      const CrossEntropy ce = softmax_cross_entropy(matmul(cache.activations.back(), head.weight), y);
      const BackwardResult bw = backward(net, cache, matmul_nt(ce.logit_grad, head.weight));
      const Matrix head_grad = matmul_tn(cache.activations.back(), ce.logit_grad);
      auto loss = [&] { return supervised_loss(net, head, x, y); };
      double w = check_layers(net, bw.weight_grads, loss);
      w = std::max(w, oracle::gradient_rel_error(head_grad, oracle::finite_difference(head.weight, loss)));
      worst["cross_entropy"] = std::max(worst["cross_entropy"], w);
    }
    {  // contrastive loss with stop-gradient targets
      Mlp bb({5, 16, 16}, derive_seed(seed, 3));
      Projector proj = make_projector(16, 16, derive_seed(seed, 4));
      Predictor pred = make_predictor(16, 16, derive_seed(seed, 5));
      const Matrix x2 = gaussian_matrix(6, 5, 1.0, derive_seed(seed, 6));
      const SsclEvaluation ev = sscl_forward_loss(bb, proj, pred, x, x2);
      const Matrix t1 = ev.branches.proj1, t2 = ev.branches.proj2;
      auto loss = [&] {
        const Matrix p1 = forward(pred, forward(proj, forward(bb, x)));
        const Matrix p2 = forward(pred, forward(proj, forward(bb, x2)));
        return 0.5 * negative_cosine(t1, p2) + 0.5 * negative_cosine(t2, p1);
      };
      double w = check_layers(bb, ev.grads.backbone, loss);
      w = std::max(w, check_layers(proj, ev.grads.projector, loss));
      w = std::max(w, check_layers(pred, ev.grads.predictor, loss));
      worst["sscl"] = std::max(worst["sscl"], w);
    }
    const Mlp teacher({5, 16, 16}, derive_seed(seed, 7));
    const Matrix temb = extract_embeddings(teacher, x);
    for (const auto& [name, lambda] : {std::pair<const char*, double>{"feature", 1.0},
                                       {"label", 0.0},
                                       {"red", 0.2 + 0.06 * static_cast<double>(s)}}) {
      Mlp student({5, 16, 16}, derive_seed(seed, 8));
      LinearHead head = LinearHead::init(16, 4, derive_seed(seed, 9));
      const RedEvaluation ev = red_forward_loss(student, temb, head, x, y, lambda);
      auto loss = [&] { return red_forward_loss(student, temb, head, x, y, lambda).total; };
      double w = check_layers(student, ev.backbone_grads, loss);
      if (lambda < 1.0)
        w = std::max(w, oracle::gradient_rel_error(ev.head_grad, oracle::finite_difference(head.weight, loss)));
      worst[name] = std::max(worst[name], w);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Shared pipeline state for 3 and 6 to 8

fs::path source_dir() { return fs::path(REAL_SOURCE_DIR); }

Dataset bundled_suite() {
  const fs::path dir = source_dir() / "data" / "synth20";
  Dataset d;
  d.train = load_dataset((dir / "train.rlfv").string());
  d.test = load_dataset((dir / "test.rlfv").string());
  return d;
}

PipelineConfig bundled_config() {
  const Bytes b = read_file((source_dir() / "configs" / "default.conf").string());
  return parse_config(std::string(b.begin(), b.end()));
}

}  // namespace

int main() {
  std::cout << "acceptance suite" << std::endl;

  const auto sweep_t0 = Clock::now();
  SweepResult sweep;
  bool sweep_ok = true;
  std::string sweep_error;
  try {
    sweep = run_sweep();
  } catch (const std::exception& e) {
    sweep_ok = false;
    sweep_error = e.what();
  }
  const double sweep_seconds = seconds_since(sweep_t0);
  const std::size_t n_configs = sweep_configs().size();

  report(1, "weight invariance", [&] {
    if (!sweep_ok) return Outcome{false, sweep_error};
    const bool ok = n_configs >= 20 && sweep.max_weight_rel <= kInvarianceTol &&
                    sweep.recursive_seconds <= kInvarianceSeconds;
    return Outcome{ok, std::to_string(n_configs) + " configs, max relative Frobenius error " +
                           sci(sweep.max_weight_rel) + " (tol " + sci(kInvarianceTol) + "), " +
                           fixed(sweep.recursive_seconds, 2) + " s (budget " + fixed(kInvarianceSeconds, 0) + " s)"};
  });

  report(2, "memory matrix matches direct inverse", [&] {
    if (!sweep_ok) return Outcome{false, sweep_error};
    return Outcome{sweep.max_memory_abs <= kMemoryTol,
                   "max abs deviation " + sci(sweep.max_memory_abs) + " after every phase (tol " +
                       sci(kMemoryTol) + "), sweep incl. reference inverses " + fixed(sweep_seconds, 2) + " s"};
  });

  // Bundled suite runs shared by the remaining criteria.
  PipelineConfig cfg;
  Dataset data;
  PhasePlan plan;
  std::vector<CilRunReport> ablation;
  std::optional<CilRunReport> sl_only;
  std::string pipeline_error;
  try {
    cfg = bundled_config();
    data = bundled_suite();
    plan = make_phase_plan(data.train.num_classes, cfg.phases, cfg.seeds.plan);
    ablation = run_ablation(data, plan, cfg);
    PipelineConfig c = cfg;
    c.arm = PipelineArm::sl_only;
    sl_only = run_cil(data, plan, c);
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  const CilRunReport* full = nullptr;
  const CilRunReport* sscl_only = nullptr;
  for (const auto& r : ablation) {
    if (r.config.arm == PipelineArm::full) full = &r;
    if (r.config.arm == PipelineArm::sscl_only) sscl_only = &r;
  }

  report(3, "final accuracy independent of phase count", [&] {
    if (!full) return Outcome{false, "pipeline failed: " + pipeline_error};
    std::vector<double> finals;
    StageTimer timer;
    for (std::size_t k : {2u, 5u, 10u}) {
      const PhasePlan p = make_phase_plan(data.train.num_classes, k, cfg.seeds.plan);
      PhaseDataStore store(data.train, p);
      finals.push_back(run_analytic_phases(full->base.backbone, *full->buffer, store, data.test, p, cfg.gamma,
                                           cfg.update_chunk, timer)
                           .accuracies.back());
    }
    const double spread = *std::max_element(finals.begin(), finals.end()) -
                          *std::min_element(finals.begin(), finals.end());
    return Outcome{spread <= kPhaseCountTol, "A_K for K=2/5/10: " + fixed(finals[0]) + "/" + fixed(finals[1]) +
                                                 "/" + fixed(finals[2]) + ", spread " + sci(spread) +
                                                 " (tol " + sci(kPhaseCountTol) + ")"};
  });

  report(4, "gradient suite", [&] {
    const auto t0 = Clock::now();
    const auto worst = gradient_suite();
    const double secs = seconds_since(t0);
    bool ok = secs <= kGradientSeconds;
    std::string detail;
    for (const auto& [name, w] : worst) {
      ok = ok && w <= kGradientTol;
      detail += name + " " + sci(w) + ", ";
    }
    return Outcome{ok, "worst relative error over 10 seeds: " + detail + "tol " + sci(kGradientTol) + ", " +
                           fixed(secs, 2) + " s (budget " + fixed(kGradientSeconds, 0) + " s)"};
  });

  report(5, "loss identities", [&] {
    const Matrix z = gaussian_matrix(9, 6, 1.0, RngSeed{5});
    const double cos_err = std::abs(negative_cosine(z, z) + 9.0);
    const double feat_err = std::abs(feature_loss(z, z) + 1.0);
    double label_err = 0.0;
    for (std::size_t c : {2u, 5u, 10u}) {
      const Mlp id = Mlp::from_weights({Matrix::identity(6)});
      label_err = std::max(label_err, std::abs(label_loss(id, LinearHead{Matrix(6, c)}, z, labels_for(9, c, c)) -
                                               std::log(static_cast<double>(c))));
    }
    const double f = -0.83, l = 1.7;
    const bool endpoints = red_loss(f, l, 1.0) == f && red_loss(f, l, 0.0) == l;
    const bool ok = cos_err <= kIdentityTol && feat_err <= kIdentityTol && label_err <= kIdentityTol && endpoints;
    return Outcome{ok, "|L_cos(Z,Z)+N| " + sci(cos_err) + ", |L_feature+1| " + sci(feat_err) +
                           ", |L_label-ln C| " + sci(label_err) + ", endpoints exact: " +
                           (endpoints ? "yes" : "no") + " (tol " + sci(kIdentityTol) + ")"};
  });

  report(6, "pipeline efficacy and ablation report", [&] {
    if (!full || !sscl_only || !sl_only || ablation.size() != 4)
      return Outcome{false, "pipeline failed: " + pipeline_error};
    const fs::path out = fs::temp_directory_path() / "real_acceptance_ablation";
    fs::create_directories(out);
    std::string table;
    for (const auto& r : ablation) {
      write_file((out / (std::string("report_") + arm_name(r.config.arm) + ".json")).string(),
                 [&] { const std::string s = report_json(r).dump(2); return Bytes(s.begin(), s.end()); }());
      table += std::string(arm_name(r.config.arm)) + " " + fixed(r.summary.last) + ", ";
    }
    const double a_full = full->summary.last;
    const bool ok = a_full >= sscl_only->summary.last - kEfficacySlack &&
                    a_full >= sl_only->summary.last - kEfficacySlack;
    return Outcome{ok, "A_K " + table + "sl_only " + fixed(sl_only->summary.last) + "; slack " +
                           fixed(kEfficacySlack, 2) + "; split base/incremental full " + fixed(full->split.base) +
                           "/" + fixed(full->split.incremental) + " vs sl_only " + fixed(sl_only->split.base) +
                           "/" + fixed(sl_only->split.incremental) + "; four reports in " + out.string()};
  });

  report(7, "exemplar-free data access", [&] {
    if (!full) return Outcome{false, "pipeline failed: " + pipeline_error};
    std::vector<std::size_t> reads(plan.phases + 1, 0);
    for (const auto& a : full->access_log)
      if (a.active_phase >= 1 && a.phase_read == a.active_phase) ++reads[a.active_phase];
    bool each_once = true;
    for (std::size_t k = 1; k <= plan.phases; ++k) each_once = each_once && reads[k] == 1;
    const bool ok = plan.phases == 5 && full->earlier_phase_reads == 0 && each_once;
    return Outcome{ok, std::to_string(full->access_log.size()) + " logged reads over " +
                           std::to_string(plan.phases) + " phases, earlier-phase reads " +
                           std::to_string(full->earlier_phase_reads)};
  });

  report(8, "persistence", [&] {
    if (!full) return Outcome{false, "pipeline failed: " + pipeline_error};
    ModelBundle m;
    m.backbone = full->base.backbone;
    m.buffer = full->buffer;
    m.classifier = full->classifier;
    m.plan = plan;
    const Bytes bytes = encode_checkpoint(m);
    const ModelBundle back = decode_checkpoint(bytes);
    const bool exact = encode_checkpoint(back) == bytes && back.backbone->weights() == m.backbone->weights() &&
                       back.buffer->weight() == m.buffer->weight() &&
                       back.classifier->weight == m.classifier->weight &&
                       back.classifier->memory == m.classifier->memory;

    // Uninterrupted phases 1..K against a save after phase 2 and a resume.
    const Mlp& bb = full->base.backbone;
    const BufferLayer& buf = *full->buffer;
    PhaseDataStore store(data.train, plan);
    auto feats = [&](const LabeledSet& s) { return buffer_project(buf, extract_embeddings(bb, s.x)); };
    auto step = [&](AnalyticClassifier c, std::size_t k) {
      const LabeledSet& part = store.read(k, k, "phase_update");
      c = expand_classes(std::move(c), plan.groups[k].size());
      return phase_update(std::move(c), feats(part), plan_one_hot(part, plan, plan.classes_through(k)),
                          cfg.update_chunk);
    };
    const LabeledSet& base = store.read(0, 0, "ainit");
    const AnalyticClassifier init = ainit(feats(base), plan_one_hot(base, plan, plan.base().size()), cfg.gamma);
    AnalyticClassifier straight = init;
    for (std::size_t k = 1; k <= plan.phases; ++k) straight = step(std::move(straight), k);
    AnalyticClassifier resumed = init;
    for (std::size_t k = 1; k <= 2; ++k) resumed = step(std::move(resumed), k);
    const fs::path ck = fs::temp_directory_path() / "real_acceptance_resume.rlck";
    ModelBundle mid;
    mid.classifier = resumed;
    save_checkpoint(ck.string(), mid);
    resumed = *load_checkpoint(ck.string()).classifier;
    for (std::size_t k = 3; k <= plan.phases; ++k) resumed = step(std::move(resumed), k);
    const double dev = std::max(max_abs_diff(resumed.weight, straight.weight),
                                max_abs_diff(resumed.memory, straight.memory));
    return Outcome{exact && dev <= kResumeTol, std::string("round trip bit-exact: ") + (exact ? "yes" : "no") +
                                                   ", resume after phase 2 deviation " + sci(dev) + " (tol " +
                                                   sci(kResumeTol) + ")"};
  });

  report(9, "deterministic cil-run reports", [&] {
    const fs::path root = fs::temp_directory_path() / "real_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::string> dumps;
    for (const char* run : {"first", "second"}) {
      const std::string cmd = std::string(REAL_CLI_PATH) + " cil-run --config " +
                              (source_dir() / "configs" / "default.conf").string() + " --data " +
                              (source_dir() / "data" / "synth20").string() + " --out " + (root / run).string() +
                              " > /dev/null";
      if (std::system(cmd.c_str()) != 0) return Outcome{false, "cil-run failed: " + cmd};
      const Bytes b = read_file((root / run / "report.json").string());
      dumps.push_back(strip_timing(Json::parse(b.begin(), b.end())).dump(2));
    }
    return Outcome{dumps[0] == dumps[1], "two executions, reports identical outside \"timing\": " +
                                             std::string(dumps[0] == dumps[1] ? "yes" : "no") + " (" +
                                             std::to_string(dumps[0].size()) + " bytes)"};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
