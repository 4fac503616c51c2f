#pragma once

// Command-line front end. `run_cli` is the whole program; tools/real_cli.cpp
// only forwards argv. Failures print one line to stderr:
//   error kind=<kind> message="<text>"
// and return 2 for usage errors, 1 for everything else.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "real/config.hpp"
#include "real/io.hpp"
#include "real/protocol.hpp"
#include "real/report.hpp"

namespace real {

namespace cli_detail {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> phases;
  std::string lambda;
  std::string epochs;
  std::string report = "json";
  std::string teacher;
  std::string student;
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string arm;
  bool ablation = false;
};

inline void print_error(std::ostream& err, ErrorKind kind, const std::string& msg) {
  std::string flat;
  for (char c : msg) {
    if (c == '\n') flat += ' ';
    else if (c == '"') flat += "\\\"";
    else flat += c;
  }
  err << "error kind=" << kind_name(kind) << " message=\"" << flat << "\"\n";
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p.string(), Bytes(text.begin(), text.end()));
}

inline Json read_json(const std::string& path) {
  const Bytes b = read_file(path);
  try {
    return Json::parse(b.begin(), b.end());
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::data, path + ": " + e.what());
  }
}

inline PipelineConfig resolve_config(const Options& o, bool lambda_is_list) {
  PipelineConfig c;
  if (!o.config.empty()) {
    const Bytes b = read_file(o.config);
    c = parse_config(std::string(b.begin(), b.end()));
  }
  if (o.seed) apply_master_seed(c, *o.seed);
  if (o.phases) c.phases = *o.phases;
  if (!lambda_is_list) {
    if (!o.lambda.empty()) c.red.lambda = detail::parse_real("--lambda", o.lambda);
    if (!o.epochs.empty()) c.red.epochs = detail::parse_uint("--epochs", o.epochs);
  }
  if (!o.arm.empty()) c.arm = parse_arm(o.arm);
  validate(c);
  return c;
}

/// --data DIR holds train.rlfv/test.rlfv (or train.csv/test.csv); without
/// --data the synthetic suite described by the config is generated.
inline Dataset resolve_data(const Options& o, const PipelineConfig& c) {
  if (o.data.empty()) return make_synthetic(c.synthetic);
  const fs::path dir(o.data);
  auto pick = [&](const char* stem) {
    for (const char* ext : {".rlfv", ".csv"}) {
      const fs::path p = dir / (std::string(stem) + ext);
      if (fs::exists(p)) return p.string();
    }
    throw Error(ErrorKind::io, "no " + std::string(stem) + ".rlfv or " + stem + ".csv in " + o.data);
  };
  Dataset d;
  d.train = load_dataset(pick("train"));
  d.test = load_dataset(pick("test"));
  if (d.train.x.cols() != d.test.x.cols()) throw Error(ErrorKind::data, "train/test feature widths differ");
  d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  return d;
}

inline void require_out(const Options& o, const char* cmd) {
  if (o.out.empty()) throw Error(ErrorKind::usage, std::string(cmd) + " requires --out");
}

inline int cmd_gen_synth(const Options& o, std::ostream& out) {
  require_out(o, "gen-synth");
  const PipelineConfig c = resolve_config(o, false);
  const Dataset d = make_synthetic(c.synthetic);
  fs::create_directories(o.out);
  const bool csv = o.report == "csv";
  const std::string ext = csv ? ".csv" : ".rlfv";
  for (auto [name, set] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
    const fs::path p = fs::path(o.out) / (std::string(name) + ext);
    if (csv) write_text(p, to_csv(*set));
    else save_dataset(p.string(), *set);
  }
  out << Json{{"train_rows", d.train.size()}, {"test_rows", d.test.size()},
              {"classes", c.synthetic.classes}, {"dim", c.synthetic.dim}}.dump()
      << "\n";
  return 0;
}

inline PhasePlan plan_for(const Dataset& d, const PipelineConfig& c) {
  return make_phase_plan(d.train.num_classes, c.phases, c.seeds.plan);
}

inline int cmd_pretrain(const Options& o, std::ostream& out, bool supervised) {
  require_out(o, supervised ? "pretrain-sl" : "pretrain-sscl");
  const PipelineConfig c = resolve_config(o, false);
  const Dataset d = resolve_data(o, c);
  const PhasePlan plan = plan_for(d, c);
  PhaseDataStore store(d.train, plan);
  StageTimer timer;
  auto streams = pretrain_streams(store.read(0, 0, "pretrain"), plan, c, supervised, !supervised, timer);
  ModelBundle m;
  m.backbone = supervised ? *streams.teacher : *streams.student;
  m.plan = plan;
  save_checkpoint(o.out, m);
  out << Json{{"stage", supervised ? "pretrain-sl" : "pretrain-sscl"},
              {"loss", supervised ? streams.sl_loss : streams.sscl_loss}}
             .dump()
      << "\n";
  return 0;
}

inline int cmd_distill(const Options& o, std::ostream& out) {
  require_out(o, "distill");
  if (o.teacher.empty() || o.student.empty()) {
    throw Error(ErrorKind::usage, "distill requires --teacher and --student checkpoints");
  }
  const PipelineConfig c = resolve_config(o, false);
  const Dataset d = resolve_data(o, c);
  ModelBundle t = load_checkpoint(o.teacher);
  ModelBundle s = load_checkpoint(o.student);
  if (!t.backbone || !s.backbone) throw Error(ErrorKind::data, "checkpoint lacks a backbone section");
  const PhasePlan plan = s.plan ? *s.plan : plan_for(d, c);
  PhaseDataStore store(d.train, plan);
  const LabeledSet& base = store.read(0, 0, "distill");
  PretrainedStreams streams;
  streams.teacher = *t.backbone;
  Mlp student = *s.backbone;
  if (student.frozen()) throw Error(ErrorKind::frozen, "student checkpoint is frozen");
  streams.student = student;
  StageTimer timer;
  BaseModel bm = finish_base(streams, base, plan, c, PipelineArm::full, timer);
  ModelBundle m;
  m.backbone = bm.backbone;
  m.plan = plan;
  save_checkpoint(o.out, m);
  out << Json{{"stage", "distill"}, {"lambda", c.red.lambda}, {"epochs", c.red.epochs},
              {"feature_loss", bm.red_feature_loss}, {"label_loss", bm.red_label_loss},
              {"total_loss", bm.red_total_loss}}
             .dump()
      << "\n";
  return 0;
}

inline void write_report(const fs::path& dir, const std::string& stem, const CilRunReport& r,
                         const std::string& format) {
  if (format == "csv") write_text(dir / (stem + ".csv"), report_csv(r));
  else write_text(dir / (stem + ".json"), report_json(r).dump(2) + "\n");
}

inline int cmd_cil_run(const Options& o, std::ostream& out) {
  require_out(o, "cil-run");
  const PipelineConfig c = resolve_config(o, false);
  const Dataset d = resolve_data(o, c);
  const PhasePlan plan = plan_for(d, c);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  if (o.ablation) {
    const auto reports = run_ablation(d, plan, c);
    Json summary = Json::array();
    for (const auto& r : reports) {
      write_report(dir, std::string("report_") + arm_name(r.config.arm), r, o.report);
      summary.push_back({{"arm", arm_name(r.config.arm)}, {"average_accuracy", r.summary.average},
                         {"last_accuracy", r.summary.last}});
    }
    out << summary.dump() << "\n";
    return 0;
  }
  const CilRunReport r = run_cil(d, plan, c);
  write_report(dir, "report", r, o.report);
  ModelBundle m;
  m.backbone = r.base.backbone;
  m.buffer = r.buffer;
  m.classifier = r.classifier;
  m.plan = plan;
  save_checkpoint((dir / "model.rlck").string(), m);
  out << Json{{"average_accuracy", r.summary.average}, {"last_accuracy", r.summary.last},
              {"accuracies", r.accuracies}}
             .dump()
      << "\n";
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw Error(ErrorKind::usage, "eval requires --checkpoint");
  const PipelineConfig c = resolve_config(o, false);
  const Dataset d = resolve_data(o, c);
  const ModelBundle m = load_checkpoint(o.checkpoint);
  if (!m.backbone || !m.buffer || !m.classifier || !m.plan) {
    throw Error(ErrorKind::data, "eval needs backbone, buffer, classifier and plan sections");
  }
  const std::size_t k = m.plan->phases;
  Json j{{"accuracy", cumulative_accuracy(*m.classifier, *m.backbone, *m.buffer, d.test, *m.plan,
                                          std::min<std::size_t>(k, m.classifier->phase_index))},
         {"phase_index", m.classifier->phase_index}};
  if (m.classifier->classes_seen == m.plan->total_classes) {
    const auto s = evaluate_split(*m.classifier, *m.backbone, *m.buffer, d.test, *m.plan);
    j["split"] = {{"base", s.base}, {"incremental", s.incremental}};
  }
  if (!o.out.empty()) write_text(o.out, j.dump(2) + "\n");
  out << j.dump() << "\n";
  return 0;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& s, std::vector<T> fallback, F parse) {
  if (s.empty()) return fallback;
  std::vector<T> out;
  for (const auto& item : detail::split_list(s)) out.push_back(parse(item));
  return out;
}

inline int cmd_grid_search(const Options& o, std::ostream& out) {
  require_out(o, "grid-search");
  const PipelineConfig c = resolve_config(o, true);
  const Dataset d = resolve_data(o, c);
  const PhasePlan plan = plan_for(d, c);
  const auto lambdas = parse_list<double>(o.lambda, red_lambda_grid(),
                                          [](const std::string& s) { return detail::parse_real("--lambda", s); });
  const auto epochs = parse_list<std::size_t>(o.epochs, red_epoch_grid(), [](const std::string& s) {
    return static_cast<std::size_t>(detail::parse_uint("--epochs", s));
  });
  const GridSearchResult g = grid_search(d, plan, c, lambdas, epochs);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const Json summary = grid_json(g, c);
  for (const auto& cell : summary.at("cells")) {
    std::ostringstream name;
    name << "cell_l" << cell.at("lambda").get<double>() << "_e" << cell.at("epochs").get<std::size_t>()
         << ".json";
    Json one = cell;
    one["schema"] = kReportSchema;
    one["kind"] = "grid-cell";
    write_text(dir / name.str(), one.dump(2) + "\n");
  }
  write_text(dir / "grid.json", summary.dump(2) + "\n");
  out << summary.at("best").dump() << "\n";
  return 0;
}

inline int cmd_plot(const Options& o, std::ostream& out) {
  require_out(o, "plot");
  if (o.inputs.empty()) throw Error(ErrorKind::usage, "plot requires --input");
  std::vector<Json> reports;
  for (const auto& p : o.inputs) reports.push_back(read_json(p));
  std::string svg;
  if (reports.size() == 1 && reports[0].value("kind", "") == "grid-search") {
    svg = plot_lambda_sweep(reports[0]);
  } else {
    for (const auto& r : reports)
      if (!r.contains("accuracies")) throw Error(ErrorKind::data, "plot input is not a cil-run report");
    svg = plot_phase_curves(reports);
  }
  write_text(o.out, svg);
  out << Json{{"svg", o.out}}.dump() << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  Options o;
  CLI::App app{"Exemplar-free class-incremental learning with an analytic classifier"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value run configuration");
    sub->add_option("--data", o.data, "directory with train/test .rlfv or .csv files");
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--seed", o.seed, "master seed overriding every seed.* key");
  };
  auto* gen = app.add_subcommand("gen-synth", "write the synthetic benchmark suite");
  common(gen);
  gen->add_option("--report", o.report, "output format: json (binary .rlfv) or csv")
      ->check(CLI::IsMember({"json", "csv"}));
  auto* sl = app.add_subcommand("pretrain-sl", "supervised backbone on base classes");
  common(sl);
  sl->add_option("--phases", o.phases, "number of incremental phases K");
  auto* sscl = app.add_subcommand("pretrain-sscl", "contrastive backbone on base classes");
  common(sscl);
  sscl->add_option("--phases", o.phases, "number of incremental phases K");
  auto* dist = app.add_subcommand("distill", "distill a supervised teacher into a contrastive student");
  common(dist);
  dist->add_option("--teacher", o.teacher, "teacher checkpoint")->required();
  dist->add_option("--student", o.student, "student checkpoint")->required();
  dist->add_option("--lambda", o.lambda, "feature/label balance");
  dist->add_option("--epochs", o.epochs, "distillation epochs");
  dist->add_option("--phases", o.phases, "number of incremental phases K");
  auto* run = app.add_subcommand("cil-run", "full pipeline and incremental phases");
  common(run);
  run->add_option("--phases", o.phases, "number of incremental phases K");
  run->add_option("--lambda", o.lambda, "feature/label balance");
  run->add_option("--epochs", o.epochs, "distillation epochs");
  run->add_option("--report", o.report, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  run->add_option("--arm", o.arm, "full, sscl_only, sscl_label, sscl_teacher, sl_only");
  run->add_flag("--ablation", o.ablation, "run the four contrastive ablation arms");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  auto* grid = app.add_subcommand("grid-search", "(lambda, epochs) search on a validation split");
  common(grid);
  grid->add_option("--phases", o.phases, "number of incremental phases K");
  grid->add_option("--lambda", o.lambda, "comma-separated lambda values");
  grid->add_option("--epochs", o.epochs, "comma-separated epoch counts");
  auto* plot = app.add_subcommand("plot", "render reports to SVG");
  plot->add_option("--input", o.inputs, "report JSON file(s)")->required();
  plot->add_option("--out", o.out, "SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, ErrorKind::usage, e.what());
    return 2;
  }

  try {
    if (*gen) return cmd_gen_synth(o, out);
    if (*sl) return cmd_pretrain(o, out, true);
    if (*sscl) return cmd_pretrain(o, out, false);
    if (*dist) return cmd_distill(o, out);
    if (*run) return cmd_cil_run(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*grid) return cmd_grid_search(o, out);
    if (*plot) return cmd_plot(o, out);
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what());
    return e.kind() == ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    print_error(err, ErrorKind::io, e.what());
    return 1;
  }
  return 2;
}

}  // namespace real
