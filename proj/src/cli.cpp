#include "fptreg/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fptreg/errors.hpp"
#include "fptreg/experiment.hpp"
#include "fptreg/random.hpp"

namespace fptreg::cli {

namespace {

namespace fs = std::filesystem;
namespace ex = experiment;

struct SynthOptions {
  std::string out;
  ex::SynthConfig cfg;
  std::vector<double> semi_axes{25.0, 20.0, 18.0};
};

struct TrainOptions {
  std::string out;
  std::string loss_csv;
  std::string arch = "desk";
  std::string init_from;
  std::string dataset;
  std::string split = "train";
  std::string meshes;
  std::string family = "blob";
  std::size_t shapes = 256;
  bool sparse = false;
  double tau = 0.05;
  std::size_t steps = 0;
  std::size_t epochs = 1;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t points = 256;
  std::uint64_t seed = 0;
  bool no_augment = false;
  double rotation_deg = 45.0;
  double displacement = 1.0;
  double tps_sigma = 0.1;
  std::size_t log_every = 100;
};

struct MethodOptions {
  std::size_t icp_iterations = 25;
  std::size_t cpd_iterations = 150;
  double cpd_w = 0.0;
  double cpd_beta = 2.0;
  double cpd_lambda = 2.0;
  std::string checkpoint;
  std::string finetuned;
};

struct RegisterOptions {
  std::string source, target, method, out, report;
  std::string source_landmarks, target_landmarks;
  std::string unit = "normalized";
  MethodOptions m;
};

struct BenchmarkOptions {
  std::string dataset, out;
  std::vector<std::string> methods{"center", "icp", "cpd", "fpt", "fpt-finetuned"};
  std::vector<std::string> variants{"complete"};
  std::string split = "test";
  double tau = 0.05;
  bool no_case_outputs = false;
  MethodOptions m;
};

struct EvalOptions {
  std::string transformed, target, source_landmarks, target_landmarks;
  std::string unit = "normalized";
  std::string benchmark_csv;
};

void add_method_options(CLI::App* cmd, MethodOptions& m) {
  cmd->add_option("--icp-iterations", m.icp_iterations, "ICP iteration cap")->capture_default_str();
  cmd->add_option("--cpd-iterations", m.cpd_iterations, "CPD iteration cap")->capture_default_str();
  cmd->add_option("--cpd-w", m.cpd_w, "CPD uniform-component weight")->capture_default_str();
  cmd->add_option("--cpd-beta", m.cpd_beta, "CPD kernel width")->capture_default_str();
  cmd->add_option("--cpd-lambda", m.cpd_lambda, "CPD coherence weight")->capture_default_str();
  cmd->add_option("--checkpoint", m.checkpoint, "pre-trained FPT checkpoint");
  cmd->add_option("--finetuned", m.finetuned, "fine-tuned FPT checkpoint");
}

Unit parse_unit(const std::string& s) {
  if (s == "mm") return Unit::mm;
  if (s == "normalized") return Unit::normalized;
  throw UsageError("unknown unit '" + s + "' (expected normalized or mm)");
}

// Checkpoints are loaded before any work starts so that a bad path fails fast.
struct LoadedModels {
  std::optional<net::FptParameters> fpt, finetuned;
};

ex::MethodSettings settings_from(const MethodOptions& m, const std::vector<ex::Method>& methods, LoadedModels& models) {
  ex::MethodSettings s;
  s.icp.max_iterations = m.icp_iterations;
  s.cpd.max_iterations = m.cpd_iterations;
  s.cpd.w = m.cpd_w;
  s.cpd.beta = m.cpd_beta;
  s.cpd.lambda = m.cpd_lambda;
  s.icp.validate();
  s.cpd.validate();
  auto wants = [&](ex::Method x) { return std::find(methods.begin(), methods.end(), x) != methods.end(); };
  if (wants(ex::Method::fpt)) {
    if (m.checkpoint.empty()) throw UsageError("method fpt needs --checkpoint");
    models.fpt = net::load_checkpoint(m.checkpoint);
    s.fpt = &*models.fpt;
  }
  if (wants(ex::Method::fpt_finetuned)) {
    const std::string& path = m.finetuned.empty() ? m.checkpoint : m.finetuned;
    if (path.empty()) throw UsageError("method fpt-finetuned needs --finetuned");
    models.finetuned = net::load_checkpoint(path);
    s.fpt_finetuned = &*models.finetuned;
  }
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  ex::SynthConfig cfg = o.cfg;
  if (o.semi_axes.size() != 3) throw UsageError("--semi-axes takes three values");
  cfg.shape.semi_axes = Vec3(o.semi_axes[0], o.semi_axes[1], o.semi_axes[2]);
  const auto cases = ex::synth_cases(cfg);
  ex::write_dataset(o.out, cases, cfg);
  out << "wrote " << cases.size() << " cases to " << o.out << "\n";
  return exit_ok;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  net::TrainConfig cfg;
  cfg.minibatch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.steps ? std::numeric_limits<std::size_t>::max() : o.epochs;
  cfg.max_steps = o.steps;
  cfg.points_per_set = o.points;
  cfg.rng_seed = o.seed;
  cfg.augment = !o.no_augment;
  cfg.augmentation.rotation_deg = o.rotation_deg;
  cfg.augmentation.displacement = o.displacement;
  cfg.augmentation.tps_sigma = o.tps_sigma;
  cfg.validate();

  // Starting point first: a missing --init-from must fail before any data work.
  const net::FptParameters init = o.init_from.empty()
                                      ? net::FptParameters::initialize(net::architecture_by_name(o.arch), mix_seed(o.seed, 0x1417))
                                      : net::load_checkpoint(o.init_from);

  std::vector<net::TrainingItem> corpus;
  if (!o.dataset.empty()) {
    auto cases = ex::load_dataset(o.dataset);
    if (o.split != "all") cases = ex::cases_in_split(cases, o.split);
    std::optional<data::SparseSliceConfig> slices;
    if (o.sparse) {
      slices.emplace();
      slices->tau = o.tau;
    }
    corpus = ex::case_corpus(cases, slices);
  } else if (!o.meshes.empty()) {
    corpus = ex::mesh_corpus(o.meshes, o.points, o.seed);
  } else {
    data::ShapeParams shape;
    shape.n = o.points;
    corpus = ex::shape_corpus(data::parse_family(o.family), shape, o.shapes, mix_seed(o.seed, 0xc0));
  }

  const auto result = net::train(corpus, cfg, init, [&](std::size_t step, double loss) {
    if (o.log_every && (step + 1) % o.log_every == 0) err << "step " << step + 1 << " loss " << loss << "\n";
  });

  net::save_checkpoint(result.params, o.out);
  std::ostringstream csv;
  csv << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.step_losses[i]);
    csv << buf;
  }
  write_file(o.loss_csv.empty() ? o.out + ".loss.csv" : o.loss_csv, csv.str());
  out << "trained " << result.step_losses.size() << " steps on " << corpus.size() << " items; checkpoint "
      << o.out << "\n";
  if (result.aborted) {
    err << "training stopped: " << result.message << "\n";
    return exit_numerical;
  }
  return exit_ok;
}

int cmd_register(const RegisterOptions& o, std::ostream& out) {
  const auto method = ex::parse_method(o.method);
  const Unit unit = parse_unit(o.unit);
  LoadedModels models;
  const auto settings = settings_from(o.m, {method}, models);
  const PointSet source(data::read_points(o.source), Frame::source, unit);
  const PointSet target(data::read_points(o.target), Frame::target, unit);
  std::optional<LandmarkPairs> lm;
  if (!o.source_landmarks.empty() || !o.target_landmarks.empty()) {
    if (o.source_landmarks.empty() || o.target_landmarks.empty()) {
      throw UsageError("landmarks need both --source-landmarks and --target-landmarks");
    }
    lm = LandmarkPairs{data::read_points(o.source_landmarks), data::read_points(o.target_landmarks)};
  }
  auto run = ex::run_files(method, source, target, lm ? &*lm : nullptr, settings, unit);
  run.report.case_id = fs::path(o.source).stem().string();
  if (!o.out.empty()) data::write_points(o.out, run.transformed.points);
  const std::string report = ex::report_json(run.report) + "\n";
  if (!o.report.empty()) {
    write_file(o.report, report);
  } else {
    out << report;
  }
  return exit_ok;
}

int cmd_benchmark(const BenchmarkOptions& o, std::ostream& out, std::ostream& err) {
  ex::BenchmarkConfig cfg;
  cfg.methods.clear();
  for (const auto& m : o.methods) cfg.methods.push_back(ex::parse_method(m));
  cfg.complete = cfg.sparse = false;
  for (const auto& v : o.variants) {
    if (v == "complete") {
      cfg.complete = true;
    } else if (v == "sparse") {
      cfg.sparse = true;
    } else {
      throw UsageError("unknown variant '" + v + "' (expected complete or sparse)");
    }
  }
  cfg.sparse_config.tau = o.tau;
  LoadedModels models;
  cfg.settings = settings_from(o.m, cfg.methods, models);
  auto cases = ex::load_dataset(o.dataset);
  if (o.split != "all") cases = ex::cases_in_split(cases, o.split);
  if (cases.empty()) throw EmptyInputError("no cases in split '" + o.split + "'");
  if (!o.no_case_outputs) cfg.output_dir = fs::path(o.out) / "cases";

  const auto rows = ex::run_benchmark(cases, cfg);
  const auto summary = ex::summarize(rows);
  fs::create_directories(o.out);
  ex::write_benchmark_csv(fs::path(o.out) / "benchmark.csv", rows);
  ex::write_summary_csv(fs::path(o.out) / "summary.csv", summary);
  const std::string table = ex::format_summary(summary);
  write_file(fs::path(o.out) / "summary.txt", table);
  out << table;

  bool any_numerical = false, any_failed = false;
  for (const auto& r : rows) {
    if (!r.failed) continue;
    any_failed = true;
    any_numerical = any_numerical || r.numerical;
    err << r.report.variant << " " << r.report.case_id << " " << r.report.method << ": " << r.error << "\n";
  }
  if (!any_failed) return exit_ok;
  return any_numerical ? exit_numerical : exit_data;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (!o.benchmark_csv.empty()) {
    out << ex::format_summary(ex::summarize(ex::read_benchmark_csv(o.benchmark_csv)));
    return exit_ok;
  }
  if (o.transformed.empty() || o.target.empty()) {
    throw UsageError("eval needs --transformed and --target, or --benchmark-csv");
  }
  const Unit unit = parse_unit(o.unit);
  const PointSet a(data::read_points(o.transformed), Frame::transformed, unit);
  const PointSet b(data::read_points(o.target), Frame::target, unit);
  nlohmann::json j{{"chamfer", chamfer_distance(a, b)},
                   {"hausdorff", hausdorff_distance(a, b)},
                   {"unit", to_string(unit)},
                   {"chamfer_definition", std::string(ex::chamfer_definition)}};
  if (!o.source_landmarks.empty() || !o.target_landmarks.empty()) {
    if (o.source_landmarks.empty() || o.target_landmarks.empty()) {
      throw UsageError("landmarks need both --source-landmarks and --target-landmarks");
    }
    j["tre"] = target_registration_error({data::read_points(o.source_landmarks), data::read_points(o.target_landmarks)});
  }
  out << j.dump(2) << "\n";
  return exit_ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-set registration toolkit: FPT network, ICP and CPD baselines", "fptreg"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file with one [section] per subcommand");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic paired dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--cases", synth.cfg.cases, "number of cases")->capture_default_str();
  s->add_option("--subjects", synth.cfg.subjects, "number of subjects (0: one per case)")->capture_default_str();
  s->add_option("--points", synth.cfg.points, "points per set")->capture_default_str();
  s->add_option("--semi-axes", synth.semi_axes, "shape stretch in mm")->expected(3);
  s->add_option("--amplitude", synth.cfg.shape.amplitude, "blob perturbation amplitude")->capture_default_str();
  s->add_option("--tps-sigma", synth.cfg.tps_sigma, "TPS control shift sigma (normalized)")->capture_default_str();
  s->add_option("--rotation-deg", synth.cfg.rotation_deg, "per-axis rotation range")->capture_default_str();
  s->add_option("--displacement", synth.cfg.displacement, "per-axis shift range (normalized)")->capture_default_str();
  s->add_option("--surface-landmarks", synth.cfg.surface_landmarks)->capture_default_str();
  s->add_option("--interior-landmarks", synth.cfg.interior_landmarks)->capture_default_str();
  s->add_option("--train-fraction", synth.cfg.train_fraction)->capture_default_str();
  s->add_option("--seed", synth.cfg.seed)->capture_default_str();

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train or fine-tune an FPT network");
  t->add_option("--out", train.out, "checkpoint to write")->required();
  t->add_option("--loss-csv", train.loss_csv, "loss trace (default: <out>.loss.csv)");
  t->add_option("--arch", train.arch, "paper, desk or tiny")->capture_default_str();
  t->add_option("--init-from", train.init_from, "checkpoint to fine-tune");
  t->add_option("--dataset", train.dataset, "synthetic dataset: train on its fixed pairs");
  t->add_option("--split", train.split, "dataset split to use (train, test, all)")->capture_default_str();
  t->add_option("--meshes", train.meshes, "directory of .off meshes to augment");
  t->add_option("--family", train.family, "synthetic shape family (blob, ellipsoid)")->capture_default_str();
  t->add_option("--shapes", train.shapes, "number of synthetic shapes")->capture_default_str();
  t->add_flag("--sparse", train.sparse, "thin dataset targets to biplane slabs");
  t->add_option("--tau", train.tau, "slab half-thickness (normalized)")->capture_default_str();
  t->add_option("--steps", train.steps, "optimizer steps (overrides --epochs)")->capture_default_str();
  t->add_option("--epochs", train.epochs)->capture_default_str();
  t->add_option("--batch", train.batch, "minibatch size")->capture_default_str();
  t->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--points", train.points, "points per set")->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_flag("--no-augment", train.no_augment, "use shapes as identical pairs");
  t->add_option("--rotation-deg", train.rotation_deg)->capture_default_str();
  t->add_option("--displacement", train.displacement)->capture_default_str();
  t->add_option("--tps-sigma", train.tps_sigma)->capture_default_str();
  t->add_option("--log-every", train.log_every, "progress interval in steps (0: quiet)")->capture_default_str();

  RegisterOptions reg;
  auto* r = app.add_subcommand("register", "register one source/target pair");
  r->add_option("--source", reg.source, "source point file (.xyz or .ply)")->required();
  r->add_option("--target", reg.target, "target point file")->required();
  r->add_option("--method", reg.method, ex::valid_method_names())->required();
  r->add_option("--out", reg.out, "transformed source to write");
  r->add_option("--report", reg.report, "JSON report path (default: stdout)");
  r->add_option("--source-landmarks", reg.source_landmarks);
  r->add_option("--target-landmarks", reg.target_landmarks);
  r->add_option("--unit", reg.unit, "normalized or mm")->capture_default_str();
  add_method_options(r, reg.m);

  BenchmarkOptions bench;
  auto* b = app.add_subcommand("benchmark", "run methods over a dataset and tabulate metrics");
  b->add_option("--dataset", bench.dataset)->required();
  b->add_option("--out", bench.out, "output directory")->required();
  b->add_option("--methods", bench.methods, ex::valid_method_names())->delimiter(',');
  b->add_option("--variants", bench.variants, "complete, sparse")->delimiter(',');
  b->add_option("--split", bench.split, "train, test or all")->capture_default_str();
  b->add_option("--tau", bench.tau, "slab half-thickness for sparse targets")->capture_default_str();
  b->add_flag("--no-case-outputs", bench.no_case_outputs, "skip per-case point files and reports");
  add_method_options(b, bench.m);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "metrics of a registered set, or a summary of a benchmark CSV");
  e->add_option("--transformed", ev.transformed);
  e->add_option("--target", ev.target);
  e->add_option("--source-landmarks", ev.source_landmarks, "registered source landmarks");
  e->add_option("--target-landmarks", ev.target_landmarks);
  e->add_option("--unit", ev.unit)->capture_default_str();
  e->add_option("--benchmark-csv", ev.benchmark_csv);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return exit_usage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out, err);
    if (r->parsed()) return cmd_register(reg, out);
    if (b->parsed()) return cmd_benchmark(bench, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
  } catch (const UsageError& x) {
    err << "usage error: " << x.what() << "\n";
    return exit_usage;
  } catch (const DataError& x) {
    err << "data error: " << x.what() << "\n";
    return exit_data;
  } catch (const NumericalError& x) {
    err << "numerical error: " << x.what() << "\n";
    return exit_numerical;
  } catch (const fs::filesystem_error& x) {
    err << "data error: " << x.what() << "\n";
    return exit_data;
  }
  return exit_usage;
}

}  // namespace fptreg::cli
