#include "fptreg/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fptreg/errors.hpp"
#include "fptreg/random.hpp"

namespace fptreg::experiment {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::center: return "center";
    case Method::icp: return "icp";
    case Method::cpd: return "cpd";
    case Method::fpt: return "fpt";
    case Method::fpt_finetuned: return "fpt-finetuned";
  }
  return "?";
}

std::string valid_method_names() {
  std::string out;
  for (auto m : method_order) {
    if (!out.empty()) out += ", ";
    out += to_string(m);
  }
  return out;
}

Method parse_method(std::string_view name) {
  for (auto m : method_order) {
    if (to_string(m) == name) return m;
  }
  throw UsageError("unknown method '" + std::string(name) + "'; valid methods: " + valid_method_names());
}

// --- synthetic cases ------------------------------------------------------------

void SynthConfig::validate() const {
  if (cases < 1) throw ParameterError("need at least one case");
  if (subjects > cases) throw ParameterError("more subjects than cases");
  if (points < 1) throw ParameterError("need at least one point per set");
  shape.validate();
  if (!(tps_sigma >= 0.0 && rotation_deg >= 0.0 && displacement >= 0.0)) {
    throw ParameterError("deformation magnitudes must be non-negative");
  }
  if (surface_landmarks + interior_landmarks < 1) throw ParameterError("need at least one landmark");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("train_fraction must lie in (0, 1)");
}

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    for (int k = 0; k < 3; ++k) v[k] = gaussian(rng, 1.0);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

std::string case_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case%04zu", i);
  return buf;
}

}  // namespace

std::vector<Case> synth_cases(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t subjects = cfg.subjects ? cfg.subjects : cfg.cases;
  std::vector<std::string> ids, subject_of;
  for (std::size_t i = 0; i < cfg.cases; ++i) {
    ids.push_back(case_name(i));
    subject_of.push_back("subject" + std::to_string(i % subjects));
  }
  const auto split = data::split_dataset(ids, subject_of, cfg.train_fraction, mix_seed(cfg.seed, 0x5117));

  std::vector<Case> out;
  for (std::size_t i = 0; i < cfg.cases; ++i) {
    Case c;
    c.id = ids[i];
    c.subject = subject_of[i];
    c.split = std::find(split.train.begin(), split.train.end(), c.id) != split.train.end() ? "train" : "test";

    // Cases of one subject share the surface and differ in sampling and warp.
    data::ShapeParams shape = cfg.shape;
    shape.n = cfg.points;
    const std::uint64_t shape_seed = mix_seed(cfg.seed, 0x1000 + i % subjects);
    const std::uint64_t case_seed = mix_seed(cfg.seed, 0x200000 + i);
    const data::BlobSurface surface(shape, shape_seed);
    Rng rng(case_seed);

    auto sample = [&](std::size_t n) {
      Points p(static_cast<Eigen::Index>(n), 3);
      for (std::size_t k = 0; k < n; ++k) p.row(static_cast<Eigen::Index>(k)) = surface.surface_point(random_unit(rng)).transpose();
      return p;
    };
    c.source = PointSet(sample(cfg.points), Frame::source, Unit::mm);
    const Points target_raw = sample(cfg.points);

    const std::size_t nl = cfg.surface_landmarks + cfg.interior_landmarks;
    Points lm(static_cast<Eigen::Index>(nl), 3);
    for (std::size_t k = 0; k < nl; ++k) {
      const Vec3 s = surface.surface_point(random_unit(rng));
      const double depth = k < cfg.surface_landmarks ? 1.0 : uniform(rng, 0.2, 0.8);
      lm.row(static_cast<Eigen::Index>(k)) = (depth * s).transpose();
    }

    c.record = data::normalize_to_unit_box(c.source).record;
    if (cfg.tps_sigma > 0.0) c.truth.tps = data::random_tps(3, cfg.tps_sigma, rng);
    c.truth.rigid = data::random_rigid(cfg.rotation_deg, cfg.displacement, rng);
    auto warp = [&](const Points& p) { return c.record.invert(c.truth.apply(c.record.apply(p))); };

    c.target = PointSet(warp(target_raw), Frame::target, Unit::mm);
    c.landmarks.source = lm;
    c.landmarks.target = warp(lm);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

json points_json(const Points& p) {
  json a = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) a.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return a;
}

Points json_points(const json& a) {
  Points p(static_cast<Eigen::Index>(a.size()), 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int k = 0; k < 3; ++k) p(static_cast<Eigen::Index>(i), k) = a.at(i).at(k).get<double>();
  }
  return p;
}

json truth_json(const Case& c) {
  json j;
  j["normalization"] = {{"offset", {c.record.offset[0], c.record.offset[1], c.record.offset[2]}},
                        {"scale", c.record.scale}};
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back({c.truth.rigid.rotation()(i, 0), c.truth.rigid.rotation()(i, 1), c.truth.rigid.rotation()(i, 2)});
  const Vec3& t = c.truth.rigid.translation();
  j["rigid"] = {{"rotation", r}, {"translation", {t[0], t[1], t[2]}}};
  if (c.truth.tps) {
    j["tps"] = {{"controls", points_json(c.truth.tps->control_points())},
                {"displaced", points_json(c.truth.tps->control_points() + c.truth.tps->control_displacements())}};
  } else {
    j["tps"] = nullptr;
  }
  return j;
}

void read_truth(const json& j, Case& c) {
  const auto& n = j.at("normalization");
  c.record.offset = Vec3(n.at("offset").at(0).get<double>(), n.at("offset").at(1).get<double>(),
                         n.at("offset").at(2).get<double>());
  c.record.scale = n.at("scale").get<double>();
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r(i, k) = j.at("rigid").at("rotation").at(i).at(k).get<double>();
  }
  const auto& t = j.at("rigid").at("translation");
  c.truth.rigid = RigidTransform(r, Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()));
  if (!j.at("tps").is_null()) {
    c.truth.tps = fit_tps(json_points(j["tps"].at("controls")), json_points(j["tps"].at("displaced")));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<Case>& cases, const SynthConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest;
  manifest["unit"] = "mm";
  manifest["chamfer"] = std::string(chamfer_definition);
  manifest["config"] = {{"cases", cfg.cases},
                        {"subjects", cfg.subjects},
                        {"points", cfg.points},
                        {"semi_axes", {cfg.shape.semi_axes[0], cfg.shape.semi_axes[1], cfg.shape.semi_axes[2]}},
                        {"amplitude", cfg.shape.amplitude},
                        {"terms", cfg.shape.terms},
                        {"tps_sigma", cfg.tps_sigma},
                        {"rotation_deg", cfg.rotation_deg},
                        {"displacement", cfg.displacement},
                        {"surface_landmarks", cfg.surface_landmarks},
                        {"interior_landmarks", cfg.interior_landmarks},
                        {"train_fraction", cfg.train_fraction},
                        {"seed", cfg.seed}};
  json list = json::array();
  for (const auto& c : cases) {
    const auto cdir = dir / c.id;
    std::filesystem::create_directories(cdir, ec);
    if (ec) throw IoError("cannot create " + cdir.string() + ": " + ec.message());
    data::write_xyz(cdir / "source.xyz", c.source.points);
    data::write_xyz(cdir / "target.xyz", c.target.points);
    data::write_xyz(cdir / "source_landmarks.xyz", c.landmarks.source);
    data::write_xyz(cdir / "target_landmarks.xyz", c.landmarks.target);
    write_text(cdir / "truth.json", truth_json(c).dump(2) + "\n");
    list.push_back({{"id", c.id}, {"subject", c.subject}, {"split", c.split}});
  }
  manifest["cases"] = list;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<Case> load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  std::vector<Case> out;
  try {
    for (const auto& entry : manifest.at("cases")) {
      Case c;
      c.id = entry.at("id").get<std::string>();
      c.subject = entry.value("subject", c.id);
      c.split = entry.value("split", "test");
      const auto cdir = dir / c.id;
      c.source = PointSet(data::read_points(cdir / "source.xyz"), Frame::source, Unit::mm);
      c.target = PointSet(data::read_points(cdir / "target.xyz"), Frame::target, Unit::mm);
      if (std::filesystem::exists(cdir / "source_landmarks.xyz")) {
        c.landmarks.source = data::read_points(cdir / "source_landmarks.xyz");
        c.landmarks.target = data::read_points(cdir / "target_landmarks.xyz");
        c.landmarks.validate();
      }
      if (std::filesystem::exists(cdir / "truth.json")) {
        read_truth(read_json(cdir / "truth.json"), c);
      } else {
        c.record = data::normalize_to_unit_box(c.source).record;
      }
      out.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what(), 0);
  }
  if (out.empty()) throw EmptyInputError("dataset " + dir.string() + " lists no cases");
  return out;
}

std::vector<Case> cases_in_split(const std::vector<Case>& cases, std::string_view split) {
  std::vector<Case> out;
  for (const auto& c : cases) {
    if (c.split == split) out.push_back(c);
  }
  return out;
}

// --- registration ---------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

PointSet transformed_set(Points p, Unit unit) { return PointSet(std::move(p), Frame::transformed, unit); }

}  // namespace

Registration register_pair(Method method, const PointSet& source, const PointSet& target,
                           const Points* source_landmarks, const MethodSettings& settings) {
  source.validate();
  target.validate();
  Registration out;
  switch (method) {
    case Method::center: {
      const auto start = Clock::now();
      out.transformed = classical::center_align(source, target);
      out.seconds = seconds_since(start);
      if (source_landmarks) {
        const Vec3 shift = target.centroid() - source.centroid();
        out.landmarks = Points(source_landmarks->rowwise() + shift.transpose());
      }
      break;
    }
    case Method::icp: {
      const auto start = Clock::now();
      auto r = classical::icp_register(source, target, settings.icp);
      out.seconds = seconds_since(start);
      out.transformed = std::move(r.transformed);
      if (source_landmarks) out.landmarks = r.transform.apply(*source_landmarks);
      break;
    }
    case Method::cpd: {
      const auto start = Clock::now();
      auto r = classical::cpd_nonrigid_register(source, target, settings.cpd);
      out.seconds = seconds_since(start);
      out.transformed = std::move(r.transformed);
      if (source_landmarks) out.landmarks = Points(*source_landmarks + r.displacement_at(*source_landmarks));
      break;
    }
    case Method::fpt:
    case Method::fpt_finetuned: {
      const auto* params = method == Method::fpt ? settings.fpt : settings.fpt_finetuned;
      if (!params) throw UsageError("method " + to_string(method) + " needs a checkpoint");
      const auto start = Clock::now();
      auto r = net::fpt_forward(source, target, *params);
      out.seconds = seconds_since(start);
      out.transformed = std::move(r.transformed);
      if (source_landmarks) {
        out.landmarks = Points(*source_landmarks + net::displace_queries(r.global_feature, *source_landmarks, *params));
      }
      break;
    }
  }
  out.transformed.frame = Frame::transformed;
  out.transformed.unit = source.unit;
  return out;
}

namespace {

CaseRun run_normalized(Method method, const PointSet& source, const PointSet& target, const LandmarkPairs* landmarks,
                       const data::NormalizationRecord& record,
                       const std::optional<data::SparseSliceConfig>& sparse, const MethodSettings& settings,
                       Unit unit) {
  const PointSet src(record.apply(source.points), Frame::source, Unit::normalized);
  PointSet tgt(record.apply(target.points), Frame::target, Unit::normalized);
  if (sparse) tgt = data::biplane_sparse(tgt, *sparse);
  std::optional<Points> lm;
  if (landmarks) lm = record.apply(landmarks->source);

  const auto reg = register_pair(method, src, tgt, lm ? &*lm : nullptr, settings);

  CaseRun run;
  run.transformed = transformed_set(record.invert(reg.transformed.points), unit);
  run.target_used = PointSet(record.invert(tgt.points), Frame::target, unit);
  PointSet complete = target;
  complete.unit = unit;
  auto& r = run.report;
  r.method = to_string(method);
  r.variant = sparse ? "sparse" : "complete";
  r.seconds = reg.seconds;
  r.chamfer = chamfer_distance(run.transformed, complete);
  r.hausdorff = hausdorff_distance(run.transformed, complete);
  if (landmarks && reg.landmarks) {
    r.tre = target_registration_error({record.invert(*reg.landmarks), landmarks->target});
  }
  r.unit = unit;
  r.source_points = src.size();
  r.target_points = tgt.size();
  return run;
}

}  // namespace

CaseRun run_case(Method method, const Case& c, const std::optional<data::SparseSliceConfig>& sparse,
                 const MethodSettings& settings) {
  const bool has_landmarks = c.landmarks.source.rows() > 0;
  auto run = run_normalized(method, c.source, c.target, has_landmarks ? &c.landmarks : nullptr, c.record, sparse,
                            settings, Unit::mm);
  run.report.case_id = c.id;
  return run;
}

CaseRun run_files(Method method, const PointSet& source, const PointSet& target, const LandmarkPairs* landmarks,
                  const MethodSettings& settings, Unit unit) {
  if (landmarks) landmarks->validate();
  const auto record = data::normalize_to_unit_box(source).record;
  return run_normalized(method, source, target, landmarks, record, std::nullopt, settings, unit);
}

// --- benchmark ------------------------------------------------------------------

namespace {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_case_outputs(const std::filesystem::path& dir, const CaseRun& run) {
  std::filesystem::create_directories(dir);
  data::write_xyz(dir / (run.report.method + ".xyz"), run.transformed.points);
  data::write_xyz(dir / "target.xyz", run.target_used.points);
  write_text(dir / (run.report.method + ".json"), report_json(run.report) + "\n");
}

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const std::vector<Case>& cases, const BenchmarkConfig& cfg) {
  if (cfg.methods.empty()) throw UsageError("no methods selected; valid methods: " + valid_method_names());
  if (!cfg.complete && !cfg.sparse) throw UsageError("neither the complete nor the sparse variant is selected");
  if (cfg.sparse) cfg.sparse_config.validate();

  std::vector<Method> methods;
  for (auto m : method_order) {
    if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) methods.push_back(m);
  }
  for (auto m : methods) {
    if ((m == Method::fpt && !cfg.settings.fpt) || (m == Method::fpt_finetuned && !cfg.settings.fpt_finetuned)) {
      throw UsageError("method " + to_string(m) + " selected without a checkpoint");
    }
  }

  std::vector<BenchmarkRow> rows;
  for (bool sparse : {false, true}) {
    if (sparse ? !cfg.sparse : !cfg.complete) continue;
    const std::optional<data::SparseSliceConfig> slices =
        sparse ? std::optional<data::SparseSliceConfig>(cfg.sparse_config) : std::nullopt;
    for (const auto& c : cases) {
      for (auto m : methods) {
        BenchmarkRow row;
        row.report.case_id = c.id;
        row.report.method = to_string(m);
        row.report.variant = sparse ? "sparse" : "complete";
        row.report.unit = Unit::mm;
        try {
          auto run = run_case(m, c, slices, cfg.settings);
          if (cfg.output_dir) write_case_outputs(*cfg.output_dir / row.report.variant / c.id, run);
          row.report = run.report;
        } catch (const Error& e) {
          row.failed = true;
          row.numerical = dynamic_cast<const NumericalError*>(&e) != nullptr;
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

Stat describe(const std::vector<double>& values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<BenchmarkRow>& rows) {
  std::vector<SummaryRow> out;
  for (const char* variant : {"complete", "sparse"}) {
    for (auto m : method_order) {
      const std::string name = to_string(m);
      std::vector<double> secs, dc, dh, tre;
      SummaryRow s;
      s.variant = variant;
      s.method = name;
      for (const auto& r : rows) {
        if (r.report.variant != variant || r.report.method != name) continue;
        ++s.cases;
        if (r.failed) {
          ++s.failures;
          continue;
        }
        secs.push_back(r.report.seconds);
        dc.push_back(r.report.chamfer);
        dh.push_back(r.report.hausdorff);
        if (r.report.tre) tre.push_back(*r.report.tre);
      }
      if (s.cases == 0) continue;
      s.seconds = describe(secs);
      s.chamfer = describe(dc);
      s.hausdorff = describe(dh);
      s.tre = describe(tre);
      out.push_back(s);
    }
  }
  return out;
}

void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "variant,case,method,status,seconds,chamfer,hausdorff,tre,unit,source_points,target_points,error\n";
  for (const auto& r : rows) {
    const auto& p = r.report;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << p.variant << ',' << p.case_id << ',' << p.method << ',' << (r.failed ? "failed" : "ok") << ',';
    if (r.failed) {
      out << ",,,,";
    } else {
      out << format_number(p.seconds) << ',' << format_number(p.chamfer) << ',' << format_number(p.hausdorff) << ','
          << (p.tre ? format_number(*p.tre) : "") << ',';
    }
    out << to_string(p.unit) << ',' << p.source_points << ',' << p.target_points << ',' << err << '\n';
  }
  write_text(path, out.str());
}

std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<BenchmarkRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 12) throw ParseError(path.string() + ": expected 12 columns", line_no);
    BenchmarkRow r;
    r.report.variant = f[0];
    r.report.case_id = f[1];
    r.report.method = f[2];
    r.failed = f[3] != "ok";
    try {
      if (!r.failed) {
        r.report.seconds = std::stod(f[4]);
        r.report.chamfer = std::stod(f[5]);
        r.report.hausdorff = std::stod(f[6]);
        if (!f[7].empty()) r.report.tre = std::stod(f[7]);
      }
      r.report.unit = f[8] == "mm" ? Unit::mm : Unit::normalized;
      r.report.source_points = std::stoul(f[9]);
      r.report.target_points = std::stoul(f[10]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": malformed number", line_no);
    }
    r.error = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "variant,method,cases,failures,seconds_mean,seconds_std,chamfer_mean,chamfer_std,hausdorff_mean,"
         "hausdorff_std,tre_mean,tre_std\n";
  for (const auto& s : rows) {
    out << s.variant << ',' << s.method << ',' << s.cases << ',' << s.failures;
    for (const Stat* st : {&s.seconds, &s.chamfer, &s.hausdorff, &s.tre}) {
      if (st->n) {
        out << ',' << format_number(st->mean) << ',' << format_number(st->std);
      } else {
        out << ",,";
      }
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::string variant;
  for (const auto& s : rows) {
    if (s.variant != variant) {
      variant = s.variant;
      out << (out.tellp() > 0 ? "\n" : "") << variant << " target\n";
      std::snprintf(buf, sizeof buf, "  %-14s %12s %18s %18s %18s\n", "method", "time (s)", "D_C", "D_H", "TRE");
      out << buf;
    }
    auto cell = [](const Stat& st) {
      char c[64];
      if (st.n == 0) return std::string("-");
      std::snprintf(c, sizeof c, "%.3g +/- %.2g", st.mean, st.std);
      return std::string(c);
    };
    std::snprintf(buf, sizeof buf, "  %-14s %12.3g %18s %18s %18s%s\n", s.method.c_str(), s.seconds.mean,
                  cell(s.chamfer).c_str(), cell(s.hausdorff).c_str(), cell(s.tre).c_str(),
                  s.failures ? (" (" + std::to_string(s.failures) + " failed)").c_str() : "");
    out << buf;
  }
  out << "D_C: " << chamfer_definition << "\n";
  return out.str();
}

std::string report_json(const RegistrationReport& r) {
  json j{{"case", r.case_id},
         {"method", r.method},
         {"variant", r.variant},
         {"seconds", r.seconds},
         {"chamfer", r.chamfer},
         {"hausdorff", r.hausdorff},
         {"tre", r.tre ? json(*r.tre) : json(nullptr)},
         {"unit", to_string(r.unit)},
         {"chamfer_definition", std::string(chamfer_definition)},
         {"source_points", r.source_points},
         {"target_points", r.target_points}};
  return j.dump(2);
}

// --- training corpora -----------------------------------------------------------

std::vector<net::TrainingItem> shape_corpus(data::ShapeFamily family, const data::ShapeParams& params,
                                            std::size_t count, std::uint64_t seed) {
  std::vector<net::TrainingItem> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({data::synth_shape(family, params, mix_seed(seed, i)), std::nullopt});
  }
  return out;
}

std::vector<net::TrainingItem> mesh_corpus(const std::filesystem::path& dir, std::size_t points, std::uint64_t seed) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (std::filesystem::recursive_directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    if (it->is_regular_file() && it->path().extension() == ".off") files.push_back(it->path());
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyInputError("no .off meshes under " + dir.string());
  std::vector<net::TrainingItem> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    out.push_back({data::sample_surface(data::load_off_mesh(files[i]), points, mix_seed(seed, i)), std::nullopt});
  }
  return out;
}

std::vector<net::TrainingItem> case_corpus(const std::vector<Case>& cases,
                                           const std::optional<data::SparseSliceConfig>& sparse) {
  std::vector<net::TrainingItem> out;
  for (const auto& c : cases) {
    PointSet src(c.record.apply(c.source.points), Frame::source, Unit::normalized);
    PointSet tgt(c.record.apply(c.target.points), Frame::target, Unit::normalized);
    if (sparse) tgt = data::biplane_sparse(tgt, *sparse);
    out.push_back({std::move(tgt), std::move(src)});
  }
  if (out.empty()) throw EmptyInputError("no cases to train on");
  return out;
}

}  // namespace fptreg::experiment
