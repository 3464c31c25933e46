// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fpt_checks.hpp"
#include "fptreg/classical.hpp"
#include "fptreg/data.hpp"
#include "fptreg/errors.hpp"
#include "fptreg/experiment.hpp"
#include "fptreg/model.hpp"
#include "fptreg/random.hpp"

using namespace fptreg;
namespace ex = fptreg::experiment;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    for (int k = 0; k < 3; ++k) v[k] = gaussian(rng, 1.0);
  } while (v.norm() < 1e-6);
  return v.normalized();
}

// --- shared settings --------------------------------------------------------------

// Elongated blobs whose pose is recoverable from the shape.
data::ShapeParams blob_family(std::size_t n) {
  data::ShapeParams p;
  p.n = n;
  p.semi_axes = Vec3(1.0, 0.6, 0.35);
  p.amplitude = 0.15;
  return p;
}

constexpr std::size_t train_points = 256;
constexpr std::size_t train_shapes = 1024;
constexpr std::size_t train_steps = 5000;
constexpr std::size_t train_batch = 32;
constexpr std::size_t heldout_pairs = 50;

constexpr std::size_t finetune_steps = 400;
constexpr std::size_t finetune_batch = 16;

// --- 1 ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto params = testing::perturbed(net::FptArchitecture::tiny(), 101);
  auto shape = [](std::uint64_t seed) {
    return data::normalize_to_unit_box(data::synth_shape(data::ShapeFamily::blob, blob_family(32), seed)).points;
  };
  const PointSet s = shape(102), t = shape(103);
  const auto errors = testing::gradient_errors(s, t, params);
  double worst = 0.0;
  std::string worst_name;
  bool all_nonzero = true;
  for (const auto& e : errors) {
    if (e.relative >= worst) {
      worst = e.relative;
      worst_name = e.name;
    }
    all_nonzero = all_nonzero && e.analytic_norm > 0.0;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && all_nonzero && secs < 60.0,
          fmt("%zu parameter groups, worst relative error %.2e (%s), %.1f s", errors.size(), worst, worst_name.c_str(),
              secs)};
}

// --- 2 ---------------------------------------------------------------------------

Outcome permutation_invariance(const net::FptParameters& params) {
  const PointSet p = data::normalize_to_unit_box(
                         data::synth_shape(data::ShapeFamily::blob, blob_family(256), 201))
                         .points;
  const auto reference = net::extract_features(p, params);
  std::mt19937_64 rng(202);
  std::vector<Eigen::Index> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t identical = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    PointSet q = p;
    for (std::size_t i = 0; i < order.size(); ++i) q.points.row(static_cast<Eigen::Index>(i)) = p.points.row(order[i]);
    const auto f = net::extract_features(q, params);
    identical += std::memcmp(f.data(), reference.data(), f.size() * sizeof(double)) == 0 ? 1 : 0;
  }
  return {identical == 1000, fmt("%zu/1000 permutations bit-identical (%zu features)", identical, reference.size())};
}

// --- 3 ---------------------------------------------------------------------------

Outcome icp_recovery() {
  const auto t0 = Clock::now();
  data::ShapeParams cloud;
  cloud.n = 512;
  cloud.semi_axes = Vec3(1.5, 0.8, 0.4);
  cloud.amplitude = 0.3;
  classical::IcpConfig cfg;
  cfg.max_iterations = 25;
  std::size_t ok = 0;
  double worst_rot = 0.0, worst_trans = 0.0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(300, trial));
    const PointSet source = data::synth_shape(data::ShapeFamily::blob, cloud, mix_seed(301, trial));
    const double angle = uniform(rng, 0.0, 30.0) * M_PI / 180.0;
    const Vec3 shift = uniform(rng, 0.0, 0.3) * random_unit(rng);
    const auto truth = RigidTransform::from_axis_angle(random_unit(rng), angle, shift);
    const auto r = classical::icp_register(source, apply_rigid(truth, source), cfg);
    const double rot = rotation_angle_deg(r.transform.rotation(), truth.rotation());
    const double trans = (r.transform.translation() - truth.translation()).norm();
    worst_rot = std::max(worst_rot, rot);
    worst_trans = std::max(worst_trans, trans);
    ok += rot < 1.0 && trans < 1e-3 && r.iterations <= 25 ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {ok >= 48 && secs < 60.0,
          fmt("%zu/50 trials within 1 deg and 1e-3 (worst %.3g deg, %.3g), %.1f s", ok, worst_rot, worst_trans, secs)};
}

// --- 4 ---------------------------------------------------------------------------

Outcome cpd_behaviour() {
  const auto t0 = Clock::now();
  std::size_t halved = 0, monotone = 0;
  double worst_rise = 0.0;
  for (std::uint64_t c = 0; c < 50; ++c) {
    Rng rng(mix_seed(400, c));
    data::ShapeParams p;
    p.n = 256;
    p.semi_axes = Vec3(uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0));
    const PointSet target = data::synth_shape(data::ShapeFamily::ellipsoid, p, mix_seed(401, c));
    const PointSet source = apply_tps(data::random_tps(3, 0.1, rng), target);
    const auto r = classical::cpd_nonrigid_register(source, target);
    const double before = chamfer_distance(classical::center_align(source, target), target);
    halved += chamfer_distance(r.transformed, target) <= 0.5 * before ? 1 : 0;
    bool mono = true;
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      const double rise = r.objective_trace[i] - r.objective_trace[i - 1];
      // Allows the last-bit rounding of a converged objective.
      if (rise > 1e-12 * std::abs(r.objective_trace[i - 1])) mono = false;
      worst_rise = std::max(worst_rise, rise / std::abs(r.objective_trace[i - 1]));
    }
    monotone += mono ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {halved >= 45 && monotone == 50 && secs < 600.0,
          fmt("%zu/50 halved the centre-aligned chamfer, %zu/50 monotone (largest relative rise %.2e), %.1f s", halved,
              monotone, worst_rise, secs)};
}

// --- 5 ---------------------------------------------------------------------------

struct Pretrained {
  net::FptParameters params;
  double seconds = 0.0;
  bool aborted = false;
};

Pretrained pretrain() {
  const auto t0 = Clock::now();
  const auto corpus = ex::shape_corpus(data::ShapeFamily::blob, blob_family(train_points), train_shapes, 500);
  net::TrainConfig cfg;
  cfg.minibatch_size = train_batch;
  cfg.points_per_set = train_points;
  cfg.epochs = train_steps * train_batch / train_shapes + 1;
  cfg.max_steps = train_steps;
  cfg.rng_seed = 501;
  const auto init = net::FptParameters::initialize(net::FptArchitecture::desk(), 502);
  auto r = net::train(corpus, cfg, init, [&](std::size_t step, double loss) {
    if ((step + 1) % 500 == 0) {
      std::fprintf(stderr, "  pre-training step %zu loss %.4f (%.0f s)\n", step + 1, loss, seconds_since(t0));
    }
  });
  return {std::move(r.params), seconds_since(t0), r.aborted};
}

Outcome synthetic_registration(const Pretrained& model) {
  const auto t0 = Clock::now();
  std::vector<double> center, fpt;
  const data::AugmentationConfig aug;
  for (std::uint64_t i = 0; i < heldout_pairs; ++i) {
    const auto shape = data::normalize_to_unit_box(
                           data::synth_shape(data::ShapeFamily::blob, blob_family(train_points), mix_seed(510, i)))
                           .points;
    const auto pair = data::augment_pair(shape, aug, mix_seed(511, i));
    center.push_back(chamfer_distance(classical::center_align(pair.source, pair.target), pair.target));
    fpt.push_back(chamfer_distance(net::fpt_forward(pair.source, pair.target, model.params).transformed, pair.target));
  }
  const double ratio = mean(fpt) / mean(center);
  const double secs = model.seconds + seconds_since(t0);
  return {!model.aborted && ratio <= 0.6 && secs < 1800.0,
          fmt("held-out mean D_C %.4f vs centre-aligned %.4f, ratio %.3f (limit 0.60), %zu steps, %.0f s", mean(fpt),
              mean(center), ratio, train_steps, secs)};
}

// --- 6, 7 --------------------------------------------------------------------------

ex::SynthConfig case_family() {
  ex::SynthConfig cfg;
  cfg.cases = 40;
  cfg.seed = 600;
  return cfg;
}

net::FptParameters finetune(const net::FptParameters& init, const std::vector<ex::Case>& train,
                            const std::optional<data::SparseSliceConfig>& sparse, std::uint64_t seed) {
  const auto corpus = ex::case_corpus(train, sparse);
  net::TrainConfig cfg;
  cfg.minibatch_size = finetune_batch;
  cfg.points_per_set = train_points;
  cfg.epochs = finetune_steps * finetune_batch / corpus.size() + 1;
  cfg.max_steps = finetune_steps;
  cfg.rng_seed = seed;
  const auto r = net::train(corpus, cfg, init);
  if (r.aborted) throw NumericalError("fine-tuning aborted: " + r.message);
  return r.params;
}

double mean_chamfer(ex::Method m, const std::vector<ex::Case>& cases,
                    const std::optional<data::SparseSliceConfig>& sparse, const ex::MethodSettings& settings) {
  std::vector<double> d;
  for (const auto& c : cases) d.push_back(ex::run_case(m, c, sparse, settings).report.chamfer);
  return mean(d);
}

Outcome finetune_ordering(const net::FptParameters& pretrained, const net::FptParameters& tuned,
                          const std::vector<ex::Case>& train, const std::vector<ex::Case>& test) {
  ex::MethodSettings s;
  s.fpt = &pretrained;
  s.fpt_finetuned = &tuned;
  const double before = mean_chamfer(ex::Method::fpt, test, std::nullopt, s);
  const double after = mean_chamfer(ex::Method::fpt_finetuned, test, std::nullopt, s);
  return {after < before, fmt("held-out mean D_C %.4f mm fine-tuned vs %.4f mm pre-trained (%zu train, %zu test)", after,
                              before, train.size(), test.size())};
}

// The model fine-tuned on complete targets meets sparse test targets. The
// model fine-tuned on sparse targets is reported alongside.
Outcome sparse_robustness(const net::FptParameters& pretrained, const net::FptParameters& tuned,
                          const std::vector<ex::Case>& train, const std::vector<ex::Case>& test) {
  const auto t0 = Clock::now();
  data::SparseSliceConfig sparse;
  sparse.tau = 0.05;
  const auto sparse_tuned = finetune(pretrained, train, sparse, 710);
  ex::MethodSettings s, s_sparse;
  s.fpt_finetuned = &tuned;
  s_sparse.fpt_finetuned = &sparse_tuned;
  const double fpt = mean_chamfer(ex::Method::fpt_finetuned, test, sparse, s);
  const double center = mean_chamfer(ex::Method::center, test, sparse, s);
  const double fpt_sparse = mean_chamfer(ex::Method::fpt_finetuned, test, sparse, s_sparse);
  return {fpt <= center,
          fmt("sparse targets: fine-tuned FPT mean D_C %.4f mm vs centre-aligned %.4f mm (tuned on sparse targets: "
              "%.4f mm), %.0f s",
              fpt, center, fpt_sparse, seconds_since(t0))};
}

// --- 8 ---------------------------------------------------------------------------

Outcome speed_ordering(const net::FptParameters& desk) {
  ex::SynthConfig cfg;
  cfg.cases = 5;
  cfg.points = 1024;
  cfg.shape.n = 1024;
  cfg.seed = 800;
  const auto cases = ex::synth_cases(cfg);
  const auto paper = net::FptParameters::initialize(net::FptArchitecture::paper(), 801);
  ex::MethodSettings desk_settings, paper_settings;
  desk_settings.fpt = &desk;
  paper_settings.fpt = &paper;
  std::vector<double> fpt, fpt_paper, icp, cpd;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    fpt.push_back(ex::run_case(ex::Method::fpt, cases[i], std::nullopt, desk_settings).report.seconds);
    fpt_paper.push_back(ex::run_case(ex::Method::fpt, cases[i], std::nullopt, paper_settings).report.seconds);
    icp.push_back(ex::run_case(ex::Method::icp, cases[i], std::nullopt, desk_settings).report.seconds);
    if (i < 3) cpd.push_back(ex::run_case(ex::Method::cpd, cases[i], std::nullopt, desk_settings).report.seconds);
  }
  const double f = median(fpt), fp = median(fpt_paper), i = median(icp), c = median(cpd);
  return {f < i && i < c && f < 1.0 && fp < 1.0,
          fmt("median s per pair at 1024 points: FPT %.4f < ICP %.4f < CPD %.2f; paper-width FPT %.3f s", f, i, c, fp)};
}

// --- 9 ---------------------------------------------------------------------------

double oracle_nn(const Points& from, Eigen::Index i, const Points& to) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < to.rows(); ++j) {
    const double dx = from(i, 0) - to(j, 0), dy = from(i, 1) - to(j, 1), dz = from(i, 2) - to(j, 2);
    best = std::min(best, dx * dx + dy * dy + dz * dz);
  }
  return std::sqrt(best);
}

double oracle_chamfer(const Points& a, const Points& b) {
  double ab = 0.0, ba = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) ab += oracle_nn(a, i, b);
  for (Eigen::Index j = 0; j < b.rows(); ++j) ba += oracle_nn(b, j, a);
  return ab / static_cast<double>(a.rows()) + ba / static_cast<double>(b.rows());
}

double oracle_hausdorff(const Points& a, const Points& b) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) h = std::max(h, oracle_nn(a, i, b));
  for (Eigen::Index j = 0; j < b.rows(); ++j) h = std::max(h, oracle_nn(b, j, a));
  return h;
}

double oracle_tre(const Points& s, const Points& t) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double dx = s(i, 0) - t(i, 0), dy = s(i, 1) - t(i, 1), dz = s(i, 2) - t(i, 2);
    total += dx * dx + dy * dy + dz * dz;
  }
  return std::sqrt(total / static_cast<double>(s.rows()));
}

Points random_points(Rng& rng, std::size_t n, bool grid) {
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (int k = 0; k < 3; ++k) {
      // Grid coordinates produce many exact ties.
      p(i, k) = grid ? std::floor(uniform(rng, 0.0, 4.0)) : uniform(rng, -2.0, 2.0);
    }
  }
  return p;
}

Outcome metric_oracles() {
  Rng rng(900);
  std::size_t agree = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const bool grid = inst % 4 == 0;
    const auto n = static_cast<std::size_t>(uniform(rng, 1.0, 200.0));
    const auto m = static_cast<std::size_t>(uniform(rng, 1.0, 200.0));
    const Points a = random_points(rng, n, grid), b = random_points(rng, m, grid);
    const Points lm_t = random_points(rng, n, grid);
    const bool ok = chamfer_distance(PointSet(a), PointSet(b)) == oracle_chamfer(a, b) &&
                    hausdorff_distance(PointSet(a), PointSet(b)) == oracle_hausdorff(a, b) &&
                    target_registration_error({a, lm_t}) == oracle_tre(a, lm_t);
    agree += ok ? 1 : 0;
  }

  const Points cloud = random_points(rng, 2000, false);
  const Points lattice = random_points(rng, 500, true);
  const NeighborIndex index(cloud), lattice_index(lattice);
  std::size_t queries_ok = 0;
  for (int q = 0; q < 10000; ++q) {
    const bool on_lattice = q % 2 == 1;
    const Points query = random_points(rng, 1, on_lattice);
    const Vec3 x = query.row(0).transpose();
    const Points& pts = on_lattice ? lattice : cloud;
    const auto hit = (on_lattice ? lattice_index : index).nearest(x);
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < pts.rows(); ++j) {
      const double dx = x[0] - pts(j, 0), dy = x[1] - pts(j, 1), dz = x[2] - pts(j, 2);
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<std::size_t>(j);
      }
    }
    queries_ok += hit.index == best && hit.distance == std::sqrt(best_d2) ? 1 : 0;
  }
  return {agree == 100 && queries_ok == 10000,
          fmt("%zu/100 metric instances exact, %zu/10000 neighbour queries exact", agree, queries_ok)};
}

// --- 10 --------------------------------------------------------------------------

Outcome checkpoint_round_trip(const net::FptParameters& params) {
  const auto path = std::filesystem::temp_directory_path() / "fptreg_acceptance.ckpt";
  net::save_checkpoint(params, path);
  const auto loaded = net::load_checkpoint(path, params.architecture());
  bool exact = loaded.arrays().size() == params.arrays().size();
  for (std::size_t i = 0; exact && i < params.arrays().size(); ++i) {
    const auto& a = params.arrays()[i].values;
    const auto& b = loaded.arrays()[i].values;
    exact = a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
  std::filesystem::remove(path);

  const auto bytes = net::encode_checkpoint(params);
  auto corrupt = bytes;
  corrupt[corrupt.size() / 3] ^= 0x01;
  auto version = bytes;
  const std::uint32_t v = net::FptParameters::format_version + 7;
  std::memcpy(version.data() + 8, &v, sizeof v);

  auto caught = [](const std::vector<char>& b) -> std::string {
    try {
      net::decode_checkpoint(b);
    } catch (const VersionMismatchError&) {
      return "version";
    } catch (const CorruptCheckpointError&) {
      return "corrupt";
    } catch (const std::exception&) {
      return "other";
    }
    return "accepted";
  };
  const std::string c = caught(corrupt), ver = caught(version);
  return {exact && c == "corrupt" && ver == "version",
          fmt("round trip %s; corrupted file -> %s error, version mismatch -> %s error",
              exact ? "bit-exact" : "NOT exact", c.c_str(), ver.c_str())};
}

}  // namespace

int main() {
  std::vector<std::pair<int, Outcome>> results;
  auto record = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("[%s] criterion %d, %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    results.emplace_back(id, o);
  };

  record(1, "gradient correctness", gradient_check);
  record(2, "permutation invariance",
         [] { return permutation_invariance(testing::perturbed(net::FptArchitecture::desk(), 200, 0.05)); });
  record(3, "ICP rigid recovery", icp_recovery);
  record(4, "CPD behaviour", cpd_behaviour);

  std::fprintf(stderr, "pre-training FPT (%zu steps, batch %zu, %zu points)\n", train_steps, train_batch, train_points);
  const Pretrained model = pretrain();
  record(5, "FPT synthetic registration", [&] { return synthetic_registration(model); });

  const auto cases = ex::synth_cases(case_family());
  const auto train = ex::cases_in_split(cases, "train"), test = ex::cases_in_split(cases, "test");
  net::FptParameters tuned;
  record(6, "fine-tuning ordering", [&] {
    tuned = finetune(model.params, train, std::nullopt, 610);
    return finetune_ordering(model.params, tuned, train, test);
  });
  record(7, "sparse-target robustness", [&] { return sparse_robustness(model.params, tuned, train, test); });
  record(8, "inference speed ordering", [&] { return speed_ordering(model.params); });
  record(9, "metric oracles", metric_oracles);
  record(10, "checkpoint round trip", [&] { return checkpoint_round_trip(model.params); });

  std::size_t passed = 0;
  for (const auto& [id, o] : results) passed += o.pass ? 1 : 0;
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
