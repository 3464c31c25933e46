#pragma once

// Synthetic registration cases, the per-method registration driver and the
// benchmark tables built on top of it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fptreg/classical.hpp"
#include "fptreg/data.hpp"
#include "fptreg/geometry.hpp"
#include "fptreg/model.hpp"

namespace fptreg::experiment {

enum class Method { center, icp, cpd, fpt, fpt_finetuned };

// Fixed reporting order.
inline constexpr std::array<Method, 5> method_order{Method::center, Method::icp, Method::cpd, Method::fpt,
                                                     Method::fpt_finetuned};

std::string to_string(Method m);
// Throws UsageError listing the valid names.
Method parse_method(std::string_view name);
std::string valid_method_names();

// --- synthetic cases ------------------------------------------------------------

// Source: a blob surface in mm. Target: an independent sampling of the same
// surface moved by a TPS warp and a small rigid motion, both defined in the
// source's normalized frame. Landmarks lie on and inside the surface.
struct SynthConfig {
  std::size_t cases = 20;
  std::size_t subjects = 0;  // 0: one subject per case
  std::size_t points = 1024;
  data::ShapeParams shape{1024, Vec3(25.0, 20.0, 18.0), 0.2, 4};
  double tps_sigma = 0.1;
  double rotation_deg = 5.0;
  double displacement = 0.1;  // normalized units
  std::size_t surface_landmarks = 6;
  std::size_t interior_landmarks = 4;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Case {
  std::string id;
  std::string subject;
  std::string split;  // "train" or "test"
  PointSet source;    // mm
  PointSet target;    // mm
  LandmarkPairs landmarks;
  // Source-derived; every method runs on both sets mapped through it.
  data::NormalizationRecord record;
  // Normalized-frame map taking source geometry onto the target.
  data::GroundTruth truth;
};

std::vector<Case> synth_cases(const SynthConfig& cfg);

// Directory layout: manifest.json plus one sub-directory per case holding
// source.xyz, target.xyz, source_landmarks.xyz, target_landmarks.xyz and
// truth.json.
void write_dataset(const std::filesystem::path& dir, const std::vector<Case>& cases, const SynthConfig& cfg);
std::vector<Case> load_dataset(const std::filesystem::path& dir);

std::vector<Case> cases_in_split(const std::vector<Case>& cases, std::string_view split);

// --- registration ---------------------------------------------------------------

struct MethodSettings {
  classical::IcpConfig icp;
  classical::CpdConfig cpd;
  const net::FptParameters* fpt = nullptr;
  const net::FptParameters* fpt_finetuned = nullptr;
};

struct Registration {
  PointSet transformed;
  std::optional<Points> landmarks;  // warped source landmarks, when given
  double seconds = 0.0;             // the registration call alone
};

// Runs one method in the coordinates given. Throws UsageError when an FPT
// method is requested without parameters.
Registration register_pair(Method method, const PointSet& source, const PointSet& target,
                           const Points* source_landmarks, const MethodSettings& settings);

inline constexpr std::string_view chamfer_definition =
    "two-way: mean nearest-neighbour Euclidean distance in each direction, summed";

struct RegistrationReport {
  std::string case_id;
  std::string method;
  std::string variant = "complete";  // or "sparse"
  double seconds = 0.0;
  double chamfer = 0.0;
  double hausdorff = 0.0;
  std::optional<double> tre;
  Unit unit = Unit::normalized;
  std::size_t source_points = 0;
  std::size_t target_points = 0;  // points the method was given
};

struct CaseRun {
  RegistrationReport report;
  PointSet transformed;  // mm
  PointSet target_used;  // mm; the sparse target in the sparse variant
};

// Normalizes with the case record, optionally thins the target to biplane
// slabs, registers, and measures in mm against the complete target.
CaseRun run_case(Method method, const Case& c, const std::optional<data::SparseSliceConfig>& sparse,
                 const MethodSettings& settings);

// Same pipeline for a user-supplied pair; metrics are in the input units.
CaseRun run_files(Method method, const PointSet& source, const PointSet& target, const LandmarkPairs* landmarks,
                  const MethodSettings& settings, Unit unit);

// --- benchmark ------------------------------------------------------------------

struct BenchmarkConfig {
  std::vector<Method> methods{method_order.begin(), method_order.end()};
  bool complete = true;
  bool sparse = false;
  data::SparseSliceConfig sparse_config;
  MethodSettings settings;
  // When set, per-case transformed sets, targets and JSON reports go here.
  std::optional<std::filesystem::path> output_dir;
};

struct BenchmarkRow {
  RegistrationReport report;
  bool failed = false;
  bool numerical = false;  // the failure was a NumericalError
  std::string error;
};

// One row per variant, case and method, in (variant, case, method) order with
// methods in method_order. A failing case is recorded and the run continues.
std::vector<BenchmarkRow> run_benchmark(const std::vector<Case>& cases, const BenchmarkConfig& cfg);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};
Stat describe(const std::vector<double>& values);

struct SummaryRow {
  std::string variant;
  std::string method;
  std::size_t cases = 0;
  std::size_t failures = 0;
  Stat seconds, chamfer, hausdorff, tre;
};
std::vector<SummaryRow> summarize(const std::vector<BenchmarkRow>& rows);

// Column layout: variant,case,method,status,seconds,chamfer,hausdorff,tre,
// unit,source_points,target_points,error
void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);
std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::string format_summary(const std::vector<SummaryRow>& rows);

std::string report_json(const RegistrationReport& r);

// --- training corpora -----------------------------------------------------------

// Shapes to be normalized and augmented on the fly.
std::vector<net::TrainingItem> shape_corpus(data::ShapeFamily family, const data::ShapeParams& params,
                                            std::size_t count, std::uint64_t seed);
// Surface samples of every .off mesh under dir, in sorted path order.
std::vector<net::TrainingItem> mesh_corpus(const std::filesystem::path& dir, std::size_t points, std::uint64_t seed);
// Fixed (source, target) pairs in each case's normalized frame.
std::vector<net::TrainingItem> case_corpus(const std::vector<Case>& cases,
                                           const std::optional<data::SparseSliceConfig>& sparse);

}  // namespace fptreg::experiment
