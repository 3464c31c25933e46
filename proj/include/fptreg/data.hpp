#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fptreg/geometry.hpp"

namespace fptreg::data {

// --- meshes -------------------------------------------------------------------

struct TriangleMesh {
  Points vertices;
  std::vector<std::array<std::size_t, 3>> faces;

  double face_area(std::size_t f) const;
  double total_area() const;
};

// Parses an OFF mesh. Polygons with more than three corners are split into a
// triangle fan; zero-area triangles are dropped. Throws ParseError carrying
// the offending line number.
TriangleMesh parse_off(std::istream& in);
TriangleMesh load_off_mesh(const std::filesystem::path& path);

// n points, area-weighted over triangles and uniform within each triangle.
PointSet sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

// --- synthetic shapes ------------------------------------------------------------

enum class ShapeFamily { ellipsoid, blob };

ShapeFamily parse_family(const std::string& name);
std::string to_string(ShapeFamily family);

struct ShapeParams {
  std::size_t n = 1024;
  // Ellipsoid semi-axes; for blobs, the stretch applied after perturbation.
  Vec3 semi_axes = Vec3::Ones();
  // Blob only: the radius is 1 + amplitude * s(u) with |s| <= 1 built from
  // `terms` low-frequency cosine waves over the unit direction u.
  double amplitude = 0.2;
  std::size_t terms = 4;

  void validate() const;
};

// Points on the surface of a random member of the family; the blob's shape
// coefficients and the samples are both derived from `seed`.
PointSet synth_shape(ShapeFamily family, const ShapeParams& params, std::uint64_t seed);

// Radius function of the blob drawn with `seed` (exposed for landmark
// placement inside the shape).
class BlobSurface {
 public:
  BlobSurface(const ShapeParams& params, std::uint64_t seed);
  // Surface point in direction u (unit vector).
  Vec3 surface_point(const Vec3& u) const;
  double radius(const Vec3& u) const;

 private:
  struct Wave {
    Vec3 direction;
    double frequency;
    double phase;
    double weight;
  };
  ShapeParams params_;
  std::vector<Wave> waves_;
};

// --- normalisation ------------------------------------------------------------

// normalized = (p - offset) / scale
struct NormalizationRecord {
  Vec3 offset = Vec3::Zero();
  double scale = 1.0;

  Points apply(const Points& p) const;
  Points invert(const Points& q) const;
};

struct Normalized {
  PointSet points;
  NormalizationRecord record;
};

// Centres on the centroid and divides by the largest absolute coordinate, so
// the result lies in [-1, 1]^3 and touches the boundary. Isotropic.
Normalized normalize_to_unit_box(const PointSet& p);

// --- augmentation -------------------------------------------------------------

struct AugmentationConfig {
  double rotation_deg = 45.0;  // per-axis angles uniform in [-r, r]
  double displacement = 1.0;   // per-axis shifts uniform in [-d, d]
  double tps_sigma = 0.1;      // Gaussian shift of each control point
  std::size_t grid = 3;        // grid x grid x grid controls over [-1, 1]^3
};

// The known transform that produced the source, kept for validation.
struct GroundTruth {
  std::optional<TpsField> tps;
  RigidTransform rigid;

  Points apply(const Points& p) const;
};

struct AugmentedPair {
  PointSet target;
  PointSet source;
  GroundTruth truth;
};

TpsField random_tps(std::size_t grid, double sigma, std::mt19937_64& rng);
RigidTransform random_rigid(double rotation_deg, double displacement, std::mt19937_64& rng);

// target = p; source = displaced(rotated(tps(p))).
AugmentedPair augment_pair(const PointSet& p, const AugmentationConfig& cfg, std::uint64_t seed);

// --- sparse targets -------------------------------------------------------------

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

// Optional in-plane visibility wedge: a point is seen only when the angle
// between (projection - plane point) and `direction` is at most half_angle_deg.
struct Sector {
  Vec3 direction = Vec3::UnitY();
  double half_angle_deg = 90.0;
};

struct SparseSliceConfig {
  Plane sagittal{Vec3::Zero(), Vec3::UnitX()};
  Plane transverse{Vec3::Zero(), Vec3::UnitZ()};
  double tau = 0.05;
  std::optional<Sector> sagittal_sector;
  std::optional<Sector> transverse_sector;

  void validate() const;
};

// Keeps the points within tau of either plane. The returned labels index the
// input (or carry the input's labels through). Throws VisibilityError when no
// point survives.
PointSet biplane_sparse(const PointSet& p, const SparseSliceConfig& cfg);

// --- splits -------------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

// Splits by subject: `subjects[i]` names the subject of `ids[i]` (empty means
// every item is its own subject). About `fraction` of the subjects go to train.
DatasetSplit split_dataset(const std::vector<std::string>& ids, const std::vector<std::string>& subjects,
                           double fraction, std::uint64_t seed);

// --- point and landmark files -------------------------------------------------

Points read_xyz(const std::filesystem::path& path);
void write_xyz(const std::filesystem::path& path, const Points& points);
Points read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const Points& points);
// Dispatches on the extension (.ply, otherwise XYZ).
Points read_points(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const Points& points);

}  // namespace fptreg::data
