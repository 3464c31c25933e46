#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fptreg {

// N x 3, one point per row. Row-major so the buffer can be handed to the
// tensor engine without reshuffling.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Frame { source, target, transformed };
enum class Unit { normalized, mm };

std::string to_string(Frame frame);
std::string to_string(Unit unit);

struct PointSet {
  Points points;
  Frame frame = Frame::source;
  Unit unit = Unit::normalized;
  // Optional per-point provenance (e.g. the index in the set a subset was
  // taken from). Either empty or one entry per point.
  std::vector<std::size_t> labels;

  PointSet() = default;
  explicit PointSet(Points p, Frame f = Frame::source, Unit u = Unit::normalized)
      : points(std::move(p)), frame(f), unit(u) {}

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  bool empty() const { return points.rows() == 0; }
  Vec3 point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
  Vec3 centroid() const;

  // Throws EmptyInputError / InvariantError when the set is unusable as a
  // registration input.
  void validate() const;
};

struct LandmarkPairs {
  Points source;
  Points target;

  // Throws PairingError on count mismatch or empty sets.
  void validate() const;
};

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  // Throws InvariantError unless rotation is orthonormal with det +1 (1e-9).
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  // Rotation about x, then y, then z (angles in radians), then translation.
  static RigidTransform from_euler_xyz(const Vec3& angles, const Vec3& t);
  static RigidTransform from_axis_angle(const Vec3& axis, double angle, const Vec3& t);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& x) const { return rotation_ * x + translation_; }
  Points apply(const Points& p) const;
  RigidTransform inverse() const;
  // (a * b)(x) = a(b(x))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

PointSet apply_rigid(const RigidTransform& t, const PointSet& p);

// Angle of the relative rotation between two rotation matrices, in degrees.
double rotation_angle_deg(const Mat3& a, const Mat3& b);

// Interpolating 3-D thin-plate spline with kernel U(r) = r:
//   f(x) = A [1; x] + sum_i w_i |x - c_i|
class TpsField {
 public:
  const Points& control_points() const { return controls_; }
  const Points& control_displacements() const { return displacements_; }
  // 3 x 4: columns are the constant term then the x, y, z coefficients.
  const Eigen::Matrix<double, 3, 4>& affine() const { return affine_; }
  // K x 3 kernel weights.
  const Points& kernel_coefficients() const { return kernel_; }

  Vec3 evaluate(const Vec3& x) const;
  Points evaluate(const Points& p) const;

  // Largest |P^T W| entry, P = [1 | controls]; zero for an exact solve.
  double side_condition_residual() const;

 private:
  friend TpsField fit_tps(const Points& controls, const Points& displaced);
  Points controls_;
  Points displacements_;
  Eigen::Matrix<double, 3, 4> affine_;
  Points kernel_;
};

// Throws SingularSystemError for fewer than 4 or coplanar controls.
TpsField fit_tps(const Points& controls, const Points& displaced);
PointSet apply_tps(const TpsField& field, const PointSet& p);

// Exact nearest-neighbour search over a fixed point set with a kd-tree.
// Distances are compared as sums of squared coordinate differences, and ties
// are resolved to the lowest point index, exactly as a brute-force scan would.
class NeighborIndex {
 public:
  struct Hit {
    std::size_t index;
    double distance;
  };

  // Throws EmptyInputError for an empty set.
  explicit NeighborIndex(Points points);

  Hit nearest(const Vec3& q) const;
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  const Points& points() const { return points_; }

 private:
  struct Node {
    std::size_t point;  // splitting point
    int axis;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi, int depth);
  void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

  Points points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

// Brute-force nearest neighbour; the reference the index is tested against.
NeighborIndex::Hit brute_force_nearest(const Points& points, const Vec3& q);

// Squared Euclidean distance written out term by term; shared by the index
// and every brute-force oracle so that distances compare bit-for-bit.
inline double squared_distance(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Nearest-neighbour distances from each point of `from` into `to`.
std::vector<double> nearest_distances(const Points& from, const NeighborIndex& to);

// Mean nearest-neighbour Euclidean distance in each direction, summed.
double chamfer_distance(const PointSet& a, const PointSet& b);
// Mean nearest-neighbour squared distance in each direction, summed
// (the training objective form).
double chamfer_squared_distance(const PointSet& a, const PointSet& b);
double directed_hausdorff(const PointSet& from, const PointSet& to);
double hausdorff_distance(const PointSet& a, const PointSet& b);
// Root-mean-square distance between paired landmarks.
double target_registration_error(const LandmarkPairs& lm);

}  // namespace fptreg
