#include "fptreg/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fptreg/errors.hpp"

namespace fptreg {

std::string to_string(Frame frame) {
  switch (frame) {
    case Frame::source: return "source";
    case Frame::target: return "target";
    case Frame::transformed: return "transformed";
  }
  return "unknown";
}

std::string to_string(Unit unit) { return unit == Unit::mm ? "mm" : "normalized"; }

Vec3 PointSet::centroid() const {
  if (empty()) throw EmptyInputError("centroid of an empty point set");
  return points.colwise().mean().transpose();
}

void PointSet::validate() const {
  if (empty()) throw EmptyInputError("point set is empty");
  if (!points.allFinite()) throw InvariantError("point set has non-finite coordinates");
  if (!labels.empty() && labels.size() != size()) {
    throw InvariantError("point set labels do not match the point count");
  }
}

void LandmarkPairs::validate() const {
  if (source.rows() != target.rows()) {
    throw PairingError("landmark count mismatch: " + std::to_string(source.rows()) + " source vs " +
                       std::to_string(target.rows()) + " target");
  }
  if (source.rows() == 0) throw PairingError("no landmark pairs");
}

// --- rigid transforms ---------------------------------------------------------

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(ortho <= 1e-9) || !(std::abs(det - 1.0) <= 1e-9) || !translation.allFinite()) {
    throw InvariantError("rotation is not orthonormal with det +1 (orthogonality error " +
                         std::to_string(ortho) + ", det " + std::to_string(det) + ")");
  }
}

RigidTransform RigidTransform::from_euler_xyz(const Vec3& angles, const Vec3& t) {
  const Mat3 r = (Eigen::AngleAxisd(angles.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(angles.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(angles.x(), Vec3::UnitX()))
                     .toRotationMatrix();
  return {r, t};
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle, const Vec3& t) {
  return {Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), t};
}

Points RigidTransform::apply(const Points& p) const {
  Points out = p * rotation_.transpose();
  out.rowwise() += translation_.transpose();
  return out;
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -(rt * translation_)};
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation_ * b.rotation_, a.rotation_ * b.translation_ + a.translation_};
}

PointSet apply_rigid(const RigidTransform& t, const PointSet& p) {
  PointSet out = p;
  out.points = t.apply(p.points);
  out.frame = Frame::transformed;
  return out;
}

double rotation_angle_deg(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

// --- thin-plate splines -------------------------------------------------------

TpsField fit_tps(const Points& controls, const Points& displaced) {
  const Eigen::Index k = controls.rows();
  if (displaced.rows() != k) {
    throw DimensionError("fit_tps: " + std::to_string(k) + " controls but " +
                         std::to_string(displaced.rows()) + " displaced positions");
  }
  if (k < 4) throw SingularSystemError("fit_tps: need at least 4 control points, got " + std::to_string(k));

  Eigen::MatrixXd p(k, 4);
  p.col(0).setOnes();
  p.rightCols(3) = controls;
  // Coplanar (or collinear) controls leave the affine part undetermined.
  Eigen::MatrixXd centered = controls.rowwise() - controls.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto sv = svd.singularValues();
  if (sv(2) <= 1e-10 * std::max(1.0, sv(0))) {
    throw SingularSystemError("fit_tps: control points are coplanar");
  }

  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(k + 4, k + 4);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      system(i, j) = (controls.row(i) - controls.row(j)).norm();
    }
  }
  system.topRightCorner(k, 4) = p;
  system.bottomLeftCorner(4, k) = p.transpose();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k + 4, 3);
  rhs.topRows(k) = displaced;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible()) throw SingularSystemError("fit_tps: singular spline system");
  Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw SingularSystemError("fit_tps: non-finite spline coefficients");

  TpsField f;
  f.controls_ = controls;
  f.displacements_ = displaced - controls;
  f.kernel_ = sol.topRows(k);
  f.affine_ = sol.bottomRows(4).transpose();
  return f;
}

Vec3 TpsField::evaluate(const Vec3& x) const {
  Vec3 out = affine_.col(0) + affine_.rightCols<3>() * x;
  for (Eigen::Index i = 0; i < controls_.rows(); ++i) {
    out += kernel_.row(i).transpose() * (x - controls_.row(i).transpose()).norm();
  }
  return out;
}

Points TpsField::evaluate(const Points& p) const {
  Points out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.row(i) = evaluate(Vec3(p.row(i).transpose())).transpose();
  return out;
}

double TpsField::side_condition_residual() const {
  Eigen::MatrixXd p(controls_.rows(), 4);
  p.col(0).setOnes();
  p.rightCols(3) = controls_;
  return (p.transpose() * kernel_).cwiseAbs().maxCoeff();
}

PointSet apply_tps(const TpsField& field, const PointSet& p) {
  PointSet out = p;
  out.points = field.evaluate(p.points);
  out.frame = Frame::transformed;
  return out;
}

// --- nearest neighbours -------------------------------------------------------

NeighborIndex::NeighborIndex(Points points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw EmptyInputError("neighbour index over an empty set");
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nodes_.reserve(size());
  root_ = build(order, 0, order.size(), 0);
}

std::int32_t NeighborIndex::build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  // Split on the axis of largest extent.
  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 mx = -mn;
  for (std::size_t i = lo; i < hi; ++i) {
    const Vec3 p = points_.row(static_cast<Eigen::Index>(order[i])).transpose();
    mn = mn.cwiseMin(p);
    mx = mx.cwiseMax(p);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(mid),
                   order.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t a, std::size_t b) {
                     return points_(static_cast<Eigen::Index>(a), axis) < points_(static_cast<Eigen::Index>(b), axis);
                   });
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({order[mid], axis});
  const std::int32_t left = build(order, lo, mid, depth + 1);
  const std::int32_t right = build(order, mid + 1, hi, depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void NeighborIndex::search(std::int32_t node_id, const Vec3& q, std::size_t& best, double& best_d2) const {
  if (node_id < 0) return;
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const auto row = static_cast<Eigen::Index>(node.point);
  const double d2 = squared_distance(q.data(), &points_(row, 0));
  if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
    best_d2 = d2;
    best = node.point;
  }
  const double diff = q[node.axis] - points_(row, node.axis);
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  search(near, q, best, best_d2);
  // <= keeps equal-distance candidates with a lower index reachable.
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

NeighborIndex::Hit NeighborIndex::nearest(const Vec3& q) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

NeighborIndex::Hit brute_force_nearest(const Points& points, const Vec3& q) {
  if (points.rows() == 0) throw EmptyInputError("nearest neighbour in an empty set");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double d2 = squared_distance(q.data(), &points(i, 0));
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<std::size_t>(i);
    }
  }
  return {best, std::sqrt(best_d2)};
}

// --- metrics ------------------------------------------------------------------

namespace {

void check_metric_inputs(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw EmptyInputError("distance metric on an empty point set");
  if (a.unit != b.unit) {
    throw UnitError("unit mismatch: " + to_string(a.unit) + " vs " + to_string(b.unit));
  }
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> nearest_distances(const Points& from, const NeighborIndex& to) {
  std::vector<double> out(static_cast<std::size_t>(from.rows()));
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = to.nearest(from.row(i).transpose()).distance;
  }
  return out;
}

double chamfer_distance(const PointSet& a, const PointSet& b) {
  check_metric_inputs(a, b);
  const NeighborIndex ia(a.points), ib(b.points);
  return mean_of(nearest_distances(a.points, ib)) + mean_of(nearest_distances(b.points, ia));
}

double chamfer_squared_distance(const PointSet& a, const PointSet& b) {
  check_metric_inputs(a, b);
  const NeighborIndex ia(a.points), ib(b.points);
  auto sq = [](std::vector<double> d) {
    for (double& v : d) v *= v;
    return d;
  };
  return mean_of(sq(nearest_distances(a.points, ib))) + mean_of(sq(nearest_distances(b.points, ia)));
}

double directed_hausdorff(const PointSet& from, const PointSet& to) {
  check_metric_inputs(from, to);
  const auto d = nearest_distances(from.points, NeighborIndex(to.points));
  return *std::max_element(d.begin(), d.end());
}

double hausdorff_distance(const PointSet& a, const PointSet& b) {
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

double target_registration_error(const LandmarkPairs& lm) {
  lm.validate();
  double total = 0.0;
  for (Eigen::Index i = 0; i < lm.source.rows(); ++i) {
    total += squared_distance(&lm.source(i, 0), &lm.target(i, 0));
  }
  return std::sqrt(total / static_cast<double>(lm.source.rows()));
}

}  // namespace fptreg
