#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fptreg/errors.hpp"
#include "fptreg/geometry.hpp"

using namespace fptreg;

namespace {

Points random_points(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (int k = 0; k < 3; ++k) p(i, k) = u(rng);
  }
  return p;
}

PointSet set(Points p) { return PointSet(std::move(p)); }

// Loop oracles, independent of NeighborIndex.
double oracle_nn(const Points& from, Eigen::Index i, const Points& to) {
  double best = INFINITY;
  for (Eigen::Index j = 0; j < to.rows(); ++j) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d += (from(i, k) - to(j, k)) * (from(i, k) - to(j, k));
    best = std::min(best, std::sqrt(d));
  }
  return best;
}

}  // namespace

TEST_CASE("chamfer examples") {
  const Points p = random_points(30, 1);
  CHECK(chamfer_distance(set(p), set(p)) == 0.0);
  Points a(1, 3), b(2, 3);
  a << 0, 0, 0;
  b << 1, 0, 0, 3, 0, 0;
  CHECK(chamfer_distance(set(a), set(b)) == doctest::Approx(3.0));
  const Points c = random_points(40, 2), d = random_points(25, 3);
  CHECK(chamfer_distance(set(c), set(d)) == chamfer_distance(set(d), set(c)));
}

TEST_CASE("hausdorff examples") {
  const Points p = random_points(30, 4);
  CHECK(hausdorff_distance(set(p), set(p)) == 0.0);
  Points a(1, 3), b(2, 3);
  a << 0, 0, 0;
  b << 1, 0, 0, 3, 0, 0;
  CHECK(hausdorff_distance(set(a), set(b)) == doctest::Approx(3.0));
  const Points c = random_points(40, 5), d = random_points(25, 6);
  const double h = hausdorff_distance(set(c), set(d));
  CHECK(h >= directed_hausdorff(set(c), set(d)));
  CHECK(h >= directed_hausdorff(set(d), set(c)));
  CHECK(h == hausdorff_distance(set(d), set(c)));
}

TEST_CASE("metric input checks") {
  const PointSet a(random_points(5, 7)), empty;
  CHECK_THROWS_AS(chamfer_distance(a, empty), EmptyInputError);
  CHECK_THROWS_AS(hausdorff_distance(empty, a), EmptyInputError);
  PointSet mm(random_points(5, 8), Frame::target, Unit::mm);
  CHECK_THROWS_AS(chamfer_distance(a, mm), UnitError);
  CHECK_THROWS_AS(hausdorff_distance(a, mm), UnitError);
}

TEST_CASE("metrics match loop oracles") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Points a = random_points(17 + seed, 100 + seed), b = random_points(23, 200 + seed);
    double ab = 0.0, ba = 0.0, hab = 0.0, hba = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      ab += oracle_nn(a, i, b);
      hab = std::max(hab, oracle_nn(a, i, b));
    }
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      ba += oracle_nn(b, j, a);
      hba = std::max(hba, oracle_nn(b, j, a));
    }
    CHECK(chamfer_distance(set(a), set(b)) == doctest::Approx(ab / a.rows() + ba / b.rows()).epsilon(1e-13));
    CHECK(hausdorff_distance(set(a), set(b)) == doctest::Approx(std::max(hab, hba)).epsilon(1e-13));
  }
}

TEST_CASE("squared chamfer is the mean of squared nearest distances") {
  Points a(1, 3), b(2, 3);
  a << 0, 0, 0;
  b << 1, 0, 0, 3, 0, 0;
  CHECK(chamfer_squared_distance(set(a), set(b)) == doctest::Approx(1.0 + 5.0));
}

TEST_CASE("metrics are invariant under a shared rigid motion") {
  const Points a = random_points(50, 9), b = random_points(60, 10);
  const auto t = RigidTransform::from_axis_angle(Vec3(1, 2, 3), 0.7, Vec3(0.3, -1, 2));
  CHECK(chamfer_distance(set(t.apply(a)), set(t.apply(b))) == doctest::Approx(chamfer_distance(set(a), set(b))).epsilon(1e-9));
  CHECK(hausdorff_distance(set(t.apply(a)), set(t.apply(b))) ==
        doctest::Approx(hausdorff_distance(set(a), set(b))).epsilon(1e-9));
}

TEST_CASE("chamfer is zero exactly when the sets cover each other") {
  Points a = random_points(10, 11);
  Points b(20, 3);
  b << a, a;
  CHECK(chamfer_distance(set(a), set(b)) == 0.0);
  b(3, 0) += 1e-6;
  CHECK(chamfer_distance(set(a), set(b)) > 0.0);
}

TEST_CASE("target registration error examples") {
  Points s = random_points(4, 12);
  CHECK(target_registration_error({s, s}) == 0.0);
  Points a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 0, 2, 0;
  CHECK(target_registration_error({a, b}) == doctest::Approx(2.0));
  Points c(2, 3), d(2, 3);
  c << 0, 0, 0, 0, 0, 0;
  d << 3, 0, 0, 0, 4, 0;
  CHECK(target_registration_error({c, d}) == doctest::Approx(std::sqrt(12.5)));
  CHECK_THROWS_AS(target_registration_error({c, a}), PairingError);
}

TEST_CASE("target registration error equals an explicit RMS loop") {
  const Points a = random_points(31, 13), b = random_points(31, 14);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) acc += (a.row(i) - b.row(i)).squaredNorm();
  CHECK(target_registration_error({a, b}) == doctest::Approx(std::sqrt(acc / 31.0)).epsilon(1e-14));
}

TEST_CASE("rigid transforms") {
  const Points p = random_points(20, 15);
  CHECK(RigidTransform::identity().apply(p) == p);

  const auto rz = RigidTransform::from_axis_angle(Vec3::UnitZ(), M_PI / 2, Vec3::Zero());
  const Vec3 q = rz.apply(Vec3(1, 0, 0));
  CHECK(q.x() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(q.y() == doctest::Approx(1.0));
  CHECK(q.z() == doctest::Approx(0.0));

  const auto t = RigidTransform::from_euler_xyz(Vec3(0.3, -0.2, 0.9), Vec3(1, 2, 3));
  const Points back = (t.inverse() * t).apply(p);
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);

  const Points moved = t.apply(p);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      CHECK(std::abs((moved.row(i) - moved.row(j)).norm() - (p.row(i) - p.row(j)).norm()) < 1e-9);
    }
  }
}

TEST_CASE("rigid transform rejects an invalid rotation") {
  Mat3 r = Mat3::Identity();
  r(0, 0) = -1.0;  // reflection
  CHECK_THROWS_AS(RigidTransform(r, Vec3::Zero()), InvariantError);
  Mat3 s = Mat3::Identity() * 1.01;
  CHECK_THROWS_AS(RigidTransform(s, Vec3::Zero()), InvariantError);
}

TEST_CASE("rotation_angle_deg") {
  const auto a = RigidTransform::from_axis_angle(Vec3(1, 1, 0), 0.5, Vec3::Zero());
  CHECK(rotation_angle_deg(a.rotation(), Mat3::Identity()) == doctest::Approx(0.5 * 180.0 / M_PI));
}

namespace {

Points grid3() {
  Points c(27, 3);
  Eigen::Index r = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c.row(r++) << i - 1.0, j - 1.0, k - 1.0;
  return c;
}

}  // namespace

TEST_CASE("tps with zero displacement is the identity") {
  const Points c = grid3();
  const auto f = fit_tps(c, c);
  const Points q = random_points(50, 16, 1.5);
  CHECK((f.evaluate(q) - q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tps reproduces a pure translation everywhere") {
  const Points c = grid3();
  const Vec3 shift(0.2, -0.4, 0.1);
  const Points d = c.rowwise() + shift.transpose();
  const auto f = fit_tps(c, d);
  const Points q = random_points(30, 17, 2.0);
  const Points moved = q.rowwise() + shift.transpose();
  CHECK((f.evaluate(q) - moved).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(f.kernel_coefficients().cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tps interpolates a random grid perturbation and satisfies the side conditions") {
  const Points c = grid3();
  const Points d = c + 0.1 * random_points(27, 18);
  const auto f = fit_tps(c, d);
  CHECK((f.evaluate(c) - d).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(f.side_condition_residual() < 1e-8);

  // Off-grid values against a direct kernel-sum oracle.
  const Points q = random_points(20, 19);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Vec3 v = f.affine().col(0);
    for (int k = 0; k < 3; ++k) v += f.affine().col(k + 1) * q(i, k);
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      v += f.kernel_coefficients().row(j).transpose() * (q.row(i) - c.row(j)).norm();
    }
    CHECK((f.evaluate(Vec3(q.row(i).transpose())) - v).norm() < 1e-12);
  }
  const PointSet moved = apply_tps(f, PointSet(q));
  CHECK((moved.points - f.evaluate(q)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tps rejects too few or coplanar controls") {
  CHECK_THROWS_AS(fit_tps(random_points(3, 20), random_points(3, 21)), SingularSystemError);
  Points plane = random_points(10, 22);
  plane.col(2).setZero();
  CHECK_THROWS_AS(fit_tps(plane, plane), SingularSystemError);
}

TEST_CASE("neighbour index agrees with brute force") {
  const Points p = random_points(1000, 23);
  const NeighborIndex index(p);
  const Points q = random_points(1000, 24, 1.3);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Vec3 x = q.row(i).transpose();
    const auto a = index.nearest(x);
    const auto b = brute_force_nearest(p, x);
    CHECK(a.index == b.index);
    CHECK(a.distance == b.distance);
  }
}

TEST_CASE("neighbour index exact hits and ties") {
  const Points p = random_points(200, 25);
  const NeighborIndex index(p);
  const auto hit = index.nearest(p.row(37).transpose());
  CHECK(hit.index == 37);
  CHECK(hit.distance == 0.0);

  // Equidistant candidates resolve to the lowest index.
  Points t(5, 3);
  t << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1;
  const NeighborIndex ties(t);
  CHECK(ties.nearest(Vec3::Zero()).index == 0);
  Points dup(4, 3);
  dup << 0.5, 0.5, 0.5, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3;
  CHECK(NeighborIndex(dup).nearest(Vec3(0.1, 0.2, 0.3)).index == 1);
  CHECK_THROWS_AS(NeighborIndex(Points(0, 3)), EmptyInputError);
}

TEST_CASE("neighbour index handles clustered and degenerate sets") {
  Points p(300, 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) << static_cast<double>(i % 3), 0.0, 0.0;
  const NeighborIndex index(p);
  const Points q = random_points(200, 26, 3.0);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Vec3 x = q.row(i).transpose();
    CHECK(index.nearest(x).index == brute_force_nearest(p, x).index);
  }
}

TEST_CASE("point set validation") {
  CHECK_THROWS_AS(PointSet().validate(), EmptyInputError);
  Points p = random_points(3, 27);
  p(1, 1) = NAN;
  CHECK_THROWS_AS(PointSet(p).validate(), InvariantError);
  Points a = random_points(3, 28), b = random_points(2, 29);
  CHECK_THROWS_AS((LandmarkPairs{a, b}.validate()), PairingError);
}
