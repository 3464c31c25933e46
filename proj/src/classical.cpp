#include "fptreg/classical.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "fptreg/errors.hpp"

namespace fptreg::classical {

PointSet center_align(const PointSet& source, const PointSet& target) {
  source.validate();
  target.validate();
  PointSet out = source;
  out.points.rowwise() += (target.centroid() - source.centroid()).transpose();
  out.frame = Frame::transformed;
  return out;
}

void IcpConfig::validate() const {
  if (max_iterations < 1) throw ParameterError("ICP needs max_iterations >= 1");
  if (!(convergence_tol >= 0.0)) throw ParameterError("ICP convergence_tol must be non-negative");
}

RigidTransform procrustes(const Points& from, const Points& to) {
  if (from.rows() != to.rows() || from.rows() == 0) {
    throw PairingError("procrustes needs equally sized, non-empty point lists");
  }
  const Eigen::RowVector3d cf = from.colwise().mean();
  const Eigen::RowVector3d ct = to.colwise().mean();
  const Mat3 h = (from.rowwise() - cf).transpose() * (to.rowwise() - ct);
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 v = svd.matrixV();
  const Mat3& u = svd.matrixU();
  if ((v * u.transpose()).determinant() < 0) v.col(2) *= -1.0;
  const Mat3 r = v * u.transpose();
  return {r, ct.transpose() - r * cf.transpose()};
}

IcpResult icp_register(const PointSet& source, const PointSet& target, const IcpConfig& cfg) {
  cfg.validate();
  source.validate();
  target.validate();
  const NeighborIndex index(target.points);
  const Eigen::Index n = source.points.rows();

  IcpResult result;
  if (cfg.center_first) result.transform = RigidTransform::translation(target.centroid() - source.centroid());

  Points matched(n, 3);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const Points current = result.transform.apply(source.points);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto hit = index.nearest(current.row(i).transpose());
      matched.row(i) = target.points.row(static_cast<Eigen::Index>(hit.index));
      total += hit.distance * hit.distance;
    }
    const double mse = total / static_cast<double>(n);
    result.mse_trace.push_back(mse);
    result.iterations = it + 1;
    if (mse == 0.0 || std::abs(previous - mse) < cfg.convergence_tol) {
      result.converged = true;
      break;
    }
    previous = mse;
    result.transform = procrustes(source.points, matched);
  }
  result.transformed = apply_rigid(result.transform, source);
  return result;
}

// --- coherent point drift -----------------------------------------------------

void CpdConfig::validate() const {
  if (!(w >= 0.0 && w < 1.0)) throw ParameterError("CPD needs 0 <= w < 1");
  if (!(beta > 0.0)) throw ParameterError("CPD needs beta > 0");
  if (!(lambda > 0.0)) throw ParameterError("CPD needs lambda > 0");
  if (max_iterations < 1) throw ParameterError("CPD needs max_iterations >= 1");
}

namespace {

Eigen::MatrixXd gaussian_kernel(const Points& a, const Points& b, double beta) {
  Eigen::MatrixXd g(a.rows(), b.rows());
  const double scale = -1.0 / (2.0 * beta * beta);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      g(i, j) = std::exp(scale * squared_distance(&a(i, 0), &b(j, 0)));
    }
  }
  return g;
}

struct EStep {
  Eigen::MatrixXd posterior;  // M x N
  double nll = 0.0;
};

// Posterior of each mixture centroid for each target point, and the negative
// log-likelihood of the target under the current mixture.
EStep expectation(const Points& x, const Points& t, double sigma2, double w) {
  const Eigen::Index n = x.rows(), m = t.rows();
  constexpr double d = 3.0;
  EStep out;
  out.posterior.resize(m, n);
  const double inv = -1.0 / (2.0 * sigma2);
  const double log_norm = -0.5 * d * std::log(2.0 * M_PI * sigma2) - std::log(static_cast<double>(m));
  const double log_uniform = w > 0.0 ? std::log(w / static_cast<double>(n)) : -std::numeric_limits<double>::infinity();
  const double log_mix = std::log1p(-w);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = out.posterior.col(j);
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      col(i) = inv * squared_distance(&x(j, 0), &t(i, 0));
      peak = std::max(peak, col(i));
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      col(i) = std::exp(col(i) - peak);
      acc += col(i);
    }
    // log p(x_j) = log((1-w) * sum_i exp(a_i) * norm + w / N)
    const double log_gauss = log_mix + log_norm + peak + std::log(acc);
    double log_p = log_gauss;
    if (w > 0.0) {
      const double hi = std::max(log_gauss, log_uniform);
      log_p = hi + std::log(std::exp(log_gauss - hi) + std::exp(log_uniform - hi));
    }
    out.nll -= log_p;
    // Share of mixture responsibility, relative to the Gaussian part.
    const double gauss_share = std::exp(log_gauss - log_p);
    col *= gauss_share / acc;
  }
  return out;
}

}  // namespace

Points CpdResult::displacement_at(const Points& queries) const {
  if (queries.rows() == 0) return Points(0, 3);
  return gaussian_kernel(queries, source_points, beta) * coefficients;
}

CpdResult cpd_nonrigid_register(const PointSet& source, const PointSet& target, const CpdConfig& cfg) {
  cfg.validate();
  source.validate();
  target.validate();
  const Points& y = source.points;
  const Points& x = target.points;
  const Eigen::Index m = y.rows(), n = x.rows();
  constexpr double d = 3.0;

  const Eigen::MatrixXd g = gaussian_kernel(y, y, cfg.beta);

  // sigma^2 = sum_{m,n} |x_n - y_m|^2 / (D N M)
  double sigma2 = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) sigma2 += squared_distance(&y(i, 0), &x(j, 0));
  }
  sigma2 /= d * static_cast<double>(m) * static_cast<double>(n);
  if (!(sigma2 > 0.0)) sigma2 = std::max(cfg.sigma2_tol, 1e-12);

  CpdResult result;
  result.beta = cfg.beta;
  result.source_points = y;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, 3);
  Points t = y;

  EStep e = expectation(x, t, sigma2, cfg.w);
  result.objective_trace.push_back(e.nll);
  result.sigma2_trace.push_back(sigma2);

  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const Eigen::VectorXd p1 = e.posterior.rowwise().sum();
    const Eigen::VectorXd pt1 = e.posterior.colwise().sum().transpose();
    const Eigen::MatrixXd px = e.posterior * x;
    const double np = p1.sum();

    // (d(P1) G + lambda sigma^2 I) W = P X - d(P1) Y
    Eigen::MatrixXd a = p1.asDiagonal() * g;
    a.diagonal().array() += cfg.lambda * sigma2;
    const Eigen::MatrixXd rhs = px - p1.asDiagonal() * y;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    Eigen::MatrixXd w_next = lu.solve(rhs);
    const double residual = (a * w_next - rhs).norm() / std::max(rhs.norm(), 1e-300);
    if (!w_next.allFinite() || residual > 1e-6) {
      throw SingularSystemError("CPD M-step system is singular (sigma^2 = " + std::to_string(sigma2) +
                                ", lambda*sigma^2 = " + std::to_string(cfg.lambda * sigma2) +
                                ", relative residual " + std::to_string(residual) +
                                "); the regularisation floor is too small for this input");
    }
    w = std::move(w_next);
    t = y + g * w;

    const double xpx = (pt1.array() * x.rowwise().squaredNorm().array()).sum();
    const double tpt = (p1.array() * t.rowwise().squaredNorm().array()).sum();
    const double cross = (px.array() * t.array()).sum();
    double sigma2_next = (xpx - 2.0 * cross + tpt) / (np * d);
    if (!(sigma2_next > 0.0)) sigma2_next = cfg.sigma2_tol / 10.0;
    if (!(sigma2_next > 0.0)) sigma2_next = 1e-300;

    const double change = std::abs(sigma2_next - sigma2);
    sigma2 = sigma2_next;
    e = expectation(x, t, sigma2, cfg.w);
    const double penalty = 0.5 * cfg.lambda * (w.transpose() * g * w).trace();
    result.objective_trace.push_back(e.nll + penalty);
    result.sigma2_trace.push_back(sigma2);
    result.iterations = it + 1;
    if (change < cfg.sigma2_tol) break;
  }

  result.sigma2 = sigma2;
  result.coefficients = w;
  result.displacements = g * w;
  result.transformed = source;
  result.transformed.points = t;
  result.transformed.frame = Frame::transformed;
  return result;
}

}  // namespace fptreg::classical
