#pragma once

#include <cstddef>
#include <vector>

#include "fptreg/geometry.hpp"

namespace fptreg::classical {

// Translates source so that its centroid lands on the target centroid.
PointSet center_align(const PointSet& source, const PointSet& target);

struct IcpConfig {
  std::size_t max_iterations = 25;
  // Stop once the mean squared correspondence error changes by less than this.
  double convergence_tol = 1e-8;
  // Start from the centroid-aligned pose instead of the identity.
  bool center_first = true;

  void validate() const;
};

struct IcpResult {
  // Maps the original source onto the target.
  RigidTransform transform;
  PointSet transformed;
  // Mean squared nearest-neighbour error observed at the start of each
  // iteration; non-increasing.
  std::vector<double> mse_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

// Point-to-point ICP: nearest-neighbour correspondences alternated with the
// closed-form (SVD) orthogonal Procrustes update.
IcpResult icp_register(const PointSet& source, const PointSet& target, const IcpConfig& cfg = {});

// Least-squares rotation + translation taking rows of `from` onto the
// matching rows of `to`, with the reflection correction applied.
RigidTransform procrustes(const Points& from, const Points& to);

struct CpdConfig {
  double w = 0.0;  // weight of the uniform outlier component
  std::size_t max_iterations = 150;
  double beta = 2.0;    // Gaussian kernel width of the motion field
  double lambda = 2.0;  // motion coherence weight
  double sigma2_tol = 1e-8;

  void validate() const;
};

struct CpdResult {
  Points displacements;  // one per source point, G W
  PointSet transformed;
  // Penalised negative log-likelihood after each iteration.
  std::vector<double> objective_trace;
  std::vector<double> sigma2_trace;
  std::size_t iterations = 0;
  double sigma2 = 0.0;
  // Motion field coefficients, kept so the field can be evaluated off the
  // source points (e.g. at landmarks).
  Points coefficients;
  Points source_points;
  double beta = 2.0;

  // G(q, Y) W for arbitrary query points.
  Points displacement_at(const Points& queries) const;
};

// Non-rigid coherent point drift (exact, full-kernel formulation).
CpdResult cpd_nonrigid_register(const PointSet& source, const PointSet& target, const CpdConfig& cfg = {});

}  // namespace fptreg::classical
