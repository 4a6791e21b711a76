#pragma once

#include <vector>

#include "tmr/operators.hpp"

namespace tmr {

/// Node totals of a gravity model: X = out in^T / total.
struct GravityPrior {
  Vector out_totals;
  Vector in_totals;
  double total = 0.0;

  Matrix traffic() const;
};

/// Fits per-origin and per-destination totals to the link loads. The rank-1
/// traffic u v^T is bilinear, so u and v are fitted by alternating
/// nonnegative least squares against R vec(u v^T) = L.
GravityPrior fit_gravity(const Vector& loads, const RoutingOperator& op);

/// Rank-1 gravity estimate; zero when the loads are zero.
Matrix gravity_estimate(const Vector& loads, const RoutingOperator& op);

struct TomoGravityResult {
  Matrix traffic;
  int sweeps = 0;
  bool converged = false;
  /// ||R vec(X) - L||_inf / (1 + ||L||_inf) over the links that were not skipped.
  double mismatch = 0.0;
  /// Links (0-based) with positive load but no prior mass on any of their
  /// OD pairs; they cannot be matched and are skipped.
  std::vector<int> infeasible_links;
};

/// KL projection of `prior` onto {R vec(X) = L, X >= 0} by multiplicative
/// row-action scaling (MART): each link in turn rescales its OD entries by
/// measured / modelled load. Zero prior entries stay zero.
TomoGravityResult tomo_gravity(const Vector& loads, const RoutingOperator& op, const Matrix& prior,
                               int max_sweeps = 500, double tol = 1e-6);

/// min ||A x - b|| s.t. x >= 0 (Lawson-Hanson active set).
Vector nnls(const Matrix& a, const Vector& b, int max_iter = 0);

} // namespace tmr
