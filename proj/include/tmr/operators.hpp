#pragma once

#include "tmr/tensor_store.hpp"

namespace tmr {

/// The routing map X -> R vec(X) with its adjoint, Gram matrix and the
/// proximal scaling used by the Q-block of the solver.
///
/// The Gram matrix sum_j R_j R_j^T = R R^T is stored dense (M is at most a few
/// hundred links). lambda_max is an upper bound on its top eigenvalue so
/// that H_Q = lambda_max I - gram stays positive semidefinite.
class RoutingOperator {
public:
  explicit RoutingOperator(RoutingMatrix routing);

  int nodes() const { return routing_.nodes(); }
  int links() const { return routing_.links(); }
  const RoutingMatrix& routing() const { return routing_; }
  const Matrix& gram() const { return gram_; }
  double lambda_max() const { return lambda_max_; }
  const Matrix& h_q() const { return h_q_; }

  /// sum_j R_j X e_j.
  Vector forward(const Matrix& x) const;
  /// sum_j R_j^T q e_j^T: column j is R_j^T q.
  Matrix adjoint(const Vector& q) const;

private:
  RoutingMatrix routing_;
  Eigen::SparseMatrix<double> routing_t_;
  Matrix gram_;
  double lambda_max_ = 0.0;
  Matrix h_q_;
};

/// Relative tolerance and inflation used by estimate_lambda_max.
inline constexpr double kPowerIterationTol = 1e-8;
inline constexpr double kLambdaSafety = 1e-6;

/// Upper bound on the top eigenvalue of a symmetric PSD matrix: power
/// iteration from the normalized all-ones vector, then inflated by
/// (1 + kLambdaSafety). Gram matrices of routing matrices are entrywise
/// nonnegative, so the all-ones start is never orthogonal to the top
/// eigenvector.
/// Throws ValidationError for non-square or non-symmetric input.
double estimate_lambda_max(const Matrix& gram);

/// Keeps entries where omega == 1, zeroes the rest.
Matrix project_mask(const Matrix& x, const Matrix& omega);
/// Nearest point of the spectral-norm unit ball: singular values clipped at 1.
/// Throws NumericError for non-finite input.
Matrix project_spectral_ball(const Matrix& x);
Matrix project_nonneg(const Matrix& x);

/// Largest singular value.
double spectral_norm(const Matrix& x);
/// Sum of singular values.
double nuclear_norm(const Matrix& x);

} // namespace tmr
