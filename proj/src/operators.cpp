#include "tmr/operators.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace tmr {

RoutingOperator::RoutingOperator(RoutingMatrix routing)
    : routing_(std::move(routing)), routing_t_(routing_.entries().transpose()) {
  const auto& r = routing_.entries();
  gram_ = Matrix(r * routing_t_);
  lambda_max_ = estimate_lambda_max(gram_);
  h_q_ = lambda_max_ * Matrix::Identity(links(), links()) - gram_;
}

Vector RoutingOperator::forward(const Matrix& x) const {
  const int s = nodes();
  if (x.rows() != s || x.cols() != s)
    throw std::invalid_argument("forward_map: expected " + std::to_string(s) + "x" +
                                std::to_string(s) + " input");
  // Column-major storage of X is vec(X), i.e. the concatenated columns X e_j
  // that the blocks R_j act on.
  return routing_.entries() * Eigen::Map<const Vector>(x.data(), x.size());
}

Matrix RoutingOperator::adjoint(const Vector& q) const {
  if (q.size() != links())
    throw std::invalid_argument("adjoint_map: expected a vector of length " +
                                std::to_string(links()));
  const int s = nodes();
  Matrix y(s, s);
  Eigen::Map<Vector>(y.data(), y.size()) = routing_t_ * q;
  return y;
}

double estimate_lambda_max(const Matrix& gram) {
  if (gram.rows() != gram.cols())
    throw ValidationError("estimate_lambda_max: matrix is not square");
  const Eigen::Index m = gram.rows();
  if (m == 0)
    return 0.0;
  const double scale = gram.cwiseAbs().maxCoeff();
  if ((gram - gram.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale))
    throw ValidationError("estimate_lambda_max: matrix is not symmetric");
  if (scale == 0.0)
    return 0.0;

  Vector v = Vector::Ones(m) / std::sqrt(static_cast<double>(m));
  double lambda = v.dot(gram * v);
  for (int it = 0; it < 100000; ++it) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0)
      break;
    v = w / norm;
    const double next = v.dot(gram * v);
    const bool done = std::abs(next - lambda) <= kPowerIterationTol * std::abs(next);
    lambda = next;
    if (done)
      break;
  }
  return lambda * (1.0 + kLambdaSafety);
}

Matrix project_mask(const Matrix& x, const Matrix& omega) { return x.cwiseProduct(omega); }

Matrix project_nonneg(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix project_spectral_ball(const Matrix& x) {
  if (!x.allFinite())
    throw NumericError("project_spectral_ball: non-finite input");
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericError("project_spectral_ball: SVD failed");
  const Vector& sigma = svd.singularValues();
  if (sigma.size() == 0 || sigma(0) <= 1.0)
    return x;
  // X - U (Sigma - 1)_+ V^T equals U min(Sigma, 1) V^T and leaves the
  // components below the clipping level untouched.
  Eigen::Index k = 0;
  while (k < sigma.size() && sigma(k) > 1.0)
    ++k;
  const Vector excess = (sigma.head(k).array() - 1.0).matrix();
  return x - svd.matrixU().leftCols(k) * excess.asDiagonal() * svd.matrixV().leftCols(k).transpose();
}

double spectral_norm(const Matrix& x) {
  if (x.size() == 0)
    return 0.0;
  Eigen::BDCSVD<Matrix> svd(x);
  return svd.singularValues()(0);
}

double nuclear_norm(const Matrix& x) {
  if (x.size() == 0)
    return 0.0;
  Eigen::BDCSVD<Matrix> svd(x);
  return svd.singularValues().sum();
}

} // namespace tmr
