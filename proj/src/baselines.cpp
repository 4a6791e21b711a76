#include "tmr/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>

namespace tmr {

Vector nnls(const Matrix& a, const Vector& b, int max_iter) {
  const Eigen::Index n = a.cols();
  if (max_iter <= 0)
    max_iter = static_cast<int>(3 * n + 30);
  // Works on the normal equations: every passive-set solve is n x n at most.
  const Matrix gram = a.transpose() * a;
  const Vector rhs = a.transpose() * b;
  Vector x = Vector::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff()) *
                     static_cast<double>(std::max<Eigen::Index>(1, a.rows()));

  auto solve_passive = [&](Vector& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[j])
        idx.push_back(j);
    z = Vector::Zero(n);
    if (idx.empty())
      return;
    const auto p = static_cast<Eigen::Index>(idx.size());
    Matrix sub(p, p);
    Vector sub_rhs(p);
    for (Eigen::Index r = 0; r < p; ++r) {
      sub_rhs(r) = rhs(idx[r]);
      for (Eigen::Index c = 0; c < p; ++c)
        sub(r, c) = gram(idx[r], idx[c]);
    }
    Eigen::LDLT<Matrix> ldlt(sub);
    Vector zs = ldlt.solve(sub_rhs);
    if (ldlt.info() != Eigen::Success || !zs.allFinite())
      zs = sub.completeOrthogonalDecomposition().solve(sub_rhs);
    for (Eigen::Index r = 0; r < p; ++r)
      z(idx[r]) = zs(r);
  };

  for (int outer = 0; outer < max_iter; ++outer) {
    Vector w = rhs - gram * x;
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[j] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    if (best < 0)
      break;
    passive[best] = true;

    Vector z;
    for (int inner = 0; inner < max_iter; ++inner) {
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && z(j) <= 0.0)
          feasible = false;
      if (feasible)
        break;
      double step = 1.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && z(j) <= 0.0)
          step = std::min(step, x(j) / (x(j) - z(j)));
      x += step * (z - x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && x(j) <= 1e-15) {
          passive[j] = false;
          x(j) = 0.0;
        }
    }
    x = z;
  }
  return x.cwiseMax(0.0);
}

Matrix GravityPrior::traffic() const {
  if (total <= 0.0)
    return Matrix::Zero(out_totals.size(), in_totals.size());
  return out_totals * in_totals.transpose() / total;
}

GravityPrior fit_gravity(const Vector& loads, const RoutingOperator& op) {
  const int s = op.nodes();
  const int m = op.links();
  if (loads.size() != m)
    throw std::invalid_argument("gravity_estimate: load vector has wrong length");
  GravityPrior prior{Vector::Zero(s), Vector::Zero(s), 0.0};
  if (loads.cwiseMax(0.0).sum() == 0.0)
    return prior;

  const auto& r = op.routing().entries();
  // Column n = j*S + i of R carries OD pair (i, j).
  auto design_out = [&](const Vector& v) {
    Matrix a = Matrix::Zero(m, s);
    for (int k = 0; k < m; ++k)
      for (SparseMatrix::InnerIterator it(r, k); it; ++it)
        a(k, it.col() % s) += v(it.col() / s);
    return a;
  };
  auto design_in = [&](const Vector& u) {
    Matrix a = Matrix::Zero(m, s);
    for (int k = 0; k < m; ++k)
      for (SparseMatrix::InnerIterator it(r, k); it; ++it)
        a(k, it.col() / s) += u(it.col() % s);
    return a;
  };

  const Vector l = loads.cwiseMax(0.0);
  Vector v = Vector::Ones(s);
  Vector u = nnls(design_out(v), l);
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    v = nnls(design_in(u), l);
    u = nnls(design_out(v), l);
    const double residual = (design_out(v) * u - l).norm();
    if (previous - residual <= 1e-12 * (1.0 + l.norm()))
      break;
    previous = residual;
  }

  const double su = u.sum(), sv = v.sum();
  if (su <= 0.0 || sv <= 0.0)
    return prior;
  prior.out_totals = u * sv;
  prior.in_totals = v * su;
  prior.total = su * sv;
  return prior;
}

Matrix gravity_estimate(const Vector& loads, const RoutingOperator& op) {
  return fit_gravity(loads, op).traffic();
}

TomoGravityResult tomo_gravity(const Vector& loads, const RoutingOperator& op, const Matrix& prior,
                               int max_sweeps, double tol) {
  const int s = op.nodes();
  const int m = op.links();
  if (loads.size() != m)
    throw std::invalid_argument("tomo_gravity: load vector has wrong length");
  if (prior.rows() != s || prior.cols() != s)
    throw std::invalid_argument("tomo_gravity: prior has wrong shape");
  if ((prior.array() < 0.0).any() || !prior.allFinite())
    throw std::invalid_argument("tomo_gravity: prior must be finite and nonnegative");

  TomoGravityResult result;
  result.traffic = prior;
  Eigen::Map<Vector> x(result.traffic.data(), result.traffic.size());
  const auto& r = op.routing().entries();

  std::vector<bool> skip(m, false);
  for (int k = 0; k < m; ++k) {
    double mass = 0.0;
    for (SparseMatrix::InnerIterator it(r, k); it; ++it)
      mass += prior(it.col() % s, it.col() / s);
    if (loads(k) > 0.0 && mass == 0.0) {
      skip[k] = true;
      result.infeasible_links.push_back(k);
    }
  }

  const double denom = 1.0 + loads.cwiseAbs().maxCoeff();
  auto mismatch = [&] {
    Vector modelled = r * x;
    double worst = 0.0;
    for (int k = 0; k < m; ++k)
      if (!skip[k])
        worst = std::max(worst, std::abs(modelled(k) - loads(k)));
    return worst / denom;
  };

  result.mismatch = mismatch();
  if (result.mismatch <= tol) {
    result.converged = true;
    return result;
  }
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    for (int k = 0; k < m; ++k) {
      if (skip[k])
        continue;
      double modelled = 0.0;
      for (SparseMatrix::InnerIterator it(r, k); it; ++it)
        modelled += x(it.col());
      if (modelled <= 0.0)
        continue;
      const double ratio = std::max(0.0, loads(k)) / modelled;
      for (SparseMatrix::InnerIterator it(r, k); it; ++it)
        x(it.col()) *= ratio;
    }
    result.sweeps = sweep;
    result.mismatch = mismatch();
    if (result.mismatch <= tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

} // namespace tmr
