#include "tmr/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "tmr/baselines.hpp"
#include "tmr/csv.hpp"

namespace tmr {

void SolverParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("solver params: " + what); };
  if (!(rho1 >= 0.0) || !(rho2 >= 0.0))
    fail("rho1 and rho2 must be nonnegative");
  if (!(rho1 + rho2 > 0.0))
    fail("rho1 + rho2 must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta))
    fail("beta must be positive");
  if (!(tau > 0.0 && tau < kTauUpperBound))
    fail("tau must lie in (0, (1 + sqrt 5) / 2)");
  if (!(epsilon > 0.0))
    fail("epsilon must be positive");
  if (max_iter < 1)
    fail("max_iter must be at least 1");
}

void IntervalProblem::validate() const {
  if (!op)
    throw std::invalid_argument("interval problem: missing routing operator");
  const int s = op->nodes();
  if (loads.size() != op->links())
    throw std::invalid_argument("interval problem: load vector has wrong length");
  if (omega.rows() != s || omega.cols() != s || prior.rows() != s || prior.cols() != s)
    throw std::invalid_argument("interval problem: mask or prior has wrong shape");
  if (!(alpha > 0.0))
    throw std::invalid_argument("interval problem: alpha must be positive");
  if (!loads.allFinite() || !prior.allFinite())
    throw std::invalid_argument("interval problem: non-finite data");
}

IntervalProblem make_interval_problem(std::shared_ptr<const RoutingOperator> op, Vector loads,
                                      Matrix omega, const Matrix* previous, const Matrix* periodic,
                                      const Matrix& gravity, double rho1, double rho2,
                                      PriorPolicy policy) {
  IntervalProblem p;
  p.op = std::move(op);
  p.loads = std::move(loads);
  p.omega = std::move(omega);
  p.alpha = rho1 + rho2;
  const Matrix keep = Matrix::Ones(p.omega.rows(), p.omega.cols()) - p.omega;

  if (previous && periodic) {
    p.prior = (rho1 * *previous + rho2 * *periodic) / p.alpha;
  } else if (previous || periodic) {
    const Matrix& available = previous ? *previous : *periodic;
    const double own_weight = previous ? rho1 : rho2;
    p.prior = available;
    if (policy == PriorPolicy::drop && own_weight > 0.0)
      p.alpha = own_weight;
  } else {
    p.prior = gravity.cwiseProduct(keep);
  }
  p.validate();
  return p;
}

SolverState SolverState::zeros(int nodes, int links) {
  SolverState s;
  s.U = Matrix::Zero(nodes, nodes);
  s.Q = Vector::Zero(links);
  s.V = Matrix::Zero(nodes, nodes);
  s.W = Matrix::Zero(nodes, nodes);
  s.G = Matrix::Zero(nodes, nodes);
  s.X = Matrix::Zero(nodes, nodes);
  return s;
}

Matrix dual_gap_matrix(const SolverState& st, const IntervalProblem& p) {
  return project_mask(st.U, p.omega) + st.V + st.W + p.op->adjoint(st.Q) - st.G;
}

Matrix update_U(const SolverState& st, const IntervalProblem& p, double beta) {
  const Matrix inner = -st.V - p.op->adjoint(st.Q) - st.W + st.G - st.X / beta;
  return project_mask(inner, p.omega) + (st.U - project_mask(st.U, p.omega));
}

Vector update_Q(const SolverState& st, const IntervalProblem& p, double beta,
                const Vector& anchor) {
  const RoutingOperator& op = *p.op;
  const Vector coupled = op.forward(st.V + project_mask(st.U, p.omega) + st.W - st.G);
  const Vector multiplier = (op.forward(st.X) - p.loads) / beta;
  return -(coupled - op.h_q() * anchor + multiplier) / op.lambda_max();
}

Matrix update_V(const SolverState& st, const IntervalProblem& p, double beta) {
  const Matrix rest = p.op->adjoint(st.Q) + project_mask(st.U, p.omega) + st.W - st.G;
  return project_nonneg(-rest - st.X / beta);
}

Matrix update_W(const SolverState& st, const IntervalProblem& p, double beta) {
  const Matrix rest = st.V + p.op->adjoint(st.Q) + project_mask(st.U, p.omega) - st.G;
  return (p.prior - st.X - beta * rest) / (1.0 / (2.0 * p.alpha) + beta);
}

Matrix update_G(const SolverState& st, const IntervalProblem& p, double beta) {
  // argmin over the unit spectral ball of -<X, G> + beta/2 ||rest - G||^2,
  // i.e. the projection of rest + X / beta.
  const Matrix rest = st.V + p.op->adjoint(st.Q) + project_mask(st.U, p.omega) + st.W;
  return project_spectral_ball(rest + st.X / beta);
}

Matrix multiplier_step(const SolverState& st, const IntervalProblem& p, double beta, double tau) {
  return st.X + tau * beta * dual_gap_matrix(st, p);
}

namespace {

Residuals residuals(const SolverState& st, const IntervalProblem& p, bool with_ball) {
  Residuals r;
  r.p1 = (p.op->forward(st.X) - p.loads).norm() / (1.0 + p.loads.norm());
  r.p2 = project_mask(st.X, p.omega).norm() / (1.0 + st.X.norm());
  const double g_norm = st.G.norm();
  r.d = dual_gap_matrix(st, p).norm() / (1.0 + g_norm);
  r.v = (st.V - project_nonneg(st.V)).norm() / (1.0 + st.V.norm());
  r.g = with_ball ? (st.G - project_spectral_ball(st.G)).norm() / (1.0 + g_norm) : 0.0;
  r.eta = std::max({r.p1, r.p2, r.d, r.v, r.g});
  return r;
}

} // namespace

Residuals kkt_residuals(const SolverState& st, const IntervalProblem& p) {
  return residuals(st, p, true);
}

double primal_objective(const Matrix& x, const IntervalProblem& p) {
  return nuclear_norm(x) + p.alpha * (x - p.prior).squaredNorm();
}

double dual_objective(const SolverState& st, const IntervalProblem& p) {
  return st.Q.dot(p.loads) - (st.W - 2.0 * p.alpha * p.prior).squaredNorm() / (4.0 * p.alpha) +
         p.alpha * p.prior.squaredNorm();
}

const char* block_name(Block b) {
  switch (b) {
  case Block::U: return "U";
  case Block::Q: return "Q";
  case Block::V: return "V";
  case Block::W: return "W";
  case Block::G: return "G";
  case Block::X: return "X";
  }
  return "?";
}

double effective_beta(const SolverParams& params, const Vector& loads) {
  if (!params.auto_scale_beta || loads.size() == 0)
    return params.beta;
  const double scale = loads.norm() / static_cast<double>(loads.size());
  if (scale > 0.0 && (scale < 1e-2 || scale > 1e2))
    return params.beta * scale;
  return params.beta;
}

IntervalSolution solve_interval(const IntervalProblem& problem, const SolverParams& params,
                                const SolveOptions& options) {
  params.validate();
  problem.validate();
  const auto start = std::chrono::steady_clock::now();

  const double beta = effective_beta(params, problem.loads);
  const double tau = params.tau;
  IntervalSolution out;
  out.beta = beta;
  SolverState& st = out.state;
  st = SolverState::zeros(problem.nodes(), problem.op->links());
  auto note = [&](Block b) {
    if (options.on_update)
      options.on_update(b, st);
  };

  double best_eta = std::numeric_limits<double>::infinity();
  double min_eta = std::numeric_limits<double>::infinity();
  Matrix best_x = st.X;

  for (int k = 1; k <= params.max_iter; ++k) {
    // Forward-backward sweep over (U, Q, V); the second U and Q solves are
    // anchored at their half-step values, which are the current ones.
    st.U = update_U(st, problem, beta);
    note(Block::U);
    st.Q = update_Q(st, problem, beta, st.Q);
    note(Block::Q);
    st.V = update_V(st, problem, beta);
    note(Block::V);
    st.Q = update_Q(st, problem, beta, st.Q);
    note(Block::Q);
    st.U = update_U(st, problem, beta);
    note(Block::U);
    // Same for (W, G); H_W = H_G = 0 so no anchors.
    st.W = update_W(st, problem, beta);
    note(Block::W);
    st.G = update_G(st, problem, beta);
    note(Block::G);
    st.W = update_W(st, problem, beta);
    note(Block::W);
    st.X = multiplier_step(st, problem, beta, tau);
    note(Block::X);
    st.iter = k;

    // G is an exact projection, so its cone residual is skipped until a
    // stopping candidate needs the full check.
    Residuals r = residuals(st, problem, false);
    if (!std::isfinite(r.eta) || !st.X.allFinite())
      throw NumericError("solve_interval: non-finite iterate at iteration " + std::to_string(k));
    const bool out_of_time =
        options.time_limit > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >
            options.time_limit;
    if (r.eta < params.epsilon || k == params.max_iter || out_of_time)
      r = residuals(st, problem, true);
    out.trace.push_back(r);

    if (r.eta < best_eta) {
      best_eta = r.eta;
      best_x = st.X;
    }
    min_eta = std::min(min_eta, r.eta);
    if (min_eta > 0.0 && r.eta > options.divergence_factor * min_eta)
      throw NumericError("solve_interval: divergence at iteration " + std::to_string(k) +
                         " (eta " + csv::format(r.eta) + ")");
    if (r.eta < params.epsilon) {
      out.converged = true;
      break;
    }
    if (out_of_time)
      break;
  }

  out.iterations = st.iter;
  out.raw = out.converged ? st.X : best_x;
  if (options.clamp_output)
    out.estimate = project_nonneg(out.raw - project_mask(out.raw, problem.omega));
  else
    out.estimate = out.raw;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string residual_trace_csv(const std::vector<Residuals>& trace) {
  std::string out;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    out += std::to_string(i + 1);
    for (double v : {r.p1, r.p2, r.d, r.v, r.g, r.eta}) {
      out += ',';
      out += csv::format(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<int> RecoveryReport::unconverged() const {
  std::vector<int> bad;
  for (std::size_t k = 0; k < intervals.size(); ++k)
    if (!intervals[k].converged)
      bad.push_back(static_cast<int>(k));
  return bad;
}

RecoveryResult recover_sequence(const TomographyInstance& instance, const SolverParams& params,
                                const RecoverOptions& options) {
  params.validate();
  if (options.period && *options.period < 1)
    throw std::invalid_argument("recover_sequence: period must be at least 1");
  const auto start = std::chrono::steady_clock::now();

  auto op = std::make_shared<const RoutingOperator>(instance.routing);
  RecoveryResult result;
  for (int k = 0; k < instance.T; ++k) {
    Vector loads = instance.link_loads.col(k);
    const Matrix* previous = k > 0 ? &result.estimate.slices[k - 1] : nullptr;
    const Matrix* periodic = options.period && k >= *options.period
                                 ? &result.estimate.slices[k - *options.period]
                                 : nullptr;
    Matrix gravity;
    if (!previous && !periodic)
      gravity = gravity_estimate(loads, *op);
    else
      gravity = Matrix::Zero(instance.S, instance.S);

    auto problem = make_interval_problem(op, std::move(loads), instance.mask.interval(k, instance.S),
                                         previous, periodic, gravity, params.rho1, params.rho2,
                                         options.policy);
    auto sol = solve_interval(problem, params, options.solve);

    IntervalReport rep;
    rep.iterations = sol.iterations;
    rep.converged = sol.converged;
    rep.seconds = sol.seconds;
    rep.final = sol.trace.empty() ? Residuals{} : sol.trace.back();
    rep.trace = std::move(sol.trace);
    result.report.intervals.push_back(std::move(rep));
    result.estimate.slices.push_back(std::move(sol.estimate));
    result.raw.slices.push_back(std::move(sol.raw));
  }
  result.report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

} // namespace tmr
