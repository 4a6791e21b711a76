#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tmr/operators.hpp"

namespace tmr {

/// Knobs of the SLRR model and its ADMM solver.
struct SolverParams {
  double rho1 = 0.5; ///< continuity weight (previous interval)
  double rho2 = 0.5; ///< periodicity weight (same interval one period ago)
  double beta = 1.0; ///< augmented-Lagrangian penalty
  double tau = 1.618;
  double epsilon = 1e-6;
  int max_iter = 5000;
  /// Multiply beta by ||L|| / M when that ratio is outside [1e-2, 1e2].
  bool auto_scale_beta = true;

  double alpha() const { return rho1 + rho2; }
  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Golden-ratio bound on the multiplier step length.
inline constexpr double kTauUpperBound = 1.6180339887498949;

/// One interval of the SLRR problem:
///   min ||X||_* + alpha ||X - A||_F^2
///   s.t. R vec(X) = L, P_Omega(X) = 0, X >= 0.
struct IntervalProblem {
  std::shared_ptr<const RoutingOperator> op;
  Vector loads;  ///< L, length M
  Matrix omega;  ///< S x S indicator of the known zeros
  Matrix prior;  ///< A = (rho1 Xbar + rho2 Xhat) / (rho1 + rho2)
  double alpha = 1.0;

  int nodes() const { return op->nodes(); }
  void validate() const;
};

/// How a missing previous-interval or previous-period estimate is handled.
enum class PriorPolicy {
  /// Keep alpha = rho1 + rho2 and give the missing prior's weight to the
  /// available one (the gravity estimate when neither exists).
  transfer,
  /// Drop the missing prior's weight; alpha shrinks accordingly. Falls back
  /// to transfer when nothing would remain.
  drop,
};

/// Builds A and alpha from whichever priors are available. `gravity` is
/// used only when both priors are missing.
IntervalProblem make_interval_problem(std::shared_ptr<const RoutingOperator> op, Vector loads,
                                      Matrix omega, const Matrix* previous, const Matrix* periodic,
                                      const Matrix& gravity, double rho1, double rho2,
                                      PriorPolicy policy = PriorPolicy::transfer);

/// Dual blocks and the multiplier X (which is the traffic estimate).
struct SolverState {
  Matrix U;
  Vector Q;
  Matrix V;
  Matrix W;
  Matrix G;
  Matrix X;
  int iter = 0;

  static SolverState zeros(int nodes, int links);
};

struct Residuals {
  double p1 = 0.0; ///< link-load feasibility
  double p2 = 0.0; ///< sparsity feasibility
  double d = 0.0;  ///< dual equality constraint
  double v = 0.0;  ///< V >= 0
  double g = 0.0;  ///< ||G||_2 <= 1
  double eta = 0.0;
};

/// P_Omega(U) + V + W + A(Q) - G.
Matrix dual_gap_matrix(const SolverState& state, const IntervalProblem& problem);

// Closed-form block minimizers of the augmented Lagrangian of the dual
// problem. Each takes the current state, which also supplies the proximal
// anchor (U and Q use their previous values as anchors).

Matrix update_U(const SolverState& state, const IntervalProblem& problem, double beta);
Vector update_Q(const SolverState& state, const IntervalProblem& problem, double beta,
                const Vector& anchor);
Matrix update_V(const SolverState& state, const IntervalProblem& problem, double beta);
Matrix update_W(const SolverState& state, const IntervalProblem& problem, double beta);
Matrix update_G(const SolverState& state, const IntervalProblem& problem, double beta);
Matrix multiplier_step(const SolverState& state, const IntervalProblem& problem, double beta,
                       double tau);

Residuals kkt_residuals(const SolverState& state, const IntervalProblem& problem);

/// ||X||_* + alpha ||X - A||_F^2.
double primal_objective(const Matrix& x, const IntervalProblem& problem);
/// Dual function value at (Q, W): <Q, L> - ||W - 2 alpha A||^2 / (4 alpha) + alpha ||A||^2.
/// Equal to the primal optimum at a dual solution.
double dual_objective(const SolverState& state, const IntervalProblem& problem);

enum class Block { U, Q, V, W, G, X };
const char* block_name(Block b);

struct SolveOptions {
  /// Return project_nonneg(X) with Omega re-zeroed instead of the raw multiplier.
  bool clamp_output = true;
  /// Abort when eta exceeds this multiple of its running minimum.
  double divergence_factor = 1e6;
  /// Wall-clock budget in seconds; 0 means none. Running out of time ends
  /// the solve like reaching max_iter.
  double time_limit = 0.0;
  /// Called after every block update, in execution order, with the state
  /// that update produced.
  std::function<void(Block, const SolverState&)> on_update;
};

struct IntervalSolution {
  Matrix estimate; ///< clamped (or raw, per options) traffic
  Matrix raw;      ///< the multiplier X returned by the solver
  SolverState state;
  std::vector<Residuals> trace;
  bool converged = false;
  int iterations = 0;
  double beta = 0.0; ///< effective penalty after scaling
  double seconds = 0.0;
};

/// Penalty actually used for a given load vector.
double effective_beta(const SolverParams& params, const Vector& loads);

/// Runs the symmetric Gauss-Seidel semi-proximal ADMM from zero blocks until
/// eta < epsilon or max_iter. On non-convergence the lowest-eta iterate is
/// returned with converged = false. Throws NumericError on NaN or divergence.
IntervalSolution solve_interval(const IntervalProblem& problem, const SolverParams& params,
                                const SolveOptions& options = {});

/// Writes `iter,eta_p1,eta_p2,eta_d,eta_v,eta_g,eta` lines.
std::string residual_trace_csv(const std::vector<Residuals>& trace);

struct RecoverOptions {
  /// Intervals per period (week); no periodic prior when absent.
  std::optional<int> period;
  PriorPolicy policy = PriorPolicy::transfer;
  SolveOptions solve;
};

struct IntervalReport {
  int iterations = 0;
  bool converged = false;
  double seconds = 0.0;
  Residuals final;
  std::vector<Residuals> trace;
};

struct RecoveryReport {
  std::vector<IntervalReport> intervals;
  double total_seconds = 0.0;

  std::vector<int> unconverged() const;
};

struct RecoveryResult {
  TrafficTensor estimate;
  TrafficTensor raw;
  RecoveryReport report;
};

/// Solves the intervals in chronological order, feeding each estimate
/// forward as the continuity prior and, `period` intervals later, as the
/// periodicity prior.
RecoveryResult recover_sequence(const TomographyInstance& instance, const SolverParams& params,
                                const RecoverOptions& options = {});

} // namespace tmr
