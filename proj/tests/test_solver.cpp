#include <doctest.h>

#include <Eigen/SVD>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tmr/baselines.hpp"
#include "tmr/solver.hpp"

using namespace tmr;

using namespace oracle;

TEST_CASE("update_U") {
  std::mt19937_64 rng(11);
  auto f = random_fixture(3, 5, rng);
  SolverState zero = SolverState::zeros(3, 5);
  CHECK(update_U(zero, f.problem, 1.0).isZero());

  IntervalProblem no_mask = f.problem;
  no_mask.omega.setZero();
  CHECK(update_U(f.state, no_mask, f.beta) == f.state.U);

  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_fixture(3, 5, rng);
    CHECK((update_U(g.state, g.problem, g.beta) - oracle_U(g)).norm() < 1e-8);
  }
}

TEST_CASE("update_Q") {
  std::mt19937_64 rng(12);
  auto f = random_fixture(3, 5, rng);
  IntervalProblem zl = f.problem;
  zl.loads.setZero();
  SolverState zero = SolverState::zeros(3, 5);
  CHECK(update_Q(zero, zl, 1.0, zero.Q).isZero());

  // Identity routing: gram = I, lambda ~ 1, H_Q ~ 0.
  auto ident = std::make_shared<const RoutingOperator>(RoutingMatrix::identity(2));
  IntervalProblem p;
  p.op = ident;
  p.loads = Vector::LinSpaced(4, 1, 4);
  p.omega = Matrix::Zero(2, 2);
  p.prior = Matrix::Zero(2, 2);
  SolverState st = SolverState::zeros(2, 4);
  const double beta = 2.0;
  CHECK((update_Q(st, p, beta, st.Q) - p.loads / beta).norm() < 1e-5);

  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_fixture(3, 5, rng);
    Vector anchor = test::random_matrix(5, 1, rng);
    CHECK((update_Q(g.state, g.problem, g.beta, anchor) - oracle_Q(g, anchor)).norm() < 1e-8);
  }
}

TEST_CASE("update_V") {
  std::mt19937_64 rng(13);
  auto f = random_fixture(3, 5, rng);
  SolverState zero = SolverState::zeros(3, 5);
  CHECK(update_V(zero, f.problem, 1.0).isZero());

  // Everything that V would cancel is already nonnegative: V clamps to 0.
  SolverState st = zero;
  st.W = Matrix::Ones(3, 3);
  st.X = Matrix::Ones(3, 3);
  CHECK(update_V(st, f.problem, 1.0).isZero());

  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_fixture(3, 5, rng);
    Matrix v = update_V(g.state, g.problem, g.beta);
    CHECK(v.minCoeff() >= 0.0);
    CHECK((v - oracle_V(g)).norm() < 1e-8);
  }
}

TEST_CASE("update_W") {
  std::mt19937_64 rng(14);
  auto f = random_fixture(3, 5, rng);
  IntervalProblem za = f.problem;
  za.prior.setZero();
  SolverState zero = SolverState::zeros(3, 5);
  CHECK(update_W(zero, za, 1.0).isZero());

  const double beta = 0.7;
  Matrix expected = f.problem.prior / (1.0 / (2 * f.problem.alpha) + beta);
  CHECK((update_W(zero, f.problem, beta) - expected).norm() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_fixture(3, 5, rng);
    Matrix w = update_W(g.state, g.problem, g.beta);
    CHECK((w - oracle_W(g)).norm() < 1e-8);
    // Finite-difference gradient at the optimum.
    SolverState st = g.state;
    st.W = w;
    Matrix grad(3, 3);
    const double h = 1e-5;
    for (int i = 0; i < 9; ++i) {
      SolverState plus = st, minus = st;
      plus.W(i) += h;
      minus.W(i) -= h;
      grad(i) = (aug_lagrangian(g, plus) - aug_lagrangian(g, minus)) / (2 * h);
    }
    CHECK(grad.norm() <= 1e-6);
  }
}

TEST_CASE("update_G") {
  std::mt19937_64 rng(15);
  auto f = random_fixture(3, 5, rng);
  SolverState zero = SolverState::zeros(3, 5);
  CHECK(update_G(zero, f.problem, 1.0).isZero());

  SolverState small = zero;
  small.W = 0.2 * Matrix::Identity(3, 3);
  CHECK((update_G(small, f.problem, 1.0) - small.W).norm() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_fixture(3, 5, rng);
    Matrix gg = update_G(g.state, g.problem, g.beta);
    CHECK(spectral_norm(gg) <= 1.0 + 1e-9);
    CHECK((gg - oracle_G(g)).norm() < 1e-8);
  }
}

TEST_CASE("closed-form updates are global minimizers under perturbation") {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto direction = [&](int rows, int cols) {
    Matrix d = Matrix::NullaryExpr(rows, cols, [&] { return gauss(rng); });
    return Matrix(1e-3 * d / d.norm());
  };
  for (int trial = 0; trial < 5; ++trial) {
    auto f = random_fixture(4, 6, rng);
    SolverState opt = f.state;

    opt.U = update_U(f.state, f.problem, f.beta);
    auto obj_u = [&](const Matrix& u) {
      SolverState st = f.state;
      st.U = u;
      const Matrix d = u - f.state.U;
      return aug_lagrangian(f, st) + 0.5 * f.beta * inner(d, d - d.cwiseProduct(f.problem.omega));
    };
    const Vector anchor = f.state.Q;
    const Vector q_opt = update_Q(f.state, f.problem, f.beta, anchor);
    auto obj_q = [&](const Vector& q) {
      SolverState st = f.state;
      st.Q = q;
      const Vector d = q - anchor;
      return aug_lagrangian(f, st) + 0.5 * f.beta * d.dot(f.op->h_q() * d);
    };
    auto with = [&](auto setter) {
      SolverState st = f.state;
      setter(st);
      return aug_lagrangian(f, st);
    };
    const Matrix v_opt = update_V(f.state, f.problem, f.beta);
    const Matrix w_opt = update_W(f.state, f.problem, f.beta);
    const Matrix g_opt = update_G(f.state, f.problem, f.beta);

    for (int p = 0; p < 20; ++p) {
      CHECK(obj_u(opt.U + direction(4, 4)) >= obj_u(opt.U) - 1e-12);
      Vector dq = direction(6, 1);
      CHECK(obj_q(q_opt + dq) >= obj_q(q_opt) - 1e-12);
      Matrix vp = project_nonneg(v_opt + direction(4, 4));
      CHECK(with([&](SolverState& s) { s.V = vp; }) >=
            with([&](SolverState& s) { s.V = v_opt; }) - 1e-12);
      Matrix wp = w_opt + direction(4, 4);
      CHECK(with([&](SolverState& s) { s.W = wp; }) >=
            with([&](SolverState& s) { s.W = w_opt; }) - 1e-12);
      Matrix gp = project_spectral_ball(g_opt + direction(4, 4));
      CHECK(with([&](SolverState& s) { s.G = gp; }) >=
            with([&](SolverState& s) { s.G = g_opt; }) - 1e-12);
    }
  }
}

TEST_CASE("multiplier_step") {
  std::mt19937_64 rng(17);
  auto f = random_fixture(3, 5, rng);
  // Gamma = 0 when G absorbs everything.
  SolverState st = f.state;
  st.G = dual_gap_matrix(st, f.problem) + st.G;
  CHECK((multiplier_step(st, f.problem, 1.3, 1.618) - st.X).norm() < 1e-12);

  SolverState zero = SolverState::zeros(3, 5);
  zero.W = Matrix::Identity(3, 3);
  CHECK((multiplier_step(zero, f.problem, 2.0, 0.5) - Matrix::Identity(3, 3)).norm() < 1e-15);

  const double beta = 0.9, tau = 1.2;
  Matrix step = multiplier_step(f.state, f.problem, beta, tau) - f.state.X;
  CHECK((step - tau * beta * dual_gap_matrix(f.state, f.problem)).norm() < 1e-12);
}

TEST_CASE("kkt_residuals") {
  auto op = std::make_shared<const RoutingOperator>(RoutingMatrix::identity(2));
  IntervalProblem p;
  p.op = op;
  p.omega = Matrix::Zero(2, 2);
  p.omega(0, 1) = 1.0;
  p.prior = Matrix::Zero(2, 2);
  Matrix x(2, 2);
  x << 1, 0, 2, 3;
  p.loads = Eigen::Map<Vector>(x.data(), 4);

  SolverState st = SolverState::zeros(2, 4);
  st.X = x;
  auto r = kkt_residuals(st, p);
  CHECK(r.eta == 0.0);

  st.X.setZero();
  r = kkt_residuals(st, p);
  const double ln = p.loads.norm();
  CHECK(r.eta == doctest::Approx(ln / (1 + ln)));
  CHECK(r.p1 == doctest::Approx(ln / (1 + ln)));

  st.V = -Matrix::Ones(2, 2);
  st.G = 3 * Matrix::Identity(2, 2);
  r = kkt_residuals(st, p);
  CHECK(r.v == doctest::Approx(2.0 / 3.0));
  CHECK(r.g == doctest::Approx(std::sqrt(8.0) / (1 + std::sqrt(18.0))));
}

TEST_CASE("solver params validation") {
  SolverParams p;
  CHECK_NOTHROW(p.validate());
  p.tau = 1.62;
  CHECK_THROWS(p.validate());
  p.tau = 1.0;
  p.rho1 = p.rho2 = 0.0;
  CHECK_THROWS(p.validate());
  p.rho1 = 1.0;
  p.beta = 0.0;
  CHECK_THROWS(p.validate());
  p.beta = 1.0;
  p.max_iter = 0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("make_interval_problem prior rules") {
  auto op = std::make_shared<const RoutingOperator>(RoutingMatrix::identity(2));
  const Vector l = Vector::Ones(4);
  const Matrix omega = Matrix::Zero(2, 2);
  const Matrix prev = Matrix::Constant(2, 2, 2.0), per = Matrix::Constant(2, 2, 4.0);
  const Matrix grav = Matrix::Constant(2, 2, 7.0);

  auto both = make_interval_problem(op, l, omega, &prev, &per, grav, 1.0, 3.0);
  CHECK(both.alpha == 4.0);
  CHECK((both.prior - Matrix::Constant(2, 2, 3.5)).norm() < 1e-15);

  auto transfer = make_interval_problem(op, l, omega, &prev, nullptr, grav, 1.0, 3.0);
  CHECK(transfer.alpha == 4.0);
  CHECK(transfer.prior == prev);

  auto drop = make_interval_problem(op, l, omega, &prev, nullptr, grav, 1.0, 3.0, PriorPolicy::drop);
  CHECK(drop.alpha == 1.0);
  CHECK(drop.prior == prev);

  auto first = make_interval_problem(op, l, omega, nullptr, nullptr, grav, 1.0, 3.0,
                                     PriorPolicy::drop);
  CHECK(first.alpha == 4.0);
  CHECK(first.prior == grav);
}

TEST_CASE("solve_interval on trivial and determined problems") {
  SUBCASE("zero problem stops after one iteration") {
    std::mt19937_64 rng(18);
    auto op = std::make_shared<const RoutingOperator>(test::random_routing(3, 5, rng));
    IntervalProblem p{op, Vector::Zero(5), Matrix::Zero(3, 3), Matrix::Zero(3, 3), 1.0};
    auto sol = solve_interval(p, SolverParams{});
    CHECK(sol.converged);
    CHECK(sol.iterations == 1);
    CHECK(sol.trace.back().eta == 0.0);
    CHECK(sol.estimate.isZero());
  }
  SUBCASE("identity routing recovers the truth") {
    SynthConfig cfg;
    cfg.nodes = 4;
    cfg.rank = 2;
    cfg.intervals = 1;
    cfg.zero_fraction = 0.5;
    cfg.seed = 3;
    auto inst = synthesize_instance(cfg);
    const Matrix& truth = inst.truth->slices[0];
    auto op = std::make_shared<const RoutingOperator>(RoutingMatrix::identity(4));
    IntervalProblem p{op, Eigen::Map<const Vector>(truth.data(), 16), inst.mask.interval(0, 4),
                      Matrix::Zero(4, 4), 1.0};
    SolverParams params;
    params.max_iter = 20000;
    auto sol = solve_interval(p, params);
    CHECK(sol.converged);
    CHECK(sol.trace.back().p1 <= params.epsilon);
    CHECK((sol.estimate - truth).norm() <= 1e-5 * truth.norm());
  }
}

TEST_CASE("solve_interval follows the symmetric Gauss-Seidel order") {
  std::mt19937_64 rng(19);
  auto f = random_fixture(3, 6, rng);
  std::string log;
  SolveOptions opts;
  opts.on_update = [&](Block b, const SolverState&) { log += block_name(b); };
  SolverParams params;
  params.max_iter = 2;
  solve_interval(f.problem, params, opts);
  CHECK(log == "UQVQUWGWXUQVQUWGWX");
}

TEST_CASE("solver iterates respect the cone and support invariants") {
  SynthConfig cfg;
  cfg.nodes = 5;
  cfg.rank = 2;
  cfg.intervals = 1;
  cfg.zero_fraction = 0.5;
  cfg.seed = 4;
  auto inst = synthesize_instance(cfg);
  auto op = std::make_shared<const RoutingOperator>(inst.routing);
  Vector l = inst.link_loads.col(0);
  auto p = make_interval_problem(op, l, inst.mask.interval(0, 5), nullptr, nullptr,
                                 gravity_estimate(l, *op), 0.5, 0.5);
  const Matrix off_mask = Matrix::Ones(5, 5) - p.omega;
  int violations = 0;
  SolveOptions opts;
  opts.on_update = [&](Block b, const SolverState& st) {
    if (b == Block::V && st.V.minCoeff() < 0.0)
      ++violations;
    if (b == Block::G && spectral_norm(st.G) > 1.0 + 1e-9)
      ++violations;
    if (b == Block::U && st.U.cwiseProduct(off_mask).cwiseAbs().maxCoeff() != 0.0)
      ++violations;
    if (b == Block::G) {
      // Right after the V and G updates their cone residuals vanish.
      auto r = kkt_residuals(st, p);
      if (r.v != 0.0 || r.g > 1e-12)
        ++violations;
    }
  };
  SolverParams params;
  params.max_iter = 300;
  solve_interval(p, params, opts);
  CHECK(violations == 0);
}

TEST_CASE("solve_interval convergence, Cauchy iterates and strong duality") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    SynthConfig cfg;
    cfg.nodes = 5 + static_cast<int>(seed % 3);
    cfg.rank = 1 + static_cast<int>(seed % 2);
    cfg.intervals = 1;
    cfg.zero_fraction = 0.5;
    cfg.seed = seed;
    auto inst = synthesize_instance(cfg);
    const int s = inst.S;
    auto op = std::make_shared<const RoutingOperator>(inst.routing);
    Vector l = inst.link_loads.col(0);
    auto p = make_interval_problem(op, l, inst.mask.interval(0, s), nullptr, nullptr,
                                   gravity_estimate(l, *op), 0.5, 0.5);
    SolverParams params;
    params.max_iter = 20000;
    Matrix last_x;
    double last_step = 0.0;
    SolveOptions opts;
    opts.on_update = [&](Block b, const SolverState& st) {
      if (b != Block::X)
        return;
      if (last_x.size())
        last_step = (st.X - last_x).norm();
      last_x = st.X;
    };
    auto sol = solve_interval(p, params, opts);
    CAPTURE(seed);
    REQUIRE(sol.converged);
    CHECK(sol.trace.back().eta < 1e-6);
    CHECK(sol.trace.back().p1 <= sol.trace.front().p1);

    // Keep iterating past the tolerance to see the sequence settle.
    SolverParams tight = params;
    tight.epsilon = 1e-12;
    tight.max_iter = sol.iterations + 3000;
    solve_interval(p, tight, opts);
    CHECK(last_step < 1e-8);

    const double primal = primal_objective(sol.estimate, p);
    const double dual = dual_objective(sol.state, p);
    CHECK(std::abs(primal - dual) <= 1e-4 * (1 + std::abs(primal)));
  }
}

TEST_CASE("solve_interval non-convergence and divergence paths") {
  std::mt19937_64 rng(20);
  auto f = random_fixture(3, 6, rng);
  SolverParams params;
  params.max_iter = 3;
  auto sol = solve_interval(f.problem, params);
  CHECK_FALSE(sol.converged);
  CHECK(sol.iterations == 3);
  CHECK(sol.trace.size() == 3);

  SolveOptions timed;
  timed.time_limit = 1e-12;
  params.max_iter = 1000;
  auto cut = solve_interval(f.problem, params, timed);
  CHECK_FALSE(cut.converged);
  CHECK(cut.iterations == 1);

  SolveOptions opts;
  opts.divergence_factor = 0.5; // any eta exceeds half of itself's running min
  params.max_iter = 50;
  CHECK_THROWS_WITH_AS(solve_interval(f.problem, params, opts),
                       doctest::Contains("iteration 1"), NumericError);
}

namespace {

// Projected subgradient on the primal with a Dykstra projection onto
// {R vec(X) = L, P_Omega(X) = 0} intersected with {X >= 0}.
double primal_subgradient_optimum(const IntervalProblem& p, int iterations) {
  const int s = p.nodes();
  const int n = s * s;
  const Matrix r = p.op->routing().dense();
  std::vector<int> masked;
  for (int k = 0; k < n; ++k)
    if (p.omega(k % s, k / s) == 1.0)
      masked.push_back(k);
  Matrix b(r.rows() + static_cast<Eigen::Index>(masked.size()), n);
  Vector rhs(b.rows());
  b.topRows(r.rows()) = r;
  rhs.head(r.rows()) = p.loads;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    b.row(r.rows() + static_cast<Eigen::Index>(i)) = Vector::Unit(n, masked[i]).transpose();
    rhs(r.rows() + static_cast<Eigen::Index>(i)) = 0.0;
  }
  const Matrix pinv = b.completeOrthogonalDecomposition().pseudoInverse();
  auto affine = [&](const Vector& x) { return Vector(x - pinv * (b * x - rhs)); };
  auto project = [&](Vector x) {
    Vector p_inc = Vector::Zero(n), q_inc = Vector::Zero(n);
    for (int it = 0; it < 2000; ++it) {
      Vector y = affine(x + p_inc);
      p_inc = x + p_inc - y;
      Vector z = (y + q_inc).cwiseMax(0.0);
      q_inc = y + q_inc - z;
      const double change = (z - x).norm();
      x = z;
      if (change < 1e-14)
        break;
    }
    return affine(x);
  };

  Vector x = project(Vector::Zero(n));
  double best = std::numeric_limits<double>::infinity();
  const double mu = 2.0 * p.alpha;
  for (int k = 1; k <= iterations; ++k) {
    Matrix xm = as_matrix(x, s);
    Eigen::JacobiSVD<Matrix> svd(xm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double f = svd.singularValues().sum() + p.alpha * (xm - p.prior).squaredNorm();
    if (xm.minCoeff() >= -1e-9)
      best = std::min(best, f);
    Matrix sub = svd.matrixU() * svd.matrixV().transpose() + 2.0 * p.alpha * (xm - p.prior);
    x = project(x - Eigen::Map<const Vector>(sub.data(), n) / (mu * k));
  }
  return best;
}

} // namespace

TEST_CASE("solve_interval matches an independent primal solver") {
  SynthConfig cfg;
  cfg.nodes = 4;
  cfg.rank = 1;
  cfg.intervals = 1;
  cfg.seed = 21;
  auto inst = synthesize_instance(cfg);
  auto op = std::make_shared<const RoutingOperator>(inst.routing);
  const Matrix& truth = inst.truth->slices[0];
  std::mt19937_64 rng(22);
  Matrix prior = (1.1 * truth + test::random_matrix(4, 4, rng, 0.0, 0.2)).eval();
  IntervalProblem p{op, inst.link_loads.col(0), inst.mask.interval(0, 4), prior, 1.0};

  SolverParams params;
  params.rho1 = params.rho2 = 0.5;
  params.max_iter = 20000;
  params.epsilon = 1e-9;
  auto sol = solve_interval(p, params);
  const double ours = primal_objective(sol.estimate, p);
  const double oracle = primal_subgradient_optimum(p, 20000);
  CHECK(std::abs(ours - oracle) <= 1e-3 * std::abs(oracle));
}

TEST_CASE("residual trace csv") {
  std::vector<Residuals> trace{{0.5, 0.25, 0.125, 0.0, 0.0, 0.5}, {1e-7, 0, 0, 0, 0, 1e-7}};
  CHECK(residual_trace_csv(trace) == "1,0.5,0.25,0.125,0,0,0.5\n2,1e-07,0,0,0,0,1e-07\n");
}

TEST_CASE("recover_sequence") {
  SUBCASE("single interval uses the gravity prior") {
    SynthConfig cfg;
    cfg.nodes = 4;
    cfg.intervals = 1;
    cfg.seed = 2;
    auto inst = synthesize_instance(cfg);
    auto res = recover_sequence(inst, SolverParams{});
    CHECK(res.estimate.intervals() == 1);
    CHECK(res.report.intervals.size() == 1);

    auto op = std::make_shared<const RoutingOperator>(inst.routing);
    Vector l = inst.link_loads.col(0);
    auto p = make_interval_problem(op, l, inst.mask.interval(0, 4), nullptr, nullptr,
                                   gravity_estimate(l, *op), 0.5, 0.5);
    CHECK(solve_interval(p, SolverParams{}).estimate == res.estimate.slices[0]);
  }
  SUBCASE("later intervals chain the previous estimate") {
    SynthConfig cfg;
    cfg.nodes = 4;
    cfg.intervals = 3;
    cfg.seed = 5;
    auto inst = synthesize_instance(cfg);
    SolverParams params;
    auto res = recover_sequence(inst, params);
    auto op = std::make_shared<const RoutingOperator>(inst.routing);
    for (int k = 1; k < 3; ++k) {
      auto p = make_interval_problem(op, inst.link_loads.col(k), inst.mask.interval(k, 4),
                                     &res.estimate.slices[k - 1], nullptr, Matrix::Zero(4, 4),
                                     params.rho1, params.rho2);
      CHECK(p.prior == res.estimate.slices[k - 1]);
      CHECK(solve_interval(p, params).estimate == res.estimate.slices[k]);
    }
  }
  SUBCASE("noiseless identity routing is recovered exactly") {
    SynthConfig cfg;
    cfg.nodes = 5;
    cfg.intervals = 4;
    cfg.rank = 2;
    cfg.zero_fraction = 0.5;
    cfg.seed = 6;
    auto inst = synthesize_instance(cfg);
    inst.routing = RoutingMatrix::identity(5);
    inst.M = 25;
    inst.link_loads = inst.truth->as_od_matrix();
    SolverParams params;
    params.max_iter = 20000;
    auto res = recover_sequence(inst, params, {.period = 2});
    double num = 0, den = 0;
    for (int k = 0; k < 4; ++k) {
      num += (res.estimate.slices[k] - inst.truth->slices[k]).cwiseAbs().sum();
      den += inst.truth->slices[k].sum();
    }
    CHECK(num / den <= 1e-6);
    CHECK(res.report.unconverged().empty());
  }
}
