#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "regtr/fredholm.hpp"
#include "regtr/subproblem.hpp"

using namespace regtr;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

EvalPoint diagonal_point(double g0, double g1) {
  // J = I and residual = g give B = I, gradient = g.
  Vector r(2);
  r << g0, g1;
  return oracle::make_point(Matrix::Identity(2, 2), r);
}

EvalPoint scalar_point(double j, double r) {
  return oracle::make_point(Matrix::Constant(1, 1, j), Vector::Constant(1, r));
}

}  // namespace

// ---------------------------------------------------------------------------
// solve_shifted

TEST(SolveShifted, DiagonalSystem) {
  const ShiftedSolve s = solve_shifted(diagonal_point(2.0, 0.0), 1.0);
  EXPECT_NEAR(s.p(0), -1.0, 1e-15);
  EXPECT_NEAR(s.p(1), 0.0, 1e-15);
  EXPECT_NEAR(s.p_norm, 1.0, 1e-15);
  EXPECT_EQ(s.chol_count, 1);
}

TEST(SolveShifted, ResubstitutionResidual) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 10, t % 3);
    for (double lam : {1e-6, 1e-2, 1.0, 1e3}) {
      const ShiftedSolve s = solve_shifted(pt, lam);
      const Vector res = pt.gauss_newton * s.p + lam * s.p + pt.gradient;
      EXPECT_LE(res.norm(), 1e-10 * (pt.gradient.norm() + 1.0));
    }
  }
}

TEST(SolveShifted, LargeLambdaLimit) {
  std::mt19937_64 rng(3);
  const EvalPoint pt = oracle::random_instance(rng, 8);
  const ShiftedSolve s = solve_shifted(pt, 1e12);
  EXPECT_LE(rel(s.model_residual_norm, pt.residual_norm()), 1e-4);
}

TEST(SolveShifted, MatchesSvdFormulaAtFixedLambda) {
  std::mt19937_64 rng(10);
  const EvalPoint pt = oracle::random_instance(rng, 10);
  const SvdDiagnostics d = svd_diagnostics(pt);
  const ShiftedSolve s = solve_shifted(pt, 0.37);
  EXPECT_LE(rel(s.p_norm, d.p_norm(0.37)), 1e-8);
  EXPECT_LE(rel(s.model_residual_norm, d.model_residual_norm(0.37)), 1e-8);
}

TEST(SolveShifted, OracleEquivalenceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> loglam(-6.0, 2.0);
  for (int seed = 0; seed < 100; ++seed) {
    const int n = std::array<int, 3>{5, 10, 20}[seed % 3];
    const int deficiency = seed % 2 ? 1 + seed % 3 : 0;
    const EvalPoint pt = oracle::random_instance(rng, n, deficiency);
    const SvdDiagnostics d = svd_diagnostics(pt);
    EXPECT_EQ(d.rank, n - deficiency);
    const double lam = std::pow(10.0, loglam(rng));
    const ShiftedSolve s = solve_shifted(pt, lam);
    EXPECT_LE(rel(s.p_norm, d.p_norm(lam)), 1e-8) << "seed " << seed;
    EXPECT_LE(rel(s.model_residual_norm, d.model_residual_norm(lam)), 1e-8) << "seed " << seed;
  }
}

TEST(SolveShifted, MonotoneInLambda) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 10, t % 2);
    double prev_p = std::numeric_limits<double>::infinity(), prev_r = 0.0;
    for (double lam = 1e-5; lam < 1e4; lam *= 3.0) {
      const ShiftedSolve s = solve_shifted(pt, lam);
      EXPECT_LT(s.p_norm, prev_p);
      EXPECT_GT(s.model_residual_norm, prev_r);
      prev_p = s.p_norm;
      prev_r = s.model_residual_norm;
    }
  }
}

TEST(SolveShifted, SingularAtZero) {
  Matrix J = Matrix::Identity(2, 2);
  J(1, 1) = 0.0;
  const EvalPoint pt = oracle::make_point(J, Vector::Ones(2));
  try {
    solve_shifted(pt, 0.0);
    FAIL() << "expected SubproblemError";
  } catch (const SubproblemError& e) {
    EXPECT_EQ(e.code(), SubproblemErrc::singular_at_zero);
  }
  EXPECT_THROW(solve_shifted(pt, -1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// psi

TEST(Psi, ScalarTrustRegionClosedForm) {
  // B = 1, g = 2, Delta = 1: psi = (1 + lambda)/2 - 1, psi' = 1/2.
  const EvalPoint pt = scalar_point(1.0, 2.0);
  for (double lam : {0.0, 0.5, 1.0, 4.0}) {
    const PsiValue v = psi_and_derivative(pt, lam, RadiusTarget{1.0});
    EXPECT_NEAR(v.value, (1.0 + lam) / 2.0 - 1.0, 1e-15);
    EXPECT_NEAR(v.derivative, 0.5, 1e-15);
  }
}

TEST(Psi, DerivativeMatchesCentralDifference) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 30; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 10, t % 2);
    const double lam = std::pow(10.0, -3.0 + 0.15 * t);
    const double h = 1e-6 * lam;
    const RadiusTarget tr{0.5 * solve_shifted(pt, lam).p_norm};
    const ResidualRatioTarget lm{0.733, pt.residual_norm()};
    const PsiValue a = psi_and_derivative(pt, lam, tr);
    const double fa = (psi_and_derivative(pt, lam + h, tr).value - psi_and_derivative(pt, lam - h, tr).value) / (2 * h);
    EXPECT_LE(rel(a.derivative, fa), 1e-4) << "TR, t=" << t;
    const PsiValue b = psi_and_derivative(pt, lam, lm);
    const double fb = (psi_and_derivative(pt, lam + h, lm).value - psi_and_derivative(pt, lam - h, lm).value) / (2 * h);
    EXPECT_LE(std::abs(b.derivative - fb), 1e-4 * std::max(std::abs(fb), 1.0 / pt.residual_norm()))
        << "LM, t=" << t;
  }
}

TEST(Psi, ResidualRatioPsiIsConcave) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 20; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 10);
    const ResidualRatioTarget target{0.733, pt.residual_norm()};
    // sample on a uniform grid so that second differences are meaningful
    for (double hstep : {1e-3, 1e-1, 10.0}) {
      double prev2 = psi_and_derivative(pt, hstep, target).value;
      double prev1 = psi_and_derivative(pt, 2 * hstep, target).value;
      for (int i = 3; i < 40; ++i) {
        const double cur = psi_and_derivative(pt, i * hstep, target).value;
        EXPECT_LE(cur - 2 * prev1 + prev2, 1e-10) << "t=" << t << " h=" << hstep << " i=" << i;
        prev2 = prev1;
        prev1 = cur;
      }
    }
  }
}

TEST(Psi, VanishesAtComputedRoots) {
  std::mt19937_64 rng(29);
  const EvalPoint pt = oracle::random_instance(rng, 12);
  const double radius = 0.3 * solve_shifted(pt, 0.0).p_norm;
  const ShiftedSolve s = tr_secular_newton(pt, radius);
  EXPECT_LE(std::abs(psi_and_derivative(s, RadiusTarget{radius}).value), 2e-2 / radius);
  const ShiftedSolve l = lm_secular_newton(pt, 0.733);
  EXPECT_LE(std::abs(psi_and_derivative(l, ResidualRatioTarget{0.733, pt.residual_norm()}).value),
            1e-4 * l.lambda / pt.residual_norm());
}

// ---------------------------------------------------------------------------
// tr_secular_newton

TEST(TrSecular, InteriorSolution) {
  const ShiftedSolve s = tr_secular_newton(diagonal_point(2.0, 0.0), 3.0);
  EXPECT_EQ(s.lambda, 0.0);
  EXPECT_NEAR(s.p(0), -2.0, 1e-15);
  EXPECT_EQ(s.chol_count, 1);
}

TEST(TrSecular, BoundarySolution) {
  const ShiftedSolve s = tr_secular_newton(diagonal_point(2.0, 0.0), 1.0);
  EXPECT_LE(std::abs(s.p_norm - 1.0), 1e-2);
  EXPECT_NEAR(s.lambda, 1.0, 2.5e-2);
  EXPECT_NEAR(s.p(1), 0.0, 1e-15);
}

TEST(TrSecular, MatchesBisectionOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 12);
    const oracle::EigenModel model(pt);
    const double radius = 0.5 * model.p_norm(0.0);
    const ShiftedSolve s = tr_secular_newton(pt, radius);
    const double root = oracle::log_bisect([&](double l) { return model.p_norm(l) - radius; }, 1e-14, 1e8);
    EXPECT_LE(std::abs(s.p_norm - radius), 1e-2 * radius);
    EXPECT_LE(std::abs(model.p_norm(s.lambda) - model.p_norm(root)), 1e-2 * radius);
  }
}

TEST(TrSecular, RankDeficientGaussNewton) {
  // g lies in range(B), so ||p(lambda)|| tends to the minimum-norm
  // Gauss-Newton step as lambda -> 0+. Radii beyond it have no boundary root.
  std::mt19937_64 rng(37);
  for (int t = 0; t < 30; ++t) {
    const int deficiency = 1 + t % 3;
    const EvalPoint pt = oracle::random_instance(rng, 10, deficiency);
    Eigen::JacobiSVD<Matrix> svd(pt.jacobian, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-8);
    const Vector pdag = -svd.solve(pt.residual);
    const double pmin = pdag.norm();
    const double best_model = (pt.residual + pt.jacobian * pdag).norm();
    const double radius = std::pow(10.0, -3.0 + 0.2 * t);
    const ShiftedSolve s = tr_secular_newton(pt, radius);
    if (radius < pmin) {
      EXPECT_GT(s.lambda, 0.0);
      EXPECT_LE(std::abs(s.p_norm - radius), 1e-2 * radius) << "t=" << t;
    } else {
      // any global model minimizer inside the region will do
      EXPECT_LE(s.p_norm, radius);
      EXPECT_LE(rel(s.model_residual_norm, best_model), 1e-6) << "t=" << t;
    }
  }
}

TEST(TrSecular, StationaryPointSignal) {
  try {
    tr_secular_newton(diagonal_point(0.0, 0.0), 1.0);
    FAIL();
  } catch (const SubproblemError& e) {
    EXPECT_EQ(e.code(), SubproblemErrc::stationary_point);
  }
}

TEST(TrSecular, RejectsNonPositiveRadius) {
  EXPECT_THROW(tr_secular_newton(diagonal_point(1.0, 0.0), 0.0), std::invalid_argument);
}

TEST(TrSecular, IterationCapSignal) {
  std::mt19937_64 rng(41);
  const EvalPoint pt = oracle::random_instance(rng, 12);
  const double radius = 1e-3 * solve_shifted(pt, 0.0).p_norm;
  try {
    tr_secular_newton(pt, radius, {1e-14, 1});
    FAIL();
  } catch (const SubproblemError& e) {
    EXPECT_EQ(e.code(), SubproblemErrc::iteration_cap);
    EXPECT_GT(e.chol_count(), 0);
  }
}

TEST(TrSecular, SmallRadiusKeepsQCondition) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> frac(0.01, 1.0);
  const double q = 1.1 / 1.5;
  for (int t = 0; t < 100; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 5 + t % 16, t % 4 == 0 ? 1 : 0);
    const double b2 = Eigen::JacobiSVD<Matrix>(pt.jacobian).singularValues()(0);
    const double bound = (1.0 - q) * pt.gradient.norm() / (b2 * b2);
    const ShiftedSolve s = tr_secular_newton(pt, frac(rng) * bound);
    EXPECT_GE(q_ratio(pt, s.p), q - 1e-8) << "t=" << t;
  }
}

// ---------------------------------------------------------------------------
// lm_secular_newton

TEST(LmSecular, ScalarClosedForm) {
  // J = 1: ||r(lambda)|| = lambda |r| / (1 + lambda), root lambda = q / (1 - q).
  const ShiftedSolve s = lm_secular_newton(scalar_point(1.0, 3.0), 0.5);
  EXPECT_NEAR(s.lambda, 1.0, 1e-4);
  EXPECT_LE(std::abs(s.model_residual_norm - 1.5), 1e-5 * 3.0);
}

TEST(LmSecular, MeetsTargetAndObeysBound) {
  std::mt19937_64 rng(47);
  const double q = 0.733;
  for (int t = 0; t < 50; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 10);
    const oracle::EigenModel model(pt);
    const double rn = pt.residual_norm();
    const ShiftedSolve s = lm_secular_newton(pt, q);
    const double bnorm = Eigen::JacobiSVD<Matrix>(pt.jacobian).singularValues()(0);
    EXPECT_GT(s.lambda, 0.0);
    EXPECT_LE(s.lambda, q / (1.0 - q) * bnorm * bnorm * (1.0 + 1e-12));
    EXPECT_LE(std::abs(s.model_residual_norm - q * rn), 1e-5 * rn);
    // the default stopping rule bounds the residual gap, not the lambda error
    EXPECT_LE(std::abs(model.model_residual_norm(s.lambda) - q * rn), 1e-5 * rn) << "t=" << t;
  }
}

TEST(LmSecular, TightToleranceMatchesBisectionClosely) {
  std::mt19937_64 rng(53);
  const double q = 0.733;
  const EvalPoint pt = oracle::random_instance(rng, 10);
  const oracle::EigenModel model(pt);
  const double rn = pt.residual_norm();
  const ShiftedSolve s = lm_secular_newton(pt, q, {1e-13, 50});
  const double root = oracle::log_bisect([&](double l) { return model.model_residual_norm(l) - q * rn; }, 1e-14, 1e10);
  EXPECT_LE(rel(s.lambda, root), 1e-6);
}

TEST(LmSecular, NewtonIteratesDecreaseMonotonically) {
  std::mt19937_64 rng(59);
  const double q = 0.733;
  for (int t = 0; t < 50; ++t) {
    const EvalPoint pt = oracle::random_instance(rng, 5 + 5 * (t % 3));
    const oracle::EigenModel model(pt);
    const double rn = pt.residual_norm();
    const ShiftedSolve s = lm_secular_newton(pt, q, {1e-10, 50});
    const double root = oracle::log_bisect([&](double l) { return model.model_residual_norm(l) - q * rn; }, 1e-14, 1e10);
    ASSERT_FALSE(s.lambda_path.empty());
    for (std::size_t i = 1; i < s.lambda_path.size(); ++i) EXPECT_LT(s.lambda_path[i], s.lambda_path[i - 1]);
    for (double l : s.lambda_path) EXPECT_GE(l, root * (1.0 - 1e-8));
  }
}

TEST(LmSecular, InfeasibleWhenResidualOutsideRange) {
  // J has a zero column and the residual lies mostly in the orthogonal
  // complement of its range, so ||P(F-y)|| >= q ||F-y||.
  Matrix J = Matrix::Zero(2, 2);
  J(0, 0) = 1.0;
  Vector r(2);
  r << 0.1, 1.0;
  const EvalPoint pt = oracle::make_point(J, r);
  const SvdDiagnostics d = svd_diagnostics(pt);
  for (const SvdDiagnostics* dp : {&d, static_cast<const SvdDiagnostics*>(nullptr)}) {
    try {
      lm_secular_newton(pt, 0.733, {}, dp);
      FAIL();
    } catch (const SubproblemError& e) {
      EXPECT_EQ(e.code(), SubproblemErrc::q_equation_infeasible);
    }
  }
}

TEST(LmSecular, AlreadyConvergedSignal) {
  try {
    lm_secular_newton(scalar_point(1.0, 0.0), 0.5);
    FAIL();
  } catch (const SubproblemError& e) {
    EXPECT_EQ(e.code(), SubproblemErrc::already_converged);
  }
}

// ---------------------------------------------------------------------------
// q_ratio and diagnostics

TEST(QRatio, ZeroStepIsOne) {
  std::mt19937_64 rng(61);
  const EvalPoint pt = oracle::random_instance(rng, 6);
  EXPECT_DOUBLE_EQ(q_ratio(pt, Vector::Zero(6)), 1.0);
}

TEST(QRatio, GaussNewtonStepIsZero) {
  std::mt19937_64 rng(67);
  const EvalPoint pt = oracle::random_instance(rng, 6);
  const Vector p = -pt.jacobian.fullPivLu().solve(pt.residual);
  EXPECT_LE(q_ratio(pt, p), 1e-10);
}

TEST(QRatio, ZeroResidualSignal) {
  EXPECT_THROW(q_ratio(scalar_point(1.0, 0.0), Vector::Zero(1)), SubproblemError);
}

TEST(SvdDiagnosticsTest, IdentityJacobian) {
  Vector r(3);
  r << 1, -2, 0.5;
  const SvdDiagnostics d = svd_diagnostics(oracle::make_point(Matrix::Identity(3, 3), r));
  EXPECT_EQ(d.rank, 3);
  EXPECT_NEAR(d.r.norm(), r.norm(), 1e-14);
  EXPECT_EQ(d.projector_residual_norm, 0.0);
}

TEST(SvdDiagnosticsTest, ZeroColumnRankOne) {
  Matrix J(2, 2);
  J << 1, 0, 1, 0;
  Vector r(2);
  r << 1.0, -1.0;
  const SvdDiagnostics d = svd_diagnostics(oracle::make_point(J, r));
  EXPECT_EQ(d.rank, 1);
  EXPECT_GT(d.projector_residual_norm, 0.0);
  EXPECT_NEAR(d.model_residual_norm(1e-3), std::sqrt(2.0), 1e-12);
}

TEST(SvdDiagnosticsTest, P1CrossCheck) {
  const auto prob = fredholm::build_problem(fredholm::ProblemId::P1, 64, 1e-4, 1);
  const EvalPoint pt = evaluate_point(prob.system(), fredholm::initial_guess(prob, "0e"));
  const SvdDiagnostics d = svd_diagnostics(pt);
  for (double lam : {1e-4, 1e-2, 1.0}) {
    const ShiftedSolve s = solve_shifted(pt, lam);
    EXPECT_LE(rel(s.p_norm, d.p_norm(lam)), 1e-8) << lam;
    EXPECT_LE(rel(s.model_residual_norm, d.model_residual_norm(lam)), 1e-8) << lam;
  }
}
