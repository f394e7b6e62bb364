#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "regtr/core.hpp"

namespace regtr {

enum class SubproblemErrc {
  singular_at_zero,
  stationary_point,
  already_converged,
  q_equation_infeasible,
  iteration_cap,
  diagnostics_unavailable,
};

inline const char* to_string(SubproblemErrc e) {
  switch (e) {
    case SubproblemErrc::singular_at_zero: return "singular-at-zero";
    case SubproblemErrc::stationary_point: return "stationary-point";
    case SubproblemErrc::already_converged: return "already-converged";
    case SubproblemErrc::q_equation_infeasible: return "q-equation-infeasible";
    case SubproblemErrc::iteration_cap: return "subproblem-failure";
    case SubproblemErrc::diagnostics_unavailable: return "diagnostics-unavailable";
  }
  return "unknown";
}

class SubproblemError : public std::runtime_error {
 public:
  SubproblemError(SubproblemErrc code, const std::string& detail, int chol_count = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        chol_count_(chol_count) {}

  SubproblemErrc code() const noexcept { return code_; }
  /// Factorizations spent before the failure was detected.
  int chol_count() const noexcept { return chol_count_; }

 private:
  SubproblemErrc code_;
  int chol_count_;
};

/// Step p(lambda) solving (B + lambda I) p = -g, with the quantities the
/// secular iterations differentiate.
struct ShiftedSolve {
  double lambda = 0.0;
  Vector p;
  double p_norm = 0.0;
  double model_residual_norm = 0.0;  // ||F - y^delta + J p||
  double w_norm_sq = 0.0;            // p^T (B + lambda I)^{-1} p = ||L^{-1} p||^2
  int chol_count = 0;
  int newton_iterations = 0;
  std::vector<double> lambda_path;   // secular iterates, in order
};

/// Solves (B + lambda I) p = -g with one Cholesky factorization.
/// Throws singular_at_zero if the shifted matrix is not numerically SPD.
inline ShiftedSolve solve_shifted(const Matrix& B, const Vector& g, const Vector& residual,
                                  const Matrix& J, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  Matrix shifted = B;
  shifted.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(shifted);
  ShiftedSolve out;
  out.lambda = lambda;
  out.chol_count = 1;
  if (llt.info() != Eigen::Success)
    throw SubproblemError(SubproblemErrc::singular_at_zero, "Cholesky breakdown of B + lambda I", 1);
  out.p = llt.solve(-g);
  if (!out.p.allFinite())
    throw SubproblemError(SubproblemErrc::singular_at_zero, "non-finite shifted solve", 1);
  const Vector w = llt.matrixL().solve(out.p);
  out.p_norm = out.p.norm();
  out.w_norm_sq = w.squaredNorm();
  out.model_residual_norm = (residual + J * out.p).norm();
  return out;
}

inline ShiftedSolve solve_shifted(const EvalPoint& pt, double lambda) {
  return solve_shifted(pt.gauss_newton, pt.gradient, pt.residual, pt.jacobian, lambda);
}

/// Target of the trust-region secular equation 1/||p(lambda)|| - 1/Delta = 0.
struct RadiusTarget {
  double radius;
};

/// Target of the Levenberg-Marquardt equation ||F - y + J p(lambda)|| = q ||F - y||.
struct ResidualRatioTarget {
  double q;
  double residual_norm;  // ||F - y^delta|| at the current iterate
};

struct PsiValue {
  double value;
  double derivative;
};

/// psi(lambda) = 1/||p|| - 1/Delta, with d||p||/dlambda = -||w||^2 / ||p||.
inline PsiValue psi_and_derivative(const ShiftedSolve& s, RadiusTarget t) {
  const double pn = s.p_norm;
  return {1.0 / pn - 1.0 / t.radius, s.w_norm_sq / (pn * pn * pn)};
}

/// psi(lambda) = lambda/||r(lambda)|| - lambda/(q ||F - y||) where r is the
/// linearized residual; uses d||r||/dlambda = lambda ||w||^2 / ||r||.
inline PsiValue psi_and_derivative(const ShiftedSolve& s, ResidualRatioTarget t) {
  const double r = s.model_residual_norm;
  const double lam = s.lambda;
  const double c = 1.0 / (t.q * t.residual_norm);
  const double value = lam / r - lam * c;
  const double derivative = 1.0 / r - lam * lam * s.w_norm_sq / (r * r * r) - c;
  return {value, derivative};
}

template <class Target>
PsiValue psi_and_derivative(const EvalPoint& pt, double lambda, Target t) {
  return psi_and_derivative(solve_shifted(pt, lambda), t);
}

/// SVD of J and the spectral data r = U^T (F - y^delta).
struct SvdDiagnostics {
  Vector singular_values;  // descending
  Eigen::Index rank = 0;
  Vector r;
  double projector_residual_norm = 0.0;  // ||P (F - y^delta)||, P onto R(J)^perp

  double largest_singular_value() const {
    return singular_values.size() ? singular_values(0) : 0.0;
  }

  /// ||p(lambda)|| from the spectral sum over the numerical rank.
  double p_norm(double lambda) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rank; ++i) {
      const double s2 = singular_values(i) * singular_values(i);
      const double t = singular_values(i) * r(i) / (s2 + lambda);
      acc += t * t;
    }
    return std::sqrt(acc);
  }

  /// ||F - y + J p(lambda)|| from the spectral sums.
  double model_residual_norm(double lambda) const {
    double acc = projector_residual_norm * projector_residual_norm;
    for (Eigen::Index i = 0; i < rank; ++i) {
      const double s2 = singular_values(i) * singular_values(i);
      const double t = lambda * r(i) / (s2 + lambda);
      acc += t * t;
    }
    return std::sqrt(acc);
  }
};

/// Rank is the count of singular values above sqrt(eps) * sigma_1.
inline SvdDiagnostics svd_diagnostics(const Matrix& J, const Vector& residual) {
  Eigen::JacobiSVD<Matrix> svd(J, Eigen::ComputeFullU);
  SvdDiagnostics d;
  d.singular_values = svd.singularValues();
  if (!d.singular_values.allFinite())
    throw SubproblemError(SubproblemErrc::diagnostics_unavailable, "SVD produced non-finite values");
  const double drop = std::sqrt(std::numeric_limits<double>::epsilon()) * d.largest_singular_value();
  d.rank = 0;
  while (d.rank < d.singular_values.size() && d.singular_values(d.rank) > drop) ++d.rank;
  d.r = svd.matrixU().transpose() * residual;
  d.projector_residual_norm = d.r.tail(d.r.size() - d.rank).norm();
  return d;
}

inline SvdDiagnostics svd_diagnostics(const EvalPoint& pt) {
  return svd_diagnostics(pt.jacobian, pt.residual);
}

/// ||B||_2 when the spectrum is known, else the Frobenius norm (an upper bound).
inline double gauss_newton_norm(const EvalPoint& pt, const SvdDiagnostics* diag = nullptr) {
  if (diag) {
    const double s = diag->largest_singular_value();
    return s * s;
  }
  return pt.gauss_newton.norm();
}

/// ||F - y + J p|| / ||F - y||.
inline double q_ratio(const EvalPoint& pt, const Vector& p) {
  const double rn = pt.residual_norm();
  if (rn == 0.0) throw SubproblemError(SubproblemErrc::already_converged, "zero residual");
  return (pt.residual + pt.jacobian * p).norm() / rn;
}

struct TrSecularOptions {
  double tol_rel = 1e-2;
  int max_iter = 50;
};

/// Trust-region step: lambda = 0 when the Gauss-Newton step fits inside the
/// radius, otherwise Newton on 1/||p(lambda)|| - 1/Delta = 0, stopped when
/// | ||p|| - Delta | <= tol_rel * Delta.
///
/// The Newton iterates are kept inside a bracket [lo, hi] built from the
/// sign of psi and Cholesky breakdowns; an iterate leaving it is replaced by
/// a (geometric) bisection.
inline ShiftedSolve tr_secular_newton(const EvalPoint& pt, double radius,
                                      TrSecularOptions opt = {}) {
  if (!(radius > 0.0)) throw std::invalid_argument("trust-region radius must be positive");
  const double gnorm = pt.gradient.norm();
  if (gnorm == 0.0) throw SubproblemError(SubproblemErrc::stationary_point, "zero gradient");

  int chol = 0;
  std::vector<double> path;
  const RadiusTarget target{radius};
  auto converged = [&](const ShiftedSolve& s) {
    return std::abs(s.p_norm - radius) <= opt.tol_rel * radius;
  };
  auto finish = [&](ShiftedSolve s, int newton_it) {
    s.chol_count = chol;
    s.newton_iterations = newton_it;
    s.lambda_path = std::move(path);
    return s;
  };

  // ||p(lambda)|| <= ||g|| / lambda gives an upper bound; ||p|| >= ||g|| / (||B|| + lambda)
  // a lower one.
  double hi = gnorm / radius;
  double lo = std::max(0.0, gnorm / radius - pt.gauss_newton.norm());
  // smallest-lambda step found strictly inside the region
  std::optional<ShiftedSolve> inside;
  auto collapsed = [&]() { return lo > 0.0 && hi - lo <= 1e-12 * hi; };
  auto bisect = [&]() { return lo > 0.0 ? std::sqrt(lo * hi) : 1e-3 * hi; };

  double lambda = 0.0;
  for (int it = 0; it <= opt.max_iter; ++it) {
    ShiftedSolve s;
    try {
      ++chol;
      s = solve_shifted(pt, lambda);
    } catch (const SubproblemError& e) {
      if (e.code() != SubproblemErrc::singular_at_zero) throw;
      lo = std::max(lo, lambda);
      // the root lies below the Cholesky breakdown point: take the inside step
      if (collapsed() && inside) return finish(std::move(*inside), it);
      lambda = it == 0 && lo == 0.0 ? 1e-6 * hi : bisect();
      continue;
    }
    if (it == 0) {
      if (s.p_norm <= radius) return finish(std::move(s), 0);
    } else {
      path.push_back(lambda);
      if (converged(s)) return finish(std::move(s), it);
    }
    const PsiValue psi = psi_and_derivative(s, target);
    if (psi.value < 0.0) {
      lo = std::max(lo, lambda);
    } else {
      hi = std::min(hi, lambda);
      inside = s;
    }
    if (collapsed() && inside) return finish(std::move(*inside), it);
    double next = lambda - psi.value / psi.derivative;
    if (!std::isfinite(next) || !(next > lo && next < hi)) next = bisect();
    lambda = next;
  }
  throw SubproblemError(SubproblemErrc::iteration_cap,
                        "trust-region secular equation did not converge", chol);
}

struct LmSecularOptions {
  double tol = 1e-5;
  int max_iter = 50;
};

/// Levenberg-Marquardt parameter lambda^q solving
/// ||F - y + J p(lambda)|| = q ||F - y||, by Newton on
/// psi(lambda) = lambda/||r(lambda)|| - lambda/(q ||F - y||) started from the
/// upper bound q/(1-q) ||B||. The iterates decrease monotonically.
///
/// When `diag` is given the solvability test ||P(F-y)|| < q ||F-y|| is done
/// up front and ||B||_2 is used for the starting point.
inline ShiftedSolve lm_secular_newton(const EvalPoint& pt, double q, LmSecularOptions opt = {},
                                      const SvdDiagnostics* diag = nullptr) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
  const double rn = pt.residual_norm();
  if (rn == 0.0) throw SubproblemError(SubproblemErrc::already_converged, "zero residual");
  if (pt.gradient.norm() == 0.0)
    throw SubproblemError(SubproblemErrc::stationary_point, "zero gradient");
  if (diag && diag->projector_residual_norm >= q * rn)
    throw SubproblemError(SubproblemErrc::q_equation_infeasible,
                          "||P(F-y)||/||F-y|| = " + std::to_string(diag->projector_residual_norm / rn));

  const ResidualRatioTarget target{q, rn};
  const double lambda0 = q / (1.0 - q) * gauss_newton_norm(pt, diag);
  // below this the iteration is heading for lambda = 0: no positive root
  const double floor = lambda0 * 1e-15;
  int chol = 0;
  std::vector<double> path;
  double lambda = lambda0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    ShiftedSolve s;
    try {
      ++chol;
      s = solve_shifted(pt, lambda);
    } catch (const SubproblemError& e) {
      if (e.code() != SubproblemErrc::singular_at_zero) throw;
      throw SubproblemError(SubproblemErrc::q_equation_infeasible,
                            "lambda driven to the singular limit", chol);
    }
    path.push_back(lambda);
    if (std::abs(s.model_residual_norm - q * rn) <= opt.tol * rn) {
      s.chol_count = chol;
      s.newton_iterations = it;
      s.lambda_path = std::move(path);
      return s;
    }
    const PsiValue psi = psi_and_derivative(s, target);
    const double next = lambda - psi.value / psi.derivative;
    if (!std::isfinite(next) || next <= floor)
      throw SubproblemError(SubproblemErrc::q_equation_infeasible,
                            "Newton iterate left (0, inf)", chol);
    lambda = next;
  }
  throw SubproblemError(SubproblemErrc::iteration_cap,
                        "q-equation Newton iteration did not converge", chol);
}

}  // namespace regtr
