#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace regtr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ResidualFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

/// Raised when F (or a finite-difference probe of F) produces a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, Vector x)
      : std::runtime_error(what), x_(std::move(x)) {}

  const Vector& point() const noexcept { return x_; }

 private:
  Vector x_;
};

/// Square nonlinear system F(x) = y^delta with known noise level.
///
/// The map is held by value and must be re-entrant; instances are never
/// mutated after construction and can be shared across threads.
struct NonlinearSystem {
  Eigen::Index dimension = 0;
  ResidualFn evaluate;
  Vector data;                 // y^delta
  double noise_level = 0.0;    // delta
  std::optional<Vector> exact_data;
  JacobianFn jacobian;         // empty => forward differences
  std::vector<Vector> true_solutions;  // used only for error tracing

  /// Throws std::invalid_argument when the fields are mutually inconsistent.
  void validate() const {
    if (dimension <= 0) throw std::invalid_argument("system dimension must be positive");
    if (!evaluate) throw std::invalid_argument("system has no evaluation callback");
    if (data.size() != dimension) throw std::invalid_argument("data size does not match dimension");
    if (!(noise_level >= 0.0)) throw std::invalid_argument("noise level must be nonnegative");
    if (exact_data && exact_data->size() != dimension)
      throw std::invalid_argument("exact data size does not match dimension");
    for (const auto& xt : true_solutions)
      if (xt.size() != dimension) throw std::invalid_argument("true solution size mismatch");
  }
};

/// Everything the step computations need at one iterate.
struct EvalPoint {
  Vector x;
  Vector residual;  // F(x) - y^delta
  Matrix jacobian;
  Matrix gauss_newton;  // J^T J
  Vector gradient;      // J^T (F(x) - y^delta)
  double phi = 0.0;     // 0.5 ||F(x) - y^delta||^2

  double residual_norm() const { return residual.norm(); }
};

namespace detail {

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline Vector checked_eval(const NonlinearSystem& sys, const Vector& x) {
  Vector fx = sys.evaluate(x);
  if (fx.size() != sys.dimension)
    throw std::invalid_argument("evaluation returned a vector of the wrong size");
  if (!all_finite(fx)) throw EvaluationError("non-finite value of F", x);
  return fx;
}

}  // namespace detail

/// Forward-difference Jacobian. Column j uses h_j = sqrt(eps) * max(|x_j|, 1)
/// carrying the sign of x_j (positive for x_j == 0).
inline Matrix fd_jacobian(const NonlinearSystem& sys, const Vector& x, const Vector& fx) {
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  const Eigen::Index n = x.size();
  Matrix jac(fx.size(), n);
  Vector xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double xj = x(j);
    double h = root_eps * std::max(std::abs(xj), 1.0);
    if (xj < 0.0) h = -h;
    xp(j) = xj + h;
    // exact representable increment
    const double hj = xp(j) - xj;
    Vector fp = sys.evaluate(xp);
    if (!detail::all_finite(fp)) throw EvaluationError("non-finite value of F in finite-difference probe", xp);
    jac.col(j) = (fp - fx) / hj;
    xp(j) = xj;
  }
  return jac;
}

/// Builds the EvalPoint at x when F(x) is already known.
inline EvalPoint evaluate_point(const NonlinearSystem& sys, const Vector& x, const Vector& fx) {
  EvalPoint pt;
  pt.x = x;
  pt.residual = fx - sys.data;
  if (sys.jacobian) {
    pt.jacobian = sys.jacobian(x);
    if (!pt.jacobian.allFinite()) throw EvaluationError("non-finite Jacobian", x);
  } else {
    pt.jacobian = fd_jacobian(sys, x, fx);
  }
  // symmetric by construction: only the lower triangle is accumulated
  const Eigen::Index n = x.size();
  pt.gauss_newton = Matrix::Zero(n, n);
  pt.gauss_newton.selfadjointView<Eigen::Lower>().rankUpdate(pt.jacobian.transpose());
  pt.gauss_newton = pt.gauss_newton.selfadjointView<Eigen::Lower>();
  pt.gradient = pt.jacobian.transpose() * pt.residual;
  pt.phi = 0.5 * pt.residual.squaredNorm();
  return pt;
}

/// Evaluates F, J and the derived least-squares quantities at x.
inline EvalPoint evaluate_point(const NonlinearSystem& sys, const Vector& x) {
  if (x.size() != sys.dimension) throw std::invalid_argument("point dimension mismatch");
  if (!detail::all_finite(x)) throw EvaluationError("non-finite iterate", x);
  return evaluate_point(sys, x, detail::checked_eval(sys, x));
}

/// Threshold used by the discrepancy principle. For exact data (delta == 0)
/// a floor of 1e-12 * (1 + ||y||) replaces tau * delta.
inline double discrepancy_threshold(double delta, double tau, const Vector& data) {
  if (delta > 0.0) return tau * delta;
  return 1e-12 * (1.0 + data.norm());
}

/// ||F(x) - y^delta|| <= tau * delta, inclusive.
inline bool discrepancy_met(double residual_norm, double delta, double tau) {
  if (!(tau > 1.0)) throw std::invalid_argument("tau must exceed 1");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be nonnegative");
  return residual_norm <= tau * delta;
}

inline bool discrepancy_met(const EvalPoint& pt, double delta, double tau) {
  return discrepancy_met(pt.residual_norm(), delta, tau);
}

}  // namespace regtr
