#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "regtr/core.hpp"
#include "regtr/subproblem.hpp"

namespace regtr {

enum class Method { RegularizingTR, RegularizingLM, StandardTR };
enum class RadiusRule { Practical, Strict };

enum class Status {
  DiscrepancyMet,
  MaxIterExceeded,
  RadiusCollapsed,
  StationaryPoint,
  SubproblemFailure,
};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::RegularizingTR: return "rtr";
    case Method::RegularizingLM: return "rlm";
    case Method::StandardTR: return "str";
  }
  return "?";
}

inline const char* to_string(Status s) {
  switch (s) {
    case Status::DiscrepancyMet: return "DiscrepancyMet";
    case Status::MaxIterExceeded: return "MaxIterExceeded";
    case Status::RadiusCollapsed: return "RadiusCollapsed";
    case Status::StationaryPoint: return "StationaryPoint";
    case Status::SubproblemFailure: return "SubproblemFailure";
  }
  return "?";
}

struct SolverConfig {
  Method method = Method::RegularizingTR;
  double tau = 1.5;
  std::optional<double> q;  // defaults to 1.1 / tau
  double eta = 0.25;
  double gamma = 1.0 / 6.0;
  double nu = 1.1;
  double mu0 = 0.1;
  double radius_max = 1e4;
  double radius_min = 1e-12;
  double standard_radius0 = 1.0;
  int max_iter = 300;
  double tr_newton_tol = 1e-2;
  double lm_newton_tol = 1e-5;
  int newton_max_iter = 50;
  RadiusRule radius_rule = RadiusRule::Practical;
  double c_min = 1e-4;
  double c_max = 1e2;

  double q_value() const { return q ? *q : 1.1 / tau; }

  /// Throws std::invalid_argument on inconsistent constants.
  void validate(double delta) const {
    const double qv = q_value();
    if (!(tau > 1.0)) throw std::invalid_argument("tau must exceed 1");
    if (!(qv > 0.0 && qv < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
    if (delta > 0.0 && !(qv > 1.0 / tau)) throw std::invalid_argument("noisy data requires q > 1/tau");
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (!(nu >= 1.0)) throw std::invalid_argument("nu must be at least 1");
    if (!(mu0 > 0.0)) throw std::invalid_argument("mu0 must be positive");
    if (!(radius_min > 0.0 && radius_min < radius_max))
      throw std::invalid_argument("need 0 < radius_min < radius_max");
    if (!(c_min > 0.0 && c_min < c_max)) throw std::invalid_argument("need 0 < c_min < c_max");
    if (max_iter < 0) throw std::invalid_argument("max_iter must be nonnegative");
    if (!(tr_newton_tol > 0.0 && lm_newton_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
  }
};

/// One trial step. Rejected trials are logged too; `k` is the outer index.
struct IterationRecord {
  int k = 0;
  double residual_norm = 0.0;  // at x_k
  double radius = 0.0;         // NaN for Levenberg-Marquardt
  double lambda = 0.0;
  double rho = 0.0;
  double q_k = 0.0;
  bool accepted = false;
  int rejected_before = 0;     // rejected trials earlier in the same iteration
  int chol = 0;
  std::optional<double> error_to_truth;  // ||x_k - x_dagger||

  bool operator==(const IterationRecord&) const = default;
};

struct SolveReport {
  Status status = Status::MaxIterExceeded;
  Vector x_final;
  double final_residual_norm = 0.0;
  int it = 0;
  int nf = 0;
  int chol_total = 0;
  int cf = 0;  // rounded average factorizations per iteration
  std::vector<IterationRecord> trace;
  std::vector<Vector> iterates;  // x_0, ..., x_final (accepted only)
  std::optional<std::size_t> truth_index;
  std::optional<double> final_error;
  std::string message;

  int rejected_trials() const {
    return static_cast<int>(std::count_if(trace.begin(), trace.end(),
                                          [](const IterationRecord& r) { return !r.accepted; }));
  }
};

struct RhoResult {
  double rho = 0.0;
  double ared = 0.0;
  double pred = 0.0;
  Vector trial_fx;  // F(x + p), empty if the evaluation was not finite
  std::string note;
};

/// ared = Phi(x) - Phi(x + p), pred = Phi(x) - 0.5 ||F - y + J p||^2.
/// A non-positive pred or a non-finite trial value yields rho = -inf.
inline RhoResult compute_rho(const NonlinearSystem& sys, const EvalPoint& pt, const Vector& p) {
  RhoResult out;
  const Vector model = pt.residual + pt.jacobian * p;
  out.pred = pt.phi - 0.5 * model.squaredNorm();
  const Vector xt = pt.x + p;
  Vector ft = sys.evaluate(xt);
  if (!ft.allFinite()) {
    out.ared = -std::numeric_limits<double>::infinity();
    out.rho = -std::numeric_limits<double>::infinity();
    out.note = "non-finite trial value";
    return out;
  }
  out.ared = pt.phi - 0.5 * (ft - sys.data).squaredNorm();
  out.trial_fx = std::move(ft);
  if (!(out.pred > 0.0)) {
    out.rho = -std::numeric_limits<double>::infinity();
    out.note = "non-positive predicted reduction";
    return out;
  }
  out.rho = out.ared / out.pred;
  return out;
}

// ---------------------------------------------------------------------------
// Radius policies. A policy supplies the first trial radius of an iteration,
// the radius after a rejected trial, and its update after acceptance.

/// mu-scaled radius Delta_k = mu_k ||F(x_k) - y||, mu divided by 6 when the
/// accepted step violated the q-condition and doubled when q_k > nu q.
class RegularizingRadius {
 public:
  explicit RegularizingRadius(const SolverConfig& cfg) : cfg_(cfg), mu_(cfg.mu0) {}

  double propose(const EvalPoint& pt) const {
    double radius = mu_ * pt.residual_norm();
    if (cfg_.radius_rule == RadiusRule::Strict) {
      const double gn = pt.gradient.norm();
      const double bn = pt.gauss_newton.norm();
      const double upper = std::min(cfg_.c_max, (1.0 - cfg_.q_value()) / bn) * gn;
      const double lower = std::min(cfg_.c_min * gn, upper);
      radius = std::clamp(radius, lower, upper);
    }
    return std::clamp(radius, cfg_.radius_min, cfg_.radius_max);
  }

  double shrink(double radius, const ShiftedSolve&, double) const { return cfg_.gamma * radius; }

  /// mu_k is the ratio of the accepted (possibly shrunk) radius to ||F(x_k) - y||.
  void on_accept(const ShiftedSolve&, double, double q_k, double radius, double residual_norm) {
    mu_ = radius / residual_norm;
    const double q = cfg_.q_value();
    if (q_k < q) {
      mu_ /= 6.0;
    } else if (q_k > cfg_.nu * q) {
      mu_ *= 2.0;
    }
  }

  double mu() const { return mu_; }

 private:
  SolverConfig cfg_;
  double mu_;
};

/// Classical update: Delta_0 = 1; ||p||/4 if rho < 1/4, kept for
/// 1/4 <= rho <= 3/4, doubled (capped) otherwise.
class StandardRadius {
 public:
  explicit StandardRadius(const SolverConfig& cfg) : cfg_(cfg), radius_(cfg.standard_radius0) {}

  double propose(const EvalPoint&) const { return radius_; }

  double shrink(double, const ShiftedSolve& step, double) const { return step.p_norm / 4.0; }

  void on_accept(const ShiftedSolve&, double rho, double, double radius, double) {
    radius_ = rho > 0.75 ? std::min(2.0 * radius, cfg_.radius_max) : radius;
  }

 private:
  SolverConfig cfg_;
  double radius_;
};

namespace detail {

inline void attach_errors(const NonlinearSystem& sys, SolveReport& rep) {
  if (sys.true_solutions.empty() || rep.iterates.empty()) return;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sys.true_solutions.size(); ++i) {
    const double d = (rep.x_final - sys.true_solutions[i]).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  rep.truth_index = best;
  rep.final_error = best_d;
  const Vector& xt = sys.true_solutions[best];
  for (auto& r : rep.trace)
    if (r.k >= 0 && static_cast<std::size_t>(r.k) < rep.iterates.size())
      r.error_to_truth = (rep.iterates[static_cast<std::size_t>(r.k)] - xt).norm();
}

inline void finalize(const NonlinearSystem& sys, SolveReport& rep, const EvalPoint& pt) {
  rep.x_final = pt.x;
  rep.final_residual_norm = pt.residual_norm();
  rep.cf = rep.it > 0 ? static_cast<int>(std::lround(static_cast<double>(rep.chol_total) / rep.it)) : 0;
  attach_errors(sys, rep);
}

inline SolveReport start(const NonlinearSystem& sys, const Vector& x0, const SolverConfig& cfg) {
  sys.validate();
  cfg.validate(sys.noise_level);
  if (x0.size() != sys.dimension) throw std::invalid_argument("x0 dimension mismatch");
  if (!x0.allFinite()) throw std::invalid_argument("x0 must be finite");
  SolveReport rep;
  rep.iterates.push_back(x0);
  return rep;
}

}  // namespace detail

/// Outcome of one outer trust-region iteration.
struct TrustRegionStep {
  bool accepted = false;
  std::optional<Status> failure;
  ShiftedSolve step;
  double radius = 0.0;
  double rho = 0.0;
  double q_k = 0.0;
  int trials = 0;
  Vector trial_fx;
  std::string message;
};

/// Step 2-3 of a trust-region iteration: propose a radius, then solve,
/// test rho >= eta and shrink until a trial is accepted. Appends one record
/// per trial and updates the evaluation and factorization counters.
template <class RadiusPolicy>
TrustRegionStep trust_region_step(const NonlinearSystem& sys, const EvalPoint& pt, int k,
                                  const SolverConfig& cfg, RadiusPolicy& policy,
                                  SolveReport& rep) {
  TrustRegionStep out;
  double radius = policy.propose(pt);
  const TrSecularOptions opt{cfg.tr_newton_tol, cfg.newton_max_iter};
  const double rn = pt.residual_norm();
  for (;;) {
    ShiftedSolve step;
    try {
      step = tr_secular_newton(pt, radius, opt);
    } catch (const SubproblemError& e) {
      rep.chol_total += e.chol_count();
      out.failure = e.code() == SubproblemErrc::stationary_point ? Status::StationaryPoint
                                                                 : Status::SubproblemFailure;
      out.message = e.what();
      return out;
    }
    rep.chol_total += step.chol_count;
    RhoResult rr = compute_rho(sys, pt, step.p);
    ++rep.nf;
    IterationRecord rec;
    rec.k = k;
    rec.residual_norm = rn;
    rec.radius = radius;
    rec.lambda = step.lambda;
    rec.rho = rr.rho;
    rec.q_k = step.model_residual_norm / rn;
    rec.accepted = rr.rho >= cfg.eta;
    rec.rejected_before = out.trials;
    rec.chol = step.chol_count;
    rep.trace.push_back(rec);
    ++out.trials;
    if (rec.accepted) {
      out.accepted = true;
      out.radius = radius;
      out.rho = rr.rho;
      out.q_k = rec.q_k;
      out.trial_fx = std::move(rr.trial_fx);
      policy.on_accept(step, rr.rho, rec.q_k, radius, rn);
      out.step = std::move(step);
      return out;
    }
    radius = policy.shrink(radius, step, rr.rho);
    if (radius < cfg.radius_min) {
      out.failure = Status::RadiusCollapsed;
      out.message = "trust-region radius fell below radius_min";
      return out;
    }
  }
}

/// Generic trust-region outer loop with discrepancy-principle stopping.
template <class RadiusPolicy>
SolveReport run_trust_region(const NonlinearSystem& sys, const Vector& x0, const SolverConfig& cfg,
                             RadiusPolicy& policy) {
  SolveReport rep = detail::start(sys, x0, cfg);
  const double threshold = discrepancy_threshold(sys.noise_level, cfg.tau, sys.data);
  EvalPoint pt;
  try {
    pt = evaluate_point(sys, x0);
  } catch (const EvaluationError& e) {
    throw std::invalid_argument(std::string("cannot evaluate F at x0: ") + e.what());
  }
  rep.nf = 1;
  if (pt.residual_norm() <= threshold) {
    rep.status = Status::DiscrepancyMet;
    detail::finalize(sys, rep, pt);
    return rep;
  }
  rep.status = Status::MaxIterExceeded;
  while (rep.it < cfg.max_iter) {
    if (pt.gradient.norm() == 0.0) {
      rep.status = Status::StationaryPoint;
      rep.message = "zero gradient";
      break;
    }
    TrustRegionStep st = trust_region_step(sys, pt, rep.it, cfg, policy, rep);
    if (st.failure) {
      rep.status = *st.failure;
      rep.message = st.message;
      break;
    }
    try {
      pt = evaluate_point(sys, pt.x + st.step.p, st.trial_fx);
    } catch (const EvaluationError& e) {
      rep.status = Status::SubproblemFailure;
      rep.message = e.what();
      break;
    }
    ++rep.it;
    rep.iterates.push_back(pt.x);
    if (pt.residual_norm() <= threshold) {
      rep.status = Status::DiscrepancyMet;
      break;
    }
  }
  detail::finalize(sys, rep, pt);
  return rep;
}

/// Hanke's regularizing Levenberg-Marquardt: lambda_k from the q-equation,
/// every step taken.
struct LmStep {
  ShiftedSolve step;
  std::optional<double> infeasibility_ratio;  // ||P(F-y)|| / ||F-y|| when known
};

inline LmStep regularizing_lm_step(const EvalPoint& pt, const SolverConfig& cfg) {
  LmStep out;
  std::optional<SvdDiagnostics> diag;
  try {
    diag = svd_diagnostics(pt);
    out.infeasibility_ratio = diag->projector_residual_norm / pt.residual_norm();
  } catch (const SubproblemError&) {
  }
  out.step = lm_secular_newton(pt, cfg.q_value(), {cfg.lm_newton_tol, cfg.newton_max_iter},
                               diag ? &*diag : nullptr);
  return out;
}

inline SolveReport solve_regularizing_lm(const NonlinearSystem& sys, const Vector& x0,
                                         const SolverConfig& cfg) {
  SolveReport rep = detail::start(sys, x0, cfg);
  const double threshold = discrepancy_threshold(sys.noise_level, cfg.tau, sys.data);
  EvalPoint pt;
  try {
    pt = evaluate_point(sys, x0);
  } catch (const EvaluationError& e) {
    throw std::invalid_argument(std::string("cannot evaluate F at x0: ") + e.what());
  }
  rep.nf = 1;
  if (pt.residual_norm() <= threshold) {
    rep.status = Status::DiscrepancyMet;
    detail::finalize(sys, rep, pt);
    return rep;
  }
  rep.status = Status::MaxIterExceeded;
  while (rep.it < cfg.max_iter) {
    LmStep ls;
    try {
      ls = regularizing_lm_step(pt, cfg);
    } catch (const SubproblemError& e) {
      rep.chol_total += e.chol_count();
      rep.status = e.code() == SubproblemErrc::stationary_point ? Status::StationaryPoint
                                                                : Status::SubproblemFailure;
      rep.message = e.what();
      break;
    }
    rep.chol_total += ls.step.chol_count;
    RhoResult rr = compute_rho(sys, pt, ls.step.p);
    ++rep.nf;
    IterationRecord rec;
    rec.k = rep.it;
    rec.residual_norm = pt.residual_norm();
    rec.radius = std::numeric_limits<double>::quiet_NaN();
    rec.lambda = ls.step.lambda;
    rec.rho = rr.rho;
    rec.q_k = ls.step.model_residual_norm / rec.residual_norm;
    rec.accepted = true;
    rec.chol = ls.step.chol_count;
    rep.trace.push_back(rec);
    if (rr.trial_fx.size() == 0) {
      rep.status = Status::SubproblemFailure;
      rep.message = "non-finite F at the Levenberg-Marquardt iterate";
      break;
    }
    try {
      pt = evaluate_point(sys, pt.x + ls.step.p, rr.trial_fx);
    } catch (const EvaluationError& e) {
      rep.status = Status::SubproblemFailure;
      rep.message = e.what();
      break;
    }
    ++rep.it;
    rep.iterates.push_back(pt.x);
    if (pt.residual_norm() <= threshold) {
      rep.status = Status::DiscrepancyMet;
      break;
    }
  }
  detail::finalize(sys, rep, pt);
  return rep;
}

inline SolveReport solve_regularizing_tr(const NonlinearSystem& sys, const Vector& x0,
                                         const SolverConfig& cfg) {
  RegularizingRadius policy(cfg);
  return run_trust_region(sys, x0, cfg, policy);
}

inline SolveReport solve_standard_tr(const NonlinearSystem& sys, const Vector& x0,
                                     const SolverConfig& cfg) {
  StandardRadius policy(cfg);
  return run_trust_region(sys, x0, cfg, policy);
}

inline SolveReport solve(const NonlinearSystem& sys, const Vector& x0, const SolverConfig& cfg) {
  switch (cfg.method) {
    case Method::RegularizingTR: return solve_regularizing_tr(sys, x0, cfg);
    case Method::RegularizingLM: return solve_regularizing_lm(sys, x0, cfg);
    case Method::StandardTR: return solve_standard_tr(sys, x0, cfg);
  }
  throw std::invalid_argument("unknown method");
}

}  // namespace regtr
