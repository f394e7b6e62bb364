#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include "regtr/core.hpp"

namespace regtr::fredholm {

enum class ProblemId { P1, P2, P3, P4 };

inline const char* to_string(ProblemId id) {
  switch (id) {
    case ProblemId::P1: return "P1";
    case ProblemId::P2: return "P2";
    case ProblemId::P3: return "P3";
    case ProblemId::P4: return "P4";
  }
  return "?";
}

inline ProblemId parse_problem(const std::string& s) {
  if (s == "P1" || s == "p1") return ProblemId::P1;
  if (s == "P2" || s == "p2") return ProblemId::P2;
  if (s == "P3" || s == "p3") return ProblemId::P3;
  if (s == "P4" || s == "p4") return ProblemId::P4;
  throw std::invalid_argument("unknown problem id '" + s + "'");
}

/// How the noise level scales a standard normal draw.
enum class NoiseScaling {
  Norm,      // y^delta = y + delta * z / ||z||, so ||y^delta - y|| = delta
  StdDev,    // y^delta_i = y_i + delta * z_i
  Variance,  // y^delta_i = y_i + sqrt(delta) * z_i
};

/// Uniforms from the top 53 bits of mt19937_64, normals by the Marsaglia
/// polar method. Both steps are spelled out so the stream is identical on
/// every standard library.
class GaussianStream {
 public:
  static constexpr const char* id = "mt19937_64+polar";

  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    return u * m;
  }

  Vector normals(Eigen::Index n) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Logarithmic kernel log(((t-s)^2 + H^2) / ((t-s)^2 + (H-x)^2)).
struct LogKernel {
  double depth;

  double operator()(double t, double s, double x) const {
    const double d2 = (t - s) * (t - s);
    const double hx = depth - x;
    return std::log((d2 + depth * depth) / (d2 + hx * hx));
  }

  double dx(double t, double s, double x) const {
    const double d2 = (t - s) * (t - s);
    const double hx = depth - x;
    return 2.0 * hx / (d2 + hx * hx);
  }
};

/// 1 / sqrt(1 + (t-s)^2 + x^2).
struct InverseRootKernel {
  double operator()(double t, double s, double x) const {
    return 1.0 / std::sqrt(1.0 + (t - s) * (t - s) + x * x);
  }

  double dx(double t, double s, double x) const {
    const double r = 1.0 + (t - s) * (t - s) + x * x;
    return -x / (r * std::sqrt(r));
  }
};

/// Piecewise-linear hat function phi_j on the uniform grid (0-based j).
inline double hat(Eigen::Index j, Eigen::Index n, double s) {
  const double h = 1.0 / static_cast<double>(n - 1);
  const double sj = static_cast<double>(j) * h;
  if (j > 0 && s >= sj - h && s <= sj) return (s - (sj - h)) / h;
  if (j < n - 1 && s >= sj && s <= sj + h) return (sj + h - s) / h;
  return 0.0;
}

/// Trapezoidal discretization of int_0^1 k(t, s, x(s)) ds = y(t) on n
/// equidistant nodes with a nodal piecewise-linear representation of x.
template <class Kernel>
class Discretization {
 public:
  Discretization(Kernel kernel, Eigen::Index n) : kernel_(kernel), n_(n) {
    if (n < 3) throw std::invalid_argument("need at least 3 grid points");
    h_ = 1.0 / static_cast<double>(n - 1);
    grid_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) grid_(i) = static_cast<double>(i) * h_;
    grid_(n - 1) = 1.0;
  }

  Eigen::Index size() const { return n_; }
  double spacing() const { return h_; }
  const Vector& grid() const { return grid_; }
  const Kernel& kernel() const { return kernel_; }

  double weight(Eigen::Index j) const { return (j == 0 || j == n_ - 1) ? 0.5 * h_ : h_; }

  Vector forward(const Vector& x) const {
    Vector f = Vector::Zero(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n_; ++j) acc += weight(j) * kernel_(grid_(i), grid_(j), x(j));
      f(i) = acc;
    }
    return f;
  }

  Matrix jacobian(const Vector& x) const {
    Matrix jac(n_, n_);
    for (Eigen::Index j = 0; j < n_; ++j)
      for (Eigen::Index i = 0; i < n_; ++i) jac(i, j) = weight(j) * kernel_.dx(grid_(i), grid_(j), x(j));
    return jac;
  }

 private:
  Kernel kernel_;
  Eigen::Index n_;
  double h_;
  Vector grid_;
};

// P1 constants
inline constexpr double kP1Depth = 0.2;
inline constexpr double kP1C1 = -0.1, kP1C2 = -0.075;
inline constexpr double kP1D1 = -40.0, kP1D2 = -60.0;
inline constexpr double kP1P1 = 0.4, kP1P2 = 0.67;
// P2 uses the depth for which 1.3 s (s - 1) is the mirror of 1.3 s (1 - s) + 0.2.
inline constexpr double kP2Depth = 0.1;

inline double p1_bumps(double s) {
  return kP1C1 * std::exp(kP1D1 * (s + kP1P1) * (s + kP1P1)) +
         kP1C2 * std::exp(kP1D2 * (s - kP1P2) * (s - kP1P2));
}

/// c3 + c4, fixed by x_true(0) = 0.
inline double p1_offset() { return -p1_bumps(0.0); }

/// Continuous true solutions; `which` is 0 or 1.
inline double true_solution(ProblemId id, int which, double s) {
  switch (id) {
    case ProblemId::P1: {
      const double x = p1_bumps(s) + p1_offset();
      return which == 0 ? x : 2.0 * kP1Depth - x;
    }
    case ProblemId::P2:
      return which == 0 ? 1.3 * s * (1.0 - s) + 0.2 : 1.3 * s * (s - 1.0);
    case ProblemId::P3:
      return which == 0 ? 1.0 : -1.0;
    case ProblemId::P4: {
      // s = 1/2 belongs to the left piece
      const double v = s <= 0.5 ? 1.0 : 0.0;
      return which == 0 ? v : -v;
    }
  }
  throw std::invalid_argument("unknown problem");
}

struct ErrorMetrics {
  double e_interior = 0.0;  // max over interior nodes
  double e_total = 0.0;     // max over all nodes
  std::size_t solution_index = 0;
  double distance = 0.0;    // Euclidean distance to that solution
};

/// A discretized test problem with its data.
struct FredholmProblem {
  ProblemId id = ProblemId::P1;
  Eigen::Index n = 64;
  double delta = 0.0;
  std::uint64_t seed = 0;
  NoiseScaling scaling = NoiseScaling::Norm;
  Vector grid;
  std::vector<Vector> true_solutions;
  Vector exact_data;
  Vector data;

  Vector forward(const Vector& x) const;
  Matrix jacobian(const Vector& x) const;

  /// NonlinearSystem view; finite-difference Jacobian unless `analytic_jacobian`.
  NonlinearSystem system(bool analytic_jacobian = false) const {
    NonlinearSystem sys;
    sys.dimension = n;
    sys.data = data;
    sys.noise_level = delta;
    sys.exact_data = exact_data;
    sys.true_solutions = true_solutions;
    const FredholmProblem self = *this;
    sys.evaluate = [self](const Vector& x) { return self.forward(x); };
    if (analytic_jacobian) sys.jacobian = [self](const Vector& x) { return self.jacobian(x); };
    return sys;
  }

  static constexpr const char* rng_id = GaussianStream::id;
};

namespace detail {

template <class Fn>
decltype(auto) with_kernel(ProblemId id, Eigen::Index n, Fn&& fn) {
  switch (id) {
    case ProblemId::P1: return fn(Discretization<LogKernel>(LogKernel{kP1Depth}, n));
    case ProblemId::P2: return fn(Discretization<LogKernel>(LogKernel{kP2Depth}, n));
    case ProblemId::P3:
    case ProblemId::P4: return fn(Discretization<InverseRootKernel>(InverseRootKernel{}, n));
  }
  throw std::invalid_argument("unknown problem");
}

}  // namespace detail

inline Vector FredholmProblem::forward(const Vector& x) const {
  if (x.size() != n) throw std::invalid_argument("dimension mismatch in forward map");
  return detail::with_kernel(id, n, [&](const auto& disc) { return disc.forward(x); });
}

inline Matrix FredholmProblem::jacobian(const Vector& x) const {
  if (x.size() != n) throw std::invalid_argument("dimension mismatch in Jacobian");
  return detail::with_kernel(id, n, [&](const auto& disc) { return disc.jacobian(x); });
}

inline Vector sample_true_solution(ProblemId id, int which, const Vector& grid) {
  Vector x(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j) x(j) = true_solution(id, which, grid(j));
  return x;
}

/// Builds one problem per noise level. All share the exact data y = F(x_1)
/// of the first true solution; the noise vectors are consecutive draws from
/// a single stream seeded with `seed`.
inline std::vector<FredholmProblem> noise_sweep(ProblemId id, Eigen::Index n,
                                                const std::vector<double>& deltas,
                                                std::uint64_t seed,
                                                NoiseScaling scaling = NoiseScaling::Norm) {
  if (n < 3) throw std::invalid_argument("need at least 3 grid points");
  FredholmProblem base;
  base.id = id;
  base.n = n;
  base.seed = seed;
  base.scaling = scaling;
  base.grid = detail::with_kernel(id, n, [](const auto& disc) { return disc.grid(); });
  base.true_solutions = {sample_true_solution(id, 0, base.grid), sample_true_solution(id, 1, base.grid)};
  base.exact_data = base.forward(base.true_solutions[0]);
  if (!base.exact_data.allFinite()) throw std::invalid_argument("exact data is not finite");

  GaussianStream rng(seed);
  std::vector<FredholmProblem> out;
  out.reserve(deltas.size());
  for (double d : deltas) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("noise level must be finite and nonnegative");
    FredholmProblem p = base;
    p.delta = d;
    const Vector z = rng.normals(n);
    switch (scaling) {
      case NoiseScaling::Norm: p.data = p.exact_data + (d / z.norm()) * z; break;
      case NoiseScaling::StdDev: p.data = p.exact_data + d * z; break;
      case NoiseScaling::Variance: p.data = p.exact_data + std::sqrt(d) * z; break;
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline FredholmProblem build_problem(ProblemId id, Eigen::Index n, double delta, std::uint64_t seed,
                                     NoiseScaling scaling = NoiseScaling::Norm) {
  return noise_sweep(id, n, {delta}, seed, scaling).front();
}

/// Metrics against whichever true solution is nearer in the Euclidean norm.
inline ErrorMetrics error_metrics(const Vector& x, const FredholmProblem& prob) {
  if (x.size() != prob.n) throw std::invalid_argument("dimension mismatch in error metrics");
  ErrorMetrics m;
  m.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < prob.true_solutions.size(); ++i) {
    const double d = (x - prob.true_solutions[i]).norm();
    if (d < m.distance) {
      m.distance = d;
      m.solution_index = i;
    }
  }
  const Vector diff = (x - prob.true_solutions[m.solution_index]).cwiseAbs();
  m.e_total = diff.maxCoeff();
  m.e_interior = prob.n > 2 ? diff.segment(1, prob.n - 2).maxCoeff() : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Initial guesses. Selectors: P1/P2 "<c>e" (e.g. "0e", "-0.5e", "e", "-2e");
// P3 "alpha=<a>"; P4 "beta=<b>,chi=<c>". An optional "x0=" prefix is allowed.

inline std::vector<std::string> standard_guesses(ProblemId id) {
  switch (id) {
    case ProblemId::P1: return {"0e", "-0.5e", "-e", "-2e"};
    case ProblemId::P2: return {"0e", "0.5e", "e", "2e"};
    case ProblemId::P3: return {"alpha=1.25", "alpha=1.5", "alpha=1.75", "alpha=2"};
    case ProblemId::P4: return {"beta=1,chi=1", "beta=0.5,chi=0", "beta=1.5,chi=1", "beta=1.5,chi=0"};
  }
  return {};
}

inline Vector initial_guess(ProblemId id, const std::string& selector, const Vector& grid) {
  std::string sel = selector;
  if (sel.rfind("x0=", 0) == 0) sel = sel.substr(3);
  const std::string num = R"(([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?))";
  std::smatch m;
  auto bad = [&]() {
    return std::invalid_argument("selector '" + selector + "' is not valid for " + to_string(id));
  };
  switch (id) {
    case ProblemId::P1:
    case ProblemId::P2: {
      static const std::regex multiple(R"(^([+-]?)((?:\d+\.?\d*|\.\d+)?)e$)");
      if (!std::regex_match(sel, m, multiple)) throw bad();
      double c = m[2].length() ? std::stod(m[2].str()) : 1.0;
      if (m[1] == "-") c = -c;
      return Vector::Constant(grid.size(), c);
    }
    case ProblemId::P3: {
      const std::regex alpha("^alpha=" + num + "$");
      if (!std::regex_match(sel, m, alpha)) throw bad();
      const double a = std::stod(m[1].str());
      Vector x(grid.size());
      for (Eigen::Index j = 0; j < grid.size(); ++j) {
        const double s = grid(j);
        x(j) = (-4.0 * a + 4.0) * s * s + (4.0 * a - 4.0) * s + 1.0;
      }
      return x;
    }
    case ProblemId::P4: {
      const std::regex bc("^beta=" + num + ",chi=" + num + "$");
      if (!std::regex_match(sel, m, bc)) throw bad();
      const double b = std::stod(m[1].str());
      const double c = std::stod(m[2].str());
      return (b - c * grid.array()).matrix();
    }
  }
  throw bad();
}

inline Vector initial_guess(const FredholmProblem& prob, const std::string& selector) {
  return initial_guess(prob.id, selector, prob.grid);
}

}  // namespace regtr::fredholm
