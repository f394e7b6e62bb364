#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "regtr/fredholm.hpp"
#include "regtr/solvers.hpp"

namespace regtr::harness {

/// Raised for invalid run specifications and configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// CSV primitives

/// 17 significant digits, so parsing gives back the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline long parse_int(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

/// Quotes a field when it contains a separator, quote or newline.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

template <class... Fields>
void write_row(std::ostream& os, const Fields&... fields) {
  bool first = true;
  ((os << (first ? "" : ",") << csv_field(fields), first = false), ...);
  os << '\n';
}

// ---------------------------------------------------------------------------
// Trace CSV

inline constexpr const char* kTraceHeader = "k,resnorm,delta_k,lambda_k,rho_k,q_k,accepted,chol,err_truth";

inline void write_trace(std::ostream& os, const std::vector<IterationRecord>& trace) {
  os << kTraceHeader << '\n';
  for (const auto& r : trace)
    write_row(os, std::to_string(r.k), format_double(r.residual_norm), format_double(r.radius),
              format_double(r.lambda), format_double(r.rho), format_double(r.q_k),
              std::string(r.accepted ? "1" : "0"), std::to_string(r.chol),
              r.error_to_truth ? format_double(*r.error_to_truth) : std::string());
}

/// Inverse of write_trace. rejected_before is recovered from the row order.
inline std::vector<IterationRecord> parse_trace(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || split_csv_line(line) != split_csv_line(kTraceHeader))
    throw ConfigError("trace CSV has an unexpected header");
  std::vector<IterationRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw ConfigError("trace row has " + std::to_string(f.size()) + " fields");
    IterationRecord r;
    r.k = static_cast<int>(parse_int(f[0]));
    r.residual_norm = parse_double(f[1]);
    r.radius = parse_double(f[2]);
    r.lambda = parse_double(f[3]);
    r.rho = parse_double(f[4]);
    r.q_k = parse_double(f[5]);
    r.accepted = f[6] == "1";
    r.chol = static_cast<int>(parse_int(f[7]));
    if (!f[8].empty()) r.error_to_truth = parse_double(f[8]);
    int before = 0;
    for (auto it = out.rbegin(); it != out.rend() && it->k == r.k; ++it) ++before;
    r.rejected_before = before;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run specification and configuration

struct RunSpec {
  fredholm::ProblemId problem = fredholm::ProblemId::P1;
  std::string x0 = "0e";
  double delta = 1e-4;
  std::uint64_t seed = 1;
  Eigen::Index n = 64;
  fredholm::NoiseScaling noise = fredholm::NoiseScaling::Norm;
  bool analytic_jacobian = false;
  SolverConfig config;
  std::string out_dir = ".";
};

inline Method parse_method(const std::string& s) {
  if (s == "rtr") return Method::RegularizingTR;
  if (s == "rlm") return Method::RegularizingLM;
  if (s == "str") return Method::StandardTR;
  throw ConfigError("unknown method '" + s + "' (expected rtr, rlm or str)");
}

inline RadiusRule parse_radius_rule(const std::string& s) {
  if (s == "practical") return RadiusRule::Practical;
  if (s == "strict") return RadiusRule::Strict;
  throw ConfigError("unknown radius rule '" + s + "' (expected practical or strict)");
}

inline fredholm::NoiseScaling parse_noise(const std::string& s) {
  if (s == "norm") return fredholm::NoiseScaling::Norm;
  if (s == "stddev") return fredholm::NoiseScaling::StdDev;
  if (s == "variance") return fredholm::NoiseScaling::Variance;
  throw ConfigError("unknown noise scaling '" + s + "' (expected norm, stddev or variance)");
}

/// Applies one key=value setting. Keys are the long flag names without dashes.
inline void apply_setting(RunSpec& spec, const std::string& key, const std::string& value) {
  SolverConfig& c = spec.config;
  try {
    if (key == "problem") spec.problem = fredholm::parse_problem(value);
    else if (key == "x0") spec.x0 = value;
    else if (key == "delta") spec.delta = parse_double(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "n") spec.n = parse_int(value);
    else if (key == "noise") spec.noise = parse_noise(value);
    else if (key == "analytic-jacobian") spec.analytic_jacobian = value == "1" || value == "true";
    else if (key == "method") c.method = parse_method(value);
    else if (key == "tau") c.tau = parse_double(value);
    else if (key == "q") c.q = parse_double(value);
    else if (key == "eta") c.eta = parse_double(value);
    else if (key == "gamma") c.gamma = parse_double(value);
    else if (key == "mu0") c.mu0 = parse_double(value);
    else if (key == "nu") c.nu = parse_double(value);
    else if (key == "radius-rule") c.radius_rule = parse_radius_rule(value);
    else if (key == "max-iter") c.max_iter = static_cast<int>(parse_int(value));
    else if (key == "out") spec.out_dir = value;
    else throw ConfigError("unknown configuration key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

/// Flat key=value text; '#' starts a comment, blank lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_config_file(RunSpec& spec, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  for (const auto& [k, v] : parse_config(in)) apply_setting(spec, k, v);
}

// ---------------------------------------------------------------------------
// Runs

struct SummaryRow {
  std::string problem;
  std::string x0;
  std::string method;
  int it = 0;
  double resnorm_final = 0.0;
  int nf = 0;
  int cf = 0;
  double e_I = 0.0;
  double e_T = 0.0;
  std::string status;  // a trailing '*' marks a regularization failure
  std::uint64_t seed = 0;
  std::string rng_id;
};

inline constexpr const char* kSummaryHeader =
    "problem,x0,method,it,resnorm_final,nf,cf,e_I,e_T,status,seed,rng_id";

inline void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << kSummaryHeader << '\n';
  for (const auto& r : rows)
    write_row(os, r.problem, r.x0, r.method, std::to_string(r.it), format_double(r.resnorm_final),
              std::to_string(r.nf), std::to_string(r.cf), format_double(r.e_I), format_double(r.e_T),
              r.status, std::to_string(r.seed), r.rng_id);
}

/// Interior error above which a run counts as not regularizing: half the
/// largest interior gap between the two true solutions.
inline double star_threshold(const fredholm::FredholmProblem& prob) {
  const Vector gap = (prob.true_solutions[0] - prob.true_solutions[1]).cwiseAbs();
  return 0.5 * gap.segment(1, prob.n - 2).maxCoeff();
}

inline bool is_starred(const SolveReport& rep, const fredholm::ErrorMetrics& m,
                       const fredholm::FredholmProblem& prob) {
  return rep.status != Status::DiscrepancyMet || !(m.e_interior <= star_threshold(prob));
}

struct RunResult {
  fredholm::FredholmProblem problem;
  SolveReport report;
  fredholm::ErrorMetrics metrics;
  SummaryRow summary;
  bool starred = false;
};

inline SummaryRow make_summary(const RunSpec& spec, const SolveReport& rep,
                               const fredholm::ErrorMetrics& m, bool starred) {
  SummaryRow row;
  row.problem = fredholm::to_string(spec.problem);
  row.x0 = spec.x0;
  row.method = to_string(spec.config.method);
  row.it = rep.it;
  row.resnorm_final = rep.final_residual_norm;
  row.nf = rep.nf;
  row.cf = rep.cf;
  row.e_I = m.e_interior;
  row.e_T = m.e_total;
  row.status = std::string(to_string(rep.status)) + (starred ? "*" : "");
  row.seed = spec.seed;
  row.rng_id = fredholm::GaussianStream::id;
  return row;
}

inline RunResult run_on_problem(const RunSpec& spec, fredholm::FredholmProblem prob) {
  RunResult res;
  const Vector x0 = fredholm::initial_guess(prob, spec.x0);
  res.report = solve(prob.system(spec.analytic_jacobian), x0, spec.config);
  res.metrics = fredholm::error_metrics(res.report.x_final, prob);
  res.starred = is_starred(res.report, res.metrics, prob);
  res.summary = make_summary(spec, res.report, res.metrics, res.starred);
  res.problem = std::move(prob);
  return res;
}

inline RunResult run(const RunSpec& spec) {
  return run_on_problem(spec, fredholm::build_problem(spec.problem, spec.n, spec.delta, spec.seed, spec.noise));
}

/// Process exit code for a finished solve.
inline int exit_code(Status s) { return s == Status::DiscrepancyMet ? 0 : 2; }

namespace detail {

/// Runs jobs on `threads` workers; results land at their job index.
template <class Job, class Result>
void parallel_map(const std::vector<Job>& jobs, std::vector<Result>& out, unsigned threads,
                  Result (*fn)(const Job&)) {
  out.resize(jobs.size());
  if (threads <= 1 || jobs.size() <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = fn(jobs[i]);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < jobs.size(); i = next++) out[i] = fn(jobs[i]);
    });
  for (auto& th : pool) th.join();
}

inline SummaryRow guarded_summary(const RunSpec& spec) {
  try {
    return run(spec).summary;
  } catch (const std::exception&) {
    SummaryRow row = make_summary(spec, SolveReport{}, fredholm::ErrorMetrics{}, true);
    row.status = std::string("Error*");
    row.e_I = row.e_T = row.resnorm_final = std::numeric_limits<double>::quiet_NaN();
    return row;
  }
}

}  // namespace detail

inline double table_delta(int table) {
  if (table == 1) return 1e-4;
  if (table == 2) return 1e-2;
  throw ConfigError("table must be 1 or 2");
}

/// Full problems x guesses x methods grid. Rows come out in grid order
/// whatever the thread count; failed runs are recorded, never thrown.
inline std::vector<SummaryRow> run_table(int table, const std::vector<Method>& methods,
                                         const RunSpec& base, unsigned threads = 1) {
  std::vector<RunSpec> jobs;
  for (auto id : {fredholm::ProblemId::P1, fredholm::ProblemId::P2, fredholm::ProblemId::P3,
                  fredholm::ProblemId::P4})
    for (const auto& guess : fredholm::standard_guesses(id))
      for (Method m : methods) {
        RunSpec s = base;
        s.problem = id;
        s.x0 = guess;
        s.delta = table_delta(table);
        s.config.method = m;
        jobs.push_back(s);
      }
  std::vector<SummaryRow> rows;
  detail::parallel_map<RunSpec, SummaryRow>(jobs, rows, threads, &detail::guarded_summary);
  return rows;
}

struct SweepRow {
  double delta = 0.0;
  int k_star = 0;
  double error = 0.0;  // ||x_{k*} - x_dagger||
  double e_I = 0.0;
  double e_T = 0.0;
  std::string status;
  std::uint64_t seed = 0;
  std::string rng_id;
};

inline constexpr const char* kSweepHeader = "delta,k_star,error,e_I,e_T,status,seed,rng_id";

inline std::vector<SweepRow> run_sweep(const RunSpec& base, const std::vector<double>& deltas) {
  auto problems = fredholm::noise_sweep(base.problem, base.n, deltas, base.seed, base.noise);
  std::vector<SweepRow> rows;
  for (auto& prob : problems) {
    RunSpec s = base;
    s.delta = prob.delta;
    SweepRow row;
    row.delta = prob.delta;
    row.seed = base.seed;
    row.rng_id = fredholm::GaussianStream::id;
    try {
      RunResult r = run_on_problem(s, std::move(prob));
      row.k_star = r.report.it;
      row.error = r.metrics.distance;
      row.e_I = r.metrics.e_interior;
      row.e_T = r.metrics.e_total;
      row.status = to_string(r.report.status);
    } catch (const std::exception&) {
      row.error = row.e_I = row.e_T = std::numeric_limits<double>::quiet_NaN();
      row.status = "Error";
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_sweep(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << kSweepHeader << '\n';
  for (const auto& r : rows)
    write_row(os, format_double(r.delta), std::to_string(r.k_star), format_double(r.error),
              format_double(r.e_I), format_double(r.e_T), r.status, std::to_string(r.seed), r.rng_id);
}

struct QTraceRow {
  int k = 0;
  double q_k = 0.0;
  double q = 0.0;
  double error = 0.0;  // ||x_k - x_dagger||
};

inline constexpr const char* kQTraceHeader = "k,q_k,q,err";

/// q_k and the error at x_k for every accepted iteration.
inline std::vector<QTraceRow> qtrace_rows(const SolveReport& rep, double q) {
  std::vector<QTraceRow> rows;
  for (const auto& r : rep.trace)
    if (r.accepted)
      rows.push_back({r.k, r.q_k, q, r.error_to_truth.value_or(std::numeric_limits<double>::quiet_NaN())});
  return rows;
}

inline void write_qtrace(std::ostream& os, const std::vector<QTraceRow>& rows) {
  os << kQTraceHeader << '\n';
  for (const auto& r : rows)
    write_row(os, std::to_string(r.k), format_double(r.q_k), format_double(r.q), format_double(r.error));
}

}  // namespace regtr::harness
