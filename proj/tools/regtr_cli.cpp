// regtr: run the regularizing trust-region solvers on the Fredholm test set.
//
//   regtr solve  --problem P1 --x0 0e --delta 1e-4 --method rtr --out runs/
//   regtr table  --table 1 --methods rtr,rlm
//   regtr sweep  --problem P2 --x0 0e --deltas 1e-1,1e-2,1e-3,1e-4
//   regtr qtrace --problem P2 --x0 0e --delta 1e-4
//
// Settings are resolved as defaults < --config file < $REGTR_OUT < flags.
// Exit status: 0 discrepancy principle met, 2 solver failure, 1 usage error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "regtr/regtr.hpp"

namespace fs = std::filesystem;
using namespace regtr;
using namespace regtr::harness;

namespace {

const std::vector<std::string> kSettingKeys = {
    "problem", "x0",  "delta", "seed",  "n",  "noise",       "method",   "tau",
    "q",       "eta", "gamma", "mu0",   "nu", "radius-rule", "max-iter", "out",
};

std::ofstream open_output(const RunSpec& spec, const std::string& name) {
  fs::create_directories(spec.out_dir);
  const fs::path path = fs::path(spec.out_dir) / name;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

void print_summary(const SummaryRow& r) {
  std::cout << r.problem << ' ' << r.x0 << ' ' << r.method << "  it=" << r.it << "  |F-y|="
            << format_double(r.resnorm_final) << "  nf=" << r.nf << "  cf=" << r.cf
            << "  e_I=" << format_double(r.e_I) << "  e_T=" << format_double(r.e_T) << "  "
            << r.status << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

int cmd_solve(const RunSpec& spec) {
  RunResult r = run(spec);
  {
    auto os = open_output(spec, "trace.csv");
    write_trace(os, r.report.trace);
  }
  {
    auto os = open_output(spec, "summary.csv");
    write_summary(os, {r.summary});
  }
  print_summary(r.summary);
  if (!r.report.message.empty()) std::cerr << "note: " << r.report.message << '\n';
  return exit_code(r.report.status);
}

int cmd_table(const RunSpec& spec, int table, const std::string& methods, unsigned threads) {
  std::vector<Method> ms;
  for (const auto& m : split_list(methods)) ms.push_back(parse_method(m));
  if (ms.empty()) throw ConfigError("--methods is empty");
  const auto rows = run_table(table, ms, spec, threads);
  auto os = open_output(spec, "table" + std::to_string(table) + ".csv");
  write_summary(os, rows);
  for (const auto& r : rows) print_summary(r);
  return 0;
}

int cmd_sweep(const RunSpec& spec, const std::string& deltas) {
  std::vector<double> ds;
  for (const auto& d : split_list(deltas)) ds.push_back(parse_double(d));
  if (ds.empty()) throw ConfigError("--deltas is empty");
  const auto rows = run_sweep(spec, ds);
  auto os = open_output(spec, "sweep.csv");
  write_sweep(os, rows);
  for (const auto& r : rows)
    std::cout << "delta=" << format_double(r.delta) << "  k*=" << r.k_star
              << "  err=" << format_double(r.error) << "  " << r.status << '\n';
  return 0;
}

int cmd_qtrace(const RunSpec& spec) {
  if (spec.config.method != Method::RegularizingTR) throw ConfigError("qtrace needs --method rtr");
  RunResult r = run(spec);
  const auto rows = qtrace_rows(r.report, spec.config.q_value());
  auto os = open_output(spec, "qtrace.csv");
  write_qtrace(os, rows);
  print_summary(r.summary);
  return exit_code(r.report.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularizing trust-region solvers for nonlinear ill-posed systems"};
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& key : kSettingKeys) opts[key] = app.add_option("--" + key, values[key]);
  opts["method"]->description("rtr | rlm | str");
  opts["radius-rule"]->description("practical | strict");
  opts["noise"]->description("norm | stddev | variance");
  std::string config_file;
  app.add_option("--config", config_file, "key=value settings file");

  auto* solve = app.add_subcommand("solve", "single run; writes trace.csv and summary.csv");
  auto* table = app.add_subcommand("table", "problems x guesses x methods grid");
  int table_no = 1;
  std::string methods = "rtr,rlm";
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  table->add_option("--table", table_no, "1 (delta=1e-4) or 2 (delta=1e-2)")->check(CLI::IsMember({1, 2}));
  table->add_option("--methods", methods, "comma-separated methods");
  table->add_option("--threads", threads)->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep", "noise-level sweep on one problem");
  std::string deltas = "1e-1,1e-2,1e-3,1e-4";
  sweep->add_option("--deltas", deltas, "comma-separated noise levels");
  auto* qtrace = app.add_subcommand("qtrace", "q_k and error per accepted iteration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunSpec spec;
    if (!config_file.empty()) apply_config_file(spec, config_file);
    if (const char* env = std::getenv("REGTR_OUT"); env && *env) spec.out_dir = env;
    for (const auto& key : kSettingKeys)
      if (opts[key]->count()) apply_setting(spec, key, values[key]);
    spec.config.validate(spec.delta);

    if (solve->parsed()) return cmd_solve(spec);
    if (table->parsed()) return cmd_table(spec, table_no, methods, threads);
    if (sweep->parsed()) return cmd_sweep(spec, deltas);
    if (qtrace->parsed()) return cmd_qtrace(spec);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
