#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uot/uot.hpp"

namespace uot::cli {

enum Exit : int { kOk = 0, kNotCertified = 1, kInputError = 2, kNumericalError = 3 };

struct Options {
  std::optional<std::string> problem;
  double epsilon = 0.1;
  double tau = 5.0;
  bool tau_given = false;
  std::uint64_t seed = 0;
  std::size_t n = 100;
  std::string out = ".";
  bool trace = false;
  std::optional<double> early_stop_tol;
  double oracle_tol = 1e-9;

  // benchmark
  bool full = false;
  std::optional<std::string> image_a, image_b;
  std::size_t index_a = 0, index_b = 1;
  bool raw_intensity = false;

  // diagnose
  double eta = 0.5;
  std::int64_t k_max = 100;
};

inline std::string error_json(const std::string& kind, const std::string& message) {
  return io::json{{"error", kind}, {"message", message}}.dump();
}

namespace detail {

inline Problem load_problem(const Options& o) {
  if (o.problem) {
    Problem p = io::read_problem(*o.problem);
    if (o.tau_given) return Problem(p.a(), p.b(), p.C(), o.tau);
    return p;
  }
  return gen_synthetic(o.n, o.tau, o.seed);
}

inline SolverReport solve_and_write(const Problem& p, const Options& o, const std::filesystem::path& dir) {
  RunOptions ro;
  ro.early_stop_tol = o.early_stop_tol;
  ro.record_primal = o.trace;
  ro.record_residual = o.trace;
  SolverReport rep = run(p, o.epsilon, ro);
  std::filesystem::create_directories(dir);
  io::write_plan(dir / "plan.bin", rep.plan.X);
  io::write_json(dir / "report.json", io::report_to_json(rep, "plan.bin"));
  if (o.trace) io::write_trace_csv(dir / "trace.csv", rep.trace);
  return rep;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

inline std::vector<double> all_ratios(const RatioSeries& s) {
  std::vector<double> out;
  for (const auto& pt : s.points) {
    if (pt.ratio_uv) out.push_back(*pt.ratio_uv);
    if (pt.ratio_vu) out.push_back(*pt.ratio_vu);
  }
  return out;
}

}  // namespace detail

inline int cmd_solve(const Options& o, std::ostream& out) {
  const Problem p = detail::load_problem(o);
  const auto rep = detail::solve_and_write(p, o, o.out);
  out << io::json{{"k_f", rep.k_f}, {"eta", rep.quantities.eta}, {"f_final", rep.f_final},
                  {"report", (std::filesystem::path(o.out) / "report.json").string()}}
             .dump()
      << "\n";
  return kOk;
}

inline int cmd_certify(const Options& o, std::ostream& out) {
  const Problem p = detail::load_problem(o);
  const auto rep = detail::solve_and_write(p, o, o.out);
  const auto oracle = solve_unregularized(p, o.oracle_tol);
  const double gap = epsilon_gap(rep.plan, p, oracle.value);
  const bool ok = gap <= o.epsilon;
  io::json cert = {{"epsilon", o.epsilon}, {"f_final", rep.f_final}, {"fhat", oracle.value}, {"gap", gap},
                   {"certified", ok},      {"k_f", rep.k_f},         {"oracle", io::oracle_to_json(oracle)}};
  io::write_json(std::filesystem::path(o.out) / "certificate.json", cert);
  out << io::json{{"gap", gap}, {"epsilon", o.epsilon}, {"certified", ok}}.dump() << "\n";
  return ok ? kOk : kNotCertified;
}

inline int cmd_benchmark(const Options& o, std::ostream& out) {
  std::optional<Problem> p;
  if (o.image_a || o.image_b) {
    if (!(o.image_a && o.image_b)) throw InvalidInput("benchmark on images needs both --image-a and --image-b");
    ImageMarginalOptions mo;
    if (o.raw_intensity) mo.intensity_scale = 1.0;
    p.emplace(image_problem(load_image_pair(*o.image_a, *o.image_b, mo, o.index_a, o.index_b), o.tau));
  } else {
    p.emplace(detail::load_problem(o));
  }
  const auto grid = o.full ? epsilon_grid(1.0, 1e-4, 5) : epsilon_grid(1.0, 1e-2, 3);
  const auto oracle = solve_unregularized(*p, o.oracle_tol);
  const auto records = run_kfkc_grid(*p, grid, oracle.value);
  const auto series = convergence_ratios(*p, o.eta, 0, o.k_max);
  emit_report(records, series, o.out);
  io::json rows = io::json::array();
  for (const auto& r : records)
    rows.push_back({{"epsilon", r.epsilon}, {"k_f", r.k_f}, {"k_c", r.k_c}, {"resolution", r.resolution},
                    {"f_final", r.f_final}});
  out << io::json{{"fhat", oracle.value}, {"records", rows}}.dump() << "\n";
  bool ok = true;
  for (const auto& r : records) ok = ok && r.f_final - r.fhat <= r.epsilon;
  return ok ? kOk : kNotCertified;
}

inline int cmd_diagnose(const Options& o, std::ostream& out) {
  const Problem p = detail::load_problem(o);
  const auto series = convergence_ratios(p, o.eta, 0, o.k_max);
  emit_report({}, series, o.out);
  const auto rs = detail::all_ratios(series);
  const double lo = rs.empty() ? 0.0 : *std::min_element(rs.begin(), rs.end());
  out << io::json{{"eta", o.eta},
                  {"tau", p.tau()},
                  {"geometric_factor", series.geometric_factor()},
                  {"min_ratio", lo},
                  {"median_ratio", detail::median(rs)},
                  {"count", rs.size()}}
             .dump()
      << "\n";
  return kOk;
}

// Parses args (without the program name), runs the subcommand and maps
// failures onto exit codes. Errors go to err as one JSON line.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sinkhorn solver for entropic unbalanced optimal transport"};
  app.require_subcommand(1, 1);
  Options o;
  std::vector<CLI::Option*> tau_opts;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--problem", o.problem, "problem JSON file (default: synthetic instance)");
    tau_opts.push_back(sc->add_option("--tau", o.tau, "KL penalty weight")->check(CLI::PositiveNumber));
    sc->add_option("--seed", o.seed, "seed for the synthetic instance");
    sc->add_option("--n", o.n, "size of the synthetic instance")->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
    sc->add_option("--out", o.out, "output directory");
    sc->add_option("--oracle-tol", o.oracle_tol, "oracle tolerance")->check(CLI::PositiveNumber);
  };

  auto* solve = app.add_subcommand("solve", "run the solver and write a report");
  auto* certify = app.add_subcommand("certify", "solve, then check the gap against the exact optimum");
  for (auto* sc : {solve, certify}) {
    common(sc);
    sc->add_option("--epsilon", o.epsilon, "target accuracy")->check(CLI::PositiveNumber);
    sc->add_flag("--trace", o.trace, "write trace.csv with primal values and residuals");
    sc->add_option("--early-stop-tol", o.early_stop_tol, "stop when the fixed-point residual drops below this");
  }

  auto* bench = app.add_subcommand("benchmark", "k_f / k_c over an epsilon grid plus distance ratios");
  common(bench);
  bench->add_flag("--full", o.full, "grid down to 1e-4 (slow)");
  bench->add_option("--image-a", o.image_a, "first image (PGM, PNG or IDX)");
  bench->add_option("--image-b", o.image_b, "second image");
  bench->add_option("--index-a", o.index_a, "image index inside an IDX file");
  bench->add_option("--index-b", o.index_b, "image index inside an IDX file");
  bench->add_flag("--raw-intensity", o.raw_intensity, "use intensities in [0, 255] instead of [0, 1]");
  bench->add_option("--eta", o.eta, "eta for the ratio diagnostic")->check(CLI::PositiveNumber);

  auto* diag = app.add_subcommand("diagnose", "distance ratios to the optimal potentials");
  common(diag);
  diag->add_option("--eta", o.eta, "entropic weight")->check(CLI::PositiveNumber);
  diag->add_option("--k-max", o.k_max, "last iteration")->check(CLI::NonNegativeNumber);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    for (auto* t : tau_opts) o.tau_given = o.tau_given || t->count() > 0;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()) << "\n";
    return kInputError;
  }

  try {
    if (solve->parsed()) return cmd_solve(o, out);
    if (certify->parsed()) return cmd_certify(o, out);
    if (bench->parsed()) return cmd_benchmark(o, out);
    return cmd_diagnose(o, out);
  } catch (const InvalidInput& e) {
    err << error_json("input", e.what()) << "\n";
    return kInputError;
  } catch (const NumericalFailure& e) {
    err << error_json("numerical", e.what()) << "\n";
    return kNumericalError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_json("input", e.what()) << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    // Remaining failures are file writes.
    err << error_json("io", e.what()) << "\n";
    return kInputError;
  }
}

}  // namespace uot::cli
