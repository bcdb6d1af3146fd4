#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uot/experiments.hpp"
#include "uot/oracle.hpp"
#include "uot/sinkhorn.hpp"
#include "uot/types.hpp"

namespace uot::io {

using json = nlohmann::json;

namespace detail {

inline double finite_number(const json& j, const std::string& what) {
  if (!j.is_number()) throw InvalidInput(what + " must be a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw InvalidInput(what + " is not finite");
  return x;
}

inline Vector vector_from(const json& j, std::size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n) throw InvalidInput(what + " must be an array of length n");
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = finite_number(j[i], what);
  return v;
}

inline json to_array(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// NaN and infinities have no JSON spelling; write them as null.
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// {"n": int, "tau": float, "a": [..], "b": [..], "C": [[..], ..]}, C row-major.
inline Problem problem_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInput("problem must be a JSON object");
  for (const char* key : {"n", "tau", "a", "b", "C"})
    if (!j.contains(key)) throw InvalidInput(std::string("problem is missing \"") + key + "\"");
  if (!j["n"].is_number_integer() || j["n"].get<std::int64_t>() < 1) throw InvalidInput("n must be a positive integer");
  const auto n = j["n"].get<std::size_t>();
  const double tau = detail::finite_number(j["tau"], "tau");
  Vector a = detail::vector_from(j["a"], n, "a");
  Vector b = detail::vector_from(j["b"], n, "b");
  const json& jc = j["C"];
  if (!jc.is_array() || jc.size() != n) throw InvalidInput("C must have n rows");
  Matrix C(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) C.row(static_cast<Eigen::Index>(i)) = detail::vector_from(jc[i], n, "C row").transpose();
  return Problem(std::move(a), std::move(b), std::move(C), tau);
}

inline json problem_to_json(const Problem& p) {
  json C = json::array();
  for (Eigen::Index i = 0; i < p.C().rows(); ++i) C.push_back(detail::to_array(p.C().row(i).transpose()));
  return {{"n", p.n()}, {"tau", p.tau()}, {"a", detail::to_array(p.a())}, {"b", detail::to_array(p.b())}, {"C", C}};
}

inline Problem read_problem(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput("malformed problem JSON in " + path.string() + ": " + e.what());
  }
  return problem_from_json(j);
}

inline void write_problem(const std::filesystem::path& path, const Problem& p) {
  detail::write_file(path, problem_to_json(p).dump() + "\n");
}

// Binary plan: n and n as little-endian u64, then n*n little-endian doubles
// in row-major order.
inline void write_plan(const std::filesystem::path& path, const Matrix& X) {
  static_assert(sizeof(double) == 8);
  std::string buf;
  auto put64 = [&](std::uint64_t w) {
    for (int s = 0; s < 64; s += 8) buf.push_back(static_cast<char>((w >> s) & 0xff));
  };
  put64(static_cast<std::uint64_t>(X.rows()));
  put64(static_cast<std::uint64_t>(X.cols()));
  for (Eigen::Index k = 0; k < X.size(); ++k) {
    std::uint64_t w;
    std::memcpy(&w, X.data() + k, 8);
    put64(w);
  }
  detail::write_file(path, buf);
}

inline Matrix read_plan(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  auto get64 = [&](std::size_t off) {
    std::uint64_t w = 0;
    for (int s = 0; s < 8; ++s) w |= std::uint64_t{static_cast<unsigned char>(buf[off + s])} << (8 * s);
    return w;
  };
  if (buf.size() < 16) throw InvalidInput("plan file too short: " + path.string());
  const auto rows = get64(0), cols = get64(8);
  if (buf.size() != 16 + 8 * rows * cols) throw InvalidInput("plan file size does not match its header");
  Matrix X(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t k = 0; k < rows * cols; ++k) {
    const std::uint64_t w = get64(16 + 8 * k);
    std::memcpy(X.data() + k, &w, 8);
  }
  return X;
}

inline json quantities_to_json(const Quantities& q) {
  return {{"R", q.R},     {"S", q.S},       {"T", q.T},       {"U", q.U}, {"eta", q.eta}, {"epsilon", q.epsilon},
          {"kmax", q.kmax}, {"kmax_raw", q.kmax_raw}};
}

inline json report_to_json(const SolverReport& rep, const std::string& plan_file) {
  return {{"k_f", rep.k_f},
          {"eta", rep.quantities.eta},
          {"quantities", quantities_to_json(rep.quantities)},
          {"f_final", rep.f_final},
          {"g_final", rep.g_final},
          {"h_final", rep.h_final},
          {"total_mass", rep.plan.total_mass},
          {"fixed_point_residual", rep.fixed_point_residual},
          {"iterations_run", rep.iterations_run},
          {"early_stopped", rep.early_stopped},
          {"trace_stride", rep.trace.stride},
          {"plan_file", plan_file}};
}

inline json oracle_to_json(const OracleSolution& sol) {
  json res = {{"fixed_point", sol.residuals.fixed_point ? json(*sol.residuals.fixed_point) : json(nullptr)},
              {"mass_identity", sol.residuals.mass_identity}};
  if (sol.residuals.projected_gradient) res["projected_gradient"] = *sol.residuals.projected_gradient;
  if (sol.residuals.certified_gap) res["certified_gap"] = *sol.residuals.certified_gap;
  json out = {{"value", sol.value}, {"total_mass", sol.total_mass}, {"eta", sol.eta}, {"residuals", res},
              {"iterations", sol.iterations}};
  out["potentials"] = sol.potentials ? json{{"u", detail::to_array(sol.potentials->u)}, {"v", detail::to_array(sol.potentials->v)}}
                                     : json(nullptr);
  return out;
}

// Columns k, parity, h, f, g, x_k, residual; unrecorded cells stay empty.
inline std::string trace_csv(const SinkhornTrace& trace) {
  using uot::detail::fmt17;
  auto opt = [](const std::optional<double>& x) { return x ? fmt17(*x) : std::string(); };
  std::string s = "k,parity,h,f,g,x_k,residual\n";
  for (const auto& r : trace.records)
    s += std::to_string(r.k) + "," + std::to_string(r.parity) + "," + fmt17(r.h) + "," + opt(r.f) + "," + opt(r.g) +
         "," + fmt17(r.total_mass) + "," + opt(r.residual) + "\n";
  return s;
}

inline void write_trace_csv(const std::filesystem::path& path, const SinkhornTrace& trace) {
  detail::write_file(path, trace_csv(trace));
}

inline void write_json(const std::filesystem::path& path, const json& j) { detail::write_file(path, j.dump(2) + "\n"); }

}  // namespace uot::io
