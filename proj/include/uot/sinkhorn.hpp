#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uot/core.hpp"
#include "uot/types.hpp"

namespace uot {

// The constants that drive the step size and the stopping rule.
struct Quantities {
  double R = 0;
  double S = 0;
  double T = 0;
  double U = 0;
  double eta = 0;
  double epsilon = 0;
  // Iteration count the certified bound asks for, before rounding/clamping.
  double kmax_raw = 0;
  std::int64_t kmax = 1;
};

// Entrywise sup norm of the cost matrix.
inline double cost_sup_norm(const Matrix& C) { return C.size() == 0 ? 0.0 : C.cwiseAbs().maxCoeff(); }

// R = max{|log a|_inf, |log b|_inf} + max{log n, |C|_inf / eta - log n}
inline double compute_R(const Problem& p, double eta) {
  detail::require(eta > 0.0, "compute_R: eta must be positive");
  const double logn = std::log(static_cast<double>(p.n()));
  const double marg = std::max(sup_norm(p.a().array().log().matrix()), sup_norm(p.b().array().log().matrix()));
  return marg + std::max(logn, cost_sup_norm(p.C()) / eta - logn);
}

namespace detail {
// Floor of one iteration; with admissible eta the raw bound stays well above it.
inline std::int64_t clamp_kmax(double raw) {
  const double ceiled = std::ceil(raw);
  if (ceiled > 9.0e18) throw NumericalFailure("iteration bound exceeds the 64-bit counter");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(ceiled));
}
}  // namespace detail

inline Quantities compute_quantities(const Problem& p, double epsilon) {
  detail::require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
  detail::require(p.n() >= 2, "the quantity ledger needs n >= 2");
  const double n = static_cast<double>(p.n());
  const double logn = std::log(n);
  const double mass = p.alpha() + p.beta();
  const double half = 0.5 * mass;
  const double tau = p.tau();

  Quantities q;
  q.epsilon = epsilon;
  q.S = half + 0.5 + 1.0 / (4.0 * logn);
  q.T = half * (std::log(half) + 2.0 * logn - 1.0) + logn + 2.5;
  q.U = std::max({q.S + q.T, 2.0 * epsilon, 4.0 * epsilon * logn / tau, 4.0 * epsilon * mass * logn / tau});
  q.eta = epsilon / q.U;
  q.R = compute_R(p, q.eta);

  const double bracket = std::log(8.0 * q.eta * q.R) + std::log(tau * (tau + 1.0)) + 3.0 * std::log(q.U / epsilon);
  q.kmax_raw = 1.0 + (tau * q.U / epsilon + 1.0) * bracket;
  if (!std::isfinite(q.kmax_raw)) throw NumericalFailure("iteration bound is not finite");
  q.kmax = detail::clamp_kmax(q.kmax_raw);

  // eta <= 1/2 and eta/tau <= 1/(4 log n max{1, alpha+beta}) follow from U.
  const double eta_cap = 1.0 / (4.0 * logn * std::max(1.0, mass));
  if (!(q.eta <= 0.5 * (1 + 1e-15) && q.eta / tau <= eta_cap * (1 + 1e-15)))
    throw NumericalFailure("step size violates its admissibility bound");
  return q;
}

// Lambda_k = tau (tau / (tau + eta))^k R
inline double rate_bound(std::int64_t k, double R, double eta, double tau) {
  detail::require(k >= 0, "rate_bound: k must be non-negative");
  return tau * std::pow(tau / (tau + eta), static_cast<double>(k)) * R;
}

inline double rate_bound(std::int64_t k, const Quantities& q, double tau) { return rate_bound(k, q.R, q.eta, tau); }

struct IterateRecord {
  std::int64_t k = 0;
  int parity = 0;  // k mod 2; even iterates update u next
  double h = 0;
  double total_mass = 0;
  std::optional<double> f;
  std::optional<double> g;
  std::optional<double> residual;
  std::optional<double> delta;  // max(|u^k - u*|, |v^k - v*|) against a reference solution
};

struct SinkhornTrace {
  std::vector<IterateRecord> records;
  std::int64_t stride = 1;
  // Filled only with RunOptions::store_vectors.
  std::vector<DualPotentials> potentials;
  std::vector<Vector> log_a;
  std::vector<Vector> log_b;
};

struct RunOptions {
  bool record_primal = false;
  bool record_residual = false;
  bool store_vectors = false;
  std::int64_t max_trace = 100000;
  // Off by default: the run length is the certified iteration count.
  std::optional<double> early_stop_tol;
  std::optional<DualPotentials> reference;
  // Called with (k, (u^k, v^k)) for every iterate, including the last.
  std::function<void(std::int64_t, const DualPotentials&)> observer;
};

class SolverFailure : public NumericalFailure {
 public:
  SolverFailure(std::int64_t iteration, SinkhornTrace partial)
      : NumericalFailure("non-finite potentials at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        partial_(std::move(partial)) {}
  std::int64_t iteration() const { return iteration_; }
  const SinkhornTrace& partial_trace() const { return partial_; }

 private:
  std::int64_t iteration_;
  SinkhornTrace partial_;
};

namespace detail {

// One alternating update. For even k the u-block is replaced by its exact
// minimizer given v; v is left untouched (and vice versa for odd k).
// u/eta + log a - log a^k simplifies to log a - LSE_j((v_j - C_ij)/eta)
// since log a^k = u/eta + LSE_j(...); the cancelled term is never formed.
inline void step_in_place(LogKernel& kernel, const Vector& log_a, const Vector& log_b, double tau, DualPotentials& uv,
                          std::int64_t k, Vector& lse) {
  const double eta = kernel.eta();
  const double damp = eta * tau / (eta + tau);
  if (k % 2 == 0) {
    kernel.row_lse(uv.v, lse);
    uv.u = ((log_a - lse).array() * damp).matrix();
  } else {
    kernel.col_lse(uv.u, lse);
    uv.v = ((log_b - lse).array() * damp).matrix();
  }
}

}  // namespace detail

inline DualPotentials sinkhorn_step(const DualPotentials& state, const Problem& p, double eta, std::int64_t k) {
  detail::require(eta > 0.0, "sinkhorn_step: eta must be positive");
  detail::require(state.n() == p.n() && state.v.size() == state.u.size(), "sinkhorn_step: dimension mismatch");
  detail::require(state.finite(), "sinkhorn_step: potentials must be finite");
  detail::LogKernel kernel(p.C(), eta);
  DualPotentials next = state;
  Vector lse;
  const Vector log_a = p.a().array().log().matrix();
  const Vector log_b = p.b().array().log().matrix();
  detail::step_in_place(kernel, log_a, log_b, p.tau(), next, k, lse);
  if (!next.finite()) throw SolverFailure(k, {});
  return next;
}

inline double fixed_point_residual_from_logs(const DualPotentials& uv, const Problem& p, const Vector& log_a_uv,
                                             const Vector& log_b_uv) {
  const double tau = p.tau();
  const Vector ra = uv.u / tau - (p.a().array().log().matrix() - log_a_uv);
  const Vector rb = uv.v / tau - (p.b().array().log().matrix() - log_b_uv);
  return std::max(sup_norm(ra), sup_norm(rb));
}

namespace detail {

inline double fixed_point_residual(LogKernel& kernel, const DualPotentials& uv, const Problem& p) {
  Vector la, lb;
  kernel.row_lse(uv.v, la);
  kernel.col_lse(uv.u, lb);
  la += uv.u / kernel.eta();
  lb += uv.v / kernel.eta();
  return fixed_point_residual_from_logs(uv, p, la, lb);
}

}  // namespace detail

// max_i |u_i/tau - (log a_i - log a_i(u,v))| over both blocks; zero exactly
// at the optimal dual pair.
inline double fixed_point_residual(const DualPotentials& uv, const Problem& p, double eta) {
  detail::require(eta > 0.0, "fixed_point_residual: eta must be positive");
  detail::require(uv.n() == p.n(), "fixed_point_residual: dimension mismatch");
  detail::LogKernel kernel(p.C(), eta);
  return detail::fixed_point_residual(kernel, uv, p);
}

struct IterationResult {
  DualPotentials potentials;
  SinkhornTrace trace;
  std::int64_t iterations = 0;
  bool early_stopped = false;
};

// Runs the alternating updates from u = v = 0 for a fixed number of
// iterations at a given eta.
inline IterationResult iterate(const Problem& p, double eta, std::int64_t iterations, const RunOptions& opt = {}) {
  detail::require(eta > 0.0, "eta must be positive");
  detail::require(iterations >= 0, "iteration count must be non-negative");
  const auto n = static_cast<Eigen::Index>(p.n());
  if (opt.reference) detail::require(opt.reference->n() == p.n(), "reference potentials: dimension mismatch");

  detail::LogKernel kernel(p.C(), eta);
  const Vector log_a = p.a().array().log().matrix();
  const Vector log_b = p.b().array().log().matrix();
  const double tau = p.tau();

  IterationResult res;
  res.potentials = DualPotentials::zeros(p.n());
  DualPotentials& uv = res.potentials;
  SinkhornTrace& trace = res.trace;
  const std::int64_t cap = std::max<std::int64_t>(1, opt.max_trace);
  trace.stride = iterations <= cap ? 1 : (iterations + cap - 1) / cap;

  const bool need_summary = opt.record_primal || opt.record_residual || opt.store_vectors;
  Vector lse(n);
  Vector marg(n);

  auto penalties = [&]() {
    return tau * (p.a().array() * (-uv.u.array() / tau).exp()).sum() +
           tau * (p.b().array() * (-uv.v.array() / tau).exp()).sum();
  };

  auto record = [&](std::int64_t k) {
    IterateRecord rec;
    rec.k = k;
    rec.parity = static_cast<int>(k % 2);
    if (need_summary) {
      const auto obj = evaluate_potentials(kernel, uv, p);
      rec.h = obj.h;
      rec.total_mass = obj.total_mass;
      if (opt.record_primal) {
        rec.f = obj.f;
        rec.g = obj.g;
      }
      if (opt.record_residual) rec.residual = fixed_point_residual_from_logs(uv, p, obj.log_a, obj.log_b);
      if (opt.store_vectors) {
        trace.potentials.push_back(uv);
        trace.log_a.push_back(obj.log_a);
        trace.log_b.push_back(obj.log_b);
      }
    } else {
      // One sweep suffices for x^k and h: the marginal this parity needs.
      if (k % 2 == 0) {
        kernel.row_lse(uv.v, marg);
        marg += uv.u / eta;
      } else {
        kernel.col_lse(uv.u, marg);
        marg += uv.v / eta;
      }
      rec.total_mass = std::exp(detail::total_lse(marg));
      rec.h = eta * rec.total_mass + penalties();
    }
    if (opt.reference)
      rec.delta = std::max(sup_norm(uv.u - opt.reference->u), sup_norm(uv.v - opt.reference->v));
    trace.records.push_back(std::move(rec));
  };

  std::int64_t k = 0;
  for (; k < iterations; ++k) {
    if (opt.observer) opt.observer(k, uv);
    if (k % trace.stride == 0) record(k);
    if (opt.early_stop_tol && detail::fixed_point_residual(kernel, uv, p) < *opt.early_stop_tol) {
      res.early_stopped = true;
      break;
    }
    detail::step_in_place(kernel, log_a, log_b, tau, uv, k, lse);
    if (!uv.finite()) throw SolverFailure(k, std::move(trace));
  }
  res.iterations = k;
  if (!res.early_stopped) {
    if (opt.observer) opt.observer(k, uv);
    if (trace.records.empty() || trace.records.back().k != k) record(k);
  } else if (trace.records.empty() || trace.records.back().k != k) {
    record(k);
  }
  return res;
}

struct SolverReport {
  Quantities quantities;
  std::int64_t k_f = 0;
  std::int64_t iterations_run = 0;
  bool early_stopped = false;
  DualPotentials potentials;
  TransportPlan plan;
  double f_final = 0;
  double g_final = 0;
  double h_final = 0;
  double fixed_point_residual = 0;
  SinkhornTrace trace;
};

// The full solver: eta = epsilon / U, u = v = 0, then exactly kmax updates.
inline SolverReport run(const Problem& p, double epsilon, const RunOptions& opt = {}) {
  SolverReport rep;
  rep.quantities = compute_quantities(p, epsilon);
  const double eta = rep.quantities.eta;
  auto it = iterate(p, eta, rep.quantities.kmax, opt);
  rep.k_f = rep.quantities.kmax;
  rep.iterations_run = it.iterations;
  rep.early_stopped = it.early_stopped;
  rep.potentials = std::move(it.potentials);
  rep.trace = std::move(it.trace);
  rep.plan = plan_from_potentials(rep.potentials, p.C(), eta);
  rep.f_final = primal_objective(rep.plan, p);
  rep.g_final = rep.f_final - eta * entropy(rep.plan);
  rep.h_final = dual_objective(rep.potentials, p, eta);
  rep.fixed_point_residual = fixed_point_residual(rep.potentials, p, eta);
  return rep;
}

}  // namespace uot
