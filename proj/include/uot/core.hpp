#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "uot/types.hpp"

namespace uot {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum(exp(x))) with a max shift; -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Generalized KL divergence sum x log(x/y) - x + y with 0 log 0 = 0.
inline double kl_divergence(const Vector& x, const Vector& y) {
  detail::require(x.size() == y.size(), "kl_divergence: dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    detail::require(y[i] > 0.0, "kl_divergence: reference entries must be positive");
    detail::require(x[i] >= 0.0, "kl_divergence: entries must be non-negative");
    if (x[i] > 0.0) acc += x[i] * (std::log(x[i]) - std::log(y[i]));
    acc += y[i] - x[i];
  }
  return acc;
}

namespace detail {

// KL(exp(logx) || y) evaluated from log-domain entries.
inline double kl_from_log(const Vector& logx, const Vector& y) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logx.size(); ++i) {
    const double xi = std::exp(logx[i]);
    if (xi > 0.0) acc += xi * (logx[i] - std::log(y[i]));
    acc += y[i] - xi;
  }
  return acc;
}

inline Vector row_lse(const Matrix& logX) {
  Vector out(logX.rows());
  for (Eigen::Index i = 0; i < logX.rows(); ++i)
    out[i] = log_sum_exp(std::span<const double>(logX.row(i).data(), static_cast<std::size_t>(logX.cols())));
  return out;
}

inline Vector col_lse(const Matrix& logX) {
  const Matrix t = logX.transpose();
  return row_lse(t);
}

inline double total_lse(const Vector& lse) {
  return log_sum_exp(std::span<const double>(lse.data(), static_cast<std::size_t>(lse.size())));
}

}  // namespace detail

// Builds a plan from its log representation. Marginals and total mass go
// through max-shifted log-sum-exp reductions.
inline TransportPlan plan_from_log(Matrix logX) {
  detail::require(logX.rows() == logX.cols(), "plan must be square");
  for (Eigen::Index k = 0; k < logX.size(); ++k)
    if (std::isnan(logX.data()[k]) || logX.data()[k] == std::numeric_limits<double>::infinity())
      throw NumericalFailure("plan_from_log: non-finite log entry");
  TransportPlan plan;
  plan.X = logX.array().exp().matrix();
  const Vector lr = detail::row_lse(logX);
  const Vector lc = detail::col_lse(logX);
  plan.row_marginal = lr.array().exp().matrix();
  plan.col_marginal = lc.array().exp().matrix();
  plan.total_mass = std::exp(detail::total_lse(lr));
  plan.logX = std::move(logX);
  return plan;
}

// Wraps an explicit non-negative matrix; zero entries get logX = -inf.
inline TransportPlan plan_from_dense(const Matrix& X) {
  detail::require(X.rows() == X.cols(), "plan must be square");
  detail::require(X.allFinite(), "plan entries must be finite");
  detail::require((X.array() >= 0.0).all(), "plan entries must be non-negative");
  Matrix logX = X.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : kNegInf; });
  TransportPlan plan = plan_from_log(std::move(logX));
  plan.X = X;
  return plan;
}

// B(u, v) = diag(e^{u/eta}) e^{-C/eta} diag(e^{v/eta}), built in log domain.
inline TransportPlan plan_from_potentials(const DualPotentials& uv, const Matrix& C, double eta) {
  detail::require(eta > 0.0, "eta must be positive");
  const Eigen::Index n = C.rows();
  detail::require(uv.u.size() == n && uv.v.size() == n && C.cols() == n, "plan_from_potentials: dimension mismatch");
  Matrix logX(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) logX(i, j) = (uv.u[i] + uv.v[j] - C(i, j)) / eta;
  return plan_from_log(std::move(logX));
}

// H(X) = -sum X_ij (log X_ij - 1), with 0 (log 0 - 1) = 0.
inline double entropy(const TransportPlan& plan) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < plan.X.size(); ++k) {
    const double x = plan.X.data()[k];
    detail::require(x >= 0.0, "entropy: negative plan entry");
    if (x > 0.0) acc -= x * (plan.logX.data()[k] - 1.0);
  }
  return acc;
}

// f(X) = <C, X> + tau KL(X1 || a) + tau KL(X^T 1 || b).
inline double primal_objective(const TransportPlan& plan, const Problem& p) {
  detail::require(plan.n() == p.n(), "primal_objective: dimension mismatch");
  const double transport = (p.C().array() * plan.X.array()).sum();
  return transport + p.tau() * kl_divergence(plan.row_marginal, p.a()) + p.tau() * kl_divergence(plan.col_marginal, p.b());
}

// g(X) = f(X) - eta H(X).
inline double entropic_objective(const TransportPlan& plan, const Problem& p, double eta) {
  detail::require(eta > 0.0, "entropic_objective: eta must be positive");
  return primal_objective(plan, p) - eta * entropy(plan);
}

// h(u, v) from the dual of the entropic problem. The exponential sum is
// reduced in log domain and exponentiated once.
inline double dual_objective(const DualPotentials& uv, const Problem& p, double eta) {
  detail::require(eta > 0.0, "dual_objective: eta must be positive");
  const auto n = static_cast<Eigen::Index>(p.n());
  detail::require(uv.u.size() == n && uv.v.size() == n, "dual_objective: dimension mismatch");
  std::vector<double> z(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) z[static_cast<std::size_t>(i * n + j)] = (uv.u[i] + uv.v[j] - p.C()(i, j)) / eta;
  const double mass = std::exp(log_sum_exp(z));
  const double tau = p.tau();
  const double pen_a = tau * (p.a().array() * (-uv.u.array() / tau).exp()).sum();
  const double pen_b = tau * (p.b().array() * (-uv.v.array() / tau).exp()).sum();
  const double h = eta * mass + pen_a + pen_b;
  if (!std::isfinite(h)) throw NumericalFailure("dual_objective overflowed; eta too small for these potentials");
  return h;
}

// Definition of an epsilon-approximate plan: f(X) - f(X_hat) <= epsilon.
inline double epsilon_gap(const TransportPlan& plan, const Problem& p, double fhat) {
  return primal_objective(plan, p) - fhat;
}

// Gradient of f at a dense plan: C_ij + tau log(r_i / a_i) + tau log(c_j / b_j).
inline Matrix primal_gradient(const Matrix& X, const Problem& p) {
  const auto n = static_cast<Eigen::Index>(p.n());
  detail::require(X.rows() == n && X.cols() == n, "primal_gradient: dimension mismatch");
  const Vector r = X.rowwise().sum();
  const Vector c = X.colwise().sum().transpose();
  const Vector gr = p.tau() * (r.array().log() - p.a().array().log());
  const Vector gc = p.tau() * (c.array().log() - p.b().array().log());
  Matrix g = p.C();
  g.colwise() += gr;
  g.rowwise() += gc.transpose();
  return g;
}

// f at a dense plan without building the log representation.
inline double primal_objective_dense(const Matrix& X, const Problem& p) {
  const Vector r = X.rowwise().sum();
  const Vector c = X.colwise().sum().transpose();
  return (p.C().array() * X.array()).sum() + p.tau() * kl_divergence(r, p.a()) + p.tau() * kl_divergence(c, p.b());
}

namespace detail {

// Row/column log-sum-exp reductions of (u_i + v_j - C_ij) / eta without
// materializing the plan. Keeps C and C^T contiguous for both sweeps.
class LogKernel {
 public:
  LogKernel(const Matrix& C, double eta)
      : C_(C), Ct_(C.transpose()), eta_(eta), z_(C.cols()) {}

  double eta() const { return eta_; }
  Eigen::Index n() const { return C_.rows(); }
  const Matrix& C() const { return C_; }

  // out_i = LSE_j((v_j - C_ij) / eta)
  void row_lse(const Vector& v, Vector& out) { sweep(C_, v, out); }
  // out_j = LSE_i((u_i - C_ij) / eta)
  void col_lse(const Vector& u, Vector& out) { sweep(Ct_, u, out); }

  struct Summary {
    Vector log_a;           // log of row marginal
    Vector log_b;           // log of column marginal
    double total_mass = 0;  // x
    double transport = 0;   // <C, X>
    double x_log_x = 0;     // sum X log X
  };

  Summary summarize(const DualPotentials& uv) {
    Summary s;
    const Eigen::Index n = C_.rows();
    s.log_a.resize(n);
    s.log_b.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* c = C_.row(i).data();
      double m = kNegInf;
      for (Eigen::Index j = 0; j < n; ++j) {
        z_[j] = (uv.u[i] + uv.v[j] - c[j]) / eta_;
        m = std::max(m, z_[j]);
      }
      double sum = 0.0, tr = 0.0, xl = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double q = z_[j] - m;
        if (q < kExpFloor) continue;
        const double w = std::exp(q);
        sum += w;
        tr += w * c[j];
        xl += w * z_[j];
      }
      s.log_a[i] = m + std::log(sum);
      const double scale = std::exp(m);
      s.transport += scale * tr;
      s.x_log_x += scale * xl;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double* c = Ct_.row(j).data();
      for (Eigen::Index i = 0; i < n; ++i) z_[i] = uv.u[i] + uv.v[j] - c[i];
      s.log_b[j] = shifted_lse(n);
    }
    s.total_mass = std::exp(total_lse(s.log_a));
    return s;
  }

 private:
  // exp() of anything below this underflows to zero; skipping it avoids
  // the slow subnormal path in libm.
  static constexpr double kExpFloor = -745.2;

  // LSE of z_[0..n) / eta. Works on the unscaled z so the underflow test
  // needs no division.
  double shifted_lse(Eigen::Index n) {
    double m = kNegInf;
    for (Eigen::Index k = 0; k < n; ++k) m = std::max(m, z_[k]);
    if (!std::isfinite(m)) return m / eta_;
    const double cut = kExpFloor * eta_;
    double sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double d = z_[k] - m;
      if (d >= cut) sum += std::exp(d / eta_);
    }
    return m / eta_ + std::log(sum);
  }

  void sweep(const Matrix& K, const Vector& w, Vector& out) {
    const Eigen::Index n = K.rows();
    out.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* k = K.row(i).data();
      for (Eigen::Index j = 0; j < n; ++j) z_[j] = w[j] - k[j];
      out[i] = shifted_lse(n);
    }
  }

  Matrix C_;
  Matrix Ct_;
  double eta_;
  Eigen::ArrayXd z_;
};

}  // namespace detail

// f, g and h at the plan B(u, v), evaluated without materializing it.
struct PotentialObjectives {
  double f = 0;
  double g = 0;
  double h = 0;
  double total_mass = 0;
  Vector log_a;
  Vector log_b;
};

inline PotentialObjectives evaluate_potentials(detail::LogKernel& kernel, const DualPotentials& uv, const Problem& p) {
  const auto s = kernel.summarize(uv);
  const double tau = p.tau();
  const double eta = kernel.eta();
  PotentialObjectives out;
  out.total_mass = s.total_mass;
  out.f = s.transport + tau * detail::kl_from_log(s.log_a, p.a()) + tau * detail::kl_from_log(s.log_b, p.b());
  const double H = s.total_mass - s.x_log_x;
  out.g = out.f - eta * H;
  out.h = eta * s.total_mass + tau * (p.a().array() * (-uv.u.array() / tau).exp()).sum() +
          tau * (p.b().array() * (-uv.v.array() / tau).exp()).sum();
  out.log_a = s.log_a;
  out.log_b = s.log_b;
  return out;
}

}  // namespace uot
