#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "uot/core.hpp"
#include "uot/sinkhorn.hpp"
#include "uot/types.hpp"

namespace uot {

struct OracleResiduals {
  std::optional<double> fixed_point;         // regularized solves
  double mass_identity = 0;
  std::optional<double> projected_gradient;  // |min(X, grad f)|_inf, unregularized solves
  std::optional<double> certified_gap;       // f(X) minus a dual lower bound, unregularized solves
};

struct OracleSolution {
  TransportPlan plan;
  double value = 0;  // g(X*) or f(X_hat)
  double eta = 0;    // 0 for the unregularized problem
  std::optional<DualPotentials> potentials;
  double total_mass = 0;
  OracleResiduals residuals;
  std::int64_t iterations = 0;
};

// |value + (2 tau + eta) mass - tau (alpha + beta)|; eta = 0 gives the
// identity for the unregularized optimum.
inline double mass_identity_residual(double value, double total_mass, const Problem& p, double eta) {
  detail::require(eta >= 0.0, "mass_identity_residual: eta must be non-negative");
  return std::abs(value + (2.0 * p.tau() + eta) * total_mass - p.zero_plan_value());
}

struct RegularizedOptions {
  std::int64_t max_iterations = 100'000'000;
  double mass_tol = 1e-8;
  std::int64_t check_every = 16;
};

// Solves the entropic problem by running the alternating updates without an
// iteration cap until the fixed-point residual drops below tol.
inline OracleSolution solve_regularized(const Problem& p, double eta, double tol = 1e-9,
                                        const RegularizedOptions& opt = {}) {
  detail::require(eta > 0.0, "solve_regularized: eta must be positive");
  detail::require(tol > 0.0, "solve_regularized: tol must be positive");
  detail::LogKernel kernel(p.C(), eta);
  const Vector log_a = p.a().array().log().matrix();
  const Vector log_b = p.b().array().log().matrix();
  DualPotentials uv = DualPotentials::zeros(p.n());
  Vector lse;
  std::int64_t k = 0;
  double residual = detail::fixed_point_residual(kernel, uv, p);
  while (residual >= tol) {
    if (k >= opt.max_iterations)
      throw NumericalFailure("regularized oracle hit its iteration ceiling (residual " + std::to_string(residual) + ")");
    detail::step_in_place(kernel, log_a, log_b, p.tau(), uv, k, lse);
    ++k;
    if (!uv.finite()) throw SolverFailure(k, {});
    if (k % 2 == 0 && (k / 2) % opt.check_every == 0) residual = detail::fixed_point_residual(kernel, uv, p);
  }

  OracleSolution sol;
  sol.eta = eta;
  sol.iterations = k;
  sol.plan = plan_from_potentials(uv, p.C(), eta);
  sol.value = entropic_objective(sol.plan, p, eta);
  sol.total_mass = sol.plan.total_mass;
  sol.residuals.fixed_point = residual;
  sol.residuals.mass_identity = mass_identity_residual(sol.value, sol.total_mass, p, eta);
  sol.potentials = std::move(uv);
  if (sol.residuals.mass_identity > opt.mass_tol * p.zero_plan_value())
    throw NumericalFailure("regularized oracle violates the mass identity: residual " +
                           std::to_string(sol.residuals.mass_identity));
  return sol;
}

namespace detail {

// f(X + D) - f(X) evaluated term by term so that small differences survive
// when f itself is large. r, c are the marginals of X.
inline double primal_difference(const Matrix& D, const Vector& r, const Vector& c, const Problem& p) {
  const Vector dr = D.rowwise().sum();
  const Vector dc = D.colwise().sum().transpose();
  auto kl_diff = [](const Vector& x, const Vector& dx, const Vector& y) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double xn = x[i] + dx[i];
      acc += dx[i] * std::log(x[i] / y[i]) + xn * std::log1p(dx[i] / x[i]) - dx[i];
    }
    return acc;
  };
  return (p.C().array() * D.array()).sum() + p.tau() * (kl_diff(r, dr, p.a()) + kl_diff(c, dc, p.b()));
}

}  // namespace detail

// Lower bound on min f from the dual of the unregularized problem, using the
// marginal-implied potentials p_i = -tau log(r_i/a_i), q_j = -tau log(c_j/b_j)
// shifted down until p_i + q_j <= C_ij.
inline double dual_lower_bound(const Matrix& X, const Problem& p) {
  const double tau = p.tau();
  const Vector r = X.rowwise().sum();
  const Vector c = X.colwise().sum().transpose();
  Vector pu = -tau * (r.array() / p.a().array()).log().matrix();
  Vector qv = -tau * (c.array() / p.b().array()).log().matrix();
  for (Eigen::Index j = 0; j < qv.size(); ++j) {
    double slack = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < pu.size(); ++i) slack = std::min(slack, p.C()(i, j) - pu[i] - qv[j]);
    if (slack < 0.0) qv[j] += slack;
  }
  auto part = [tau](const Vector& w, const Vector& m) { return tau * (m.array() * (-(-w.array() / tau).expm1())).sum(); };
  return part(pu, p.a()) + part(qv, p.b());
}

inline double projected_gradient_residual(const Matrix& X, const Matrix& grad) {
  return X.cwiseMin(grad).cwiseAbs().maxCoeff();
}

enum class UnregularizedMethod { barrier, projected_gradient };

struct UnregularizedOptions {
  UnregularizedMethod method = UnregularizedMethod::barrier;
  double mass_tol = 1e-8;
  // Warm start: entropic solution at warm_eta_factor * tau.
  double warm_eta_factor = 0.1;
  std::int64_t max_gradient_steps = 1'000'000;
  std::int64_t max_newton_steps = 2000;
};

namespace detail {

inline Matrix warm_start(const Problem& p, const UnregularizedOptions& opt) {
  // Only a starting point, so the identity check is relaxed here.
  RegularizedOptions ro;
  ro.mass_tol = 1e-4;
  const auto warm = solve_regularized(p, opt.warm_eta_factor * p.tau(), 1e-7, ro);
  return warm.plan.X;
}

inline OracleSolution finish_unregularized(Matrix X, const Problem& p, std::int64_t iterations) {
  OracleSolution sol;
  sol.iterations = iterations;
  sol.value = primal_objective_dense(X, p);
  const Matrix grad = primal_gradient(X, p);
  sol.residuals.projected_gradient = projected_gradient_residual(X, grad);
  sol.residuals.certified_gap = sol.value - dual_lower_bound(X, p);
  sol.plan = plan_from_dense(X);
  sol.total_mass = sol.plan.total_mass;
  sol.residuals.mass_identity = mass_identity_residual(sol.value, sol.total_mass, p, 0.0);
  return sol;
}

// Log-barrier Newton on t f(X) - sum log X_ij. The Hessian is diagonal plus
// a rank-2n marginal term, so each Newton system reduces to an n x n Schur
// complement.
inline OracleSolution barrier_solve(const Problem& p, double tol, const UnregularizedOptions& opt) {
  const auto n = static_cast<Eigen::Index>(p.n());
  const double tau = p.tau();
  const double m = static_cast<double>(n * n);

  Matrix X = warm_start(p, opt);
  const double floor = std::max(1e-300, 1e-12 * X.sum() / m);
  X = X.cwiseMax(floor);

  const double eta0 = opt.warm_eta_factor * tau;
  double t = m / (eta0 * std::max(1.0, X.sum()));
  const double mu = 10.0;
  std::int64_t newton_steps = 0;

  auto center = [&]() {
    for (int inner = 0; inner < 200; ++inner) {
      if (++newton_steps > opt.max_newton_steps) throw NumericalFailure("barrier oracle exceeded its Newton step budget");
      const Vector r = X.rowwise().sum();
      const Vector c = X.colwise().sum().transpose();
      const Matrix grad_f = primal_gradient(X, p);
      const Matrix G = t * grad_f - X.cwiseInverse();
      const Matrix E = X.cwiseProduct(X);
      const Matrix EG = E.cwiseProduct(G);
      const Vector h1 = -EG.rowwise().sum();
      const Vector h2 = -EG.colwise().sum().transpose();
      const Vector d1 = r / (t * tau) + E.rowwise().sum();
      const Vector d2 = c / (t * tau) + E.colwise().sum().transpose();
      const Vector inv_d1 = d1.cwiseInverse();
      Eigen::MatrixXd S = -(E.transpose() * inv_d1.asDiagonal() * E);
      S.diagonal() += d2;
      const Vector rhs = h2 - E.transpose() * inv_d1.cwiseProduct(h1);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success) throw NumericalFailure("barrier oracle: Newton system factorization failed");
      const Vector y2 = ldlt.solve(rhs);
      const Vector y1 = inv_d1.cwiseProduct(h1 - E * y2);
      Matrix step = G;
      step.colwise() += y1;
      step.rowwise() += y2.transpose();
      step = -E.cwiseProduct(step);
      if (!step.allFinite()) throw NumericalFailure("barrier oracle: non-finite Newton step");

      const double slope = (G.array() * step.array()).sum();
      const double lambda2 = -slope;
      if (lambda2 <= 1e-10) return;

      double s = 1.0;
      for (Eigen::Index k = 0; k < step.size(); ++k) {
        const double d = step.data()[k];
        if (d < 0.0) s = std::min(s, -0.99 * X.data()[k] / d);
      }
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Matrix D = s * step;
        const double barrier = -(D.array() / X.array()).log1p().sum();
        const double dphi = t * primal_difference(D, r, c, p) + barrier;
        if (dphi <= 0.25 * s * slope) {
          X += D;
          accepted = true;
          break;
        }
        s *= 0.5;
      }
      if (!accepted) {
        // Decrease below rounding of phi: treat as centered.
        // Rounding scale of phi differences: the t f part is summed over n^2
        // terms of size about t f, the barrier part over n^2 logs.
        const double noise = 1e-13 * (t * (primal_objective_dense(X, p) + p.zero_plan_value()) + m);
        if (lambda2 < std::max(1e-6, noise)) return;
        throw NumericalFailure("barrier oracle: line search failed");
      }
    }
  };

  const double target = std::max(1e-300, 0.1 * tol);
  for (int outer = 0; outer < 64; ++outer) {
    center();
    const double f = primal_objective_dense(X, p);
    const double x = X.sum();
    const bool gap_ok = m / t <= target * std::max(1.0, std::abs(f));
    const bool mass_ok = mass_identity_residual(f, x, p, 0.0) <= 0.1 * opt.mass_tol * p.zero_plan_value();
    if (gap_ok && mass_ok) {
      auto sol = finish_unregularized(std::move(X), p, newton_steps);
      const double scale = std::max(1.0, std::abs(sol.value));
      if (*sol.residuals.certified_gap <= tol * scale &&
          sol.residuals.mass_identity <= opt.mass_tol * p.zero_plan_value())
        return sol;
      X = sol.plan.X;
    }
    t *= mu;
    if (t > 1e18) break;
  }
  throw NumericalFailure("barrier oracle did not reach the requested accuracy");
}

// Projected gradient with Barzilai-Borwein trial steps and Armijo
// backtracking along the projection arc.
inline OracleSolution projected_gradient_solve(const Problem& p, double tol, const UnregularizedOptions& opt) {
  constexpr double kLift = 1e-300;
  Matrix X = warm_start(p, opt).cwiseMax(kLift);
  Matrix grad = primal_gradient(X, p);
  double alpha = 1.0 / std::max(1e-12, grad.cwiseAbs().maxCoeff());
  for (std::int64_t it = 0; it < opt.max_gradient_steps; ++it) {
    const double res = projected_gradient_residual(X, grad);
    if (res < tol) {
      const double f = primal_objective_dense(X, p);
      if (mass_identity_residual(f, X.sum(), p, 0.0) <= opt.mass_tol * p.zero_plan_value())
        return finish_unregularized(std::move(X), p, it);
    }
    const Vector r = X.rowwise().sum();
    const Vector c = X.colwise().sum().transpose();
    bool accepted = false;
    Matrix Xn;
    for (int ls = 0; ls < 80; ++ls) {
      Xn = (X - alpha * grad).cwiseMax(kLift);
      const Matrix D = Xn - X;
      const double decrease = primal_difference(D, r, c, p);
      if (decrease <= 1e-4 * (grad.array() * D.array()).sum()) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) throw NumericalFailure("projected gradient: line search failed");
    const Matrix gn = primal_gradient(Xn, p);
    const double sy = ((Xn - X).array() * (gn - grad).array()).sum();
    const double ss = (Xn - X).squaredNorm();
    alpha = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : alpha * 2.0;
    X = std::move(Xn);
    grad = gn;
  }
  throw NumericalFailure("projected gradient oracle hit its iteration ceiling");
}

}  // namespace detail

// Minimizes f over non-negative plans and certifies the value with a dual
// lower bound and the mass identity f + 2 tau x = tau (alpha + beta).
inline OracleSolution solve_unregularized(const Problem& p, double tol = 1e-9, const UnregularizedOptions& opt = {}) {
  detail::require(tol > 0.0, "solve_unregularized: tol must be positive");
  if (opt.method == UnregularizedMethod::projected_gradient) return detail::projected_gradient_solve(p, tol, opt);
  return detail::barrier_solve(p, tol, opt);
}

}  // namespace uot
