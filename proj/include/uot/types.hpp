#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace uot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Input that violates a documented precondition (shape, sign, range).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value or failed to converge.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline bool all_finite(const Vector& x) { return x.allFinite(); }

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace detail

// An unbalanced transport instance: marginals a, b, ground cost C and the
// KL penalty weight tau.
class Problem {
 public:
  Problem(Vector a, Vector b, Matrix C, double tau) : Problem(std::move(a), std::move(b), std::move(C), tau, 2) {}

  // 1x1 instances are useful for closed-form checks but leave log(n) = 0,
  // so they cannot feed the quantity ledger.
  static Problem single_point(double a, double b, double c, double tau) {
    Vector va(1), vb(1);
    Matrix mc(1, 1);
    va << a;
    vb << b;
    mc << c;
    return Problem(std::move(va), std::move(vb), std::move(mc), tau, 1);
  }

  std::size_t n() const { return static_cast<std::size_t>(a_.size()); }
  const Vector& a() const { return a_; }
  const Vector& b() const { return b_; }
  const Matrix& C() const { return C_; }
  double tau() const { return tau_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  // tau * (alpha + beta): the value of f at the zero plan.
  double zero_plan_value() const { return tau_ * (alpha_ + beta_); }

 private:
  Problem(Vector a, Vector b, Matrix C, double tau, Eigen::Index min_size)
      : a_(std::move(a)), b_(std::move(b)), C_(std::move(C)), tau_(tau) {
    using detail::require;
    const Eigen::Index n = a_.size();
    require(n >= min_size, "problem size must be at least " + std::to_string(min_size));
    require(b_.size() == n, "marginals a and b differ in length");
    require(C_.rows() == n && C_.cols() == n, "cost matrix must be n x n");
    require(std::isfinite(tau_) && tau_ > 0.0, "tau must be positive and finite");
    require(a_.allFinite() && (a_.array() > 0.0).all(), "entries of a must be strictly positive");
    require(b_.allFinite() && (b_.array() > 0.0).all(), "entries of b must be strictly positive");
    require(C_.allFinite() && (C_.array() >= 0.0).all(), "cost entries must be finite and non-negative");
    alpha_ = a_.sum();
    beta_ = b_.sum();
  }

  Vector a_;
  Vector b_;
  Matrix C_;
  double tau_;
  double alpha_ = 0.0;
  double beta_ = 0.0;
};

// Dual variables (u, v) of the entropic problem.
struct DualPotentials {
  Vector u;
  Vector v;

  static DualPotentials zeros(std::size_t n) {
    return {Vector::Zero(static_cast<Eigen::Index>(n)), Vector::Zero(static_cast<Eigen::Index>(n))};
  }
  bool finite() const { return u.allFinite() && v.allFinite(); }
  std::size_t n() const { return static_cast<std::size_t>(u.size()); }
};

// A non-negative plan together with its exact log representation and cached
// marginals. Entries whose log lies below the double underflow threshold are
// stored as 0 in X while logX keeps the exact value.
struct TransportPlan {
  Matrix X;
  Matrix logX;
  Vector row_marginal;
  Vector col_marginal;
  double total_mass = 0.0;

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
};

inline double sup_norm(const Vector& x) { return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff(); }

}  // namespace uot
