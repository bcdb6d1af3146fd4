#pragma once

// Test-only helpers: random instances and dense reference computations that
// do not go through the library's evaluation code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "uot/uot.hpp"

namespace uot::fixtures {

inline Problem random_problem(std::size_t n, double tau, std::uint64_t seed, double cost_hi = 50.0,
                              double mass_lo = 0.5, double mass_hi = 5.0) {
  Rng rng(seed);
  const auto m = static_cast<Eigen::Index>(n);
  Matrix C(m, m);
  for (Eigen::Index k = 0; k < C.size(); ++k) C.data()[k] = rng.uniform(0.0, cost_hi);
  Vector a(m), b(m);
  for (Eigen::Index i = 0; i < m; ++i) a[i] = rng.uniform(0.1, 1.0);
  for (Eigen::Index i = 0; i < m; ++i) b[i] = rng.uniform(0.1, 1.0);
  a *= rng.uniform(mass_lo, mass_hi) / a.sum();
  b *= rng.uniform(mass_lo, mass_hi) / b.sum();
  return Problem(a, b, C, tau);
}

inline Matrix random_plan(std::size_t n, Rng& rng, double scale = 1.0, double zero_prob = 0.0) {
  const auto m = static_cast<Eigen::Index>(n);
  Matrix X(m, m);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = rng.unit() < zero_prob ? 0.0 : scale * rng.unit();
  return X;
}

// Plain double loops, no log-domain tricks.
inline double ref_kl(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] > 0 ? x[i] * std::log(x[i] / y[i]) : 0.0) - x[i] + y[i];
  return s;
}

inline double ref_f(const Matrix& X, const Problem& p) {
  const std::size_t n = p.n();
  std::vector<double> r(n, 0.0), c(n, 0.0), a(n), b(n);
  double tr = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      r[i] += x;
      c[j] += x;
      tr += x * p.C()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  for (std::size_t i = 0; i < n; ++i) a[i] = p.a()[static_cast<Eigen::Index>(i)], b[i] = p.b()[static_cast<Eigen::Index>(i)];
  return tr + p.tau() * ref_kl(r, a) + p.tau() * ref_kl(c, b);
}

inline double ref_entropy(const Matrix& X) {
  double h = 0;
  for (Eigen::Index k = 0; k < X.size(); ++k) {
    const double x = X.data()[k];
    if (x > 0) h -= x * (std::log(x) - 1.0);
  }
  return h;
}

inline double ref_g(const Matrix& X, const Problem& p, double eta) { return ref_f(X, p) - eta * ref_entropy(X); }

// Brute-force minimization of the entropic objective over positive n x n
// matrices: projected gradient with Barzilai-Borwein steps and Armijo
// backtracking, projection onto X >= floor.
inline double brute_force_entropic(const Problem& p, double eta, int max_iter = 200000, double gtol = 1e-11) {
  const auto n = static_cast<Eigen::Index>(p.n());
  auto grad = [&](const Matrix& X) {
    Matrix G(n, n);
    const Vector r = X.rowwise().sum();
    const Vector c = X.colwise().sum().transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        G(i, j) = p.C()(i, j) + p.tau() * std::log(r[i] / p.a()[i]) + p.tau() * std::log(c[j] / p.b()[j]) +
                  eta * std::log(X(i, j));
    return G;
  };
  constexpr double kFloor = 1e-200;
  Matrix X = Matrix::Constant(n, n, std::sqrt(p.alpha() * p.beta()) / static_cast<double>(n * n));
  Matrix G = grad(X);
  double fx = ref_g(X, p, eta);
  double step = 1e-2;
  for (int it = 0; it < max_iter; ++it) {
    if (X.cwiseMin(G).cwiseAbs().maxCoeff() < gtol) break;
    Matrix Xn;
    double fn = 0;
    for (int ls = 0; ls < 100; ++ls) {
      Xn = (X - step * G).cwiseMax(kFloor);
      fn = ref_g(Xn, p, eta);
      if (fn <= fx + 1e-4 * (G.array() * (Xn - X).array()).sum()) break;
      step *= 0.5;
    }
    const Matrix Gn = grad(Xn);
    const Matrix s = Xn - X;
    const double sy = (s.array() * (Gn - G).array()).sum();
    if (!(fn < fx) && s.cwiseAbs().maxCoeff() == 0.0) break;
    step = sy > 0 ? s.squaredNorm() / sy : step * 2.0;
    X = Xn;
    G = Gn;
    fx = fn;
  }
  return fx;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

}  // namespace uot::fixtures
