#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace uot;
using uot::fixtures::random_plan;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Problem two_by_two(double tau = 1.0) {
  return Problem(vec({1, 1}), vec({1, 1}), Matrix::Zero(2, 2), tau);
}

}  // namespace

TEST(Problem, RejectsBadInput) {
  EXPECT_THROW(Problem(vec({1}), vec({1}), Matrix::Zero(1, 1), 1.0), InvalidInput);
  EXPECT_THROW(Problem(vec({1, 0}), vec({1, 1}), Matrix::Zero(2, 2), 1.0), InvalidInput);
  EXPECT_THROW(Problem(vec({1, 1}), vec({1, -1}), Matrix::Zero(2, 2), 1.0), InvalidInput);
  Matrix neg = Matrix::Zero(2, 2);
  neg(0, 1) = -1;
  EXPECT_THROW(Problem(vec({1, 1}), vec({1, 1}), neg, 1.0), InvalidInput);
  EXPECT_THROW(Problem(vec({1, 1}), vec({1, 1}), Matrix::Zero(2, 2), 0.0), InvalidInput);
  EXPECT_THROW(Problem(vec({1, 1}), vec({1, 1, 1}), Matrix::Zero(2, 2), 1.0), InvalidInput);
  EXPECT_THROW(Problem(vec({1, 1}), vec({1, 1}), Matrix::Zero(3, 3), 1.0), InvalidInput);
  const auto p = two_by_two(2.0);
  EXPECT_DOUBLE_EQ(p.alpha(), 2.0);
  EXPECT_DOUBLE_EQ(p.zero_plan_value(), 8.0);
}

TEST(KlDivergence, Examples) {
  EXPECT_DOUBLE_EQ(kl_divergence(vec({1, 2}), vec({1, 2})), 0.0);
  EXPECT_DOUBLE_EQ(kl_divergence(vec({0, 0}), vec({3, 4})), 7.0);
  EXPECT_NEAR(kl_divergence(vec({2}), vec({1})), 2.0 * std::log(2.0) - 1.0, 1e-15);
  EXPECT_NEAR(kl_divergence(vec({2}), vec({1})), 0.386294361119890618, 1e-15);
}

TEST(KlDivergence, Errors) {
  EXPECT_THROW(kl_divergence(vec({1}), vec({1, 2})), InvalidInput);
  EXPECT_THROW(kl_divergence(vec({1, 1}), vec({1, 0})), InvalidInput);
  EXPECT_THROW(kl_divergence(vec({-1, 1}), vec({1, 1})), InvalidInput);
}

TEST(KlDivergence, NonNegativeWithEqualityOnlyAtY) {
  Rng rng(7);
  for (int t = 0; t < 2000; ++t) {
    const int n = 1 + static_cast<int>(rng.unit() * 6);
    Vector x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = rng.unit() < 0.2 ? 0.0 : 3 * rng.unit();
      y[i] = 0.01 + 3 * rng.unit();
    }
    const double d = kl_divergence(x, y);
    ASSERT_GE(d, 0.0);
    if ((x - y).cwiseAbs().maxCoeff() > 1e-3) ASSERT_GT(d, 0.0);
    ASSERT_NEAR(kl_divergence(y, y), 0.0, 1e-14);
  }
}

TEST(Entropy, Examples) {
  EXPECT_DOUBLE_EQ(entropy(plan_from_dense(Matrix::Ones(1, 1))), 1.0);
  EXPECT_NEAR(entropy(plan_from_dense(Matrix::Constant(2, 2, std::exp(1.0)))), 0.0, 1e-14);
  EXPECT_NEAR(entropy(plan_from_dense(Matrix::Constant(2, 2, 0.25))), std::log(4.0) + 1.0, 1e-14);
  EXPECT_EQ(entropy(plan_from_dense(Matrix::Zero(3, 3))), 0.0);
}

TEST(Entropy, RejectsNegativeEntries) {
  Matrix X = Matrix::Ones(2, 2);
  X(1, 1) = -0.5;
  EXPECT_THROW(plan_from_dense(X), InvalidInput);
  TransportPlan bad;
  bad.X = X;
  bad.logX = Matrix::Zero(2, 2);
  EXPECT_THROW(entropy(bad), InvalidInput);
}

TEST(Entropy, SandwichOnRandomPlans) {
  Rng rng(11);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.unit() * 9);
    const Matrix X = random_plan(n, rng, std::exp(6 * rng.unit() - 3), 0.1);
    const double x = X.sum();
    if (x == 0.0) continue;
    const double H = entropy(plan_from_dense(X));
    const double lower = x - x * std::log(x);
    const double upper = 2 * x * std::log(static_cast<double>(n)) + x - x * std::log(x);
    const double slack = 1e-12 * (1 + std::abs(lower) + std::abs(upper));
    ASSERT_LE(lower, H + slack);
    ASSERT_LE(H, upper + slack);
  }
}

TEST(PrimalObjective, Examples) {
  Rng rng(3);
  const auto p = fixtures::random_problem(4, 2.5, 5);
  EXPECT_NEAR(primal_objective(plan_from_dense(Matrix::Zero(4, 4)), p), 2.5 * (p.alpha() + p.beta()), 1e-13);

  const Vector a = vec({0.3, 1.2, 0.7});
  const Problem q(a, a, Matrix::Zero(3, 3), 4.0);
  Matrix D = Matrix::Zero(3, 3);
  D.diagonal() = a;
  EXPECT_NEAR(primal_objective(plan_from_dense(D), q), 0.0, 1e-15);

  EXPECT_THROW(primal_objective(plan_from_dense(Matrix::Zero(3, 3)), p), InvalidInput);
}

TEST(PrimalObjective, MatchesReferenceAndIsNonNegative) {
  Rng rng(19);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.unit() * 7);
    const auto p = fixtures::random_problem(n, 0.5 + 5 * rng.unit(), 1000 + t);
    const Matrix X = random_plan(n, rng, 0.5, 0.2);
    const double f = primal_objective(plan_from_dense(X), p);
    ASSERT_GE(f, 0.0);
    ASSERT_NEAR(f, fixtures::ref_f(X, p), 1e-11 * (1 + std::abs(f)));
    ASSERT_NEAR(primal_objective_dense(X, p), f, 1e-11 * (1 + std::abs(f)));
  }
}

TEST(EntropicObjective, Examples) {
  const auto p = fixtures::random_problem(3, 1.5, 2);
  EXPECT_NEAR(entropic_objective(plan_from_dense(Matrix::Zero(3, 3)), p, 0.7), p.zero_plan_value(), 1e-13);

  const auto one = Problem::single_point(1, 1, 0, 1);
  EXPECT_NEAR(entropic_objective(plan_from_dense(Matrix::Ones(1, 1)), one, 1.0), -1.0, 1e-15);

  const auto E = plan_from_dense(Matrix::Constant(3, 3, std::exp(1.0)));
  EXPECT_NEAR(entropic_objective(E, p, 1.0), primal_objective(E, p), 1e-12);
  EXPECT_THROW(entropic_objective(E, p, 0.0), InvalidInput);
}

TEST(EntropicObjective, IsPrimalMinusEtaEntropy) {
  Rng rng(23);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.unit() * 7);
    const auto p = fixtures::random_problem(n, 1 + 4 * rng.unit(), 3000 + t);
    const double eta = 0.01 + rng.unit();
    const auto plan = plan_from_dense(random_plan(n, rng, 0.7, 0.1));
    const double g = entropic_objective(plan, p, eta);
    const double expect = primal_objective(plan, p) - eta * entropy(plan);
    ASSERT_NEAR(g, expect, 1e-12 * std::max(1.0, std::abs(expect)));
    ASSERT_NEAR(g, fixtures::ref_g(plan.X, p, eta), 1e-10 * std::max(1.0, std::abs(expect)));
  }
}

TEST(DualObjective, Examples) {
  const auto one = Problem::single_point(1, 1, 0, 1);
  EXPECT_NEAR(dual_objective(DualPotentials::zeros(1), one, 1.0), 3.0, 1e-15);

  const auto p = fixtures::random_problem(5, 2.0, 9);
  const Problem p0(p.a(), p.b(), Matrix::Zero(5, 5), 2.0);
  EXPECT_NEAR(dual_objective(DualPotentials::zeros(5), p0, 0.3), 0.3 * 25 + 2.0 * (p.alpha() + p.beta()), 1e-12);

  DualPotentials l2{vec({std::log(2.0)}), vec({std::log(2.0)})};
  EXPECT_NEAR(dual_objective(l2, one, 1.0), 4.0 + 0.5 + 0.5, 1e-14);
}

TEST(DualObjective, OverflowIsReported) {
  const auto one = Problem::single_point(1, 1, 0, 1);
  DualPotentials big{vec({1.0}), vec({1.0})};
  EXPECT_THROW(dual_objective(big, one, 1e-4), NumericalFailure);
}

TEST(DualObjective, JointlyConvex) {
  Rng rng(31);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.unit() * 6);
    const auto p = fixtures::random_problem(n, 0.5 + 5 * rng.unit(), 5000 + t, 5.0);
    const double eta = 0.1 + rng.unit();
    const auto m = static_cast<Eigen::Index>(n);
    auto draw = [&]() {
      DualPotentials d{Vector(m), Vector(m)};
      for (Eigen::Index i = 0; i < m; ++i) d.u[i] = 4 * rng.unit() - 2, d.v[i] = 4 * rng.unit() - 2;
      return d;
    };
    const auto x = draw(), y = draw();
    const DualPotentials mid{0.5 * (x.u + y.u), 0.5 * (x.v + y.v)};
    const double hm = dual_objective(mid, p, eta);
    const double avg = 0.5 * (dual_objective(x, p, eta) + dual_objective(y, p, eta));
    ASSERT_LE(hm, avg + 1e-12 * std::abs(avg));
  }
}

TEST(PlanFromPotentials, Examples) {
  Rng rng(1);
  const Matrix C = random_plan(4, rng, 3.0);
  const auto plan = plan_from_potentials(DualPotentials::zeros(4), C, 0.7);
  for (Eigen::Index k = 0; k < C.size(); ++k) EXPECT_NEAR(plan.X.data()[k], std::exp(-C.data()[k] / 0.7), 1e-15);

  const auto ones = plan_from_potentials(DualPotentials::zeros(3), Matrix::Zero(3, 3), 0.2);
  EXPECT_TRUE(ones.X.isApprox(Matrix::Ones(3, 3)));
  EXPECT_NEAR(ones.total_mass, 9.0, 1e-14);

  const double eta = 0.37;
  DualPotentials uv{vec({eta * std::log(2.0)}), vec({eta * std::log(3.0)})};
  EXPECT_NEAR(plan_from_potentials(uv, Matrix::Zero(1, 1), eta).X(0, 0), 6.0, 1e-14);
}

TEST(PlanFromPotentials, RejectsNaN) {
  DualPotentials uv{vec({std::nan(""), 0.0}), vec({0.0, 0.0})};
  EXPECT_THROW(plan_from_potentials(uv, Matrix::Zero(2, 2), 1.0), NumericalFailure);
}

TEST(PlanFromPotentials, MatchesDenseProduct) {
  Rng rng(41);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.unit() * 10);
    const auto m = static_cast<Eigen::Index>(n);
    const double eta = 0.2 + rng.unit();
    const Matrix C = random_plan(n, rng, 5.0);
    DualPotentials uv{Vector(m), Vector(m)};
    for (Eigen::Index i = 0; i < m; ++i) uv.u[i] = 2 * rng.unit() - 1, uv.v[i] = 2 * rng.unit() - 1;
    // diag(e^{u/eta}) e^{-C/eta} diag(e^{v/eta}) as an explicit triple product
    const Matrix K = (-C / eta).array().exp().matrix();
    const Eigen::MatrixXd dense = (uv.u / eta).array().exp().matrix().asDiagonal() * K *
                                  (uv.v / eta).array().exp().matrix().asDiagonal();
    const auto plan = plan_from_potentials(uv, C, eta);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) ASSERT_NEAR(plan.X(i, j), dense(i, j), 1e-12 * dense(i, j));
      ASSERT_NEAR(plan.row_marginal[i], dense.row(i).sum(), 1e-10 * dense.row(i).sum());
      ASSERT_NEAR(plan.col_marginal[i], dense.col(i).sum(), 1e-10 * dense.col(i).sum());
    }
    ASSERT_NEAR(plan.total_mass, dense.sum(), 1e-10 * dense.sum());
  }
}

TEST(PlanFromPotentials, TinyEtaStaysFinite) {
  Rng rng(5);
  const Matrix C = random_plan(6, rng, 50.0);
  const double eta = 3.7e-6;
  DualPotentials uv = DualPotentials::zeros(6);
  uv.u.setConstant(20.0);
  const auto plan = plan_from_potentials(uv, C, eta);
  EXPECT_TRUE(plan.logX.allFinite());
  EXPECT_TRUE((plan.X.array() >= 0).all());
  for (Eigen::Index k = 0; k < C.size(); ++k) {
    const double lx = plan.logX.data()[k];
    if (lx > -700 && lx < 700) EXPECT_NEAR(plan.X.data()[k], std::exp(lx), 1e-12 * std::exp(lx));
  }
}

TEST(EpsilonGap, Examples) {
  const auto p = fixtures::random_problem(4, 2.0, 12, 10.0);
  const auto oracle = solve_unregularized(p);
  EXPECT_NEAR(epsilon_gap(oracle.plan, p, oracle.value), 0.0, 1e-12);
  const double zero_gap = epsilon_gap(plan_from_dense(Matrix::Zero(4, 4)), p, oracle.value);
  EXPECT_NEAR(zero_gap, p.zero_plan_value() - oracle.value, 1e-12);
  EXPECT_GE(zero_gap, 0.0);
}

TEST(EvaluatePotentials, AgreesWithDenseEvaluation) {
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.unit() * 8);
    const auto p = fixtures::random_problem(n, 1 + 4 * rng.unit(), 9000 + t, 10.0);
    const double eta = 0.05 + rng.unit();
    const auto m = static_cast<Eigen::Index>(n);
    DualPotentials uv{Vector(m), Vector(m)};
    for (Eigen::Index i = 0; i < m; ++i) uv.u[i] = 2 * rng.unit() - 1, uv.v[i] = 2 * rng.unit() - 1;
    detail::LogKernel kernel(p.C(), eta);
    const auto obj = evaluate_potentials(kernel, uv, p);
    const auto plan = plan_from_potentials(uv, p.C(), eta);
    const double f = fixtures::ref_f(plan.X, p);
    ASSERT_NEAR(obj.f, f, 1e-10 * (1 + std::abs(f)));
    ASSERT_NEAR(obj.g, fixtures::ref_g(plan.X, p, eta), 1e-10 * (1 + std::abs(f)));
    ASSERT_NEAR(obj.h, dual_objective(uv, p, eta), 1e-10 * (1 + std::abs(obj.h)));
    ASSERT_NEAR(obj.total_mass, plan.X.sum(), 1e-12 * plan.X.sum());
  }
}
