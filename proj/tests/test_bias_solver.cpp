#include <gtest/gtest.h>

#include <dlnlab/bias_solver.hpp>
#include <dlnlab/mirror.hpp>

#include <Eigen/SVD>
#include <cmath>
#include <functional>
#include <limits>

#include "support.hpp"

using namespace dlnlab;
using namespace testing_support;

namespace {

// Exhaustive basic-feasible-solution search for min 1^T z, [X -X] z = y, z >= 0.
double vertex_enumeration_value(const data::Dataset& ds) {
  const int n = ds.n, d = ds.d;
  Mat A(n, 2 * d);
  A << ds.X, -ds.X;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> cols(n);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Mat B(n, n);
      for (int t = 0; t < n; ++t) B.col(t) = A.col(cols[t]);
      Eigen::FullPivLU<Mat> lu(B);
      if (!lu.isInvertible()) return;
      const Vec z = lu.solve(ds.y);
      if ((z.array() < -1e-12).any()) return;
      best = std::min(best, z.sum());
      return;
    }
    for (int j = start; j < 2 * d; ++j) {
      cols[depth] = j;
      rec(j + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

Mat null_space(const Mat& X) {
  Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeFullV);
  const int r = static_cast<int>(svd.rank());
  return svd.matrixV().rightCols(X.cols() - r);
}

}  // namespace

TEST(ImplicitBias, IdentityDesign) {
  const int n = 4;
  const Mat raw = std::sqrt(double(n)) * Mat::Identity(n, n);
  const Vec beta = vec({0.3, -1.2, 0.0, 2.5});
  const auto ds = data::make_dataset(raw, raw * beta, beta);
  bias::BiasProblem p{&ds, Vec::Constant(n, 0.2), Vec::Zero(n)};
  const auto sol = bias::solve_implicit_bias(p);
  EXPECT_LE((sol.beta_star - beta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(sol.interp_residual, 1e-12);
  EXPECT_LE(sol.kkt_residual, 1e-12);
  // X^T nu = 0.5 asinh(beta/alpha^2) with X = I
  const Vec expect = 0.5 * (beta.array() / 0.04).asinh();
  EXPECT_LE((sol.dual - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ImplicitBias, ZeroDualStartIsZero) {
  const auto ds = preset();
  const Vec b = bias::beta_of_dual(ds, Vec::Constant(ds.d, 0.01), Vec::Zero(ds.d), Vec::Zero(ds.n));
  EXPECT_EQ(b, Vec::Zero(ds.d));
}

TEST(ImplicitBias, JacobianMatchesFiniteDifferences) {
  const auto ds = data::make_gaussian_dataset(5, 9, 2, 0.0, 1.0, 0.5, RngStream::data(4));
  RngStream r(9, RngStream::Aux);
  for (int t = 0; t < 5; ++t) {
    Vec a2(ds.d), phi(ds.d), nu(ds.n);
    for (int j = 0; j < ds.d; ++j) {
      a2(j) = 0.05 + r.uniform();
      phi(j) = 0.3 * r.normal();
    }
    for (int i = 0; i < ds.n; ++i) nu(i) = 0.3 * r.normal();
    const Mat J = bias::dual_jacobian(ds, a2, phi, nu);
    const double h = 1e-6;
    Mat fd(ds.n, ds.n);
    for (int i = 0; i < ds.n; ++i) {
      Vec p = nu, m = nu;
      p(i) += h;
      m(i) -= h;
      fd.col(i) = ds.X * (bias::beta_of_dual(ds, a2, phi, p) - bias::beta_of_dual(ds, a2, phi, m)) / (2 * h);
    }
    EXPECT_LE((fd - J).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ImplicitBias, KktSolutionBeatsRandomFeasiblePoints) {
  RngStream r(11, RngStream::Aux);
  for (int inst = 0; inst < 5; ++inst) {
    const auto ds = data::make_gaussian_dataset(3 + inst % 2, 6, 2, 0.0, 1.0, 0.7, RngStream::data(20 + inst));
    Vec alpha(ds.d), phi(ds.d);
    for (int j = 0; j < ds.d; ++j) {
      alpha(j) = 0.1 + 0.5 * r.uniform();
      phi(j) = 0.2 * r.normal();
    }
    const auto sol = bias::solve_implicit_bias(bias::BiasProblem{&ds, alpha, phi});
    ASSERT_LE(sol.interp_residual, 1e-10);
    ASSERT_LE(sol.kkt_residual, 1e-10);
    const mirror::PotentialParams pp{alpha, phi};
    // D(beta, beta_tilde0) differs from psi - <phi, .> by a constant
    const double best = mirror::potential(sol.beta_star, pp);
    const Mat N = null_space(ds.X);
    for (int t = 0; t < 20; ++t) {
      Vec z(N.cols());
      for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = r.normal() * (t < 10 ? 0.01 : 1.0);
      const Vec other = sol.beta_star + N * z;
      EXPECT_LE(best, mirror::potential(other, pp) + 1e-8);
    }
  }
}

TEST(ImplicitBias, RejectsBadProblems) {
  const auto ds = preset();
  EXPECT_THROW(bias::solve_implicit_bias(bias::BiasProblem{nullptr, Vec(), Vec()}), Error);
  EXPECT_THROW(bias::solve_implicit_bias(bias::BiasProblem{&ds, Vec::Constant(3, 1), Vec::Zero(3)}), Error);
  Vec a = Vec::Constant(ds.d, 0.1);
  a(0) = 0.0;
  try {
    bias::solve_implicit_bias(bias::BiasProblem{&ds, a, Vec::Zero(ds.d)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonInvertiblePotential);
  }
}

TEST(MinL1, HandInstanceAndZero) {
  const auto ds = data::make_dataset(rows({{2, 1}}), vec({2}));
  const Vec b = bias::min_l1_interpolator(ds);
  EXPECT_NEAR(b(0), 1.0, 1e-14);
  EXPECT_NEAR(b(1), 0.0, 1e-14);
  // brute force over the family (1 - t/2, t)
  double best = 1e300;
  for (int i = -4000; i <= 4000; ++i) {
    const double t = i / 1000.0;
    best = std::min(best, std::abs(1 - t / 2) + std::abs(t));
  }
  EXPECT_NEAR(b.lpNorm<1>(), best, 1e-12);
  const auto z = data::make_dataset(rows({{2, 1}, {1, 3}}), vec({0, 0}));
  EXPECT_EQ(bias::min_l1_interpolator(z), Vec::Zero(2));
}

TEST(MinL1, MatchesVertexEnumeration) {
  for (int seed = 0; seed < 12; ++seed) {
    const int n = 2 + seed % 2, d = 5 + seed % 4;
    const auto ds = data::make_gaussian_dataset(n, d, 2, seed % 3 == 0 ? 1.0 : 0.0, 1.0, 1.0, RngStream::data(100 + seed));
    const Vec b = bias::min_l1_interpolator(ds);
    EXPECT_LE((ds.X * b - ds.y).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(b.lpNorm<1>(), vertex_enumeration_value(ds), 1e-10) << "seed " << seed;
  }
}

TEST(MinL1, RecoversSparseTruthInRipRegime) {
  const auto ds = data::make_gaussian_dataset(50, 100, 2, 0.0, 1.0, 1.0, RngStream::data(5));
  const Vec b = bias::min_l1_interpolator(ds);
  EXPECT_LE((b - *ds.sparse_truth).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MinL1, InconsistentSystemIsInfeasible) {
  const auto ds = data::make_dataset(rows({{1, 1}, {2, 2}}), vec({1, 3}));
  try {
    bias::min_l1_interpolator(ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
  }
}

TEST(Metrics, Values) {
  const auto ds = preset();
  const Vec& t = *ds.sparse_truth;
  const auto same = bias::solution_metrics(t, ds, t);
  EXPECT_EQ(same.dist_l1ref, 0.0);
  EXPECT_EQ(same.dist_sparse_l2, 0.0);
  EXPECT_EQ(same.support_precision, 1.0);
  EXPECT_EQ(same.support_recall, 1.0);
  const auto zero = bias::solution_metrics(Vec::Zero(ds.d), ds, t);
  EXPECT_DOUBLE_EQ(zero.dist_l1ref, t.lpNorm<1>());
  EXPECT_EQ(zero.l1_norm, 0.0);
  EXPECT_THROW(bias::solution_metrics(Vec::Zero(3), ds, t), Error);
}
