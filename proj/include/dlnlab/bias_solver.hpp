#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "core_data.hpp"
#include "errors.hpp"
#include "mirror.hpp"

namespace dlnlab::bias {

using data::Dataset;

struct BiasProblem {
  const Dataset* ds = nullptr;
  Vec alpha_inf;
  Vec phi_inf;
  int max_newton_iters = 200;
  // Interpolation tolerance; 0 selects 1e-12 * max(1, |y|_inf).
  double tol = 0.0;
};

struct BiasSolution {
  Vec beta_star;
  Vec dual;
  double kkt_residual = 0.0;
  double interp_residual = 0.0;
  int iterations = 0;
};

inline Vec beta_of_dual(const Dataset& ds, const Vec& a2, const Vec& phi, const Vec& nu) {
  const Vec z = 2.0 * phi + 2.0 * ds.X.transpose() * nu;
  return a2.array() * z.array().sinh();
}

// d(X beta(nu))/d nu = X diag(2 alpha^2 cosh(2 phi + 2 X^T nu)) X^T.
inline Mat dual_jacobian(const Dataset& ds, const Vec& a2, const Vec& phi, const Vec& nu) {
  const Vec z = 2.0 * phi + 2.0 * ds.X.transpose() * nu;
  const Vec w = 2.0 * a2.array() * z.array().cosh();
  return ds.X * w.asDiagonal() * ds.X.transpose();
}

inline BiasSolution solve_implicit_bias(const BiasProblem& p) {
  require(p.ds != nullptr, ErrorKind::InvalidArgument, "problem has no dataset");
  const Dataset& ds = *p.ds;
  require(p.alpha_inf.size() == ds.d && p.phi_inf.size() == ds.d, ErrorKind::DimensionMismatch,
          "alpha_inf/phi_inf size");
  require(p.alpha_inf.allFinite() && (p.alpha_inf.array() > 0).all(), ErrorKind::NonInvertiblePotential,
          "alpha_inf must be positive");
  require(p.phi_inf.allFinite(), ErrorKind::InvalidArgument, "phi_inf must be finite");
  require(p.max_newton_iters >= 1, ErrorKind::InvalidArgument, "max_newton_iters must be >= 1");
  require(ds.X.cwiseAbs().maxCoeff() > 0.0, ErrorKind::InvalidArgument, "X has rank 0");
  const double tol = p.tol > 0.0 ? p.tol : 1e-12 * std::max(1.0, ds.y.cwiseAbs().maxCoeff());
  const Vec a2 = p.alpha_inf.array().square();

  Vec nu = Vec::Zero(ds.n);
  Vec beta = beta_of_dual(ds, a2, p.phi_inf, nu);
  Vec F = ds.X * beta - ds.y;
  double merit = 0.5 * F.squaredNorm();
  int it = 0;
  for (; it < p.max_newton_iters && F.cwiseAbs().maxCoeff() > tol; ++it) {
    Mat J = dual_jacobian(ds, a2, p.phi_inf, nu);
    Eigen::LDLT<Mat> ldlt(J);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
      const double ridge = 1e-12 * std::max(1.0, J.diagonal().cwiseAbs().maxCoeff());
      J.diagonal().array() += ridge;
      ldlt.compute(J);
      if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
        throw Error(ErrorKind::SingularJacobian, "dual Jacobian singular after ridge");
    }
    const Vec step = -ldlt.solve(F);
    require(step.allFinite(), ErrorKind::SingularJacobian, "non-finite Newton step");
    double s = 1.0;
    bool accepted = false;
    while (s >= 1e-12) {
      const Vec trial = nu + s * step;
      const Vec bt = beta_of_dual(ds, a2, p.phi_inf, trial);
      const Vec Ft = ds.X * bt - ds.y;
      const double mt = 0.5 * Ft.squaredNorm();
      if (std::isfinite(mt) && mt <= (1.0 - 2e-4 * s) * merit) {
        nu = trial;
        beta = bt;
        F = Ft;
        merit = mt;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) {
      if (F.cwiseAbs().maxCoeff() <= tol) break;
      throw Error(ErrorKind::NewtonStalled, "line search reached its floor");
    }
  }
  if (F.cwiseAbs().maxCoeff() > tol) throw Error(ErrorKind::NewtonStalled, "Newton iteration budget exhausted");
  BiasSolution sol;
  sol.beta_star = beta;
  sol.dual = nu;
  sol.iterations = it;
  sol.interp_residual = F.cwiseAbs().maxCoeff();
  const Vec kkt = mirror::psi_grad(beta, p.alpha_inf) - p.phi_inf - ds.X.transpose() * nu;
  sol.kkt_residual = kkt.cwiseAbs().maxCoeff();
  return sol;
}

namespace detail {

// Dense tableau simplex for min c^T x, A x = b, x >= 0 with Bland's rule.
class Simplex {
 public:
  Simplex(const Mat& A, const Vec& b, const Vec& c) : m_(A.rows()), nv_(A.cols()), c_(c) {
    T_ = Mat::Zero(m_ + 1, nv_ + m_ + 1);
    scale_ = std::max(1.0, A.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double sg = b(i) < 0 ? -1.0 : 1.0;
      T_.row(i).head(nv_) = sg * A.row(i);
      T_(i, nv_ + i) = 1.0;
      T_(i, nv_ + m_) = sg * b(i);
    }
    basis_.resize(m_);
    for (Eigen::Index i = 0; i < m_; ++i) basis_[i] = nv_ + i;
    eps_ = 1e-11 * scale_;
  }

  // Returns the optimal x; throws Infeasible / Unbounded.
  Vec solve() {
    // Phase I: minimise the sum of artificials.
    T_.row(m_).setZero();
    for (Eigen::Index i = 0; i < m_; ++i) T_.row(m_) -= T_.row(i);
    for (Eigen::Index i = 0; i < m_; ++i) T_(m_, nv_ + i) = 0.0;
    run(nv_ + m_);
    const double bnorm = std::max(1.0, T_.col(nv_ + m_).head(m_).cwiseAbs().maxCoeff());
    if (-T_(m_, nv_ + m_) > 1e-9 * bnorm) throw Error(ErrorKind::Infeasible, "no interpolating solution");
    // Drive basic artificials out where possible; rows that cannot pivot are redundant.
    for (Eigen::Index r = 0; r < m_; ++r) {
      if (basis_[r] < nv_) continue;
      for (Eigen::Index j = 0; j < nv_; ++j) {
        if (std::abs(T_(r, j)) > eps_) {
          pivot(r, j);
          break;
        }
      }
    }
    // Phase II.
    T_.row(m_).setZero();
    T_.row(m_).head(nv_) = c_.transpose();
    for (Eigen::Index r = 0; r < m_; ++r)
      if (basis_[r] < nv_) T_.row(m_) -= c_(basis_[r]) * T_.row(r);
    run(nv_);
    return extract();
  }

  const std::vector<Eigen::Index>& basis() const { return basis_; }
  int pivots() const { return pivots_; }

 private:
  void pivot(Eigen::Index r, Eigen::Index col) {
    T_.row(r) /= T_(r, col);
    for (Eigen::Index i = 0; i <= m_; ++i) {
      if (i == r) continue;
      const double f = T_(i, col);
      if (f != 0.0) T_.row(i) -= f * T_.row(r);
    }
    // Round-off can push degenerate basic values below zero, which lets Bland's rule cycle.
    const Eigen::Index rhs = nv_ + m_;
    for (Eigen::Index i = 0; i < m_; ++i)
      if (T_(i, rhs) < 0.0) T_(i, rhs) = 0.0;
    basis_[r] = col;
    ++pivots_;
  }

  // Iterate with entering candidates restricted to columns < ncols.
  void run(Eigen::Index ncols) {
    const Eigen::Index rhs = nv_ + m_;
    const int cap = 100 * static_cast<int>(nv_ + m_ + 10);
    for (int iter = 0; iter < cap; ++iter) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < ncols; ++j) {
        if (T_(m_, j) < -eps_) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m_; ++i) {
        const double a = T_(i, enter);
        if (a <= eps_) continue;
        const double ratio = T_(i, rhs) / a;
        const double slack = leave < 0 ? 0.0 : 1e-14 * std::max(1.0, std::abs(best));
        if (leave < 0 || ratio < best - slack || (std::abs(ratio - best) <= slack && basis_[i] < basis_[leave])) {
          best = ratio;
          leave = i;
        }
      }
      if (leave < 0) throw Error(ErrorKind::Unbounded, "LP objective unbounded below");
      pivot(leave, enter);
    }
    throw Error(ErrorKind::InvariantViolation, "simplex iteration cap reached");
  }

  Vec extract() const {
    Vec x = Vec::Zero(nv_);
    for (Eigen::Index r = 0; r < m_; ++r)
      if (basis_[r] < nv_) x(basis_[r]) = std::max(0.0, T_(r, nv_ + m_));
    return x;
  }

  Eigen::Index m_, nv_;
  Vec c_;
  Mat T_;
  std::vector<Eigen::Index> basis_;
  double scale_ = 1.0;
  double eps_ = 1e-11;
  int pivots_ = 0;
};

}  // namespace detail

// min |beta|_1 subject to X beta = y, via beta = p - m with p, m >= 0.
inline Vec min_l1_interpolator(const Dataset& ds) {
  const int n = ds.n, d = ds.d;
  if (ds.y.cwiseAbs().maxCoeff() == 0.0) return Vec::Zero(d);
  Mat A(n, 2 * d);
  A.leftCols(d) = ds.X;
  A.rightCols(d) = -ds.X;
  detail::Simplex lp(A, ds.y, Vec::Ones(2 * d));
  const Vec x = lp.solve();
  // Polish the basic solution against the original system.
  std::vector<Eigen::Index> cols;
  for (auto j : lp.basis())
    if (j < 2 * d && x(j) > 0.0) cols.push_back(j);
  Vec out = x.head(d) - x.tail(d);
  if (!cols.empty()) {
    Mat B(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t t = 0; t < cols.size(); ++t) B.col(static_cast<Eigen::Index>(t)) = A.col(cols[t]);
    const Vec xb = B.colPivHouseholderQr().solve(ds.y);
    if (xb.allFinite() && (xb.array() >= 0).all() && (B * xb - ds.y).cwiseAbs().maxCoeff() <=
                                                          (A * x - ds.y).cwiseAbs().maxCoeff()) {
      Vec polished = Vec::Zero(2 * d);
      for (std::size_t t = 0; t < cols.size(); ++t) polished(cols[t]) = xb(static_cast<Eigen::Index>(t));
      out = polished.head(d) - polished.tail(d);
    }
  }
  return out;
}

struct SolutionMetrics {
  double dist_l1ref = 0.0;
  double dist_sparse_l2 = std::numeric_limits<double>::quiet_NaN();
  double l1_norm = 0.0;
  double support_precision = std::numeric_limits<double>::quiet_NaN();
  double support_recall = std::numeric_limits<double>::quiet_NaN();
};

inline SolutionMetrics solution_metrics(const Eigen::Ref<const Vec>& beta, const Dataset& ds,
                                        const Eigen::Ref<const Vec>& l1ref) {
  require(beta.size() == ds.d && l1ref.size() == ds.d, ErrorKind::DimensionMismatch, "metric vector size");
  SolutionMetrics m;
  m.dist_l1ref = (beta - l1ref).lpNorm<1>();
  m.l1_norm = beta.lpNorm<1>();
  if (ds.sparse_truth) {
    const Vec& t = *ds.sparse_truth;
    m.dist_sparse_l2 = (beta - t).norm();
    const double thr = 1e-3 * beta.cwiseAbs().maxCoeff();
    int tp = 0, pred = 0, truth = 0;
    for (int j = 0; j < ds.d; ++j) {
      const bool p = std::abs(beta(j)) > thr;
      const bool s = t(j) != 0.0;
      pred += p;
      truth += s;
      tp += p && s;
    }
    m.support_precision = pred ? static_cast<double>(tp) / pred : 1.0;
    m.support_recall = truth ? static_cast<double>(tp) / truth : 1.0;
  }
  return m;
}

}  // namespace dlnlab::bias
