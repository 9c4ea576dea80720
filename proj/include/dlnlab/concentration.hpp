#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "core_data.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace dlnlab::conc {

enum class Lemma { Rip, RipUncentered, RipSgd, RipSgdUncentered, Htilde };

inline const char* to_string(Lemma l) {
  switch (l) {
    case Lemma::Rip: return "rip";
    case Lemma::RipUncentered: return "rip-uncentered";
    case Lemma::RipSgd: return "ripsgd";
    case Lemma::RipSgdUncentered: return "ripsgd-uncentered";
    case Lemma::Htilde: return "htilde";
  }
  return "?";
}

inline Lemma lemma_from_string(const std::string& s) {
  for (Lemma l : {Lemma::Rip, Lemma::RipUncentered, Lemma::RipSgd, Lemma::RipSgdUncentered, Lemma::Htilde})
    if (s == to_string(l)) return l;
  throw Error(ErrorKind::InvalidArgument, "unknown lemma '" + s + "'");
}

struct BenchParams {
  Lemma lemma = Lemma::Rip;
  int d = 100;
  int s = 3;
  int n = 0;           // 0 = ceil(C s ln d / eps^2) for the RIP lemmas
  double eps = 0.3;
  double C = 20.0;
  double mean = 0.0;   // every coordinate of the mean vector
  double sigma = 1.0;
  double c_lo = 0.5;   // lower constant (ripsgd envelope, htilde C2)
  double c_hi = 3.5;   // upper constant (ripsgd envelope, htilde C3)
  double band = 0.5;   // ripsgd: |v_j - 2 beta_j^2 - |beta|^2| <= band |beta|^2
  int trials = 100;
  std::uint64_t seed = 0;
};

// Regimes used by the acceptance bench.
inline BenchParams default_params(Lemma l) {
  BenchParams p;
  p.lemma = l;
  switch (l) {
    case Lemma::Rip:
      break;
    case Lemma::RipUncentered:
      p.mean = 1.0;
      break;
    case Lemma::RipSgd:
      p.d = 50;
      p.n = 2000;
      break;
    case Lemma::RipSgdUncentered:
      p.d = 50;
      p.n = 2000;
      p.mean = std::ceil(4.0 * std::sqrt(std::log(2000.0 * 50.0)));
      p.c_lo = 0.5;
      p.c_hi = 4.0;
      break;
    case Lemma::Htilde:
      p.d = 200;
      p.n = 20;
      p.c_lo = 0.3;
      p.c_hi = 2.0;
      break;
  }
  return p;
}

struct InequalityStat {
  std::string name;
  int failures = 0;
  double frequency = 0.0;
  double worst = 0.0;  // worst observed value of the tested statistic
  double threshold = 0.0;
  bool upper = true;   // statistic must stay <= threshold (else >=)
};

struct BenchResult {
  Lemma lemma = Lemma::Rip;
  int n = 0, d = 0, s = 0, trials = 0;
  std::vector<std::string> warnings;
  std::vector<InequalityStat> stats;
  double max_frequency() const {
    double m = 0.0;
    for (const auto& st : stats) m = std::max(m, st.frequency);
    return m;
  }
};

namespace detail {

inline Mat gaussian_rows(int n, int d, double mean, double sigma, RngStream rng) {
  Mat R(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) R(i, j) = mean + sigma * rng.normal();
  return R;
}

// max_j sup over s-sparse unit beta of |(A beta)_j| = max_j l2 norm of the s largest |A_jk|.
inline double sparse_row_sup(const Mat& A, int s) {
  double best = 0.0;
  std::vector<double> row(A.cols());
  for (Eigen::Index j = 0; j < A.rows(); ++j) {
    for (Eigen::Index k = 0; k < A.cols(); ++k) row[k] = A(j, k) * A(j, k);
    std::partial_sort(row.begin(), row.begin() + s, row.end(), std::greater<>());
    double acc = 0.0;
    for (int t = 0; t < s; ++t) acc += row[t];
    best = std::max(best, std::sqrt(acc));
  }
  return best;
}

template <class F>
void for_each_support(int d, int s, F&& f) {
  std::vector<int> idx(s);
  for (int t = 0; t < s; ++t) idx[t] = t;
  while (true) {
    f(idx);
    int t = s - 1;
    while (t >= 0 && idx[t] == d - s + t) --t;
    if (t < 0) return;
    ++idx[t];
    for (int u = t + 1; u < s; ++u) idx[u] = idx[u - 1] + 1;
  }
}

inline Vec small_eigs(const Mat& A) {
  if (A.rows() == 3) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(Eigen::Matrix3d(A));
    return es.eigenvalues();
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

// Extreme eigenvalues of Li A Li^T, Li the inverse Cholesky factor of a fixed pencil matrix.
inline std::pair<double, double> small_pencil(const Mat& A, const Mat& Li) {
  Mat M = Li * A * Li.transpose();
  M = 0.5 * (M + M.transpose()).eval();
  const Vec e = small_eigs(M);
  return {e.minCoeff(), e.maxCoeff()};
}

inline Mat inverse_cholesky(const Mat& B) {
  Eigen::LLT<Mat> llt(B);
  require(llt.info() == Eigen::Success, ErrorKind::InvalidArgument, "pencil matrix not positive definite");
  return llt.matrixL().solve(Mat::Identity(B.rows(), B.cols()));
}

// M_j = (1/n) sum_i x_ij^2 x_i x_i^T
inline Mat weighted_second_moment(const Mat& R, int j) {
  const Vec w = R.col(j).array().square();
  return R.transpose() * w.asDiagonal() * R / static_cast<double>(R.rows());
}

}  // namespace detail

inline BenchResult concentration_bench(const BenchParams& p) {
  require(p.d >= 1 && p.s >= 1 && p.s <= p.d, ErrorKind::InvalidArgument, "need 1 <= s <= d");
  require(p.trials >= 1, ErrorKind::InvalidArgument, "trials must be positive");
  require(p.sigma > 0.0, ErrorKind::InvalidArgument, "sigma must be positive");
  BenchResult res;
  res.lemma = p.lemma;
  res.d = p.d;
  res.s = p.s;
  res.trials = p.trials;
  const bool rip = p.lemma == Lemma::Rip || p.lemma == Lemma::RipUncentered;
  const double rip_n = std::ceil(p.C * p.s * std::log(static_cast<double>(p.d)) / (p.eps * p.eps));
  res.n = p.n > 0 ? p.n : (rip ? static_cast<int>(rip_n) : 0);
  require(res.n >= 1, ErrorKind::InvalidArgument, "n must be given for this lemma");
  const int n = res.n, d = p.d, s = p.s;
  const double mu = p.mean, s2 = p.sigma * p.sigma;

  if (rip && n < rip_n) res.warnings.push_back("n below C s ln(d) / eps^2");
  if (p.lemma == Lemma::Rip && mu != 0.0) res.warnings.push_back("rip expects centered data");
  if (p.lemma == Lemma::RipSgd && mu != 0.0) res.warnings.push_back("ripsgd expects centered data");
  if (p.lemma == Lemma::RipSgdUncentered && mu < 4.0 * p.sigma * std::sqrt(std::log(static_cast<double>(d))))
    res.warnings.push_back("mean below 4 sigma sqrt(ln d)");

  std::vector<InequalityStat> st;
  auto add = [&](std::string name, double thr, bool upper) {
    InequalityStat x;
    x.name = std::move(name);
    x.threshold = thr;
    x.upper = upper;
    x.worst = upper ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    st.push_back(x);
  };
  auto record = [&](std::size_t k, double v) {
    auto& x = st[k];
    const bool fail = x.upper ? v > x.threshold : v < x.threshold;
    x.failures += fail;
    x.worst = x.upper ? std::max(x.worst, v) : std::min(x.worst, v);
  };

  switch (p.lemma) {
    case Lemma::Rip:
    case Lemma::RipUncentered:
      add("sup_sparse |(H - mu mu^T - sigma^2 I) beta|_inf", p.eps, true);
      break;
    case Lemma::RipSgd:
      add("sup_sparse |v_j - 2 beta_j^2 - |beta|^2| / |beta|^2", p.band, true);
      add("inf_sparse v_j / |beta|^2", p.c_lo, false);
      add("sup_sparse v_j / |beta|^2", p.c_hi, true);
      break;
    case Lemma::RipSgdUncentered:
      add("inf_sparse v_j / (mu^2 (<mu,beta>^2 + sigma^2 |beta|^2 / 2))", p.c_lo, false);
      add("sup_sparse v_j / (mu^2 (<mu,beta>^2 + 2 sigma^2 |beta|^2))", p.c_hi, true);
      break;
    case Lemma::Htilde:
      add("min eig (Htilde - C2 (mu^2+sigma^2) d H) on range(H)", 0.0, false);
      add("min eig (C3 (mu^2+sigma^2) d H - Htilde) on range(H)", 0.0, false);
      break;
  }

  const RngStream root(p.seed, RngStream::Aux);
  for (int t = 0; t < p.trials; ++t) {
    const Mat R = detail::gaussian_rows(n, d, mu, p.sigma, root.split(static_cast<std::uint64_t>(t)));
    switch (p.lemma) {
      case Lemma::Rip:
      case Lemma::RipUncentered: {
        Mat A = R.transpose() * R / static_cast<double>(n);
        A.array() -= mu * mu;
        A.diagonal().array() -= s2;
        record(0, detail::sparse_row_sup(A, s));
        break;
      }
      case Lemma::RipSgd: {
        double dev = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        Mat sub(s, s);
        for (int j = 0; j < d; ++j) {
          const Mat M = detail::weighted_second_moment(R, j);
          detail::for_each_support(d, s, [&](const std::vector<int>& S) {
            for (int a = 0; a < s; ++a)
              for (int b = 0; b < s; ++b) sub(a, b) = M(S[a], S[b]);
            const Vec e = detail::small_eigs(sub);
            lo = std::min(lo, e.minCoeff());
            hi = std::max(hi, e.maxCoeff());
            for (int a = 0; a < s; ++a) {
              sub(a, a) -= 1.0;
              if (S[a] == j) sub(a, a) -= 2.0;
            }
            const Vec c = detail::small_eigs(sub);
            dev = std::max({dev, std::abs(c.minCoeff()), std::abs(c.maxCoeff())});
          });
        }
        record(0, dev);
        record(1, lo);
        record(2, hi);
        break;
      }
      case Lemma::RipSgdUncentered: {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        Mat sub(s, s);
        const Mat ones = Mat::Constant(s, s, mu * mu);
        const Mat Llo = detail::inverse_cholesky(mu * mu * (ones + 0.5 * s2 * Mat::Identity(s, s)));
        const Mat Lhi = detail::inverse_cholesky(mu * mu * (ones + 2.0 * s2 * Mat::Identity(s, s)));
        for (int j = 0; j < d; ++j) {
          const Mat M = detail::weighted_second_moment(R, j);
          detail::for_each_support(d, s, [&](const std::vector<int>& S) {
            for (int a = 0; a < s; ++a)
              for (int b = 0; b < s; ++b) sub(a, b) = M(S[a], S[b]);
            lo = std::min(lo, detail::small_pencil(sub, Llo).first);
            hi = std::max(hi, detail::small_pencil(sub, Lhi).second);
          });
        }
        record(0, lo);
        record(1, hi);
        break;
      }
      case Lemma::Htilde: {
        const Mat H = R.transpose() * R / static_cast<double>(n);
        const Vec nrm = R.rowwise().squaredNorm();
        const Mat Ht = R.transpose() * nrm.asDiagonal() * R / static_cast<double>(n);
        const auto rb = analysis::range_of(H);
        const double scale = (mu * mu + s2) * d;
        const double tol = 1e-10 * rb.lambda_max * scale;
        record(0, analysis::min_eig_on_range(Ht - p.c_lo * scale * H, rb) + tol);
        record(1, analysis::min_eig_on_range(p.c_hi * scale * H - Ht, rb) + tol);
        break;
      }
    }
  }
  for (auto& x : st) x.frequency = static_cast<double>(x.failures) / p.trials;
  res.stats = std::move(st);
  return res;
}

}  // namespace dlnlab::conc
