#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "core_data.hpp"
#include "errors.hpp"

namespace dlnlab::mirror {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kSeriesCut = 1.0 / 32.0;
inline constexpr double kDegenerateBand = 1e-12;

// Even and odd parts of q_+(x) = 2 sum_{m>=2} x^m/m, truncated for |x| < kSeriesCut.
inline double series_even(double x) {
  const double t = x * x;
  return t * (1.0 + t * (1.0 / 2 + t * (1.0 / 3 + t * (1.0 / 4 + t * (1.0 / 5 + t * (1.0 / 6))))));
}

inline double series_odd(double x) {
  const double t = x * x;
  return 2.0 * x * t * (1.0 / 3 + t * (1.0 / 5 + t * (1.0 / 7 + t * (1.0 / 9 + t * (1.0 / 11)))));
}

inline double q(double x) {
  const double ax = std::abs(x);
  if (ax < kSeriesCut) return series_even(x);
  if (ax == 1.0) return kInf;
  if (ax < 1.0) return -std::log1p(-x * x);
  return -std::log((ax - 1.0) * (ax + 1.0));
}

enum class Sign { Plus, Minus };

inline double q_plus(double x) {
  if (std::abs(x) < kSeriesCut) return series_even(x) + series_odd(x);
  if (x == 1.0) return kInf;
  if (x < 1.0) return -2.0 * x - 2.0 * std::log1p(-x);
  return -2.0 * x - 2.0 * std::log(x - 1.0);
}

inline double q_minus(double x) { return q_plus(-x); }

inline double q_pm(double x, Sign s) { return s == Sign::Plus ? q_plus(x) : q_minus(x); }

// Hyperbolic entropy, written without the sqrt(b^2+a^4) - a^2 cancellation.
inline double psi_coord(double b, double a2) {
  const double r = std::sqrt(b * b + a2 * a2);
  return 0.5 * (b * std::asinh(b / a2) - b * b / (r + a2));
}

inline double psi(const Eigen::Ref<const Vec>& beta, const Eigen::Ref<const Vec>& alpha) {
  require(beta.size() == alpha.size(), ErrorKind::DimensionMismatch, "beta/alpha size");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < beta.size(); ++i) acc += psi_coord(beta(i), alpha(i) * alpha(i));
  return acc;
}

inline Vec psi_grad(const Eigen::Ref<const Vec>& beta, const Eigen::Ref<const Vec>& alpha) {
  require(beta.size() == alpha.size(), ErrorKind::DimensionMismatch, "beta/alpha size");
  Vec g(beta.size());
  for (Eigen::Index i = 0; i < beta.size(); ++i) g(i) = 0.5 * std::asinh(beta(i) / (alpha(i) * alpha(i)));
  return g;
}

inline double bregman_psi(const Eigen::Ref<const Vec>& beta, const Eigen::Ref<const Vec>& ref,
                          const Eigen::Ref<const Vec>& alpha) {
  return psi(beta, alpha) - psi(ref, alpha) - psi_grad(ref, alpha).dot(beta - ref);
}

struct PotentialParams {
  Vec alpha;
  Vec phi;
};

inline double potential(const Eigen::Ref<const Vec>& beta, const PotentialParams& p) {
  return psi(beta, p.alpha) - p.phi.dot(beta);
}

inline Vec potential_grad(const Eigen::Ref<const Vec>& beta, const PotentialParams& p) {
  require(p.phi.size() == beta.size(), ErrorKind::DimensionMismatch, "phi size");
  return psi_grad(beta, p.alpha) - p.phi;
}

inline Vec phi_of_alphas(const Eigen::Ref<const Vec>& alpha_plus2, const Eigen::Ref<const Vec>& alpha_minus2) {
  require(alpha_plus2.size() == alpha_minus2.size(), ErrorKind::DimensionMismatch, "alpha size");
  require((alpha_plus2.array() > 0).all() && (alpha_minus2.array() > 0).all(), ErrorKind::InvalidArgument,
          "alpha_plus2 and alpha_minus2 must be positive");
  Vec phi(alpha_plus2.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const double a2 = std::sqrt(alpha_plus2(i) * alpha_minus2(i));
    phi(i) = 0.5 * std::asinh((alpha_plus2(i) - alpha_minus2(i)) / (2.0 * a2));
  }
  return phi;
}

namespace detail {
inline void accumulate_series(const double* __restrict g, double gamma, double* __restrict qp,
                              double* __restrict qm, double* __restrict sg, int d) {
  for (int j = 0; j < d; ++j) {
    const double x = gamma * g[j];
    const double e = series_even(x);
    const double o = series_odd(x);
    qp[j] += e + o;
    qm[j] += e - o;
    sg[j] += x;
  }
}
}  // namespace detail

struct MirrorLedger {
  Vec alpha0;
  Vec sum_qplus;
  Vec sum_qminus;
  Vec sum_grad;
  std::vector<std::uint8_t> degenerate;
  double max_abs_step = 0.0;
  std::int64_t steps = 0;

  static MirrorLedger fresh(const Eigen::Ref<const Vec>& alpha0) {
    require(alpha0.size() >= 1 && (alpha0.array() > 0).all() && alpha0.allFinite(),
            ErrorKind::InvalidArgument, "alpha0 must be positive and finite");
    MirrorLedger L;
    L.alpha0 = alpha0;
    L.sum_qplus = Vec::Zero(alpha0.size());
    L.sum_qminus = Vec::Zero(alpha0.size());
    L.sum_grad = Vec::Zero(alpha0.size());
    L.degenerate.assign(alpha0.size(), 0);
    return L;
  }

  int d() const { return static_cast<int>(alpha0.size()); }

  bool any_degenerate() const {
    for (auto f : degenerate)
      if (f) return true;
    return false;
  }

  // Accumulate one step x = gamma*g.
  void advance(const double* g, double gamma) {
    const int dd = d();
    double* qp = sum_qplus.data();
    double* qm = sum_qminus.data();
    double* sg = sum_grad.data();
    double mx = 0.0;
    for (int j = 0; j < dd; ++j) mx = std::max(mx, std::abs(gamma * g[j]));
    max_abs_step = std::max(max_abs_step, mx);
    ++steps;
    if (mx < kSeriesCut) {
      detail::accumulate_series(g, gamma, qp, qm, sg, dd);
      return;
    }
    for (int j = 0; j < dd; ++j) {
      const double x = gamma * g[j];
      sg[j] += x;
      if (std::abs(x - 1.0) < kDegenerateBand) {
        qp[j] = kInf;
        qm[j] += q_minus(x);
        degenerate[j] = 1;
      } else if (std::abs(x + 1.0) < kDegenerateBand) {
        qp[j] += q_plus(x);
        qm[j] = kInf;
        degenerate[j] = 1;
      } else {
        qp[j] += q_plus(x);
        qm[j] += q_minus(x);
      }
    }
  }

  Vec gain() const { return 0.5 * (sum_qplus + sum_qminus); }
  Vec alpha_plus_sq() const { return alpha0.array().square() * (-sum_qplus.array()).exp(); }
  Vec alpha_minus_sq() const { return alpha0.array().square() * (-sum_qminus.array()).exp(); }
  Vec alpha_sq() const { return alpha0.array().square() * (-gain().array()).exp(); }
  // phi = 0.5*ln(alpha_+/alpha_-), exact in log space.
  Vec phi() const { return 0.25 * (sum_qminus - sum_qplus); }
  // 0.5*(alpha_+^2 - alpha_-^2) = alpha^2 sinh(2 phi), cancellation free.
  Vec beta_tilde() const {
    return alpha_sq().array() * (0.5 * (sum_qminus - sum_qplus)).array().sinh();
  }
};

inline MirrorLedger ledger_update(MirrorLedger ledger, const Eigen::Ref<const Vec>& g, double gamma) {
  require(g.size() == ledger.d(), ErrorKind::DimensionMismatch, "gradient size");
  require(g.allFinite() && std::isfinite(gamma), ErrorKind::InvalidArgument, "non-finite update");
  ledger.advance(g.data(), gamma);
  return ledger;
}

inline PotentialParams ledger_potential(const MirrorLedger& ledger) {
  require(!ledger.any_degenerate(), ErrorKind::NonInvertiblePotential, "degenerate ledger coordinate");
  PotentialParams p;
  p.alpha = ledger.alpha0.array() * (-0.5 * ledger.gain().array()).exp();
  p.phi = ledger.phi();
  require(p.alpha.allFinite() && (p.alpha.array() > 0).all() && p.phi.allFinite(),
          ErrorKind::NonInvertiblePotential, "ledger scale underflowed");
  return p;
}

// grad h_k(beta) = 0.5*asinh(beta/alpha_k^2) - phi_k straight from the accumulators.
inline void grad_h_into(const double* beta, const MirrorLedger& L, double* out) {
  const int d = L.d();
  for (int j = 0; j < d; ++j) {
    const double g = 0.5 * (L.sum_qplus[j] + L.sum_qminus[j]);
    const double a2 = L.alpha0[j] * L.alpha0[j] * std::exp(-g);
    out[j] = 0.5 * std::asinh(beta[j] / a2) - 0.25 * (L.sum_qminus[j] - L.sum_qplus[j]);
  }
}

inline Vec gain_vector(const MirrorLedger& ledger) { return ledger.gain(); }

struct Limits {
  Vec alpha_inf;
  Vec beta_tilde0;
  bool bound_holds = true;
  // |grad psi_{alpha_inf}(b) - phi_inf|_inf for the two candidate closed forms of beta_tilde0;
  // the single form is ~0, the doubled form is not.
  double residual_single_form = 0.0;
  double residual_doubled_form = 0.0;
};

inline Limits limits(const MirrorLedger& ledger) {
  const PotentialParams p = ledger_potential(ledger);
  Limits out;
  out.alpha_inf = p.alpha;
  out.beta_tilde0 = ledger.beta_tilde();
  const Vec a2 = ledger.alpha0.array().square();
  out.bound_holds = ((out.beta_tilde0.array().abs() - a2.array()) <= 1e-15 * a2.array()).all();
  if (!out.bound_holds && ledger.max_abs_step <= 1.0)
    throw Error(ErrorKind::InvariantViolation, "|beta_tilde0| exceeds alpha0^2 with |gamma g| <= 1");
  const Vec doubled = 2.0 * out.beta_tilde0;
  out.residual_single_form = (psi_grad(out.beta_tilde0, p.alpha) - p.phi).cwiseAbs().maxCoeff();
  out.residual_doubled_form = (psi_grad(doubled, p.alpha) - p.phi).cwiseAbs().maxCoeff();
  return out;
}

struct WeightedL1 {
  double limit = 0.0;
  double rel_gap = 0.0;
};

inline WeightedL1 weighted_l1_limit(const Eigen::Ref<const Vec>& beta, double alpha_base,
                                    const Eigen::Ref<const Vec>& h) {
  require(alpha_base > 0.0 && alpha_base < 1.0, ErrorKind::InvalidArgument, "alpha_base must lie in (0,1)");
  require(beta.size() == h.size(), ErrorKind::DimensionMismatch, "beta/h size");
  require((h.array() >= 0).all(), ErrorKind::InvalidArgument, "h must be non-negative");
  const double lg = std::log(1.0 / alpha_base);
  WeightedL1 w;
  w.limit = ((1.0 + h.array()) * beta.array().abs()).sum();
  const Vec alpha_eff = (alpha_base * (-h.array() * lg).exp()).matrix();
  const double scaled = psi(beta, alpha_eff) / lg;
  w.rel_gap = w.limit > 0.0 ? std::abs(scaled - w.limit) / w.limit : std::abs(scaled);
  return w;
}

}  // namespace dlnlab::mirror
