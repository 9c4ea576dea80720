#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "bias_solver.hpp"
#include "core_data.hpp"
#include "errors.hpp"
#include "mirror.hpp"
#include "parallel.hpp"
#include "train.hpp"

namespace dlnlab::analysis {

using data::Dataset;
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// E_B[H_B^2] over uniform size-b batches, closed form.
inline Mat expected_sq_batch_hessian(const Dataset& ds, int b) {
  require(b >= 1 && b <= ds.n, ErrorKind::InvalidArgument, "need 1 <= b <= n");
  const Mat& R = ds.raw_rows;
  const Mat G = R * R.transpose();
  const double n = ds.n;
  const Vec diag = G.diagonal();
  Mat out = R.transpose() * diag.asDiagonal() * R / (b * n);
  if (ds.n > 1 && b > 1) {
    Mat off = G;
    off.diagonal().setZero();
    out += (b - 1.0) / (b * n * (n - 1.0)) * (R.transpose() * off * R);
  }
  return 0.5 * (out + out.transpose());
}

struct RangeBasis {
  Mat V;     // orthonormal basis of range(H)
  Vec evals; // matching eigenvalues
  double lambda_max = 0.0;
};

inline RangeBasis range_of(const Mat& H, double rel = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  const Vec& ev = es.eigenvalues();
  RangeBasis rb;
  rb.lambda_max = ev.maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > rel * rb.lambda_max) keep.push_back(i);
  rb.V.resize(H.rows(), static_cast<Eigen::Index>(keep.size()));
  rb.evals.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t t = 0; t < keep.size(); ++t) {
    rb.V.col(static_cast<Eigen::Index>(t)) = es.eigenvectors().col(keep[t]);
    rb.evals(static_cast<Eigen::Index>(t)) = ev(keep[t]);
  }
  return rb;
}

// Extreme generalized eigenvalues of (A, H) restricted to range(H).
inline std::pair<double, double> pencil_extremes(const Mat& A, const RangeBasis& rb) {
  const Vec isq = rb.evals.array().rsqrt();
  Mat M = isq.asDiagonal() * (rb.V.transpose() * A * rb.V) * isq.asDiagonal();
  M = 0.5 * (M + M.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

// Smallest eigenvalue of A restricted to range(H).
inline double min_eig_on_range(const Mat& A, const RangeBasis& rb) {
  Mat M = rb.V.transpose() * A * rb.V;
  M = 0.5 * (M + M.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct SpectralReport {
  int b = 0;
  double lambda_b = 0.0;
  double Lambda_b = 0.0;
  Mat Htilde_b;
  double lambda_min_plus_H = 0.0;
  double lambda_max_H = 0.0;
  // min eigenvalues of (Htilde - lambda H) and (Lambda H - Htilde) on range(H)
  double lower_slack = 0.0;
  double upper_slack = 0.0;
};

inline SpectralReport lambda_bounds(const Dataset& ds, int b) {
  require(ds.H.cwiseAbs().maxCoeff() > 0.0, ErrorKind::InvalidArgument, "H has rank 0");
  SpectralReport r;
  r.b = b;
  r.Htilde_b = expected_sq_batch_hessian(ds, b);
  const RangeBasis rb = range_of(ds.H);
  require(rb.evals.size() > 0, ErrorKind::InvalidArgument, "H has rank 0");
  std::tie(r.lambda_b, r.Lambda_b) = pencil_extremes(r.Htilde_b, rb);
  r.lambda_min_plus_H = rb.evals.minCoeff();
  r.lambda_max_H = rb.lambda_max;
  r.lower_slack = min_eig_on_range(r.Htilde_b - r.lambda_b * ds.H, rb);
  r.upper_slack = min_eig_on_range(r.Lambda_b * ds.H - r.Htilde_b, rb);
  return r;
}

struct GainBoundsReport {
  int b = 0;
  int runs = 0;
  double lambda_b = 0.0;
  double Lambda_b = 0.0;
  double S_mean = 0.0;  // mean of gamma^2 sum_k L(beta_k)
  double S_se = 0.0;
  double G_mean = 0.0;  // mean of |Gain|_1
  double G_se = 0.0;
  double max_abs_step = 0.0;
  bool holds = false;          // lambda_b S <= G <= 4 Lambda_b S (proof constants)
  bool holds_displayed = false;  // lambda_b S <= G <= Lambda_b S
};

struct GainSample {
  double S = 0.0;
  double G = 0.0;
  double max_abs_step = 0.0;
};

inline GainSample gain_sample(const dln::Trajectory& tr) {
  require(tr.loss_sum_valid, ErrorKind::InvalidArgument, "trajectory lacks the loss sum (track_loss_sum)");
  return {tr.gamma2_loss_sum, tr.ledger.gain().lpNorm<1>(), tr.ledger.max_abs_step};
}

// With several runs the comparison is on seed means, each side widened by se_slack
// standard errors of the difference; a single run is compared exactly.
inline GainBoundsReport gain_bounds_check(const std::vector<GainSample>& runs, const Dataset& ds, int b,
                                          double se_slack = 3.0) {
  require(!runs.empty(), ErrorKind::NoConvergedRuns, "no converged runs");
  GainBoundsReport r;
  r.b = b;
  r.runs = static_cast<int>(runs.size());
  const SpectralReport sp = lambda_bounds(ds, b);
  r.lambda_b = sp.lambda_b;
  r.Lambda_b = sp.Lambda_b;
  const double m = static_cast<double>(runs.size());
  for (const auto& s : runs) {
    r.S_mean += s.S / m;
    r.G_mean += s.G / m;
    r.max_abs_step = std::max(r.max_abs_step, s.max_abs_step);
  }
  auto se_of = [&](auto f) {
    if (runs.size() < 2) return 0.0;
    double mean = 0.0, acc = 0.0;
    for (const auto& s : runs) mean += f(s) / m;
    for (const auto& s : runs) acc += (f(s) - mean) * (f(s) - mean);
    return std::sqrt(acc / (m - 1.0) / m);
  };
  r.S_se = se_of([](const GainSample& s) { return s.S; });
  r.G_se = se_of([](const GainSample& s) { return s.G; });
  const double lo_se = se_of([&](const GainSample& s) { return s.G - r.lambda_b * s.S; });
  const double hi_se = se_of([&](const GainSample& s) { return 4.0 * r.Lambda_b * s.S - s.G; });
  const double hd_se = se_of([&](const GainSample& s) { return r.Lambda_b * s.S - s.G; });
  const double lo = r.G_mean - r.lambda_b * r.S_mean;
  const double hi = 4.0 * r.Lambda_b * r.S_mean - r.G_mean;
  const double hd = r.Lambda_b * r.S_mean - r.G_mean;
  r.holds = lo >= -se_slack * lo_se && hi >= -se_slack * hi_se;
  r.holds_displayed = lo >= -se_slack * lo_se && hd >= -se_slack * hd_se;
  return r;
}

struct SumLossEntry {
  double alpha = 0.0;
  double gamma = 0.0;
  double gamma2_sum_loss = 0.0;
  double prediction = 0.0;  // gamma ln(1/alpha) |beta_l1|_1
  double ratio = 0.0;
  dln::RunStatus status = dln::RunStatus::MaxIters;
  std::int64_t iterations = 0;
};

struct SumLossReport {
  std::vector<SumLossEntry> entries;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
  double spread() const { return ratio_max / ratio_min; }
};

struct GammaRule {
  double c = 1.0 / 64.0;
  double scale = 1.0;  // multiplies the default step
  int b = 0;           // 0 = full batch
};

inline SumLossReport sum_loss_scaling(const Dataset& ds, const std::vector<double>& alphas, GammaRule rule,
                                      dln::TrainConfig base = {}) {
  require(!alphas.empty(), ErrorKind::InvalidArgument, "empty alpha list");
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const double l1 = l1ref.lpNorm<1>();
  const int b = rule.b > 0 ? rule.b : ds.n;
  SumLossReport rep;
  rep.ratio_min = std::numeric_limits<double>::infinity();
  rep.ratio_max = 0.0;
  for (double a : alphas) {
    require(a > 0.0 && a < 1.0, ErrorKind::InvalidArgument, "alpha must lie in (0,1)");
    dln::TrainConfig cfg = base;
    cfg.alpha = Vec::Constant(ds.d, a);
    cfg.b = b;
    cfg.track_loss_sum = true;
    const double g = rule.scale * dln::default_stepsize(ds, b, cfg.alpha, l1ref, rule.c);
    cfg.gamma = dln::StepSchedule::constant(g);
    const dln::Trajectory tr = dln::train(ds, cfg);
    if (tr.status == dln::RunStatus::Diverged)
      throw Error(ErrorKind::InvariantViolation, "divergence at default step size");
    SumLossEntry e;
    e.alpha = a;
    e.gamma = g;
    e.gamma2_sum_loss = tr.gamma2_loss_sum;
    e.prediction = g * std::log(1.0 / a) * l1;
    e.ratio = e.gamma2_sum_loss / e.prediction;
    e.status = tr.status;
    e.iterations = tr.iterations;
    rep.ratio_min = std::min(rep.ratio_min, e.ratio);
    rep.ratio_max = std::max(rep.ratio_max, e.ratio);
    rep.entries.push_back(e);
  }
  return rep;
}

struct ShapeReport {
  Vec grad_sq_gd;
  Vec grad_sq_sgd;
  double ratio_gd = kNaN;
  double ratio_sgd = kNaN;
  bool centered = true;
  bool within_expected = false;
};

inline double support_ratio(const Vec& v, const Vec& truth) {
  double on = 0.0, off = 0.0;
  int non = 0, noff = 0;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (truth(j) != 0.0) {
      on += v(j);
      ++non;
    } else {
      off += v(j);
      ++noff;
    }
  }
  if (non == 0 || noff == 0) return kNaN;
  return (on / non) / (off / noff);
}

inline ShapeReport init_gradient_shape(const Dataset& ds) {
  require(ds.sparse_truth.has_value(), ErrorKind::InvalidArgument, "dataset has no sparse truth");
  ShapeReport r;
  r.grad_sq_gd = (ds.X.transpose() * ds.y).array().square();
  const Mat& R = ds.raw_rows;
  r.grad_sq_sgd = (R.array().square().colwise() * ds.raw_y.array().square()).colwise().sum().transpose() /
                  static_cast<double>(ds.n);
  r.ratio_gd = support_ratio(r.grad_sq_gd, *ds.sparse_truth);
  r.ratio_sgd = support_ratio(r.grad_sq_sgd, *ds.sparse_truth);
  r.centered = ds.meta.mean == 0.0;
  auto in_band = [](double x) { return x >= 1.0 / 3.0 && x <= 3.0; };
  r.within_expected = r.centered ? (r.ratio_gd >= 5.0 && in_band(r.ratio_sgd))
                                 : (in_band(r.ratio_gd) && in_band(r.ratio_sgd));
  return r;
}

// E_B[(grad L_B(beta_0))^2] for uniform size-b batches.
inline Vec expected_sq_init_gradient(const Dataset& ds, int b) {
  require(b >= 1 && b <= ds.n, ErrorKind::InvalidArgument, "need 1 <= b <= n");
  const Mat V = ds.raw_rows.array().colwise() * ds.raw_y.array();  // v_ij = x_ij y_i
  const double n = ds.n;
  const Vec sq = V.array().square().colwise().sum().transpose();
  const Vec sum = V.colwise().sum().transpose();
  Vec out = sq / (b * n);
  if (ds.n > 1 && b > 1) out += (b - 1.0) / (b * n * (n - 1.0)) * (sum.array().square() - sq.array()).matrix();
  return out;
}

inline Vec shady_ratio(const dln::Trajectory& traj, const Dataset& ds, int b) {
  require(traj.grad_sq_sum.size() == ds.d, ErrorKind::InvalidArgument, "trajectory lacks gradient sums");
  const Vec e0 = expected_sq_init_gradient(ds, b);
  Vec r = traj.grad_sq_sum.array() / e0.array();
  const double mean = r.mean();
  if (mean > 0.0 && std::isfinite(mean)) r /= mean;
  return r;
}

inline Vec ranks(const Vec& v) {
  std::vector<Eigen::Index> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v(a) < v(b); });
  Vec r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v(idx[j + 1]) == v(idx[i])) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r(idx[t]) = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const Vec& a, const Vec& b) {
  const Vec ra = ranks(a), rb = ranks(b);
  const Vec ca = ra.array() - ra.mean(), cb = rb.array() - rb.mean();
  const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return den > 0.0 ? ca.dot(cb) / den : kNaN;
}

// Counts steps where some truth-support coordinate reverses its direction of motion.
class OscillationCounter {
 public:
  explicit OscillationCounter(std::vector<int> support) : support_(std::move(support)) {}
  void on_start(const Vec& beta, const mirror::MirrorLedger&) {
    prev_beta_ = beta;
    prev_delta_ = Vec::Zero(beta.size());
  }
  void on_step(const dln::StepEvent& e) {
    bool flip = false;
    for (int j : support_) {
      const double dlt = e.beta[j] - prev_beta_[j];
      if (dlt * prev_delta_[j] < 0.0) flip = true;
      prev_delta_[j] = dlt;
      prev_beta_[j] = e.beta[j];
    }
    flips_ += flip;
    ++steps_;
  }
  double fraction() const { return steps_ ? static_cast<double>(flips_) / steps_ : 0.0; }

 private:
  std::vector<int> support_;
  Vec prev_beta_, prev_delta_;
  std::int64_t flips_ = 0, steps_ = 0;
};

struct EosEntry {
  double gamma = 0.0;
  dln::RunStatus status = dln::RunStatus::MaxIters;
  std::int64_t iterations = 0;
  double dist_l1 = kNaN;
  double dist_sparse = kNaN;
  double gain_l1 = kNaN;
  double oscillation = 0.0;
  double flatness_lmax = kNaN;
};

struct EosScanResult {
  std::vector<EosEntry> entries;
  double gamma_tilde_max = kNaN;
  double bracket_lo = kNaN;
  double bracket_hi = kNaN;
  int probes = 0;
};

struct EosOptions {
  std::int64_t probe_iters = 100000;
  double rel_tol = 1e-3;
  bool with_flatness = false;
  int workers = 1;
};

inline bool diverges_within(const Dataset& ds, dln::TrainConfig cfg, double gamma, std::int64_t iters) {
  cfg.gamma = dln::StepSchedule::constant(gamma);
  cfg.max_iters = iters;
  cfg.record_every = 0;
  cfg.record_prefix = 0;
  cfg.track_loss_sum = false;
  cfg.assert_step_guard = false;
  return dln::train(ds, cfg).status == dln::RunStatus::Diverged;
}

// Bisection on [lo, hi] with lo non-diverging and hi diverging; returns the final lo.
inline double locate_gamma_tilde_max(const Dataset& ds, const dln::TrainConfig& cfg, double lo, double hi,
                                     const EosOptions& opt = {}, int* probes = nullptr) {
  require(lo > 0.0 && hi > lo, ErrorKind::InvalidArgument, "need 0 < lo < hi");
  int count = 0;
  while (hi - lo > opt.rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    if (diverges_within(ds, cfg, mid, opt.probe_iters)) hi = mid;
    else lo = mid;
    ++count;
  }
  if (probes) *probes = count;
  return lo;
}

// Doubles from `start` until a probe diverges, then bisects.
inline double find_gamma_tilde_max(const Dataset& ds, const dln::TrainConfig& cfg, double start,
                                   const EosOptions& opt = {}, int* probes = nullptr) {
  require(start > 0.0, ErrorKind::InvalidArgument, "start must be positive");
  double lo = start, hi = start;
  int count = 1;
  if (diverges_within(ds, cfg, start, opt.probe_iters)) {
    do {
      hi = lo;
      lo *= 0.5;
      ++count;
      require(lo > 1e-12 * start, ErrorKind::GridDiverged, "no stable step size found");
    } while (diverges_within(ds, cfg, lo, opt.probe_iters));
  } else {
    do {
      lo = hi;
      hi *= 2.0;
      ++count;
      require(hi < 1e12 * start, ErrorKind::InvalidArgument, "no diverging step size found");
    } while (!diverges_within(ds, cfg, hi, opt.probe_iters));
  }
  int more = 0;
  const double g = locate_gamma_tilde_max(ds, cfg, lo, hi, opt, &more);
  if (probes) *probes = count + more;
  return g;
}

inline Mat hessian_F(const dln::DlnState& s, const Dataset& ds) {
  const int d = ds.d;
  require(s.wplus.size() == d && s.wminus.size() == d, ErrorKind::DimensionMismatch, "state size");
  const Vec beta = 0.5 * (s.wplus - s.wminus).array() * (s.wplus + s.wminus).array();
  const Vec grad = data::full_gradient(beta, ds);
  Mat out(2 * d, 2 * d);
  out.topLeftCorner(d, d) = s.wplus.asDiagonal() * ds.H * s.wplus.asDiagonal();
  out.topLeftCorner(d, d).diagonal() += grad;
  out.topRightCorner(d, d) = -(s.wplus.asDiagonal() * ds.H * s.wminus.asDiagonal());
  out.bottomLeftCorner(d, d) = out.topRightCorner(d, d).transpose();
  out.bottomRightCorner(d, d) = s.wminus.asDiagonal() * ds.H * s.wminus.asDiagonal();
  out.bottomRightCorner(d, d).diagonal() -= grad;
  return out;
}

struct FlatnessReport {
  double lambda_max = 0.0;
  double trace = 0.0;
  double lambda_min = 0.0;
};

inline FlatnessReport flatness_report(const dln::DlnState& s, const Dataset& ds) {
  const Mat Hf = hessian_F(s, ds);
  Eigen::SelfAdjointEigenSolver<Mat> es(Hf, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().maxCoeff(), Hf.trace(), es.eigenvalues().minCoeff()};
}

inline std::vector<int> truth_support(const Dataset& ds) {
  std::vector<int> s;
  if (ds.sparse_truth)
    for (int j = 0; j < ds.d; ++j)
      if ((*ds.sparse_truth)(j) != 0.0) s.push_back(j);
  return s;
}

inline EosScanResult eos_scan(const Dataset& ds, const dln::TrainConfig& base, const std::vector<double>& grid,
                              const EosOptions& opt = {}) {
  require(!grid.empty(), ErrorKind::InvalidArgument, "empty grid");
  require(std::is_sorted(grid.begin(), grid.end()) && grid.front() > 0.0, ErrorKind::InvalidArgument,
          "grid must be positive and ascending");
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const auto support = truth_support(ds);
  EosScanResult res;
  res.entries.resize(grid.size());
  parallel_for(grid.size(), opt.workers, [&](std::size_t i) {
    dln::TrainConfig cfg = base;
    cfg.gamma = dln::StepSchedule::constant(grid[i]);
    cfg.assert_step_guard = false;
    cfg.record_every = 0;
    cfg.record_prefix = 0;
    OscillationCounter osc(support);
    const dln::Trajectory tr = dln::train(ds, cfg, osc);
    EosEntry e;
    e.gamma = grid[i];
    e.status = tr.status;
    e.iterations = tr.iterations;
    e.oscillation = osc.fraction();
    if (tr.status != dln::RunStatus::Diverged) {
      const auto m = bias::solution_metrics(tr.final_state.beta, ds, l1ref);
      e.dist_l1 = m.dist_l1ref;
      e.dist_sparse = m.dist_sparse_l2;
      e.gain_l1 = tr.ledger.gain().lpNorm<1>();
      if (opt.with_flatness) e.flatness_lmax = flatness_report(tr.final_state, ds).lambda_max;
    }
    res.entries[i] = e;
  });
  std::size_t hi = res.entries.size();
  for (std::size_t i = 0; i < res.entries.size(); ++i)
    if (res.entries[i].status == dln::RunStatus::Diverged) {
      hi = i;
      break;
    }
  if (hi == 0) throw Error(ErrorKind::GridDiverged, "every grid step size diverged");
  if (hi == res.entries.size()) return res;
  res.bracket_lo = grid[hi - 1];
  res.bracket_hi = grid[hi];
  res.gamma_tilde_max = locate_gamma_tilde_max(ds, base, res.bracket_lo, res.bracket_hi, opt, &res.probes);
  return res;
}

}  // namespace dlnlab::analysis
