#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <tuple>
#include <vector>

#include "core_data.hpp"
#include "errors.hpp"
#include "mirror.hpp"
#include "rng.hpp"

namespace dlnlab::dln {

using data::Batch;
using data::Dataset;
using mirror::MirrorLedger;

struct DlnState {
  Vec u, v, wplus, wminus, beta;
};

inline DlnState init_state(const Eigen::Ref<const Vec>& alpha) {
  require(alpha.size() >= 1 && alpha.allFinite() && (alpha.array() > 0).all(), ErrorKind::InvalidArgument,
          "alpha must be positive and finite");
  DlnState s;
  s.u = std::sqrt(2.0) * alpha;
  s.v = Vec::Zero(alpha.size());
  s.wplus = alpha;
  s.wminus = alpha;
  s.beta = Vec::Zero(alpha.size());
  return s;
}

inline void check_step_inputs(const DlnState& s, const Eigen::Ref<const Vec>& g, double gamma) {
  require(g.size() == s.beta.size(), ErrorKind::DimensionMismatch, "gradient size");
  require(g.allFinite() && std::isfinite(gamma), ErrorKind::InvalidArgument, "non-finite step input");
}

inline DlnState step_uv(DlnState s, const Eigen::Ref<const Vec>& g, double gamma) {
  check_step_inputs(s, g, gamma);
  require(s.u.allFinite() && s.v.allFinite(), ErrorKind::InvalidArgument, "non-finite state");
  const Vec u = s.u;
  s.u = u.array() - gamma * g.array() * s.v.array();
  s.v = s.v.array() - gamma * g.array() * u.array();
  s.beta = s.u.cwiseProduct(s.v);
  return s;
}

inline DlnState step_wpm(DlnState s, const Eigen::Ref<const Vec>& g, double gamma) {
  check_step_inputs(s, g, gamma);
  require(s.wplus.allFinite() && s.wminus.allFinite(), ErrorKind::InvalidArgument, "non-finite state");
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    const double x = gamma * g(j);
    s.wplus(j) = (x == 1.0) ? 0.0 : (1.0 - x) * s.wplus(j);
    s.wminus(j) = (x == -1.0) ? 0.0 : (1.0 + x) * s.wminus(j);
  }
  s.beta = 0.5 * (s.wplus - s.wminus).array() * (s.wplus + s.wminus).array();
  return s;
}

struct StepSchedule {
  std::vector<double> values{0.0};

  static StepSchedule constant(double g) { return StepSchedule{{g}}; }
  // Entries past the end repeat the last value.
  double at(std::int64_t k) const {
    const auto i = static_cast<std::size_t>(k);
    return i < values.size() ? values[i] : values.back();
  }
  bool is_constant() const { return values.size() == 1; }
};

enum class RunStatus { Converged, Diverged, MaxIters };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "Converged";
    case RunStatus::Diverged: return "Diverged";
    case RunStatus::MaxIters: return "MaxIters";
  }
  return "?";
}

struct TrainConfig {
  Vec alpha;
  StepSchedule gamma;
  int b = 1;
  std::int64_t max_iters = 1000000;
  double stop_loss = 1e-14;
  double diverge_factor = 1e8;
  std::uint64_t seed = 0;
  // Records: every step below record_prefix, then every record_every steps (0 = none).
  std::int64_t record_prefix = 0;
  std::int64_t record_every = 0;
  // Full-loss evaluation period for b < n (0 = automatic); b = n checks every step.
  std::int64_t check_every = 0;
  // Accumulate sum_k L(beta_k) and sum_k gamma_k^2 L(beta_k); costs one full loss per step.
  bool track_loss_sum = false;
  // Throw if a Converged run ever had |gamma g|_inf > 1.
  bool assert_step_guard = true;
};

inline void validate(const TrainConfig& cfg, const Dataset& ds) {
  require(cfg.alpha.size() == ds.d, ErrorKind::DimensionMismatch, "alpha length must equal d");
  require(cfg.alpha.allFinite() && (cfg.alpha.array() > 0).all(), ErrorKind::InvalidArgument,
          "alpha must be positive");
  require(!cfg.gamma.values.empty(), ErrorKind::InvalidArgument, "empty step-size schedule");
  for (double g : cfg.gamma.values)
    require(std::isfinite(g) && g >= 0.0, ErrorKind::InvalidArgument, "step sizes must be finite and >= 0");
  require(cfg.b >= 1 && cfg.b <= ds.n, ErrorKind::InvalidArgument, "need 1 <= b <= n");
  require(cfg.max_iters >= 0, ErrorKind::InvalidArgument, "max_iters must be >= 0");
  require(cfg.stop_loss > 0.0, ErrorKind::InvalidArgument, "stop_loss must be positive");
  require(cfg.diverge_factor > 1.0, ErrorKind::InvalidArgument, "diverge_factor must exceed 1");
  require(cfg.record_prefix >= 0 && cfg.record_every >= 0 && cfg.check_every >= 0, ErrorKind::InvalidArgument,
          "record/check periods must be >= 0");
}

struct StepRecord {
  std::int64_t k = 0;
  std::vector<int> batch;
  double gamma = 0.0;
  double loss = 0.0;
  Vec grad;
  Vec beta;
  MirrorLedger ledger;
};

struct Trajectory {
  std::vector<StepRecord> records;
  MirrorLedger ledger;
  RunStatus status = RunStatus::MaxIters;
  DlnState final_state;
  std::int64_t iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double max_beta_linf = 0.0;
  bool degenerate_zero = false;
  // sum_k g_k^2 componentwise
  Vec grad_sq_sum;
  bool loss_sum_valid = false;
  double loss_sum = 0.0;
  double gamma2_loss_sum = 0.0;
  double seconds = 0.0;

  double max_abs_step() const { return ledger.max_abs_step; }
};

struct StepEvent {
  std::int64_t k;
  double gamma;
  const Batch& batch;
  const double* g;
  const Vec& beta;
  const Vec& wplus;
  const Vec& wminus;
  const MirrorLedger& ledger;
};

struct NullObserver {
  void on_start(const Vec&, const MirrorLedger&) {}
  void on_step(const StepEvent&) {}
};

inline double default_stepsize(const Dataset& ds, int b, const Eigen::Ref<const Vec>& alpha,
                               const Eigen::Ref<const Vec>& beta_ref, double c = 1.0 / 64.0) {
  require(alpha.size() == ds.d && beta_ref.size() == ds.d, ErrorKind::DimensionMismatch, "alpha/beta_ref size");
  require((alpha.array() > 0).all(), ErrorKind::InvalidArgument, "alpha must be positive");
  require(c > 0.0, ErrorKind::InvalidArgument, "c must be positive");
  const double l1 = beta_ref.lpNorm<1>();
  const bool y_zero = ds.y.cwiseAbs().maxCoeff() == 0.0;
  require(l1 > 0.0 || y_zero, ErrorKind::InvalidArgument, "beta_ref = 0 but y != 0");
  const double L = data::smoothness(ds, b).L;
  require(L > 0.0, ErrorKind::InvalidArgument, "zero smoothness constant");
  const double amin2 = alpha.array().square().minCoeff();
  double B = l1 * std::log1p(l1 / amin2);
  // Huge alpha sends the log to 0; fall back to B = |beta_ref|_1, and to 1 for y = 0.
  if (!(B > 1e-8 * l1)) B = l1;
  if (B == 0.0) B = 1.0;
  return c / (L * B);
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double dot(const double* __restrict a, const double* __restrict b, int d) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int j = 0;
  for (; j + 4 <= d; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < d; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

// One w-update plus ledger accumulation when every |gamma g_j| is inside the series range.
inline void fused_small_step(const double* __restrict g, double gamma, double* __restrict wp,
                             double* __restrict wm, double* __restrict beta, double* __restrict qp,
                             double* __restrict qm, double* __restrict sg, double* __restrict gsq, int d) {
  for (int j = 0; j < d; ++j) {
    const double x = gamma * g[j];
    gsq[j] += g[j] * g[j];
    const double p = (1.0 - x) * wp[j];
    const double m = (1.0 + x) * wm[j];
    wp[j] = p;
    wm[j] = m;
    beta[j] = 0.5 * (p - m) * (p + m);
    const double e = mirror::series_even(x);
    const double o = mirror::series_odd(x);
    qp[j] += e + o;
    qm[j] += e - o;
    sg[j] += x;
  }
}

// Shared batch schedule and gradient evaluation for both parametrisations.
class GradientOracle {
 public:
  GradientOracle(const Dataset& ds, int b, std::uint64_t seed)
      : ds_(ds), b_(b), rows_(ds.raw_rows), rng_(RngStream::batch(seed)), resid_(ds.n),
        row_max_(ds.raw_rows.cwiseAbs().rowwise().maxCoeff()) {
    if (b_ == ds_.n) batch_ = data::full_batch(ds_.n);
    else batch_.indices.assign(b_, 0);
  }

  const Batch& next_batch() {
    if (b_ == 1) batch_.indices[0] = static_cast<int>(rng_.below(static_cast<std::uint64_t>(ds_.n)));
    else if (b_ < ds_.n) batch_ = data::sample_batch(ds_.n, b_, rng_);
    return batch_;
  }

  // g = batch gradient at beta, gmax = |g|_inf; returns false on non-finite residuals.
  bool gradient(const Vec& beta, Vec& g, double& gmax) {
    const int d = ds_.d;
    if (b_ == ds_.n) {
      resid_.noalias() = ds_.X * beta;
      resid_ -= ds_.y;
      g.noalias() = ds_.X.transpose() * resid_;
      last_full_loss_ = 0.5 * resid_.squaredNorm();
      gmax = g.cwiseAbs().maxCoeff();
      return std::isfinite(last_full_loss_) && std::isfinite(gmax);
    }
    const double* bp = beta.data();
    double* gp = g.data();
    if (b_ == 1) {
      const int i = batch_.indices[0];
      const double* x = rows_.data() + static_cast<std::ptrdiff_t>(i) * d;
      const double r = dot(x, bp, d) - ds_.raw_y[i];
      for (int j = 0; j < d; ++j) gp[j] = r * x[j];
      gmax = std::abs(r) * row_max_[i];
      return std::isfinite(r);
    }
    std::fill(gp, gp + d, 0.0);
    bool ok = true;
    for (int i : batch_.indices) {
      const double* x = rows_.data() + static_cast<std::ptrdiff_t>(i) * d;
      const double r = dot(x, bp, d) - ds_.raw_y[i];
      ok = ok && std::isfinite(r);
      for (int j = 0; j < d; ++j) gp[j] += r * x[j];
    }
    const double inv = 1.0 / b_;
    gmax = 0.0;
    for (int j = 0; j < d; ++j) {
      gp[j] *= inv;
      gmax = std::max(gmax, std::abs(gp[j]));
    }
    return ok && std::isfinite(gmax);
  }

  // Full loss at the beta last passed to gradient() when b = n.
  double last_full_loss() const { return last_full_loss_; }
  bool full_batch() const { return b_ == ds_.n; }
  const Batch& batch() const { return batch_; }

 private:
  const Dataset& ds_;
  int b_;
  RowMat rows_;
  RngStream rng_;
  Batch batch_;
  Vec resid_;
  Vec row_max_;
  double last_full_loss_ = 0.0;
};

}  // namespace detail

template <class Observer = NullObserver>
Trajectory train(const Dataset& ds, const TrainConfig& cfg, Observer&& obs = Observer{}) {
  validate(cfg, ds);
  const auto t0 = std::chrono::steady_clock::now();
  const int d = ds.d;
  detail::GradientOracle oracle(ds, cfg.b, cfg.seed);
  const std::int64_t check_every =
      oracle.full_batch() ? 1 : (cfg.check_every > 0 ? cfg.check_every : 16 * ((ds.n + cfg.b - 1) / cfg.b));

  Trajectory tr;
  tr.ledger = MirrorLedger::fresh(cfg.alpha);
  tr.grad_sq_sum = Vec::Zero(d);
  Vec wp = cfg.alpha, wm = cfg.alpha, beta = Vec::Zero(d), g = Vec::Zero(d);
  tr.initial_loss = data::loss(beta, ds);
  tr.loss_sum_valid = cfg.track_loss_sum;
  const double diverge_at = cfg.diverge_factor * tr.initial_loss;
  obs.on_start(beta, tr.ledger);

  double cur_loss = tr.initial_loss;
  // Exact per step for b = n, sampled at loss checks otherwise.
  double max_beta = 0.0;
  RunStatus status = RunStatus::MaxIters;
  std::int64_t k = 0;
  for (;; ++k) {
    const bool check = (k % check_every == 0) || k == cfg.max_iters;
    if (check && !oracle.full_batch()) cur_loss = data::loss(beta, ds);
    if (check && !oracle.full_batch()) {
      if (!std::isfinite(cur_loss) || cur_loss > diverge_at) { status = RunStatus::Diverged; break; }
      if (cur_loss <= cfg.stop_loss) { status = RunStatus::Converged; break; }
    }
    if (k == cfg.max_iters) {
      if (oracle.full_batch()) {
        cur_loss = data::loss(beta, ds);
        if (!std::isfinite(cur_loss) || cur_loss > diverge_at) status = RunStatus::Diverged;
        else if (cur_loss <= cfg.stop_loss) status = RunStatus::Converged;
      }
      break;
    }
    const Batch& batch = oracle.next_batch();
    double gmax = 0.0;
    const bool finite = oracle.gradient(beta, g, gmax);
    if (oracle.full_batch()) {
      cur_loss = oracle.last_full_loss();
      if (!finite || cur_loss > diverge_at) { status = RunStatus::Diverged; break; }
      if (cur_loss <= cfg.stop_loss) { status = RunStatus::Converged; break; }
    } else if (!finite) {
      status = RunStatus::Diverged;
      break;
    }
    const double gamma = cfg.gamma.at(k);
    const bool track_beta = oracle.full_batch() || check;
    const bool rec = k < cfg.record_prefix || (cfg.record_every > 0 && k % cfg.record_every == 0);
    if (rec || cfg.track_loss_sum) {
      const double Lk = oracle.full_batch() ? cur_loss : data::loss(beta, ds);
      if (cfg.track_loss_sum) {
        tr.loss_sum += Lk;
        tr.gamma2_loss_sum += gamma * gamma * Lk;
      }
      if (rec) tr.records.push_back(StepRecord{k, batch.indices, gamma, Lk, g, beta, tr.ledger});
    }
    const double* gp = g.data();
    double* pp = wp.data();
    double* mp = wm.data();
    double* bp = beta.data();
    const double xmax = gamma * gmax;
    if (xmax < mirror::kSeriesCut) {
      tr.ledger.max_abs_step = std::max(tr.ledger.max_abs_step, xmax);
      ++tr.ledger.steps;
      detail::fused_small_step(gp, gamma, pp, mp, bp, tr.ledger.sum_qplus.data(), tr.ledger.sum_qminus.data(),
                               tr.ledger.sum_grad.data(), tr.grad_sq_sum.data(), d);
    } else {
      for (int j = 0; j < d; ++j) {
        const double x = gamma * gp[j];
        pp[j] = std::abs(x - 1.0) < mirror::kDegenerateBand ? 0.0 : (1.0 - x) * pp[j];
        mp[j] = std::abs(x + 1.0) < mirror::kDegenerateBand ? 0.0 : (1.0 + x) * mp[j];
        bp[j] = 0.5 * (pp[j] - mp[j]) * (pp[j] + mp[j]);
      }
      tr.ledger.advance(gp, gamma);
      tr.grad_sq_sum.array() += g.array().square();
      if (tr.ledger.any_degenerate()) tr.degenerate_zero = true;
    }
    if (track_beta) max_beta = std::max(max_beta, beta.cwiseAbs().maxCoeff());
    obs.on_step(StepEvent{k, gamma, batch, gp, beta, wp, wm, tr.ledger});
  }
  tr.status = status;
  tr.iterations = k;
  tr.final_loss = (status == RunStatus::Converged || status == RunStatus::Diverged) ? cur_loss : data::loss(beta, ds);
  tr.max_beta_linf = max_beta;
  tr.final_state.wplus = wp;
  tr.final_state.wminus = wm;
  tr.final_state.beta = beta;
  tr.final_state.u = (wp + wm) / std::sqrt(2.0);
  tr.final_state.v = (wp - wm) / std::sqrt(2.0);
  tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cfg.assert_step_guard && status == RunStatus::Converged && tr.ledger.max_abs_step > 1.0)
    throw Error(ErrorKind::InvariantViolation, "converged run had |gamma g|_inf > 1");
  return tr;
}

// Runs the u,v engine in lockstep on the same batches, each engine using its own gradient.
class UvShadow {
 public:
  UvShadow(const Dataset& ds, const Vec& alpha)
      : ds_(ds), rows_(ds.raw_rows), u_(std::sqrt(2.0) * alpha), v_(Vec::Zero(alpha.size())),
        beta_(Vec::Zero(alpha.size())), g_(alpha.size()), resid_(ds.n) {}

  void on_start(const Vec&, const MirrorLedger&) {}

  void on_step(const StepEvent& e) {
    const int d = ds_.d;
    if (e.batch.b() == ds_.n) {
      resid_.noalias() = ds_.X * beta_;
      resid_ -= ds_.y;
      g_.noalias() = ds_.X.transpose() * resid_;
    } else {
      g_.setZero();
      for (int i : e.batch.indices) {
        const double* x = rows_.data() + static_cast<std::ptrdiff_t>(i) * d;
        const double r = detail::dot(x, beta_.data(), d) - ds_.raw_y[i];
        for (int j = 0; j < d; ++j) g_[j] += r * x[j];
      }
      g_ /= static_cast<double>(e.batch.b());
    }
    double dev = 0.0, mb = 0.0;
    for (int j = 0; j < d; ++j) {
      const double x = e.gamma * g_[j];
      const double u = u_[j];
      u_[j] = u - x * v_[j];
      v_[j] = v_[j] - x * u;
      beta_[j] = u_[j] * v_[j];
      dev = std::max(dev, std::abs(beta_[j] - e.beta[j]));
      mb = std::max(mb, std::abs(e.beta[j]));
    }
    max_dev_ = std::max(max_dev_, dev);
    max_beta_ = std::max(max_beta_, mb);
  }

  double max_dev() const { return max_dev_; }
  double max_beta() const { return max_beta_; }
  const Vec& beta() const { return beta_; }

 private:
  const Dataset& ds_;
  detail::RowMat rows_;
  Vec u_, v_, beta_, g_, resid_;
  double max_dev_ = 0.0;
  double max_beta_ = 0.0;
};

struct EquivalenceReport {
  double max_dev = 0.0;
  double max_beta = 0.0;
  std::int64_t steps = 0;
  RunStatus status = RunStatus::MaxIters;
};

inline EquivalenceReport check_param_equivalence(const Dataset& ds, TrainConfig cfg) {
  cfg.record_every = 0;
  cfg.record_prefix = 0;
  cfg.assert_step_guard = false;
  UvShadow shadow(ds, cfg.alpha);
  const Trajectory tr = train(ds, cfg, shadow);
  return {shadow.max_dev(), shadow.max_beta(), tr.iterations, tr.status};
}

// Fans one observer call out to several.
template <class... Obs>
struct Observers {
  std::tuple<Obs&...> all;
  explicit Observers(Obs&... o) : all(o...) {}
  void on_start(const Vec& b, const MirrorLedger& l) {
    std::apply([&](auto&... o) { (o.on_start(b, l), ...); }, all);
  }
  void on_step(const StepEvent& e) {
    std::apply([&](auto&... o) { (o.on_step(e), ...); }, all);
  }
};

}  // namespace dlnlab::dln
