#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mirror.hpp"
#include "train.hpp"

namespace dlnlab::mirror {

// Max over consecutive stored snapshots of
// |grad h_b(beta_b) - grad h_a(beta_a) + sum of gamma g between them|_inf.
// With one record per step this is exactly the per-step identity.
inline double verify_md_identity(const dln::Trajectory& traj) {
  require(!traj.ledger.any_degenerate(), ErrorKind::NonInvertiblePotential, "degenerate ledger");
  const auto& recs = traj.records;
  if (recs.empty()) return 0.0;
  const int d = traj.ledger.d();
  Vec ga(d), gb(d);
  double worst = 0.0;
  auto residual = [&](const Vec& beta_a, const MirrorLedger& la, const Vec& beta_b, const MirrorLedger& lb,
                      const Vec* step) {
    require(!la.any_degenerate() && !lb.any_degenerate(), ErrorKind::NonInvertiblePotential, "degenerate ledger");
    grad_h_into(beta_a.data(), la, ga.data());
    grad_h_into(beta_b.data(), lb, gb.data());
    for (int j = 0; j < d; ++j) {
      const double moved = step ? (*step)(j) : lb.sum_grad(j) - la.sum_grad(j);
      worst = std::max(worst, std::abs(gb(j) - ga(j) + moved));
    }
  };
  Vec step(d);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& a = recs[i];
    const bool last = i + 1 == recs.size();
    const std::int64_t next_k = last ? traj.iterations : recs[i + 1].k;
    const Vec& beta_b = last ? traj.final_state.beta : recs[i + 1].beta;
    const MirrorLedger& lb = last ? traj.ledger : recs[i + 1].ledger;
    if (last && next_k == a.k) break;
    if (next_k == a.k + 1) {
      step = a.gamma * a.grad;
      residual(a.beta, a.ledger, beta_b, lb, &step);
    } else {
      residual(a.beta, a.ledger, beta_b, lb, nullptr);
    }
  }
  return worst;
}

// Streaming per-step check of the identity for every step of a run.
class MdIdentityMonitor {
 public:
  void on_start(const Vec& beta, const MirrorLedger& L) {
    prev_.resize(beta.size());
    cur_.resize(beta.size());
    grad_h_into(beta.data(), L, prev_.data());
  }

  void on_step(const dln::StepEvent& e) {
    if (broken_ || e.ledger.any_degenerate()) {
      broken_ = true;
      return;
    }
    const int d = static_cast<int>(prev_.size());
    grad_h_into(e.beta.data(), e.ledger, cur_.data());
    double w = 0.0;
    for (int j = 0; j < d; ++j) w = std::max(w, std::abs(cur_[j] - prev_[j] + e.gamma * e.g[j]));
    if (!(w <= max_)) max_ = std::isnan(w) ? std::numeric_limits<double>::infinity() : w;
    prev_.swap(cur_);
    ++steps_;
  }

  double max_residual() const { return max_; }
  std::int64_t steps() const { return steps_; }
  bool degenerate() const { return broken_; }

 private:
  std::vector<double> prev_, cur_;
  double max_ = 0.0;
  std::int64_t steps_ = 0;
  bool broken_ = false;
};

}  // namespace dlnlab::mirror
