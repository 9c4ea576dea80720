#include <gtest/gtest.h>

#include <dlnlab/bias_solver.hpp>
#include <dlnlab/train.hpp>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace dlnlab;
using namespace testing_support;
using dln::RunStatus;

namespace {

dln::TrainConfig config(const data::Dataset& ds, double alpha, double gamma, int b) {
  dln::TrainConfig c;
  c.alpha = Vec::Constant(ds.d, alpha);
  c.gamma = dln::StepSchedule::constant(gamma);
  c.b = b;
  return c;
}

const data::Dataset& unit1d() {
  static const auto ds = data::make_dataset(rows({{1}}), vec({1}), vec({1}));
  return ds;
}

struct LossTracker {
  const data::Dataset& ds;
  double prev;
  double worst_increase = 0.0;
  void on_start(const Vec& b, const mirror::MirrorLedger&) { prev = data::loss(b, ds); }
  void on_step(const dln::StepEvent& e) {
    const double l = data::loss(e.beta, ds);
    worst_increase = std::max(worst_increase, l - prev);
    prev = l;
  }
};

// Scalar recursion for x = y = 1, alpha = 1, run to blow-up or convergence.
bool scalar_diverges(double gamma) {
  double wp = 1, wm = 1;
  for (int k = 0; k < 20000; ++k) {
    const double beta = 0.5 * (wp * wp - wm * wm);
    const double g = beta - 1.0;
    if (!std::isfinite(g) || 0.5 * g * g > 1e8 * 0.5) return true;
    wp *= 1 - gamma * g;
    wm *= 1 + gamma * g;
  }
  return false;
}

}  // namespace

TEST(InitState, Values) {
  const auto s = dln::init_state(vec({1}));
  EXPECT_DOUBLE_EQ(s.u(0), std::sqrt(2.0));
  EXPECT_EQ(s.v(0), 0.0);
  EXPECT_EQ(s.beta(0), 0.0);
  const auto t = dln::init_state(Vec::Constant(30, 0.1));
  EXPECT_EQ(t.wplus, Vec::Constant(30, 0.1));
  EXPECT_EQ(t.wminus, Vec::Constant(30, 0.1));
  EXPECT_EQ(t.beta, Vec::Zero(30));
  EXPECT_THROW(dln::init_state(vec({1, 0})), Error);
  EXPECT_THROW(dln::init_state(vec({-1})), Error);
}

TEST(Step, UvHandValues) {
  const auto s0 = dln::init_state(vec({1}));
  const auto same = dln::step_uv(s0, vec({0}), 0.1);
  EXPECT_EQ(same.u, s0.u);
  EXPECT_EQ(same.v, s0.v);
  const auto s1 = dln::step_uv(s0, vec({-1}), 0.1);
  EXPECT_DOUBLE_EQ(s1.u(0), std::sqrt(2.0));
  EXPECT_NEAR(s1.v(0), 0.1 * std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s1.beta(0), 0.2, 1e-15);
  EXPECT_NEAR(dln::step_uv(s0, vec({1}), 0.1).beta(0), -0.2, 1e-15);
  EXPECT_THROW(dln::step_uv(s0, vec({NAN}), 0.1), Error);
}

TEST(Step, WpmHandValues) {
  const auto s0 = dln::init_state(vec({1, 1}));
  const auto same = dln::step_wpm(s0, vec({0, 0}), 0.1);
  EXPECT_EQ(same.wplus, s0.wplus);
  const auto s1 = dln::step_wpm(s0, vec({-1, 10}), 0.1);
  EXPECT_DOUBLE_EQ(s1.wplus(0), 1.1);
  EXPECT_DOUBLE_EQ(s1.wminus(0), 0.9);
  EXPECT_NEAR(s1.beta(0), 0.2, 1e-15);
  EXPECT_EQ(s1.wplus(1), 0.0);
  EXPECT_DOUBLE_EQ(s1.wminus(1), 2.0);
  EXPECT_THROW(dln::step_wpm(s0, vec({1}), 0.1), Error);
}

TEST(Step, EnginesAgreeOnRandomSteps) {
  RngStream r(4, RngStream::Aux);
  auto a = dln::init_state(Vec::Constant(5, 0.3));
  auto b = a;
  for (int k = 0; k < 50; ++k) {
    Vec g(5);
    for (int j = 0; j < 5; ++j) g(j) = r.normal();
    a = dln::step_uv(a, g, 0.05);
    b = dln::step_wpm(b, g, 0.05);
    EXPECT_LE((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-13 * (1 + b.beta.cwiseAbs().maxCoeff()));
  }
}

TEST(DefaultStepsize, FormulaAndGuards) {
  const auto& ds = unit1d();
  EXPECT_NEAR(dln::default_stepsize(ds, 1, vec({1}), vec({1})), (1.0 / 64) / std::log(2.0), 1e-15);
  EXPECT_NEAR(dln::default_stepsize(ds, 1, vec({1}), vec({1})), 0.02254, 5e-6);
  // doubling the data scales L by 4
  const auto ds2 = data::make_dataset(rows({{2}}), vec({2}), vec({1}));
  EXPECT_NEAR(dln::default_stepsize(ds2, 1, vec({1}), vec({1})),
              dln::default_stepsize(ds, 1, vec({1}), vec({1})) / 4, 1e-15);
  // huge alpha sends log(1+x) to zero; B falls back to |beta_ref|_1
  EXPECT_NEAR(dln::default_stepsize(ds, 1, vec({1e6}), vec({1})), 1.0 / 64, 1e-12);
  EXPECT_THROW(dln::default_stepsize(ds, 1, vec({1}), vec({0})), Error);
  EXPECT_THROW(dln::default_stepsize(ds, 1, vec({0}), vec({1})), Error);
}

TEST(Train, GdConvergesOnPresetWithinIterateBound) {
  const auto ds = preset();
  const Vec ref = bias::min_l1_interpolator(ds);
  auto cfg = config(ds, 0.1, 0, ds.n);
  cfg.gamma = dln::StepSchedule::constant(dln::default_stepsize(ds, ds.n, cfg.alpha, ref));
  cfg.stop_loss = 1e-10;
  cfg.max_iters = 20000000;
  const auto tr = dln::train(ds, cfg);
  ASSERT_EQ(tr.status, RunStatus::Converged);
  EXPECT_LE(tr.final_loss, 1e-10);
  EXPECT_LE(tr.ledger.max_abs_step, 1.0);
  const double l1 = ref.lpNorm<1>();
  EXPECT_LE(tr.max_beta_linf, l1 * std::log1p(l1 / 0.01));
}

TEST(Train, ZeroStepKeepsLossConstant) {
  const auto ds = preset();
  auto cfg = config(ds, 0.1, 0.0, 4);
  cfg.max_iters = 500;
  cfg.record_every = 1;
  const auto tr = dln::train(ds, cfg);
  EXPECT_EQ(tr.status, RunStatus::MaxIters);
  EXPECT_EQ(tr.iterations, 500);
  for (const auto& r : tr.records) EXPECT_DOUBLE_EQ(r.loss, tr.initial_loss);
  EXPECT_DOUBLE_EQ(tr.final_loss, tr.initial_loss);
  const auto eq = dln::check_param_equivalence(ds, cfg);
  EXPECT_EQ(eq.max_dev, 0.0);
}

TEST(Train, OneDimensionalDivergenceMatchesScalarOracle) {
  double lo = 1e-3, hi = 10.0;
  ASSERT_FALSE(scalar_diverges(lo));
  ASSERT_TRUE(scalar_diverges(hi));
  for (int i = 0; i < 60; ++i) {
    const double mid = std::sqrt(lo * hi);
    (scalar_diverges(mid) ? hi : lo) = mid;
  }
  const auto& ds = unit1d();
  auto cfg = config(ds, 1.0, 1.5 * hi, 1);
  cfg.max_iters = 20000;
  cfg.assert_step_guard = false;
  EXPECT_EQ(dln::train(ds, cfg).status, RunStatus::Diverged);
  cfg.gamma = dln::StepSchedule::constant(0.5 * lo);
  cfg.stop_loss = 1e-20;
  EXPECT_NE(dln::train(ds, cfg).status, RunStatus::Diverged);
}

TEST(Train, RejectsInvalidConfig) {
  const auto ds = preset();
  auto cfg = config(ds, 0.1, 0.01, 1);
  cfg.b = 0;
  EXPECT_THROW(dln::train(ds, cfg), Error);
  cfg.b = ds.n + 1;
  EXPECT_THROW(dln::train(ds, cfg), Error);
  cfg = config(ds, 0.1, 0.01, 1);
  cfg.alpha = Vec::Constant(3, 0.1);
  EXPECT_THROW(dln::train(ds, cfg), Error);
  cfg = config(ds, -0.1, 0.01, 1);
  EXPECT_THROW(dln::train(ds, cfg), Error);
  cfg = config(ds, 0.1, NAN, 1);
  EXPECT_THROW(dln::train(ds, cfg), Error);
}

TEST(Train, ReplayIsBitIdentical) {
  const auto ds = preset(2);
  auto cfg = config(ds, 0.1, 0.05, 1);
  cfg.seed = 99;
  cfg.max_iters = 3000;
  cfg.record_every = 1;
  const auto a = dln::train(ds, cfg);
  const auto b = dln::train(ds, cfg);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].batch, b.records[i].batch);
    EXPECT_EQ(a.records[i].grad, b.records[i].grad);
    EXPECT_EQ(a.records[i].beta, b.records[i].beta);
  }
  EXPECT_EQ(a.final_state.beta, b.final_state.beta);
  EXPECT_EQ(a.ledger.sum_qplus, b.ledger.sum_qplus);
  EXPECT_EQ(a.ledger.sum_qminus, b.ledger.sum_qminus);
  cfg.seed = 100;
  EXPECT_NE(dln::train(ds, cfg).final_state.beta, a.final_state.beta);
}

TEST(Train, RecordsHoldTheGradientThatProducedTheNextIterate) {
  const auto ds = preset(3);
  auto cfg = config(ds, 0.1, 0.05, 2);
  cfg.max_iters = 200;
  cfg.record_every = 1;
  const auto tr = dln::train(ds, cfg);
  ASSERT_EQ(tr.records.size(), 200u);
  auto state = dln::init_state(cfg.alpha);
  for (std::size_t k = 0; k < tr.records.size(); ++k) {
    const auto& r = tr.records[k];
    EXPECT_EQ(r.k, static_cast<std::int64_t>(k));
    EXPECT_LE((r.beta - state.beta).cwiseAbs().maxCoeff(), 1e-14);
    const Vec g = data::batch_gradient(r.beta, ds, data::Batch{r.batch});
    EXPECT_LE((g - r.grad).cwiseAbs().maxCoeff(), 1e-13 * (1 + g.cwiseAbs().maxCoeff()));
    state = dln::step_wpm(state, r.grad, r.gamma);
  }
  EXPECT_LE((tr.final_state.beta - state.beta).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Train, GdLossDecreasesWithConservativeStep) {
  const auto ds = preset(1);
  const Vec ref = bias::min_l1_interpolator(ds);
  const double l1 = ref.lpNorm<1>();
  const double B = l1 * std::log1p(l1 / 0.01);
  auto cfg = config(ds, 0.1, 1.0 / (10 * data::smoothness(ds, ds.n).L * B), ds.n);
  cfg.max_iters = 50000;
  LossTracker t{ds, 0.0};
  dln::train(ds, cfg, t);
  EXPECT_LE(t.worst_increase, 0.0);
}

TEST(Train, AlphaShrinksMonotonically) {
  const auto ds = preset(2);
  auto cfg = config(ds, 0.1, 0.1, 1);
  cfg.max_iters = 2000;
  cfg.record_every = 1;
  const auto tr = dln::train(ds, cfg);
  ASSERT_LE(tr.ledger.max_abs_step, 1.0);
  for (std::size_t k = 1; k < tr.records.size(); ++k)
    EXPECT_TRUE((tr.records[k].ledger.alpha_sq().array() <= tr.records[k - 1].ledger.alpha_sq().array()).all());
}

TEST(Equivalence, ConvergedSgdRunMatchesUvEngine) {
  const auto ds = preset(1);
  auto cfg = config(ds, 0.1, 0.2, 1);
  cfg.stop_loss = 1e-12;
  cfg.max_iters = 5000000;
  const auto rep = dln::check_param_equivalence(ds, cfg);
  ASSERT_EQ(rep.status, RunStatus::Converged);
  EXPECT_LE(rep.max_dev, 1e-10 * rep.max_beta);
}

TEST(Equivalence, OneStepHandCaseIsExact) {
  const auto& ds = data::make_dataset(rows({{1}}), vec({-1}), vec({-1}));
  // g = beta - y = 1 at beta=0, gamma = 0.1 gives beta' = -0.2 in both engines
  auto cfg = config(ds, 1.0, 0.1, 1);
  cfg.max_iters = 1;
  const auto rep = dln::check_param_equivalence(ds, cfg);
  // equal in exact arithmetic; the two products round differently
  EXPECT_LE(rep.max_dev, 4 * std::numeric_limits<double>::epsilon() * 0.2);
  EXPECT_NEAR(rep.max_beta, 0.2, 1e-15);
}
