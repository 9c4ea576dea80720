// Train SGD on a small sparse regression problem and compare with the implicit-bias solver.
#include <dlnlab/bias_solver.hpp>
#include <dlnlab/mirror.hpp>
#include <dlnlab/train.hpp>

#include <cstdio>

using namespace dlnlab;

int main() {
  const auto ds = data::make_gaussian_dataset(20, 30, 3, 0.0, 1.0, 0.1, RngStream::data(1));

  dln::TrainConfig cfg;
  cfg.alpha = Vec::Constant(ds.d, 0.1);
  cfg.b = 1;
  cfg.seed = 1;
  cfg.max_iters = 10'000'000;
  cfg.stop_loss = 1e-16;
  const Vec l1 = bias::min_l1_interpolator(ds);
  // 64x the conservative default keeps this demo under a second
  cfg.gamma = dln::StepSchedule::constant(64.0 * dln::default_stepsize(ds, cfg.b, cfg.alpha, l1));

  const auto tr = dln::train(ds, cfg);
  std::printf("%s after %lld steps, loss %.3g\n", dln::to_string(tr.status), static_cast<long long>(tr.iterations),
              tr.final_loss);
  if (tr.status != dln::RunStatus::Converged) return 1;

  const auto pot = mirror::ledger_potential(tr.ledger);
  bias::BiasProblem p;
  p.ds = &ds;
  p.alpha_inf = pot.alpha;
  p.phi_inf = pot.phi;
  const auto sol = bias::solve_implicit_bias(p);

  std::printf("|gain|_1             %.4g\n", tr.ledger.gain().lpNorm<1>());
  std::printf("|beta - solver|_inf  %.3g\n", (tr.final_state.beta - sol.beta_star).cwiseAbs().maxCoeff());
  std::printf("|beta - l1 min|_1    %.4g\n", (tr.final_state.beta - l1).lpNorm<1>());
  std::printf("|beta - truth|_2     %.4g\n", (tr.final_state.beta - *ds.sparse_truth).norm());
  return 0;
}
