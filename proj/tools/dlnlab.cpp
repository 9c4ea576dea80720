#include <CLI11.hpp>

#include <dlnlab/analysis.hpp>
#include <dlnlab/bias_solver.hpp>
#include <dlnlab/concentration.hpp>
#include <dlnlab/io.hpp>
#include <dlnlab/md_identity.hpp>
#include <dlnlab/parallel.hpp>
#include <dlnlab/train.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

using namespace dlnlab;
namespace fs = std::filesystem;
using io::Config;
using io::json;
using io::KeySpec;
using io::Schema;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kDiverged = 10,
  kMaxIters = 11,
  kSolverFailed = 12,
  kVerdictFail = 13,
  kInternal = 1,
};

int exit_for(dln::RunStatus s) {
  switch (s) {
    case dln::RunStatus::Converged: return kOk;
    case dln::RunStatus::Diverged: return kDiverged;
    case dln::RunStatus::MaxIters: return kMaxIters;
  }
  return kInternal;
}

int exit_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::DimensionMismatch: return kUsage;
    case ErrorKind::Io: return kIo;
    case ErrorKind::NonInvertiblePotential:
    case ErrorKind::NewtonStalled:
    case ErrorKind::SingularJacobian:
    case ErrorKind::Infeasible:
    case ErrorKind::Unbounded: return kSolverFailed;
    case ErrorKind::GridDiverged: return kDiverged;
    case ErrorKind::NoConvergedRuns: return kMaxIters;
    case ErrorKind::InvariantViolation: return kInternal;
  }
  return kInternal;
}

bool is_flag(const KeySpec& k) { return k.def == "false" || k.def == "true"; }

std::string dashed(std::string s) {
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + p.string() + ": " + ec.message());
}

void write_json(const fs::path& p, const json& j) { io::write_file(p, j.dump(2) + "\n"); }

// Writes the resolved config next to the outputs and returns its hash.
std::string echo_config(const fs::path& dir, const Config& cfg) {
  io::write_file(dir / "config.txt", io::print_config(cfg));
  return io::config_hash(cfg);
}

std::string csv_header(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

std::string num(double x) { return io::fmt17(x); }

Vec alpha_vec(const Config& c, int d) {
  const double a = c.num("alpha");
  require(a > 0.0 && std::isfinite(a), ErrorKind::InvalidArgument, "alpha must be positive");
  return Vec::Constant(d, a);
}

int batch_of(const Config& c, const data::Dataset& ds) {
  const long long b = c.integer("b");
  const int bb = b <= 0 ? ds.n : static_cast<int>(b);
  require(bb >= 1 && bb <= ds.n, ErrorKind::InvalidArgument, "b must lie in [1, n] (0 = n)");
  return bb;
}

struct Preset {
  int n, d, s;
  double mean, sigma, truth_scale, alpha;
};

Preset preset_of(const std::string& name) {
  if (name == "paper") return {20, 30, 3, 0.0, 1.0, 0.1, 0.1};
  if (name == "uncentered") return {20, 30, 3, 5.0, 1.0, 0.1, 0.1};
  throw Error(ErrorKind::InvalidArgument, "unknown preset '" + name + "' (paper, uncentered)");
}

data::Dataset dataset_for(const Config& c) {
  if (!c.str("data").empty()) return io::read_dataset(c.str("data"));
  const Preset p = preset_of(c.str("preset"));
  return data::make_gaussian_dataset(p.n, p.d, p.s, p.mean, p.sigma, p.truth_scale, RngStream::data(c.u64("seed")));
}

// "log:a:b:k", "lin:a:b:k" or a comma list.
std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  auto to_d = [](const std::string& t) {
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || *end != '\0') throw Error(ErrorKind::InvalidArgument, "bad grid value '" + t + "'");
    return v;
  };
  if (spec.rfind("log:", 0) == 0 || spec.rfind("lin:", 0) == 0) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : spec.substr(4)) {
      if (ch == ':') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    parts.push_back(cur);
    if (parts.size() != 3) throw Error(ErrorKind::InvalidArgument, "grid spec needs kind:lo:hi:count");
    const double a = to_d(parts[0]), b = to_d(parts[1]);
    const int k = static_cast<int>(to_d(parts[2]));
    require(k >= 1 && a > 0.0 && b >= a, ErrorKind::InvalidArgument, "grid needs 0 < lo <= hi and count >= 1");
    const bool lg = spec[1] == 'o';
    for (int i = 0; i < k; ++i) {
      const double t = k == 1 ? 0.0 : static_cast<double>(i) / (k - 1);
      out.push_back(lg ? a * std::pow(b / a, t) : a + (b - a) * t);
    }
  } else {
    std::string cur;
    for (char ch : spec + ",") {
      if (ch == ',') {
        if (!cur.empty()) out.push_back(to_d(cur));
        cur.clear();
      } else {
        cur += ch;
      }
    }
  }
  require(!out.empty(), ErrorKind::InvalidArgument, "empty grid");
  std::sort(out.begin(), out.end());
  return out;
}

double step_size(const Config& c, const data::Dataset& ds, int b, const Vec& alpha, const Vec& l1ref) {
  if (c.flag("gamma_auto")) return dln::default_stepsize(ds, b, alpha, l1ref, c.num("c"));
  const double g = c.num("gamma");
  require(g > 0.0, ErrorKind::InvalidArgument, "give --gamma > 0 or --gamma-auto");
  return g;
}

// ---- commands ----

const Schema kGenerate = {
    {"n", "20", "number of samples"},
    {"d", "30", "dimension"},
    {"s", "3", "support size of the sparse truth"},
    {"mean", "0", "mean of every input coordinate"},
    {"sigma", "1", "input standard deviation"},
    {"truth_scale", "0.1", "magnitude of the nonzero truth entries"},
    {"seed", "0", "data seed"},
    {"out", "dataset.txt", "output dataset file"},
};

int cmd_generate(const Config& c) {
  const auto ds = data::make_gaussian_dataset(static_cast<int>(c.integer("n")), static_cast<int>(c.integer("d")),
                                              static_cast<int>(c.integer("s")), c.num("mean"), c.num("sigma"),
                                              c.num("truth_scale"), RngStream::data(c.u64("seed")));
  const fs::path out = c.str("out");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  io::write_dataset(out, ds);
  io::write_file(out.string() + ".config", io::print_config(c));
  std::cout << "wrote " << out.string() << " (n=" << ds.n << ", d=" << ds.d << ")\n";
  return kOk;
}

const Schema kTrain = {
    {"data", "", "dataset file"},
    {"out", "run", "output directory"},
    {"alpha", "0.1", "initialisation scale"},
    {"gamma", "0", "constant step size"},
    {"gamma_auto", "false", "use the default step size c/(L B)"},
    {"c", "0.015625", "constant of the default step size"},
    {"b", "1", "batch size (0 = full batch)"},
    {"seed", "0", "batch seed"},
    {"max_iters", "100000000", "iteration budget"},
    {"stop_loss", "1e-14", "stop once the loss is at most this"},
    {"diverge_factor", "1e8", "divergence when loss exceeds this times the initial loss"},
    {"record_every", "1000", "trajectory stride (0 = none)"},
    {"record_prefix", "0", "record every step below this index"},
    {"with_beta", "false", "add beta columns to the trajectory CSV"},
    {"md_every_step", "false", "check the mirror identity on every step (slower)"},
};

int cmd_train(const Config& c) {
  require(!c.str("data").empty(), ErrorKind::InvalidArgument, "--data is required");
  const auto ds = io::read_dataset(c.str("data"));
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const int b = batch_of(c, ds);
  dln::TrainConfig cfg;
  cfg.alpha = alpha_vec(c, ds.d);
  cfg.b = b;
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const double gamma = step_size(c, ds, b, cfg.alpha, l1ref);
  cfg.gamma = dln::StepSchedule::constant(gamma);
  cfg.seed = c.u64("seed");
  cfg.max_iters = c.integer("max_iters");
  cfg.stop_loss = c.num("stop_loss");
  cfg.diverge_factor = c.num("diverge_factor");
  cfg.record_every = c.integer("record_every");
  cfg.record_prefix = c.integer("record_prefix");
  cfg.assert_step_guard = false;

  mirror::MdIdentityMonitor mon;
  dln::NullObserver none;
  const bool stream = c.flag("md_every_step");
  const dln::Trajectory tr = stream ? dln::train(ds, cfg, mon) : dln::train(ds, cfg, none);
  const double md = stream ? mon.max_residual() : mirror::verify_md_identity(tr);

  const std::string hash = echo_config(dir, c);
  io::write_dataset(dir / "dataset.txt", ds);
  io::write_file(dir / "trajectory.csv", io::trajectory_csv(tr, ds, c.flag("with_beta"), hash));
  json led = io::ledger_json(tr);
  led["gamma"] = gamma;
  led["b"] = b;
  led["md_residual"] = md;
  write_json(dir / "ledger.json", led);
  json sum;
  sum["config_hash"] = hash;
  sum["status"] = dln::to_string(tr.status);
  sum["gamma"] = gamma;
  sum["gamma_auto"] = c.flag("gamma_auto");
  sum["iterations"] = tr.iterations;
  sum["final_loss"] = tr.final_loss;
  sum["md_residual"] = md;
  sum["md_checked_every_step"] = stream;
  sum["max_abs_step"] = tr.ledger.max_abs_step;
  write_json(dir / "summary.json", sum);
  std::cout << "status " << dln::to_string(tr.status) << "  gamma " << num(gamma) << "  iterations "
            << tr.iterations << "  loss " << num(tr.final_loss) << "  md_residual " << num(md) << "\n";
  std::cerr << "elapsed " << tr.seconds << " s\n";
  return exit_for(tr.status);
}

const Schema kVerify = {
    {"run", "run", "run directory written by train"},
    {"tol", "0", "tolerance on |beta_trained - beta_solver|_inf (0 = 1e-6 |beta*|_inf)"},
};

int cmd_verify_bias(const Config& c) {
  const fs::path dir = c.str("run");
  const auto ds = io::read_dataset(dir / "dataset.txt");
  json led;
  try {
    led = json::parse(io::read_file(dir / "ledger.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("bad ledger.json: ") + e.what());
  }
  require(led.value("status", "") == "Converged" && led.contains("alpha_inf") && led.contains("phi_inf"),
          ErrorKind::InvalidArgument, "run did not converge; no limits to verify");
  bias::BiasProblem p;
  p.ds = &ds;
  p.alpha_inf = io::vec_from_json(led["alpha_inf"]);
  p.phi_inf = io::vec_from_json(led["phi_inf"]);
  const Vec beta = io::vec_from_json(led["beta"]);
  require(beta.size() == ds.d, ErrorKind::DimensionMismatch, "ledger beta size");
  const bias::BiasSolution sol = bias::solve_implicit_bias(p);
  const double ref = ds.sparse_truth ? ds.sparse_truth->cwiseAbs().maxCoeff() : beta.cwiseAbs().maxCoeff();
  const double tol = c.num("tol") > 0.0 ? c.num("tol") : 1e-6 * ref;
  const double gap = (beta - sol.beta_star).cwiseAbs().maxCoeff();
  const bool pass = gap <= tol;
  json v;
  v["gap_linf"] = gap;
  v["tol"] = tol;
  v["verdict"] = pass ? "PASS" : "FAIL";
  v["newton_iterations"] = sol.iterations;
  v["kkt_residual"] = sol.kkt_residual;
  v["interp_residual"] = sol.interp_residual;
  v["beta_solver"] = io::to_json(sol.beta_star);
  write_json(dir / "verdict.json", v);
  const auto m = bias::solution_metrics(sol.beta_star, ds, bias::min_l1_interpolator(ds));
  json so;
  so["beta"] = io::to_json(sol.beta_star);
  so["dual"] = io::to_json(sol.dual);
  so["kkt_residual"] = sol.kkt_residual;
  so["interp_residual"] = sol.interp_residual;
  so["l1_norm"] = m.l1_norm;
  so["dist_l1ref"] = m.dist_l1ref;
  write_json(dir / "solution.json", so);
  std::cout << (pass ? "PASS" : "FAIL") << "  gap " << num(gap) << "  tol " << num(tol) << "\n";
  return pass ? kOk : kVerdictFail;
}

const Schema kScan = {
    {"data", "", "dataset file (empty = preset)"},
    {"preset", "paper", "preset when no dataset is given (paper, uncentered)"},
    {"out", "scan", "output directory"},
    {"alpha", "0.1", "initialisation scale"},
    {"b", "1", "batch size (0 = full batch)"},
    {"seed", "0", "data seed for presets and batch seed"},
    {"grid", "log:0.01:1:9", "step sizes: log:lo:hi:count, lin:lo:hi:count or a comma list"},
    {"grid_units", "tilde", "grid unit: abs, gmax (default step) or tilde (located gamma_tilde_max)"},
    {"c", "0.015625", "constant of the default step size"},
    {"max_iters", "2000000", "iteration budget per run"},
    {"stop_loss", "1e-14", "stop once the loss is at most this"},
    {"probe_iters", "100000", "divergence budget for the bisection probes"},
    {"rel_tol", "1e-3", "relative tolerance of the bisection"},
    {"flatness", "false", "report lambda_max of the Hessian of F per run"},
    {"workers", "1", "parallel runs"},
};

dln::TrainConfig scan_base(const Config& c, const data::Dataset& ds) {
  dln::TrainConfig cfg;
  cfg.alpha = alpha_vec(c, ds.d);
  cfg.b = batch_of(c, ds);
  cfg.seed = c.u64("seed");
  cfg.max_iters = c.integer("max_iters");
  cfg.stop_loss = c.num("stop_loss");
  cfg.record_every = 0;
  cfg.assert_step_guard = false;
  return cfg;
}

analysis::EosOptions eos_options(const Config& c) {
  analysis::EosOptions o;
  o.probe_iters = c.integer("probe_iters");
  o.rel_tol = c.num("rel_tol");
  o.workers = static_cast<int>(c.integer("workers"));
  require(o.probe_iters >= 1 && o.rel_tol > 0.0, ErrorKind::InvalidArgument, "probe_iters and rel_tol must be positive");
  return o;
}

int cmd_scan(const Config& c) {
  const auto ds = dataset_for(c);
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const auto base = scan_base(c, ds);
  auto opt = eos_options(c);
  opt.with_flatness = c.flag("flatness");
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const double gmax = dln::default_stepsize(ds, base.b, base.alpha, l1ref, c.num("c"));
  std::vector<double> grid = parse_grid(c.str("grid"));
  const std::string units = c.str("grid_units");
  double unit = 1.0, located = analysis::kNaN;
  if (units == "gmax") {
    unit = gmax;
  } else if (units == "tilde") {
    located = analysis::find_gamma_tilde_max(ds, base, gmax, opt);
    unit = located;
  } else {
    require(units == "abs", ErrorKind::InvalidArgument, "grid_units must be abs, gmax or tilde");
  }
  for (auto& g : grid) g *= unit;
  const auto res = analysis::eos_scan(ds, base, grid, opt);
  const std::string hash = echo_config(dir, c);
  std::string csv = csv_header(hash) + "gamma,gamma_over_gmax,status,iterations,dist_l1,dist_sparse,gain_l1,oscillation,flatness_lmax\n";
  for (const auto& e : res.entries)
    csv += num(e.gamma) + ',' + num(e.gamma / gmax) + ',' + dln::to_string(e.status) + ',' + std::to_string(e.iterations) +
           ',' + num(e.dist_l1) + ',' + num(e.dist_sparse) + ',' + num(e.gain_l1) + ',' + num(e.oscillation) + ',' +
           num(e.flatness_lmax) + '\n';
  io::write_file(dir / "scan.csv", csv);
  json s;
  s["config_hash"] = hash;
  s["gamma_max"] = gmax;
  s["gamma_tilde_max"] = std::isfinite(res.gamma_tilde_max) ? json(res.gamma_tilde_max) : json(located);
  s["bracketed_in_grid"] = std::isfinite(res.gamma_tilde_max);
  s["bisection_probes"] = res.probes;
  write_json(dir / "summary.json", s);
  std::cout << "gamma_max " << num(gmax) << "  gamma_tilde_max " << num(s["gamma_tilde_max"].get<double>()) << "\n";
  return kOk;
}

const Schema kGain = {
    {"data", "", "dataset file (empty = preset)"},
    {"preset", "paper", "preset when no dataset is given"},
    {"out", "gain", "output directory"},
    {"alpha", "0.1", "initialisation scale"},
    {"b", "1", "batch size (0 = full batch)"},
    {"seed", "0", "data seed for presets; batch seeds are seed+1..seed+runs"},
    {"runs", "20", "number of batch seeds (1 for full batch)"},
    {"gamma", "0", "constant step size"},
    {"gamma_auto", "false", "use the default step size c/(L B)"},
    {"c", "0.015625", "constant of the default step size"},
    {"max_iters", "100000000", "iteration budget per run"},
    {"stop_loss", "1e-14", "stop once the loss is at most this"},
    {"workers", "1", "parallel runs"},
};

int cmd_gain(const Config& c) {
  const auto ds = dataset_for(c);
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const int b = batch_of(c, ds);
  dln::TrainConfig cfg;
  cfg.alpha = alpha_vec(c, ds.d);
  cfg.b = b;
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const double gamma = step_size(c, ds, b, cfg.alpha, l1ref);
  cfg.gamma = dln::StepSchedule::constant(gamma);
  cfg.max_iters = c.integer("max_iters");
  cfg.stop_loss = c.num("stop_loss");
  cfg.record_every = 0;
  cfg.track_loss_sum = true;
  const int runs = b == ds.n ? 1 : static_cast<int>(c.integer("runs"));
  require(runs >= 1, ErrorKind::InvalidArgument, "runs must be positive");
  std::vector<dln::Trajectory> trs(runs);
  parallel_for(runs, static_cast<int>(c.integer("workers")), [&](std::size_t i) {
    dln::TrainConfig ci = cfg;
    ci.seed = c.u64("seed") + 1 + i;
    trs[i] = dln::train(ds, ci);
  });
  std::vector<analysis::GainSample> samples;
  Vec mean_gain = Vec::Zero(ds.d);
  const std::string hash = echo_config(dir, c);
  std::string csv = csv_header(hash) + "seed,status,iterations,S,gain_l1,max_abs_step\n";
  for (int i = 0; i < runs; ++i) {
    const auto& tr = trs[i];
    const auto gs = analysis::gain_sample(tr);
    csv += std::to_string(c.u64("seed") + 1 + i) + ',' + dln::to_string(tr.status) + ',' + std::to_string(tr.iterations) +
           ',' + num(gs.S) + ',' + num(gs.G) + ',' + num(gs.max_abs_step) + '\n';
    if (tr.status == dln::RunStatus::Converged) {
      samples.push_back(gs);
      mean_gain += tr.ledger.gain();
    }
  }
  io::write_file(dir / "runs.csv", csv);
  require(!samples.empty(), ErrorKind::NoConvergedRuns, "no converged runs");
  mean_gain /= static_cast<double>(samples.size());
  std::string shape = csv_header(hash) + "j,truth,gain\n";
  for (int j = 0; j < ds.d; ++j)
    shape += std::to_string(j) + ',' + num(ds.sparse_truth ? (*ds.sparse_truth)(j) : 0.0) + ',' + num(mean_gain(j)) + '\n';
  io::write_file(dir / "gain_shape.csv", shape);
  const auto r = analysis::gain_bounds_check(samples, ds, b);
  json s;
  s["config_hash"] = hash;
  s["gamma"] = gamma;
  s["b"] = b;
  s["converged_runs"] = r.runs;
  s["lambda_b"] = r.lambda_b;
  s["Lambda_b"] = r.Lambda_b;
  s["S_mean"] = r.S_mean;
  s["S_se"] = r.S_se;
  s["gain_l1_mean"] = r.G_mean;
  s["gain_l1_se"] = r.G_se;
  s["max_abs_step"] = r.max_abs_step;
  s["sandwich_holds"] = r.holds;
  s["displayed_sandwich_holds"] = r.holds_displayed;
  write_json(dir / "summary.json", s);
  std::cout << "lambda_b S " << num(r.lambda_b * r.S_mean) << "  gain " << num(r.G_mean) << "  4 Lambda_b S "
            << num(4.0 * r.Lambda_b * r.S_mean) << "  " << (r.holds ? "holds" : "violated") << "\n";
  return kOk;
}

const Schema kShape = {
    {"data", "", "dataset file (empty = preset)"},
    {"preset", "paper", "preset when no dataset is given"},
    {"seed", "0", "data seed for presets"},
    {"out", "shape", "output directory"},
};

int cmd_shape(const Config& c) {
  const auto ds = dataset_for(c);
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const auto r = analysis::init_gradient_shape(ds);
  const std::string hash = echo_config(dir, c);
  std::string csv = csv_header(hash) + "j,truth,grad_sq_gd,grad_sq_sgd\n";
  for (int j = 0; j < ds.d; ++j)
    csv += std::to_string(j) + ',' + num((*ds.sparse_truth)(j)) + ',' + num(r.grad_sq_gd(j)) + ',' + num(r.grad_sq_sgd(j)) + '\n';
  io::write_file(dir / "shape.csv", csv);
  json s;
  s["config_hash"] = hash;
  s["centered"] = r.centered;
  s["ratio_gd"] = r.ratio_gd;
  s["ratio_sgd"] = r.ratio_sgd;
  s["within_expected"] = r.within_expected;
  write_json(dir / "summary.json", s);
  std::cout << "on/off-support ratio  gd " << num(r.ratio_gd) << "  sgd " << num(r.ratio_sgd) << "\n";
  return kOk;
}

const Schema kConc = {
    {"lemma", "rip", "rip, rip-uncentered, ripsgd, ripsgd-uncentered or htilde"},
    {"trials", "100", "fresh datasets"},
    {"seed", "0", "bench seed"},
    {"out", "conc", "output directory"},
    {"n", "", "samples (empty = lemma default)"},
    {"d", "", "dimension (empty = lemma default)"},
    {"s", "", "sparsity (empty = lemma default)"},
    {"eps", "", "rip tolerance (empty = lemma default)"},
    {"C", "", "constant in n = C s ln(d) / eps^2 (empty = lemma default)"},
    {"mean", "", "input mean (empty = lemma default)"},
    {"sigma", "", "input standard deviation (empty = lemma default)"},
    {"c_lo", "", "lower constant (empty = lemma default)"},
    {"c_hi", "", "upper constant (empty = lemma default)"},
    {"band", "", "ripsgd band half-width (empty = lemma default)"},
};

int cmd_conc(const Config& c) {
  auto p = conc::default_params(conc::lemma_from_string(c.str("lemma")));
  auto opt_i = [&](const char* k, int& v) {
    if (!c.str(k).empty()) v = static_cast<int>(c.integer(k));
  };
  auto opt_d = [&](const char* k, double& v) {
    if (!c.str(k).empty()) v = c.num(k);
  };
  opt_i("n", p.n);
  opt_i("d", p.d);
  opt_i("s", p.s);
  opt_d("eps", p.eps);
  opt_d("C", p.C);
  opt_d("mean", p.mean);
  opt_d("sigma", p.sigma);
  opt_d("c_lo", p.c_lo);
  opt_d("c_hi", p.c_hi);
  opt_d("band", p.band);
  p.trials = static_cast<int>(c.integer("trials"));
  p.seed = c.u64("seed");
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const auto r = conc::concentration_bench(p);
  const std::string hash = echo_config(dir, c);
  json j;
  j["config_hash"] = hash;
  j["lemma"] = conc::to_string(r.lemma);
  j["n"] = r.n;
  j["d"] = r.d;
  j["s"] = r.s;
  j["trials"] = r.trials;
  j["warnings"] = r.warnings;
  j["inequalities"] = json::array();
  for (const auto& st : r.stats) {
    j["inequalities"].push_back({{"name", st.name},
                                 {"failures", st.failures},
                                 {"frequency", st.frequency},
                                 {"worst", st.worst},
                                 {"threshold", st.threshold},
                                 {"kind", st.upper ? "<=" : ">="}});
    std::cout << st.name << "  failures " << st.failures << "/" << r.trials << "  worst " << num(st.worst) << "\n";
  }
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  write_json(dir / "conc.json", j);
  return kOk;
}

const Schema kFigures = {
    {"which", "fig1", "fig1 (distance vs step size), fig2 (gain shape), fig3 (EoS traces)"},
    {"data", "", "dataset file (empty = preset)"},
    {"preset", "paper", "preset when no dataset is given"},
    {"seed", "0", "data and batch seed"},
    {"out", "figures", "output directory"},
    {"alpha", "0.1", "initialisation scale"},
    {"points", "9", "fig1: step sizes per series"},
    {"lo", "0.01", "fig1: smallest step as a fraction of gamma_tilde_max"},
    {"hi", "0.95", "fig1: largest step as a fraction of gamma_tilde_max"},
    {"frac", "0.5", "fig2/fig3: step as a fraction of gamma_tilde_max"},
    {"steps", "2000", "fig3: traced steps"},
    {"max_iters", "2000000", "iteration budget per run"},
    {"stop_loss", "1e-14", "stop once the loss is at most this"},
    {"probe_iters", "100000", "divergence budget for the bisection probes"},
    {"rel_tol", "1e-3", "relative tolerance of the bisection"},
    {"workers", "1", "parallel runs"},
};

struct Series {
  std::string name;
  int b;
};

class TraceWriter {
 public:
  TraceWriter(std::string* out, std::string name, std::vector<int> cols, std::int64_t steps)
      : out_(out), name_(std::move(name)), cols_(std::move(cols)), steps_(steps) {}
  void on_start(const Vec&, const mirror::MirrorLedger&) {}
  void on_step(const dln::StepEvent& e) {
    if (e.k >= steps_) return;
    *out_ += name_ + ',' + std::to_string(e.k + 1);
    for (int j : cols_) *out_ += ',' + io::fmt17(e.beta[j]);
    *out_ += '\n';
  }

 private:
  std::string* out_;
  std::string name_;
  std::vector<int> cols_;
  std::int64_t steps_;
};

int cmd_figures(const Config& c) {
  const auto ds = dataset_for(c);
  const fs::path dir = c.str("out");
  ensure_dir(dir);
  const std::string which = c.str("which");
  dln::TrainConfig base;
  base.alpha = alpha_vec(c, ds.d);
  base.seed = c.u64("seed");
  base.max_iters = c.integer("max_iters");
  base.stop_loss = c.num("stop_loss");
  base.record_every = 0;
  base.assert_step_guard = false;
  analysis::EosOptions opt;
  opt.probe_iters = c.integer("probe_iters");
  opt.rel_tol = c.num("rel_tol");
  opt.workers = static_cast<int>(c.integer("workers"));
  const Vec l1ref = bias::min_l1_interpolator(ds);
  const std::vector<Series> series = {{"sgd", 1}, {"gd", ds.n}};
  std::map<std::string, double> tilde;
  for (const auto& s : series) {
    dln::TrainConfig cfg = base;
    cfg.b = s.b;
    tilde[s.name] = analysis::find_gamma_tilde_max(ds, cfg, dln::default_stepsize(ds, s.b, base.alpha, l1ref), opt);
  }
  const std::string hash = echo_config(dir, c);
  std::string csv = csv_header(hash);
  if (which == "fig1") {
    const int k = static_cast<int>(c.integer("points"));
    const double lo = c.num("lo"), hi = c.num("hi");
    require(k >= 2 && lo > 0.0 && hi > lo, ErrorKind::InvalidArgument, "need points >= 2 and 0 < lo < hi");
    csv += "series,gamma,gamma_over_tilde,status,dist_l1,dist_sparse,gain_l1,oscillation\n";
    for (const auto& s : series) {
      dln::TrainConfig cfg = base;
      cfg.b = s.b;
      std::vector<double> grid;
      for (int i = 0; i < k; ++i) grid.push_back(tilde[s.name] * lo * std::pow(hi / lo, static_cast<double>(i) / (k - 1)));
      const auto res = analysis::eos_scan(ds, cfg, grid, opt);
      for (const auto& e : res.entries)
        csv += s.name + ',' + num(e.gamma) + ',' + num(e.gamma / tilde[s.name]) + ',' + dln::to_string(e.status) + ',' +
               num(e.dist_l1) + ',' + num(e.dist_sparse) + ',' + num(e.gain_l1) + ',' + num(e.oscillation) + '\n';
    }
  } else if (which == "fig2") {
    const auto shape = analysis::init_gradient_shape(ds);
    std::vector<Vec> gains(series.size());
    parallel_for(series.size(), opt.workers, [&](std::size_t i) {
      dln::TrainConfig cfg = base;
      cfg.b = series[i].b;
      cfg.gamma = dln::StepSchedule::constant(c.num("frac") * tilde[series[i].name]);
      gains[i] = dln::train(ds, cfg).ledger.gain();
    });
    csv += "j,truth,gain_sgd,gain_gd,grad_sq_gd,grad_sq_sgd\n";
    for (int j = 0; j < ds.d; ++j)
      csv += std::to_string(j) + ',' + num((*ds.sparse_truth)(j)) + ',' + num(gains[0](j)) + ',' + num(gains[1](j)) + ',' +
             num(shape.grad_sq_gd(j)) + ',' + num(shape.grad_sq_sgd(j)) + '\n';
  } else if (which == "fig3") {
    std::vector<int> cols = analysis::truth_support(ds);
    for (int j = 0; j < ds.d; ++j)
      if (std::find(cols.begin(), cols.end(), j) == cols.end()) {
        cols.push_back(j);
        break;
      }
    csv += "series,k";
    for (int j : cols) csv += ",beta_" + std::to_string(j);
    csv += '\n';
    for (const auto& s : series) {
      dln::TrainConfig cfg = base;
      cfg.b = s.b;
      cfg.gamma = dln::StepSchedule::constant(c.num("frac") * tilde[s.name]);
      cfg.max_iters = c.integer("steps");
      TraceWriter tw(&csv, s.name, cols, cfg.max_iters);
      dln::train(ds, cfg, tw);
    }
  } else {
    throw Error(ErrorKind::InvalidArgument, "which must be fig1, fig2 or fig3");
  }
  io::write_file(dir / (which + ".csv"), csv);
  json s;
  s["config_hash"] = hash;
  s["gamma_tilde_max_sgd"] = tilde["sgd"];
  s["gamma_tilde_max_gd"] = tilde["gd"];
  write_json(dir / (which + "_summary.json"), s);
  std::cout << "wrote " << (dir / (which + ".csv")).string() << "\n";
  return kOk;
}

struct Command {
  const char* name;
  const char* help;
  const Schema* schema;
  int (*run)(const Config&);
};

const Command kCommands[] = {
    {"generate", "Write a Gaussian sparse-regression dataset", &kGenerate, cmd_generate},
    {"train", "Train a diagonal linear network and write trajectory and ledger", &kTrain, cmd_train},
    {"verify-bias", "Compare a converged run with the implicit-bias solver", &kVerify, cmd_verify_bias},
    {"scan", "Step-size scan with gamma_tilde_max bisection", &kScan, cmd_scan},
    {"gain", "Gain magnitude against the spectral sandwich", &kGain, cmd_gain},
    {"shape", "Squared gradient shape at initialisation", &kShape, cmd_shape},
    {"conc", "Concentration benches", &kConc, cmd_conc},
    {"figures", "Plot-ready data series", &kFigures, cmd_figures},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagonal linear network experiments"};
  app.require_subcommand(1);
  struct Bound {
    const Command* cmd;
    CLI::App* sub;
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> flags;
  };
  std::vector<Bound> bound(std::size(kCommands));
  for (std::size_t i = 0; i < std::size(kCommands); ++i) {
    Bound& b = bound[i];
    b.cmd = &kCommands[i];
    b.sub = app.add_subcommand(b.cmd->name, b.cmd->help);
    b.sub->add_option("--config", b.config_file, "key=value config file; flags override it");
    for (const auto& k : *b.cmd->schema) {
      const std::string help = k.help + " [" + k.key + (k.def.empty() ? "" : ", default " + k.def) + "]";
      if (is_flag(k)) b.sub->add_flag("--" + dashed(k.key), b.flags[k.key], help);
      else b.sub->add_option("--" + dashed(k.key), b.values[k.key], help);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  for (auto& b : bound) {
    if (!b.sub->parsed()) continue;
    try {
      Config cfg(*b.cmd->schema);
      if (!b.config_file.empty()) cfg = io::parse_config(io::read_file(b.config_file), cfg);
      for (const auto& k : *b.cmd->schema) {
        const std::string flag = "--" + dashed(k.key);
        if (b.sub->count(flag) == 0) continue;
        cfg.set(k.key, is_flag(k) ? (b.flags[k.key] ? "true" : "false") : b.values[k.key]);
      }
      return b.cmd->run(cfg);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_for(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kInternal;
    }
  }
  return kUsage;
}
