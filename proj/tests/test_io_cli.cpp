#include <gtest/gtest.h>

#include <dlnlab/io.hpp>
#include <dlnlab/train.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "support.hpp"

using namespace dlnlab;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dlnlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DLNLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(DatasetIo, RoundTripIsBitExact) {
  const auto ds = preset(7);
  const auto back = io::parse_dataset(io::format_dataset(ds));
  EXPECT_EQ(back.raw_rows, ds.raw_rows);
  EXPECT_EQ(back.raw_y, ds.raw_y);
  EXPECT_EQ(*back.sparse_truth, *ds.sparse_truth);
  EXPECT_EQ(back.meta.seed, ds.meta.seed);
  EXPECT_EQ(io::format_dataset(back), io::format_dataset(ds));
  const auto plain = data::make_dataset(rows({{0.1, 1.0 / 3}}), vec({M_PI}));
  const auto pb = io::parse_dataset(io::format_dataset(plain));
  EXPECT_FALSE(pb.sparse_truth.has_value());
  EXPECT_EQ(pb.raw_rows, plain.raw_rows);
}

TEST(DatasetIo, RejectsMalformedText) {
  const std::string good = io::format_dataset(data::make_dataset(rows({{1, 2}}), vec({3})));
  EXPECT_NO_THROW(io::parse_dataset(good));
  for (const std::string& bad : {std::string("x"), good.substr(0, good.size() / 2), good + "7\n",
                                std::string("1 2 0 0 1 0\n1 zz\n3\n-\n")}) {
    try {
      io::parse_dataset(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
  }
  EXPECT_THROW(io::read_dataset("/nonexistent/dir/ds.txt"), Error);
}

TEST(ConfigIo, RoundTripAndErrors) {
  const io::Schema schema = {{"alpha", "0.1", ""}, {"b", "1", ""}, {"with_beta", "false", ""}};
  auto cfg = io::parse_config("# comment\nalpha = 0.5\n\nb=4\n", schema);
  EXPECT_EQ(cfg.num("alpha"), 0.5);
  EXPECT_EQ(cfg.integer("b"), 4);
  EXPECT_FALSE(cfg.flag("with_beta"));
  EXPECT_EQ(io::parse_config(io::print_config(cfg), schema), cfg);
  EXPECT_EQ(io::config_hash(io::parse_config(io::print_config(cfg), schema)), io::config_hash(cfg));
  EXPECT_NE(io::config_hash(cfg), io::config_hash(io::Config(schema)));
  EXPECT_THROW(io::parse_config("gamma=1\n", schema), Error);
  EXPECT_THROW(io::parse_config("alpha\n", schema), Error);
  cfg.set("b", "1e6");
  EXPECT_EQ(cfg.integer("b"), 1000000);
  cfg.set("b", "2.5");
  EXPECT_THROW(cfg.integer("b"), Error);
  cfg.set("alpha", "abc");
  EXPECT_THROW(cfg.num("alpha"), Error);
}

TEST(TrajectoryCsv, HeaderColumnsAndFinalRow) {
  const auto ds = preset();
  dln::TrainConfig cfg;
  cfg.alpha = Vec::Constant(ds.d, 0.1);
  cfg.gamma = dln::StepSchedule::constant(0.1);
  cfg.max_iters = 25;
  cfg.record_every = 10;
  const auto tr = dln::train(ds, cfg);
  const std::string csv = io::trajectory_csv(tr, ds, true, "abc");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# config_hash=abc");
  std::getline(in, line);
  EXPECT_EQ(line, "# status=MaxIters");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("k,loss,gain_l1,alpha_min,alpha_max,phi_linf,beta_0,", 0), 0u);
  std::vector<std::string> ks;
  while (std::getline(in, line)) {
    ks.push_back(line.substr(0, line.find(',')));
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5 + ds.d);
  }
  EXPECT_EQ(ks, (std::vector<std::string>{"0", "10", "20", "25"}));
}

TEST(LedgerJson, FieldsAndLimits) {
  const auto ds = data::make_dataset(rows({{1, 0.5}}), vec({1}));
  dln::TrainConfig cfg;
  cfg.alpha = Vec::Constant(2, 0.3);
  cfg.gamma = dln::StepSchedule::constant(0.2);
  cfg.stop_loss = 1e-20;
  const auto tr = dln::train(ds, cfg);
  ASSERT_EQ(tr.status, dln::RunStatus::Converged);
  const auto j = io::ledger_json(tr);
  for (const char* k : {"alpha0", "sum_qplus", "sum_qminus", "sum_grad", "gain", "alpha_inf", "beta_tilde0"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(io::vec_from_json(j["sum_qplus"]), tr.ledger.sum_qplus);
  const auto back = io::vec_from_json(io::json::parse(j.dump())["gain"]);
  EXPECT_EQ(back, tr.ledger.gain());
}

TEST(Cli, GenerateTrainVerifyAndExitCodes) {
  const fs::path dir = scratch("cli");
  const std::string data = (dir / "ds.txt").string();
  ASSERT_EQ(run_cli("generate --n 6 --d 10 --s 2 --seed 3 --out " + data), 0);
  const std::string first = io::read_file(data);
  ASSERT_EQ(run_cli("generate --n 6 --d 10 --s 2 --seed 3 --out " + data), 0);
  EXPECT_EQ(io::read_file(data), first);

  const std::string run = (dir / "run").string();
  ASSERT_EQ(run_cli("train --data " + data + " --out " + run + " --alpha 0.1 --gamma 0.5 --b 0 --stop-loss 1e-20"), 0);
  for (const char* f : {"config.txt", "dataset.txt", "trajectory.csv", "ledger.json", "summary.json"})
    EXPECT_TRUE(fs::exists(fs::path(run) / f)) << f;
  EXPECT_EQ(run_cli("verify-bias --run " + run), 0);
  const auto sol = io::json::parse(io::read_file(fs::path(run) / "solution.json"));
  for (const char* k : {"beta", "dual", "kkt_residual", "interp_residual", "l1_norm", "dist_l1ref"})
    EXPECT_TRUE(sol.contains(k)) << k;

  // config file replays the run, flags override it
  const std::string run2 = (dir / "run2").string();
  ASSERT_EQ(run_cli("train --config " + run + "/config.txt --out " + run2), 0);
  EXPECT_EQ(io::read_file(fs::path(run2) / "ledger.json"), io::read_file(fs::path(run) / "ledger.json"));

  auto led = io::json::parse(io::read_file(fs::path(run) / "ledger.json"));
  led["beta"][0] = led["beta"][0].get<double>() + 1e-3;
  io::write_file(fs::path(run) / "ledger.json", led.dump());
  EXPECT_EQ(run_cli("verify-bias --run " + run), 13);

  EXPECT_EQ(run_cli("train --data " + data + " --out " + run + " --gamma 50 --b 0"), 10);
  EXPECT_EQ(run_cli("train --data " + data + " --out " + run + " --gamma 0.01 --max-iters 5"), 11);
  EXPECT_EQ(run_cli("train --data " + data + " --bogus 1"), 2);
  EXPECT_EQ(run_cli("train --data " + data + " --alpha -1"), 2);
  EXPECT_EQ(run_cli("train --data " + (dir / "missing.txt").string()), 3);
  io::write_file(dir / "bad.cfg", "nonsense_key=1\n");
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.cfg").string()), 2);
  EXPECT_EQ(run_cli("conc --lemma htilde --trials 2 --out " + (dir / "conc").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "conc" / "conc.json"));
  fs::remove_all(dir);
}
