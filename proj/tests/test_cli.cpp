// End-to-end checks that drive the installed binary through std::system.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attnlq;

namespace {

int run(const std::string& cli_args) {
  const std::string cmd =
      std::string(ATTNLQ_CLI_PATH) + " " + cli_args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path work_dir() {
  const fs::path d = fs::temp_directory_path() / "attnlq_cli_test";
  fs::create_directories(d);
  return d;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
}

// Solves a small problem once; later cases reuse the emitted tables.
fs::path solved_dir() {
  static fs::path dir;
  if (!dir.empty()) return dir;
  dir = work_dir() / "solve_a";
  const fs::path model_path = work_dir() / "model.json";
  attnlq_test::small_multiperiod_model().save(model_path.string());

  json cfg;
  cfg["model"] = model_path.string();
  cfg["budget0"] = 1.0;
  cfg["n_budget"] = 3;
  cfg["n_factor"] = 5;
  cfg["L"] = 300;
  cfg["seed"] = 5;
  const fs::path cfg_path = work_dir() / "solve.json";
  write_json(cfg_path, cfg);

  REQUIRE(run("solve --config " + cfg_path.string() + " --out " +
              dir.string() + " --threads 2") == 0);
  return dir;
}

json tables_config(const fs::path& dir) {
  json cfg;
  cfg["model"] = (work_dir() / "model.json").string();
  json tables = json::array();
  for (int t = 0; t < 3; ++t)
    tables.push_back((dir / ("table_t" + std::to_string(t) + ".json"))
                         .string());
  cfg["tables"] = tables;
  return cfg;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("solve") == 1);  // --config is required
  CHECK(run("solve --config x.json --mode bogus") == 1);
}

TEST_CASE("data errors exit with code 2") {
  CHECK(run("solve --config /nonexistent/cfg.json") == 2);

  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << "{ not json";
  CHECK(run("solve --config " + bad.string()) == 2);

  // model that fails validation: as many factors as assets
  LqModel m = attnlq_test::small_multiperiod_model();
  json cfg;
  cfg["model"] = json::parse(m.to_json_string());
  cfg["model"]["n_factors"] = 2;
  const fs::path cfg_path = work_dir() / "bad_model.json";
  write_json(cfg_path, cfg);
  CHECK(run("solve --config " + cfg_path.string()) == 2);
}

TEST_CASE("solve is deterministic and writes its artifacts") {
  const fs::path a = solved_dir();
  CHECK(fs::exists(a / "resolved_config.json"));
  CHECK(fs::exists(a / "summary.json"));
  const json summary = json::parse(slurp(a / "summary.json"));
  CHECK(summary["h0"].get<double>() > 0.0);
  CHECK(summary["total_attention_at_center"].size() == 3);

  // same seed, different thread count and output directory
  const fs::path b = work_dir() / "solve_b";
  const fs::path cfg_path = work_dir() / "solve.json";
  REQUIRE(run("solve --config " + cfg_path.string() + " --out " + b.string() +
              " --threads 3") == 0);
  for (int t = 0; t < 3; ++t) {
    const std::string name = "table_t" + std::to_string(t) + ".json";
    CHECK(slurp(a / name) == slurp(b / name));
  }

  // a different seed changes the tables
  const fs::path c = work_dir() / "solve_c";
  REQUIRE(run("solve --config " + cfg_path.string() + " --out " + c.string() +
              " --seed 6") == 0);
  CHECK(slurp(a / "table_t0.json") != slurp(c / "table_t0.json"));
  const json resolved = json::parse(slurp(c / "resolved_config.json"));
  CHECK(resolved["seed"].get<int>() == 6);
  CHECK(resolved["command"] == "solve");
}

TEST_CASE("simulate produces a trajectory and a cost report") {
  json cfg = tables_config(solved_dir());
  cfg["budget0"] = 1.0;
  cfg["x0"] = 1.0;
  cfg["episodes"] = 200;
  cfg["inner_samples"] = 128;
  cfg["seed"] = 9;
  const fs::path cfg_path = work_dir() / "simulate.json";
  write_json(cfg_path, cfg);

  const fs::path out = work_dir() / "sim";
  REQUIRE(run("simulate --config " + cfg_path.string() + " --out " +
              out.string() + " --threads 2") == 0);
  const json report = json::parse(slurp(out / "cost_report.json"));
  CHECK(report.contains("mc_cost"));
  CHECK(report.contains("predicted"));
  const std::string csv = slurp(out / "trajectory.csv");
  CHECK(csv.rfind("t,x,budget,", 0) == 0);

  const fs::path out_mv = work_dir() / "sim_mv";
  REQUIRE(run("simulate --config " + cfg_path.string() + " --out " +
              out_mv.string() + " --threads 2 --mode mv") == 0);
  const json mv = json::parse(slurp(out_mv / "cost_report.json"));
  CHECK(mv.contains("mean_terminal_wealth"));
  CHECK(mv.contains("predicted_variance"));
  CHECK(mv["mu_star"].get<double>() < 0.0);
}

TEST_CASE("frontier: anchor target has zero variance, bad target exits 3") {
  const double rho0 = 1.0108389;
  json cfg;
  cfg["h0"] = 0.9;
  cfg["rho0"] = rho0;
  cfg["x0"] = 1.0;
  cfg["targets"] = {rho0, 1.05};
  const fs::path cfg_path = work_dir() / "frontier.json";
  write_json(cfg_path, cfg);
  const fs::path out = work_dir() / "frontier";
  REQUIRE(run("frontier --config " + cfg_path.string() + " --out " +
              out.string()) == 0);
  std::istringstream csv(slurp(out / "frontier.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "target_d,expected_terminal,variance,std");
  std::getline(csv, line);  // anchor row: variance column is exactly zero
  CHECK(line.find(",0,0") != std::string::npos);

  cfg["targets"] = {0.5};  // below the risk-free anchor
  write_json(cfg_path, cfg);
  CHECK(run("frontier --config " + cfg_path.string() + " --out " +
            out.string()) == 3);
}

TEST_CASE("estimate and backtest run against CSV inputs") {
  // synthetic percent-unit files, 30 consecutive months
  std::ostringstream fcsv, acsv;
  fcsv << "date,F1,RF\n";
  acsv << "date,A1,A2\n";
  NormalStream rng(SeedSpec{123, {0x637376ULL}});
  int date = 202001;
  double f = 0.0;
  for (int t = 0; t < 30; ++t) {
    f = 0.9 * f + 0.05 * rng.normal();
    const double a1 = 0.4 + 80.0 * f + 3.0 * rng.normal();
    const double a2 = 0.2 + 50.0 * f + 3.0 * rng.normal();
    fcsv << date << ',' << 100.0 * f << ",0.36\n";
    acsv << date << ',' << a1 << ',' << a2 << '\n';
    const int y = date / 100, m = date % 100;
    date = m == 12 ? (y + 1) * 100 + 1 : date + 1;
  }
  const fs::path ff = work_dir() / "factors.csv";
  const fs::path af = work_dir() / "assets.csv";
  std::ofstream(ff) << fcsv.str();
  std::ofstream(af) << acsv.str();

  json ecfg;
  ecfg["factor_file"] = ff.string();
  ecfg["asset_file"] = af.string();
  const fs::path ecfg_path = work_dir() / "estimate.json";
  write_json(ecfg_path, ecfg);
  const fs::path eout = work_dir() / "est";
  REQUIRE(run("estimate --config " + ecfg_path.string() + " --out " +
              eout.string()) == 0);
  const json params = json::parse(slurp(eout / "params.json"));
  CHECK(params["n_obs"].get<int>() == 30);
  CHECK(params["D"].size() == 2);

  json bcfg = ecfg;
  bcfg["horizon"] = 2;
  bcfg["window_len"] = 20;
  bcfg["budget0"] = 0.5;
  bcfg["n_budget"] = 2;
  bcfg["n_factor"] = 3;
  bcfg["L"] = 150;
  bcfg["inner_samples"] = 128;
  bcfg["seed"] = 11;
  const fs::path bcfg_path = work_dir() / "backtest.json";
  write_json(bcfg_path, bcfg);
  const fs::path bout = work_dir() / "bt";
  REQUIRE(run("backtest --config " + bcfg_path.string() + " --out " +
              bout.string() + " --threads 2") == 0);
  const json report = json::parse(slurp(bout / "backtest.json"));
  CHECK(report["terminal_wealths"].size() +
            report["skipped_dates"].size() == 9);
  CHECK(slurp(bout / "terminal_wealths.csv")
            .rfind("start_date,terminal_wealth\n", 0) == 0);
}

TEST_CASE("inspect evaluates tables and writes requested cases") {
  json cfg = tables_config(solved_dir());
  cfg["budget"] = 1.0;
  json c0;
  c0["label"] = "up";
  c0["f"] = {0.1};
  c0["budget"] = 1.0;
  cfg["cases"] = json::array({c0});
  const fs::path cfg_path = work_dir() / "inspect.json";
  write_json(cfg_path, cfg);
  const fs::path out = work_dir() / "inspect";
  REQUIRE(run("inspect --config " + cfg_path.string() + " --out " +
              out.string()) == 0);
  std::istringstream csv(slurp(out / "cases.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "case,period,lambda0,total");
  int rows = 0;
  while (std::getline(csv, line)) {
    CHECK(line.rfind("up,", 0) == 0);
    ++rows;
  }
  CHECK(rows == 3);
}
