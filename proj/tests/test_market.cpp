#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "support.hpp"

using namespace attnlq;

namespace {

std::filesystem::path write_temp(const std::string& name,
                                 const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << body;
  return path;
}

int next_month(int yyyymm) {
  const int y = yyyymm / 100, m = yyyymm % 100;
  return m == 12 ? (y + 1) * 100 + 1 : yyyymm + 1;
}

// Synthetic k=1, n=2 market generated from the ground-truth model
// b = c + D f + eps, f' = (1 - phi) f + eta.
ReturnSeries synthetic_series(int T, std::uint64_t seed, double c0 = 0.004,
                              double c1 = 0.002, double d0 = 0.8,
                              double d1 = 0.5, double phi = 0.1,
                              double sd_eta = 0.05, double sd_eps = 0.03) {
  NormalStream rng(SeedSpec{seed, {0x6d6bULL}});
  ReturnSeries s;
  s.factor_names = {"F1"};
  s.asset_names = {"A1", "A2"};
  s.factors.resize(T, 1);
  s.assets.resize(T, 2);
  s.riskfree = Eigen::VectorXd::Constant(T, 0.0036);
  double f = 0.0;
  int date = 199001;
  for (int t = 0; t < T; ++t) {
    f = (1.0 - phi) * f + sd_eta * rng.normal();
    s.factors(t, 0) = f;
    s.assets(t, 0) = c0 + d0 * f + sd_eps * rng.normal();
    s.assets(t, 1) = c1 + d1 * f + sd_eps * rng.normal();
    s.dates.push_back(date);
    date = next_month(date);
  }
  return s;
}

}  // namespace

TEST_CASE("CSV loading: units, alignment, dropped rows") {
  const auto ff = write_temp("attnlq_f.csv",
                             "date,Mkt-RF,SMB,HML,RF\n"
                             "192606, 1.00, 0.50, 0.25, 0.20\n"
                             "192607, 2.96, -2.56, -2.43, 0.22\n"
                             "192608, 2.64, -1.17, 3.82, 0.25\n"
                             "192609, 0.36, -1.40, 0.13, 0.23\n");
  const auto af = write_temp("attnlq_a.csv",
                             "date,Cnsmr,Manuf\n"
                             "192607, 5.43, 2.73\n"
                             "192608, 3.90, 2.26\n"
                             "192609, 1.53, 0.23\n"
                             "192610, 0.50, 0.40\n");
  const ReturnSeries s = load_returns(ff.string(), af.string());
  REQUIRE(s.n_obs() == 3);
  CHECK(s.dates == std::vector<int>({192607, 192608, 192609}));
  CHECK(s.dropped_rows == 2);
  REQUIRE(s.factors.cols() == 3);
  CHECK(s.factors(0, 0) == doctest::Approx(0.0296));
  CHECK(s.factors(0, 1) == doctest::Approx(-0.0256));
  CHECK(s.factors(0, 2) == doctest::Approx(-0.0243));
  CHECK(s.riskfree[0] == doctest::Approx(0.0022));
  // asset columns become excess returns
  CHECK(s.assets(0, 0) == doctest::Approx(0.0543 - 0.0022));
  CHECK(s.assets(2, 1) == doctest::Approx(0.0023 - 0.0023));
  CHECK(s.factor_names == std::vector<std::string>({"Mkt-RF", "SMB", "HML"}));
  CHECK(s.asset_names == std::vector<std::string>({"Cnsmr", "Manuf"}));
}

TEST_CASE("CSV loading: malformed inputs are reported with context") {
  const auto good_assets = write_temp("attnlq_a2.csv",
                                      "date,A\n192607, 1.0\n");
  const auto empty = write_temp("attnlq_f2.csv", "date,Mkt-RF,RF\n");
  try {
    load_returns(empty.string(), good_assets.string());
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("no data rows") != std::string::npos);
  }

  const auto bad_cell = write_temp("attnlq_f3.csv",
                                   "date,Mkt-RF,RF\n"
                                   "192607, oops, 0.22\n");
  try {
    load_returns(bad_cell.string(), good_assets.string());
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("Mkt-RF") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }

  const auto no_rf = write_temp("attnlq_f4.csv",
                                "date,Mkt-RF\n192607, 2.96\n");
  try {
    load_returns(no_rf.string(), good_assets.string());
    FAIL("expected a missing-RF error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("RF") != std::string::npos);
  }

  const auto bad_date = write_temp("attnlq_f5.csv",
                                   "date,Mkt-RF,RF\n"
                                   "192613, 2.96, 0.22\n");
  CHECK_THROWS_AS(load_returns(bad_date.string(), good_assets.string()),
                  std::runtime_error);
}

TEST_CASE("estimation recovers a noiseless model exactly") {
  const int T = 30;
  ReturnSeries s;
  s.factor_names = {"F1"};
  s.asset_names = {"A1", "A2"};
  s.factors.resize(T, 1);
  s.assets.resize(T, 2);
  s.riskfree = Eigen::VectorXd::Zero(T);
  double f = 0.1;
  int date = 200001;
  for (int t = 0; t < T; ++t) {
    f *= 0.8;  // phi = 0.2, no innovation
    s.factors(t, 0) = f;
    s.assets(t, 0) = 0.004 + 0.8 * f;
    s.assets(t, 1) = 0.002 + 0.5 * f;
    s.dates.push_back(date);
    date = next_month(date);
  }
  const EstimatedParams p = estimate(s, 0, T);
  CHECK(p.c[0] == doctest::Approx(0.004).epsilon(1e-10));
  CHECK(p.c[1] == doctest::Approx(0.002).epsilon(1e-10));
  CHECK(p.D(0, 0) == doctest::Approx(0.8).epsilon(1e-10));
  CHECK(p.D(1, 0) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(p.phi(0, 0) == doctest::Approx(0.2).epsilon(1e-10));
  CHECK(p.sigma_eps.cwiseAbs().maxCoeff() < 1e-20);
  CHECK(p.sigma_eta(0, 0) < 1e-20);
  CHECK(p.r_squared.minCoeff() == doctest::Approx(1.0));
  CHECK(p.n_obs == T);
  CHECK(p.residual_df == T - 2);
  CHECK(p.window_start == 200001);
  CHECK(p.stationary);
}

TEST_CASE("estimation recovers a noisy model within standard errors") {
  const int T = 10000;
  const double phi = 0.1, sd_eta = 0.05, sd_eps = 0.03;
  const ReturnSeries s = synthetic_series(T, 42, 0.004, 0.002, 0.8, 0.5,
                                          phi, sd_eta, sd_eps);
  const EstimatedParams p = estimate(s, 0, T);
  const double sd_f = sd_eta / std::sqrt(1.0 - (1.0 - phi) * (1.0 - phi));
  const double rt = std::sqrt(static_cast<double>(T));
  CHECK(std::abs(p.c[0] - 0.004) < 4.0 * sd_eps / rt);
  CHECK(std::abs(p.c[1] - 0.002) < 4.0 * sd_eps / rt);
  CHECK(std::abs(p.D(0, 0) - 0.8) < 4.0 * sd_eps / (sd_f * rt));
  CHECK(std::abs(p.D(1, 0) - 0.5) < 4.0 * sd_eps / (sd_f * rt));
  CHECK(std::abs(p.phi(0, 0) - phi) < 4.0 * sd_eta / (sd_f * rt));
  CHECK(p.sigma_eps(0, 0) ==
        doctest::Approx(sd_eps * sd_eps).epsilon(0.1));
  CHECK(p.sigma_eta(0, 0) == doctest::Approx(sd_eta * sd_eta).epsilon(0.1));
  CHECK(std::abs(p.sigma_eps(0, 1)) < 4.0 * sd_eps * sd_eps / rt);
  CHECK(p.stationary);
}

TEST_CASE("estimation is unbiased over replications") {
  const int reps = 200, T = 400;
  std::vector<double> d_hat;
  for (int r = 0; r < reps; ++r) {
    const ReturnSeries s =
        synthetic_series(T, 1000 + static_cast<std::uint64_t>(r));
    d_hat.push_back(estimate(s, 0, T).D(0, 0));
  }
  const double mean = attnlq_test::mean_of(d_hat);
  const double se =
      attnlq_test::sd_of(d_hat) / std::sqrt(static_cast<double>(reps));
  CHECK(std::abs(mean - 0.8) < 2.0 * se);
}

TEST_CASE("degenerate windows are rejected") {
  ReturnSeries s = synthetic_series(50, 7);
  CHECK_THROWS_AS(estimate(s, 0, 2), std::invalid_argument);

  s.factors.setConstant(0.01);  // intercept column becomes collinear
  try {
    estimate(s, 0, 50);
    FAIL("expected a rank-deficiency error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("rank-deficient") != std::string::npos);
  }
}

TEST_CASE("estimated parameters produce a valid model") {
  const ReturnSeries s = synthetic_series(600, 77);
  const EstimatedParams p = estimate(s, 0, 600);
  const LqModel m = model_from_estimate(p, 3, 1.0036,
                                        Eigen::VectorXd::Constant(1, 0.69));
  CHECK(m.horizon == 3);
  CHECK(m.n_assets == 2);
  CHECK(m.n_factors == 1);
  CHECK(m.terminal_q == 1.0);
  CHECK(m.cost_A[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.riskfree == std::vector<double>(3, 1.0036));
}

TEST_CASE("sharpe statistic reproduces the published values") {
  const double rho0 = 1.0036 * 1.0036 * 1.0036;
  CHECK(sharpe_ratio(1.0648, 0.2177, rho0) ==
        doctest::Approx(0.2479).epsilon(2e-3));
  CHECK(std::abs(sharpe_ratio(1.0648, 0.2177, rho0) - 0.2477) < 1e-3);
  CHECK(sharpe_ratio(1.0848, 0.2694, rho0) ==
        doctest::Approx(0.2745).epsilon(2e-3));
  CHECK(std::abs(sharpe_ratio(1.0848, 0.2694, rho0) - 0.2744) < 1e-3);
  CHECK_THROWS_AS(sharpe_ratio(1.05, 0.0, rho0), std::domain_error);
}

TEST_CASE("backtest runs and is deterministic") {
  const ReturnSeries s = synthetic_series(36, 5);
  BacktestConfig cfg;
  cfg.horizon = 2;
  cfg.window_len = 24;
  cfg.budget0 = 0.5;
  cfg.theta = Eigen::VectorXd::Constant(1, 0.69);
  cfg.n_budget = 2;
  cfg.n_factor = 3;
  cfg.L = 200;
  cfg.inner_samples = 128;
  cfg.seed = 31;
  cfg.solver.threads = 2;
  const BacktestReport a = backtest(s, cfg);
  // starts run monthly from the first full window to the last full episode
  CHECK(a.start_dates.size() + a.skipped_dates.size() == 11);
  CHECK(a.rho0 == doctest::Approx(1.0036 * 1.0036));
  CHECK(a.target_d == doctest::Approx(a.rho0 * 1.05));
  for (double w : a.terminal_wealths) CHECK(std::isfinite(w));

  const BacktestReport b = backtest(s, cfg);
  CHECK(a.to_json_string() == b.to_json_string());
  BacktestConfig cfg4 = cfg;
  cfg4.solver.threads = 4;
  const BacktestReport c = backtest(s, cfg4);
  CHECK(a.to_json_string() == c.to_json_string());

  const std::string csv = a.wealths_to_csv();
  CHECK(csv.rfind("start_date,terminal_wealth\n", 0) == 0);
}
