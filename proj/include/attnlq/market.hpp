#pragma once

#include "attnlq/meanvariance.hpp"

namespace attnlq {

/// Aligned monthly return history. Asset returns are in excess of the
/// risk-free rate; all values are decimals (percent inputs / 100).
struct ReturnSeries {
  std::vector<int> dates;     // YYYYMM, strictly increasing, consecutive
  Eigen::MatrixXd factors;    // T_obs x k
  Eigen::MatrixXd assets;     // T_obs x n, excess returns
  Eigen::VectorXd riskfree;   // T_obs
  std::vector<std::string> factor_names;
  std::vector<std::string> asset_names;
  int dropped_rows = 0;       // dates present in only one input file

  int n_obs() const { return static_cast<int>(dates.size()); }
  void validate() const;
};

/// Reads and aligns the two CSV files. The factor file must carry an RF
/// column; every other non-date column is a factor (a market column named
/// Mkt-RF/MKT is already an excess return and is used as-is). Rows are
/// matched on the YYYYMM date column; unmatched rows are dropped and
/// counted. Asset excess returns are asset - RF.
ReturnSeries load_returns(const std::string& factor_file,
                          const std::string& asset_file);

struct EstimatedParams {
  Eigen::VectorXd c;          // n
  Eigen::MatrixXd D;          // n x k
  Eigen::MatrixXd sigma_eps;  // n x n
  Eigen::MatrixXd phi;        // k x k
  Eigen::MatrixXd sigma_eta;  // k x k

  int window_start = 0;       // YYYYMM of first window row
  int window_end = 0;         // YYYYMM of last window row
  int n_obs = 0;
  int residual_df = 0;
  Eigen::VectorXd r_squared;  // per asset
  bool stationary = true;     // spectral radius of I - Phi < 1 (warning flag)
};

/// OLS of excess returns on contemporaneous factors with intercept
/// (rows of c, D; Sigma_eps with denominator T - k - 1) and a VAR(1)
/// without intercept for the factors (Phi = I - G; Sigma_eta with
/// denominator T - k). Window is the half-open row range [start, end).
EstimatedParams estimate(const ReturnSeries& series, int start, int end);

/// Builds the LQ model used by the backtest from estimated parameters:
/// constant risk-free gross return, zero stage costs, terminal weight 1.
LqModel model_from_estimate(const EstimatedParams& params, int horizon,
                            double riskfree_gross,
                            const Eigen::VectorXd& theta);

struct BacktestConfig {
  int horizon = 3;             // T months per episode
  int window_len = 120;        // trailing estimation window, months
  double budget0 = 3.0;        // attention budget per episode
  Eigen::VectorXd theta;       // attention efficiency, size k
  double riskfree_gross = 1.0036;
  int n_budget = 13;
  int n_factor = 7;            // points per factor grid
  int L = 2000;                // DP sample size
  std::uint64_t seed = 0;
  double target_delta = 0.05;  // d = rho_0 x_0 (1 + delta)
  double x0 = 1.0;
  int oos_start = 0;           // first admissible episode start, YYYYMM
  int oos_end = 999912;        // last admissible episode start, YYYYMM
  int inner_samples = 2048;    // rollout moment batch
  SolverOptions solver;
};

struct BacktestReport {
  std::vector<int> start_dates;
  std::vector<double> terminal_wealths;
  std::vector<int> skipped_dates;
  double mean = 0.0;
  double stddev = 0.0;
  double sharpe = 0.0;
  double rho0 = 0.0;
  double target_d = 0.0;

  std::string to_json_string(int indent = 2) const;
  std::string wealths_to_csv() const;
};

/// Rolling-window out-of-sample backtest: for each admissible start month,
/// estimate on the trailing window, solve the mean-variance DP, and roll
/// the policy forward against the realized factor/asset path. Episodes
/// start every month and overlap. Starts with singular estimation or a
/// degenerate frontier are skipped and reported.
BacktestReport backtest(const ReturnSeries& series,
                        const BacktestConfig& config);

/// sharpe = (mean terminal wealth - rho_0 x_0) / std. Throws on zero std.
double sharpe_ratio(double mean_wealth, double std_wealth, double rho0,
                    double x0 = 1.0);

}  // namespace attnlq
