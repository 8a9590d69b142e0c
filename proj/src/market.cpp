#include "attnlq/market.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <json.hpp>

namespace attnlq {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

struct CsvTable {
  std::vector<std::string> columns;  // without the date column
  std::vector<int> dates;
  Eigen::MatrixXd values;            // percent units as found in the file
};

CsvTable parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  CsvTable table;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (!have_header) {
      if (cells.size() < 2)
        throw std::runtime_error(path + ": header row needs a date column "
                                 "and at least one value column");
      table.columns.assign(cells.begin() + 1, cells.end());
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns.size() + 1)
      throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " +
                               std::to_string(table.columns.size() + 1));
    std::size_t pos = 0;
    int date = 0;
    try {
      date = std::stoi(cells[0], &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != cells[0].size() || date < 100001 || date % 100 < 1 ||
        date % 100 > 12)
      throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                               ": bad YYYYMM date '" + cells[0] + "'");
    std::vector<double> row(table.columns.size());
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
      try {
        row[j] = std::stod(cells[j + 1], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != cells[j + 1].size())
        throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                 ", column '" + table.columns[j] +
                                 "': non-numeric cell '" + cells[j + 1] + "'");
    }
    table.dates.push_back(date);
    rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error(path + ": empty file");
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  for (std::size_t i = 1; i < table.dates.size(); ++i)
    if (table.dates[i] <= table.dates[i - 1])
      throw std::runtime_error(path + ": dates must be strictly increasing");
  table.values.resize(static_cast<long>(rows.size()),
                      static_cast<long>(table.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  return table;
}

int next_month(int yyyymm) {
  const int y = yyyymm / 100, m = yyyymm % 100;
  return m == 12 ? (y + 1) * 100 + 1 : yyyymm + 1;
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean =
      std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1));
}

}  // namespace

void ReturnSeries::validate() const {
  const int T = n_obs();
  if (T < 1) throw std::invalid_argument("empty return series");
  if (factors.rows() != T || assets.rows() != T || riskfree.size() != T)
    throw std::invalid_argument("return series row counts differ");
  for (int i = 1; i < T; ++i) {
    if (dates[i] != next_month(dates[i - 1]))
      throw std::invalid_argument(
          "dates must be consecutive months; gap after " +
          std::to_string(dates[i - 1]));
  }
  const auto check = [](const Eigen::MatrixXd& m, const char* what) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) {
        const double v = m(i, j);
        if (!std::isfinite(v) || std::abs(v) >= 1.0)
          throw std::invalid_argument(
              std::string(what) + " out of range at row " +
              std::to_string(i) + ": " + std::to_string(v));
      }
  };
  check(factors, "factor return");
  check(assets, "asset return");
  check(riskfree.transpose(), "risk-free return");
}

ReturnSeries load_returns(const std::string& factor_file,
                          const std::string& asset_file) {
  const CsvTable ft = parse_csv(factor_file);
  const CsvTable at = parse_csv(asset_file);

  int rf_col = -1;
  std::vector<int> factor_cols;
  for (std::size_t j = 0; j < ft.columns.size(); ++j) {
    if (lower(ft.columns[j]) == "rf")
      rf_col = static_cast<int>(j);
    else
      factor_cols.push_back(static_cast<int>(j));
  }
  if (rf_col < 0)
    throw std::runtime_error(factor_file + ": missing RF column");
  if (factor_cols.empty())
    throw std::runtime_error(factor_file + ": no factor columns");

  ReturnSeries series;
  for (int j : factor_cols) series.factor_names.push_back(ft.columns[j]);
  series.asset_names = at.columns;

  std::vector<int> frows, arows;
  std::size_t i = 0, j = 0;
  while (i < ft.dates.size() && j < at.dates.size()) {
    if (ft.dates[i] == at.dates[j]) {
      series.dates.push_back(ft.dates[i]);
      frows.push_back(static_cast<int>(i));
      arows.push_back(static_cast<int>(j));
      ++i;
      ++j;
    } else if (ft.dates[i] < at.dates[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  series.dropped_rows = static_cast<int>(ft.dates.size() + at.dates.size() -
                                         2 * series.dates.size());
  if (series.dates.empty())
    throw std::runtime_error(factor_file + " and " + asset_file +
                             ": empty date intersection");

  const int T = static_cast<int>(series.dates.size());
  const int k = static_cast<int>(factor_cols.size());
  const int n = static_cast<int>(at.columns.size());
  series.factors.resize(T, k);
  series.assets.resize(T, n);
  series.riskfree.resize(T);
  for (int r = 0; r < T; ++r) {
    for (int c = 0; c < k; ++c)
      series.factors(r, c) = ft.values(frows[r], factor_cols[c]) / 100.0;
    series.riskfree[r] = ft.values(frows[r], rf_col) / 100.0;
    for (int c = 0; c < n; ++c)
      series.assets(r, c) =
          at.values(arows[r], c) / 100.0 - series.riskfree[r];
  }
  series.validate();
  return series;
}

EstimatedParams estimate(const ReturnSeries& series, int start, int end) {
  const int k = static_cast<int>(series.factors.cols());
  const int n = static_cast<int>(series.assets.cols());
  if (start < 0 || end > series.n_obs() || end - start < k + 2)
    throw std::invalid_argument("estimation window needs at least k + 2 rows");
  const int T = end - start;

  const Eigen::MatrixXd F = series.factors.middleRows(start, T);
  const Eigen::MatrixXd B = series.assets.middleRows(start, T);

  Eigen::MatrixXd X(T, k + 1);
  X.col(0).setOnes();
  X.rightCols(k) = F;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < k + 1)
    throw std::runtime_error(
        "rank-deficient factor regressors in estimation window");
  const Eigen::MatrixXd coef = qr.solve(B);  // (k+1) x n
  const Eigen::MatrixXd resid = B - X * coef;

  EstimatedParams p;
  p.c = coef.row(0).transpose();
  p.D = coef.bottomRows(k).transpose();
  p.residual_df = T - k - 1;
  p.sigma_eps = resid.transpose() * resid / static_cast<double>(p.residual_df);

  p.r_squared.resize(n);
  for (int a = 0; a < n; ++a) {
    const double mean = B.col(a).mean();
    const double sst = (B.col(a).array() - mean).square().sum();
    const double ssr = resid.col(a).squaredNorm();
    p.r_squared[a] = sst > 0 ? 1.0 - ssr / sst : 0.0;
  }

  const Eigen::MatrixXd Xf = F.topRows(T - 1);
  const Eigen::MatrixXd Yf = F.bottomRows(T - 1);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qrf(Xf);
  if (qrf.rank() < k)
    throw std::runtime_error(
        "rank-deficient factor history in estimation window");
  const Eigen::MatrixXd Gt = qrf.solve(Yf);  // f_{t+1}' = f_t' Gt
  const Eigen::MatrixXd G = Gt.transpose();
  p.phi = Eigen::MatrixXd::Identity(k, k) - G;
  const Eigen::MatrixXd residf = Yf - Xf * Gt;
  p.sigma_eta = residf.transpose() * residf / static_cast<double>(T - k);

  p.window_start = series.dates[start];
  p.window_end = series.dates[end - 1];
  p.n_obs = T;
  p.stationary =
      Eigen::EigenSolver<Eigen::MatrixXd>(G).eigenvalues().cwiseAbs()
          .maxCoeff() < 1.0;
  return p;
}

LqModel model_from_estimate(const EstimatedParams& params, int horizon,
                            double riskfree_gross,
                            const Eigen::VectorXd& theta) {
  const int n = static_cast<int>(params.c.size());
  const int k = static_cast<int>(params.phi.rows());
  LqModel m;
  m.horizon = horizon;
  m.n_assets = n;
  m.n_factors = k;
  m.riskfree.assign(horizon, riskfree_gross);
  m.cost_A.assign(horizon, Eigen::MatrixXd::Zero(n, n));
  m.cost_p.assign(horizon, Eigen::VectorXd::Zero(n));
  m.cost_q.assign(horizon, 0.0);
  m.terminal_q = 1.0;
  m.loading_c = params.c;
  m.loading_D = params.D;
  m.mean_reversion = params.phi;
  m.factor_noise_cov = 0.5 * (params.sigma_eta + params.sigma_eta.transpose());
  m.asset_noise_cov = 0.5 * (params.sigma_eps + params.sigma_eps.transpose());
  m.attention_efficiency = theta;
  m.validate();
  return m;
}

double sharpe_ratio(double mean_wealth, double std_wealth, double rho0,
                    double x0) {
  if (!(std_wealth > 0))
    throw std::domain_error(
        "sharpe ratio undefined: terminal-wealth standard deviation is zero");
  return (mean_wealth - rho0 * x0) / std_wealth;
}

BacktestReport backtest(const ReturnSeries& series,
                        const BacktestConfig& config) {
  series.validate();
  const int T = config.horizon;
  const int k = static_cast<int>(series.factors.cols());
  const int n = static_cast<int>(series.assets.cols());
  if (T < 1) throw std::invalid_argument("horizon must be >= 1");
  if (config.window_len < k + 2)
    throw std::invalid_argument("window_len too short for estimation");
  if (config.theta.size() != k)
    throw std::invalid_argument("theta must have one entry per factor");

  BacktestReport report;
  report.rho0 = std::pow(config.riskfree_gross, T);
  report.target_d = report.rho0 * config.x0 * (1.0 + config.target_delta);

  std::vector<int> starts;
  for (int s = config.window_len; s + T <= series.n_obs(); ++s) {
    if (series.dates[s] < config.oos_start) continue;
    if (series.dates[s] > config.oos_end) continue;
    starts.push_back(s);
  }
  if (starts.empty())
    throw std::invalid_argument("no admissible episode starts in range");

  std::vector<double> wealth(starts.size(),
                             std::numeric_limits<double>::quiet_NaN());

  parallel_for(starts.size(), config.solver.threads, [&](std::size_t idx) {
    const int s = starts[idx];
    try {
      const EstimatedParams params =
          estimate(series, s - config.window_len, s);
      const LqModel model = model_from_estimate(
          params, T, config.riskfree_gross, config.theta);

      const int nb = config.budget0 > 0 ? config.n_budget : 1;
      GridSpec grids;
      bool stationary_grid = params.stationary;
      if (stationary_grid) {
        try {
          grids = build_grids(model, config.budget0, nb, config.n_factor);
        } catch (const std::exception&) {
          stationary_grid = false;
        }
      }
      if (!stationary_grid) {
        // Non-stationary estimated dynamics: bound the grids by the
        // in-window factor spread instead of the stationary law.
        const Eigen::MatrixXd F =
            series.factors.middleRows(s - config.window_len,
                                      config.window_len);
        std::vector<std::pair<double, double>> bounds;
        for (int j = 0; j < k; ++j) {
          const double mean = F.col(j).mean();
          const double sd = std::sqrt(
              (F.col(j).array() - mean).square().sum() /
              std::max(1, config.window_len - 1));
          bounds.emplace_back(mean - 3.0 * sd, mean + 3.0 * sd);
        }
        grids = make_grid(config.budget0, nb, bounds,
                          std::vector<int>(k, config.n_factor));
      }

      SolverOptions solver = config.solver;
      solver.threads = 1;  // parallelism lives at the window level
      const std::uint64_t solve_seed =
          splitmix64(config.seed ^
                     (0x77696eULL + static_cast<std::uint64_t>(s)));
      const std::vector<PolicyTable> tables = mv_solve(
          model, config.budget0, grids, config.L, solve_seed, solver);

      const Eigen::VectorXd f0 = series.factors.row(s - 1);
      const double h0 = eval_h(tables[0], config.budget0, f0);
      MvContext mv;
      mv.rho = discount_factors(model);
      mv.d = report.target_d;
      mv.mu = mu_star(h0, report.rho0, config.x0, mv.d);

      RealizedPath realized;
      realized.factors = series.factors.middleRows(s, T);
      realized.assets = series.assets.middleRows(s, T);

      RolloutOptions ro;
      ro.inner_samples = config.inner_samples;
      ro.realized = &realized;
      ro.mv = &mv;
      const SeedSpec roll_seed{config.seed,
                               {0x6274ULL, static_cast<std::uint64_t>(s)}};
      const Trajectory tr = rollout(model, tables, config.x0, config.budget0,
                                    f0, roll_seed, ro);
      wealth[idx] = tr.x_path[T];
    } catch (const std::exception&) {
      // singular estimation or degenerate frontier: skip this start
    }
  });

  for (std::size_t idx = 0; idx < starts.size(); ++idx) {
    const int date = series.dates[starts[idx]];
    if (std::isnan(wealth[idx])) {
      report.skipped_dates.push_back(date);
    } else {
      report.start_dates.push_back(date);
      report.terminal_wealths.push_back(wealth[idx]);
    }
  }
  if (report.terminal_wealths.size() < 2)
    throw std::runtime_error("backtest produced fewer than 2 episodes");

  report.mean = std::accumulate(report.terminal_wealths.begin(),
                                report.terminal_wealths.end(), 0.0) /
                static_cast<double>(report.terminal_wealths.size());
  report.stddev = sample_sd(report.terminal_wealths);
  report.sharpe =
      sharpe_ratio(report.mean, report.stddev, report.rho0, config.x0);
  return report;
}

std::string BacktestReport::to_json_string(int indent) const {
  nlohmann::json j;
  j["start_dates"] = start_dates;
  j["terminal_wealths"] = terminal_wealths;
  j["skipped_dates"] = skipped_dates;
  j["mean"] = mean;
  j["stddev"] = stddev;
  j["sharpe"] = sharpe;
  j["rho0"] = rho0;
  j["target_d"] = target_d;
  return j.dump(indent);
}

std::string BacktestReport::wealths_to_csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "start_date,terminal_wealth\n";
  for (std::size_t i = 0; i < start_dates.size(); ++i)
    out << start_dates[i] << ',' << terminal_wealths[i] << '\n';
  return out.str();
}

}  // namespace attnlq
