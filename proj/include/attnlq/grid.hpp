#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnlq/model.hpp"

namespace attnlq {

/// Grids over (budget, factors) for one DP period. Budget grid spans
/// [0, budget0]; factor grids are symmetric about the stationary mean.
struct GridSpec {
  Eigen::VectorXd budget_grid;               // N ascending, [0, budget0]
  std::vector<Eigen::VectorXd> factor_grids; // k grids, ascending

  int n_budget() const { return static_cast<int>(budget_grid.size()); }
  int n_factor_dims() const { return static_cast<int>(factor_grids.size()); }
  std::size_t factor_cells() const;
  std::size_t n_cells() const { return factor_cells() * budget_grid.size(); }

  /// Factor coordinates of flattened factor index (row-major over grids).
  Eigen::VectorXd factor_point(std::size_t flat_index) const;

  void validate() const;
};

/// Stationary covariance of the factor process: the fixed point of
/// S = (I-Phi) S (I-Phi)' + Sigma_eta. Throws if the spectral radius of
/// (I-Phi) is >= 1 (no stationary distribution; supply explicit bounds).
Eigen::MatrixXd stationary_factor_cov(const LqModel& model);

/// Uniform budget grid on [0, budget0], uniform factor grids on the
/// stationary mean +- 3 stationary standard deviations.
GridSpec build_grids(const LqModel& model, double budget0, int n_budget,
                     const std::vector<int>& n_factor);
GridSpec build_grids(const LqModel& model, double budget0, int n_budget,
                     int n_factor);

/// Grid with explicit per-factor bounds (used when the factor process has
/// no stationary distribution or bounds come from data).
GridSpec make_grid(double budget0, int n_budget,
                   const std::vector<std::pair<double, double>>& factor_bounds,
                   const std::vector<int>& n_factor);

/// Per-cell solver diagnostics kept alongside the tabulated values.
struct CellDiagnostics {
  double objective = 0.0;
  double std_err = 0.0;
  int iterations = 0;
  int start_index = -1;  // multistart winner
};

/// Tabulated value coefficients h and optimal attention vectors for one
/// period, flattened row-major with the budget index outermost.
struct PolicyTable {
  int period = 0;
  GridSpec grid;
  std::vector<double> h;            // n_cells values, all > 0
  std::vector<double> lambda_star;  // k values per cell
  std::vector<CellDiagnostics> diagnostics;
  std::uint64_t seed = 0;
  int sample_count = 0;             // L
  std::string solver_options;       // JSON blob of the options used

  int k() const { return grid.n_factor_dims(); }

  void validate() const;
  std::string to_json_string(int indent = -1) const;
  static PolicyTable from_json_string(const std::string& text);
  void save(const std::string& path) const;
  static PolicyTable load(const std::string& path);
};

/// Multilinear interpolation of h over the (1+k)-dimensional grid.
/// Queries outside the hull are clamped componentwise.
double eval_h(const PolicyTable& table, double budget,
              const Eigen::VectorXd& f);

/// Interpolated attention vector, projected back onto the feasible set
/// {lambda >= 0, sum(lambda) <= budget}.
Eigen::VectorXd eval_lambda_star(const PolicyTable& table, double budget,
                                 const Eigen::VectorXd& f);

/// Multilinear interpolation over the factor grids only, for a flat value
/// array in row-major factor order. `x` is clamped to the hull.
double interp_factors(const std::vector<Eigen::VectorXd>& grids,
                      const double* values, const double* x);

/// Next-period value function: either the terminal constant or an
/// interpolated policy table.
class ValueFunction {
 public:
  static ValueFunction constant(double value);
  static ValueFunction from_table(const PolicyTable& table);

  bool is_constant() const { return table_ == nullptr; }
  double constant_value() const { return constant_; }
  const PolicyTable* table() const { return table_; }

  double operator()(double budget, const Eigen::VectorXd& f) const;

  /// Blends the budget dimension once at a fixed budget, leaving a flat
  /// array over the factor grids (the hot path of the DP objective).
  std::vector<double> budget_slice(double budget) const;

 private:
  double constant_ = 0.0;
  const PolicyTable* table_ = nullptr;
};

}  // namespace attnlq
