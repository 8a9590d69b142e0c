#include "attnlq/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace attnlq {
namespace {

using nlohmann::json;

Eigen::VectorXd uniform_grid(double lo, double hi, int count) {
  if (count < 2) throw std::invalid_argument("grid needs at least 2 points");
  Eigen::VectorXd g(count);
  for (int i = 0; i < count; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
  return g;
}

// Lower index and upper weight for clamped interpolation along one axis.
inline void locate(const Eigen::VectorXd& grid, double x, int& lo, double& w) {
  const int n = static_cast<int>(grid.size());
  if (n == 1 || x <= grid[0]) {
    lo = 0;
    w = 0.0;
    return;
  }
  if (x >= grid[n - 1]) {
    lo = n - 2;
    w = 1.0;
    return;
  }
  int i = 0;
  while (x >= grid[i + 1]) ++i;
  lo = i;
  w = (x - grid[i]) / (grid[i + 1] - grid[i]);
}

}  // namespace

std::size_t GridSpec::factor_cells() const {
  std::size_t n = 1;
  for (const auto& g : factor_grids) n *= g.size();
  return n;
}

Eigen::VectorXd GridSpec::factor_point(std::size_t flat_index) const {
  const int k = n_factor_dims();
  Eigen::VectorXd f(k);
  for (int d = k - 1; d >= 0; --d) {
    const std::size_t m = factor_grids[d].size();
    f[d] = factor_grids[d][flat_index % m];
    flat_index /= m;
  }
  return f;
}

void GridSpec::validate() const {
  if (budget_grid.size() < 1) throw std::invalid_argument("empty budget grid");
  if (std::abs(budget_grid[0]) > 1e-12)
    throw std::invalid_argument("budget grid must start at 0");
  for (int i = 0; i + 1 < budget_grid.size(); ++i)
    if (budget_grid[i + 1] <= budget_grid[i])
      throw std::invalid_argument("budget grid must be strictly increasing");
  for (const auto& g : factor_grids) {
    if (g.size() < 1) throw std::invalid_argument("empty factor grid");
    for (int i = 0; i + 1 < g.size(); ++i)
      if (g[i + 1] <= g[i])
        throw std::invalid_argument("factor grid must be strictly increasing");
  }
}

Eigen::MatrixXd stationary_factor_cov(const LqModel& model) {
  const int k = model.n_factors;
  const Eigen::MatrixXd rev =
      Eigen::MatrixXd::Identity(k, k) - model.mean_reversion;
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(rev)
                                   .eigenvalues();
  if (eig.cwiseAbs().maxCoeff() >= 1.0 - 1e-12)
    throw std::invalid_argument(
        "factor process has no stationary distribution (spectral radius of "
        "I - Phi >= 1); supply explicit factor bounds");

  Eigen::MatrixXd cov = model.factor_noise_cov;
  for (int iter = 0; iter < 100000; ++iter) {
    Eigen::MatrixXd next =
        rev * cov * rev.transpose() + model.factor_noise_cov;
    const double delta = (next - cov).cwiseAbs().maxCoeff();
    cov = std::move(next);
    if (delta < 1e-12) return cov;
  }
  throw std::runtime_error("stationary covariance iteration did not converge");
}

GridSpec make_grid(double budget0, int n_budget,
                   const std::vector<std::pair<double, double>>& factor_bounds,
                   const std::vector<int>& n_factor) {
  if (budget0 < 0) throw std::invalid_argument("budget0 must be >= 0");
  if (factor_bounds.size() != n_factor.size())
    throw std::invalid_argument("factor bounds/count mismatch");

  GridSpec spec;
  if (n_budget == 1) {
    if (budget0 != 0)
      throw std::invalid_argument(
          "single-point budget grid is only valid with budget0 = 0");
    spec.budget_grid = Eigen::VectorXd::Zero(1);
  } else {
    if (budget0 <= 0)
      throw std::invalid_argument("budget0 must be > 0 for multi-point grid");
    spec.budget_grid = uniform_grid(0.0, budget0, n_budget);
  }
  for (std::size_t j = 0; j < n_factor.size(); ++j)
    spec.factor_grids.push_back(
        uniform_grid(factor_bounds[j].first, factor_bounds[j].second,
                     n_factor[j]));
  spec.validate();
  return spec;
}

GridSpec build_grids(const LqModel& model, double budget0, int n_budget,
                     const std::vector<int>& n_factor) {
  if (static_cast<int>(n_factor.size()) != model.n_factors)
    throw std::invalid_argument("one factor grid count per factor required");
  const Eigen::MatrixXd cov = stationary_factor_cov(model);
  std::vector<std::pair<double, double>> bounds;
  for (int j = 0; j < model.n_factors; ++j) {
    const double sd = std::sqrt(cov(j, j));
    bounds.emplace_back(-3.0 * sd, 3.0 * sd);
  }
  return make_grid(budget0, n_budget, bounds, n_factor);
}

GridSpec build_grids(const LqModel& model, double budget0, int n_budget,
                     int n_factor) {
  return build_grids(model, budget0, n_budget,
                     std::vector<int>(model.n_factors, n_factor));
}

void PolicyTable::validate() const {
  grid.validate();
  const std::size_t cells = grid.n_cells();
  if (h.size() != cells) throw std::invalid_argument("h size mismatch");
  if (lambda_star.size() != cells * static_cast<std::size_t>(k()))
    throw std::invalid_argument("lambda_star size mismatch");
  for (double v : h)
    if (!(v > 0)) throw std::invalid_argument("tabulated h must be positive");

  const std::size_t fc = grid.factor_cells();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double budget = grid.budget_grid[cell / fc];
    double sum = 0.0;
    for (int j = 0; j < k(); ++j) {
      const double l = lambda_star[cell * k() + j];
      if (l < 0) throw std::invalid_argument("stored lambda must be >= 0");
      sum += l;
    }
    if (sum > budget + 1e-9)
      throw std::invalid_argument("stored lambda exceeds cell budget");
  }
}

double interp_factors(const std::vector<Eigen::VectorXd>& grids,
                      const double* values, const double* x) {
  const int d = static_cast<int>(grids.size());
  int lo[8];
  double w[8];
  std::size_t stride[8];
  std::size_t s = 1;
  for (int i = d - 1; i >= 0; --i) {
    stride[i] = s;
    s *= grids[i].size();
    locate(grids[i], x[i], lo[i], w[i]);
  }
  double acc = 0.0;
  const int corners = 1 << d;
  for (int mask = 0; mask < corners; ++mask) {
    double weight = 1.0;
    std::size_t idx = 0;
    for (int i = 0; i < d; ++i) {
      const int bit = (mask >> i) & 1;
      weight *= bit ? w[i] : 1.0 - w[i];
      idx += (lo[i] + bit) * stride[i];
    }
    if (weight != 0.0) acc += weight * values[idx];
  }
  return acc;
}

double eval_h(const PolicyTable& table, double budget,
              const Eigen::VectorXd& f) {
  const auto slice = ValueFunction::from_table(table).budget_slice(budget);
  return interp_factors(table.grid.factor_grids, slice.data(), f.data());
}

ValueFunction ValueFunction::constant(double value) {
  ValueFunction v;
  v.constant_ = value;
  return v;
}

ValueFunction ValueFunction::from_table(const PolicyTable& table) {
  ValueFunction v;
  v.table_ = &table;
  return v;
}

double ValueFunction::operator()(double budget,
                                 const Eigen::VectorXd& f) const {
  if (is_constant()) return constant_;
  const auto slice = budget_slice(budget);
  return interp_factors(table_->grid.factor_grids, slice.data(), f.data());
}

std::vector<double> ValueFunction::budget_slice(double budget) const {
  if (is_constant())
    throw std::logic_error("budget_slice on a constant value function");
  const auto& grid = table_->grid;
  const std::size_t fc = grid.factor_cells();
  std::vector<double> slice(fc);
  if (grid.budget_grid.size() == 1) {
    std::copy_n(table_->h.data(), fc, slice.begin());
    return slice;
  }
  int lo;
  double w;
  locate(grid.budget_grid, budget, lo, w);
  const double* a = table_->h.data() + static_cast<std::size_t>(lo) * fc;
  const double* b = a + fc;
  for (std::size_t i = 0; i < fc; ++i) slice[i] = (1.0 - w) * a[i] + w * b[i];
  return slice;
}

std::string PolicyTable::to_json_string(int indent) const {
  json j;
  j["period"] = period;
  j["budget_grid"] = std::vector<double>(
      grid.budget_grid.data(),
      grid.budget_grid.data() + grid.budget_grid.size());
  json fg = json::array();
  for (const auto& g : grid.factor_grids)
    fg.push_back(std::vector<double>(g.data(), g.data() + g.size()));
  j["factor_grids"] = std::move(fg);
  j["h"] = h;
  j["lambda_star"] = lambda_star;
  j["seed"] = seed;
  j["L"] = sample_count;
  if (!solver_options.empty())
    j["solver_options"] = json::parse(solver_options);
  return j.dump(indent);
}

PolicyTable PolicyTable::from_json_string(const std::string& text) {
  json j = json::parse(text);
  PolicyTable t;
  t.period = j.at("period").get<int>();
  const auto bg = j.at("budget_grid").get<std::vector<double>>();
  t.grid.budget_grid =
      Eigen::Map<const Eigen::VectorXd>(bg.data(), bg.size());
  for (const auto& g : j.at("factor_grids")) {
    const auto vals = g.get<std::vector<double>>();
    t.grid.factor_grids.push_back(
        Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
  }
  t.h = j.at("h").get<std::vector<double>>();
  t.lambda_star = j.at("lambda_star").get<std::vector<double>>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.sample_count = j.at("L").get<int>();
  if (j.contains("solver_options"))
    t.solver_options = j["solver_options"].dump();
  t.diagnostics.assign(t.grid.n_cells(), CellDiagnostics{});
  t.validate();
  return t;
}

void PolicyTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json_string() << '\n';
}

PolicyTable PolicyTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

}  // namespace attnlq
