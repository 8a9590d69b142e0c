#include "attnlq/meanvariance.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace attnlq {

std::vector<double> discount_factors(const LqModel& model) {
  const int T = model.horizon;
  std::vector<double> rho(T + 1, 1.0);
  for (int t = T - 1; t >= 0; --t) rho[t] = model.riskfree[t] * rho[t + 1];
  return rho;
}

std::vector<PolicyTable> mv_solve(const LqModel& model, double budget0,
                                  const GridSpec& grids, int L,
                                  std::uint64_t seed,
                                  const SolverOptions& opts) {
  return backward_solve(model, budget0, grids, L, seed,
                        SolveMode::mean_variance, opts);
}

double mu_star(double h0, double rho0, double x0, double d) {
  const double gap = rho0 * rho0 - h0;
  if (!(h0 > 0)) throw std::domain_error("h0 must be positive");
  if (!(gap > 0))
    throw std::domain_error(
        "rho_0^2 - h_0 must be positive (risky assets add no value over the "
        "risk-free account; the mean-variance problem is degenerate)");
  return h0 * (rho0 * x0 - d) / gap;
}

double mv_variance(double h0, double rho0, double x0, double d) {
  const double gap = rho0 * rho0 - h0;
  if (!(h0 > 0)) throw std::domain_error("h0 must be positive");
  if (!(gap > 0))
    throw std::domain_error("rho_0^2 - h_0 must be positive");
  const double excess = d - rho0 * x0;
  return h0 * excess * excess / gap;
}

Eigen::VectorXd mv_control(const LqModel& model, int t, double x_t,
                           const Moments& moments, double rho_t, double d,
                           double mu) {
  if (t < 0 || t >= model.horizon) throw std::invalid_argument("bad period");
  if (!(rho_t > 0)) throw std::invalid_argument("rho_t must be positive");
  Eigen::LLT<Eigen::MatrixXd> llt(moments.m2);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "E[h b b'] is not positive definite; control is undefined");
  const double x_tilde = x_t - (d - mu) / rho_t;
  return -(llt.solve(moments.m1) * (model.riskfree[t] * x_tilde));
}

std::vector<FrontierPoint> efficient_frontier(
    double h0, double rho0, double x0, const std::vector<double>& targets) {
  const double anchor = rho0 * x0;
  std::vector<FrontierPoint> out;
  out.reserve(targets.size());
  for (double d : targets) {
    if (d < anchor - 1e-12)
      throw std::domain_error(
          "frontier target below the risk-free terminal wealth rho_0 x_0");
    FrontierPoint p;
    p.target = d;
    p.variance = mv_variance(h0, rho0, x0, d);
    p.mu = mu_star(h0, rho0, x0, d);
    out.push_back(p);
  }
  return out;
}

std::string frontier_to_csv(const std::vector<FrontierPoint>& frontier) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "target_d,expected_terminal,variance,std\n";
  for (const auto& p : frontier)
    out << p.target << ',' << p.target << ',' << p.variance << ','
        << std::sqrt(p.variance) << '\n';
  return out.str();
}

}  // namespace attnlq
