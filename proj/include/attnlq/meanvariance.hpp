#pragma once

#include "attnlq/policy.hpp"

namespace attnlq {

/// Discount factors rho_t = a_{t+1} a_{t+2} ... a_T (rho_T = 1): the
/// risk-free growth of one unit of wealth from period t to the horizon.
std::vector<double> discount_factors(const LqModel& model);

/// Backward solve of the auxiliary problem min E[x_T^2] with zero stage
/// costs and terminal coefficient 1. The tables drive both the optimal
/// multiplier and the mean-variance control law.
std::vector<PolicyTable> mv_solve(const LqModel& model, double budget0,
                                  const GridSpec& grids, int L,
                                  std::uint64_t seed,
                                  const SolverOptions& opts = {});

/// Optimal multiplier mu* = h_0 (rho_0 x_0 - d) / (rho_0^2 - h_0) for
/// wealth target d. Throws if rho_0^2 <= h_0 (the variance-minimizing
/// problem is degenerate: risky assets cannot beat the risk-free account).
double mu_star(double h0, double rho0, double x0, double d);

/// Minimum attainable variance h_0 (d - rho_0 x_0)^2 / (rho_0^2 - h_0).
double mv_variance(double h0, double rho0, double x0, double d);

/// Mean-variance control u = -E[h b b']^{-1} E[h b] a_{t+1} (x - (d-mu)/rho_t).
Eigen::VectorXd mv_control(const LqModel& model, int t, double x_t,
                           const Moments& moments, double rho_t, double d,
                           double mu);

struct FrontierPoint {
  double target = 0.0;    // d = E[x_T]
  double variance = 0.0;  // Var[x_T]
  double mu = 0.0;
};

/// Frontier over targets d >= rho_0 x_0 (throws below the risk-free
/// anchor, where the frontier is not defined).
std::vector<FrontierPoint> efficient_frontier(
    double h0, double rho0, double x0, const std::vector<double>& targets);

std::string frontier_to_csv(const std::vector<FrontierPoint>& frontier);

}  // namespace attnlq
