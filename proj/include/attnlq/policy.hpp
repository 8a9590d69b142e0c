#pragma once

#include "attnlq/solver.hpp"

namespace attnlq {

/// One simulated episode of the attention -> signal -> control loop.
struct Trajectory {
  Eigen::VectorXd x_path;         // x_0..x_T
  Eigen::VectorXd budget_path;    // Lambda_0..Lambda_T
  Eigen::MatrixXd factor_path;    // (T+1) x k
  Eigen::MatrixXd attention_path; // T x k
  Eigen::MatrixXd signal_path;    // T x k
  Eigen::MatrixXd control_path;   // T x n
  double realized_cost = 0.0;

  std::string to_csv() const;
  std::string to_json_string(int indent = 2) const;
};

/// Realized factor/asset paths for backtests: row t holds the outcomes
/// (f_{t+1}, b_{t+1}) of period t.
struct RealizedPath {
  Eigen::MatrixXd factors;  // T x k
  Eigen::MatrixXd assets;   // T x n
};

/// Mean-variance rollout context: per-period discount factors, the wealth
/// target and the optimal multiplier. Switches the control law to the
/// mean-variance policy and the terminal value coefficient to 1.
struct MvContext {
  std::vector<double> rho;  // rho_0..rho_T
  double d = 0.0;
  double mu = 0.0;
};

struct RolloutOptions {
  int inner_samples = 4096;              // fresh batch size for moments
  const LqModel* ground_truth = nullptr; // nature draws from this model
  const RealizedPath* realized = nullptr;// nature replays these outcomes
  const MvContext* mv = nullptr;
};

/// Optimal control u* = -(A_t + m2)^{-1} (p_t + a_{t+1} m1) x_t for
/// h-weighted posterior moments (m0, m1, m2).
Eigen::VectorXd optimal_control(const LqModel& model, int t, double x_t,
                                const Moments& moments);

/// Simulates one full episode. Per period: attention from the tables, one
/// true factor draw, a signal at the chosen attention, Kalman update, a
/// fresh seeded inner batch for the control moments, then the state and
/// budget updates. Deterministic given the seed spec.
Trajectory rollout(const LqModel& model,
                   const std::vector<PolicyTable>& tables, double x0,
                   double budget0, const Eigen::VectorXd& f0,
                   const SeedSpec& seed, const RolloutOptions& opts = {});

struct CostCheck {
  double mc_cost = 0.0;
  double std_err = 0.0;
  double predicted = 0.0;  // h_0(Lambda_0, f_0) x_0^2
};

/// Monte-Carlo average of the realized quadratic cost over independent
/// episodes, against the table prediction h_0 x_0^2.
CostCheck verify_cost(const LqModel& model,
                      const std::vector<PolicyTable>& tables, double x0,
                      double budget0, const Eigen::VectorXd& f0, int episodes,
                      std::uint64_t seed, int threads = 0,
                      int inner_samples = 4096);

}  // namespace attnlq
