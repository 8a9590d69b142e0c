#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace attnlq {

/// Gaussian belief over factor or asset returns: mean plus covariance.
struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Attention spent per factor, against a remaining budget.
struct AttentionAllocation {
  Eigen::VectorXd lambda;  // per-factor attention, componentwise >= 0
  double budget = 0.0;     // remaining attention resource

  void validate() const;
};

/// Full parameterization of the discrete-time LQ control problem with
/// multiplicative noise, factor structure and attention-dependent signals.
///
/// State dynamics: x_{t+1} = a_{t+1} x_t + b_{t+1}' u_{t+},
/// returns b_{t+1} = c + D f_{t+1} + eps, factors f_{t+1} = (I-Phi) f_t + eta.
/// Stage cost is [u x]' B_t [u x] with B_t = [[A_t, p_t], [p_t', q_t]],
/// terminal cost q_T x_T^2.
struct LqModel {
  int horizon = 0;   // T
  int n_assets = 0;  // n
  int n_factors = 0; // k

  std::vector<double> riskfree;           // a_1..a_T
  std::vector<Eigen::MatrixXd> cost_A;    // A_0..A_{T-1}, n x n PSD
  std::vector<Eigen::VectorXd> cost_p;    // p_0..p_{T-1}
  std::vector<double> cost_q;             // q_0..q_{T-1}
  double terminal_q = 1.0;                // q_T > 0

  Eigen::VectorXd loading_c;              // n
  Eigen::MatrixXd loading_D;              // n x k
  Eigen::MatrixXd mean_reversion;         // Phi, k x k
  Eigen::MatrixXd factor_noise_cov;       // Sigma_eta, k x k SPD
  Eigen::MatrixXd asset_noise_cov;        // Sigma_eps, n x n SPD
  Eigen::VectorXd attention_efficiency;   // theta, k positive

  /// Checks all structural invariants; throws std::invalid_argument with a
  /// description of the first violation.
  void validate() const;

  std::string to_json_string(int indent = 2) const;
  static LqModel from_json_string(const std::string& text);
  void save(const std::string& path) const;
  static LqModel load(const std::string& path);
};

/// Signal-noise covariance and precision per factor for an attention vector.
/// cov_j = sigma_eta_j^2 / (e^{lambda_j theta_j} - 1), +inf at lambda_j = 0;
/// precision is its reciprocal and is the canonical form downstream.
std::pair<Eigen::VectorXd, Eigen::VectorXd> signal_noise(
    const Eigen::VectorXd& lambda, const LqModel& model);

/// Beliefs over f_{t+1} and b_{t+1} given f_t, before any signal.
std::pair<GaussianBelief, GaussianBelief> prior_beliefs(
    const LqModel& model, const Eigen::VectorXd& f_t);

/// Kalman update after observing signal s with attention lambda. Uses the
/// precision form (Sigma_eta^{-1} + P_v)^{-1}, which is exact at lambda_j = 0:
/// that component gets zero gain and the signal value is ignored.
std::pair<GaussianBelief, GaussianBelief> posterior_beliefs(
    const LqModel& model, const Eigen::VectorXd& f_t,
    const Eigen::VectorXd& lambda, const Eigen::VectorXd& signal);

/// Entropy reduction per factor from the signal: lambda_j theta_j / 2 nats.
Eigen::VectorXd entropy_reduction(const Eigen::VectorXd& lambda,
                                  const LqModel& model);

/// Square root factor M with M M' = S for a symmetric PSD matrix. Tries a
/// Cholesky factorization first and falls back to an eigendecomposition with
/// negative eigenvalues clamped at zero, so exactly singular covariances
/// (attention driven to infinity) are handled.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s);

}  // namespace attnlq
