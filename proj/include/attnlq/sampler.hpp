#pragma once

#include "attnlq/model.hpp"
#include "attnlq/rng.hpp"

namespace attnlq {

/// One Monte-Carlo batch of the three shock matrices used by the DP
/// objective: eps1 drives signals, eps2 posterior factors, eps3 asset
/// idiosyncratics. Regenerating with the same seed spec is bit-exact.
struct SampleBatch {
  Eigen::MatrixXd eps1;  // L x k
  Eigen::MatrixXd eps2;  // L x k
  Eigen::MatrixXd eps3;  // L x n
  SeedSpec seed_spec;

  int size() const { return static_cast<int>(eps1.rows()); }
};

SampleBatch draw_batch(std::uint64_t base_seed,
                       const std::vector<std::uint64_t>& stream_key, int L,
                       int k, int n);

/// Signals s = (I-Phi) f_t + C eps1 with C the Cholesky factor of
/// (Sigma_eta + Sigma_v(lambda)) restricted to components with lambda_j > 0.
/// Components with lambda_j = 0 are emitted as the prior mean; they carry
/// zero Kalman gain downstream so the value never matters.
Eigen::MatrixXd simulate_signals(const LqModel& model,
                                 const Eigen::VectorXd& f_t,
                                 const Eigen::VectorXd& lambda,
                                 const Eigen::MatrixXd& eps1);

/// Posterior factor draws f = mu + M eps2 with M M' = posterior covariance.
Eigen::MatrixXd simulate_posterior_factors(const GaussianBelief& posterior,
                                           const Eigen::MatrixXd& eps2);

/// Asset return draws b = c + D f + E eps3 with E E' = Sigma_eps.
Eigen::MatrixXd simulate_asset_returns(const LqModel& model,
                                       const Eigen::MatrixXd& factors,
                                       const Eigen::MatrixXd& eps3);

}  // namespace attnlq
