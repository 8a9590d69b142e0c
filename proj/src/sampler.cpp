#include "attnlq/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace attnlq {

SampleBatch draw_batch(std::uint64_t base_seed,
                       const std::vector<std::uint64_t>& stream_key, int L,
                       int k, int n) {
  if (L < 1) throw std::domain_error("batch size L must be >= 1");
  if (k < 1 || n < 1) throw std::domain_error("dimensions must be >= 1");

  SampleBatch batch;
  batch.seed_spec = SeedSpec{base_seed, stream_key};
  NormalStream stream(batch.seed_spec);
  batch.eps1 = stream.normal_matrix(L, k);
  batch.eps2 = stream.normal_matrix(L, k);
  batch.eps3 = stream.normal_matrix(L, n);
  return batch;
}

Eigen::MatrixXd simulate_signals(const LqModel& model,
                                 const Eigen::VectorXd& f_t,
                                 const Eigen::VectorXd& lambda,
                                 const Eigen::MatrixXd& eps1) {
  const int k = model.n_factors;
  if (eps1.cols() != k) throw std::invalid_argument("eps1 dimension mismatch");
  const Eigen::VectorXd mean = prior_beliefs(model, f_t).first.mean;
  const Eigen::VectorXd noise_cov = signal_noise(lambda, model).first;

  std::vector<int> informative;
  for (int j = 0; j < k; ++j)
    if (lambda[j] > 0) informative.push_back(j);

  const long L = eps1.rows();
  Eigen::MatrixXd signals = mean.transpose().replicate(L, 1);
  if (informative.empty()) return signals;

  const int m = static_cast<int>(informative.size());
  Eigen::MatrixXd cov(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b)
      cov(a, b) = model.factor_noise_cov(informative[a], informative[b]);
    cov(a, a) += noise_cov[informative[a]];
  }
  const Eigen::MatrixXd chol = sqrt_psd(cov);

  // Column j of eps1 always drives factor j, so shocks are common across
  // different lambda values (needed for finite-difference gradients).
  Eigen::MatrixXd shocks(L, m);
  for (int a = 0; a < m; ++a) shocks.col(a) = eps1.col(informative[a]);
  const Eigen::MatrixXd dev = shocks * chol.transpose();
  for (int a = 0; a < m; ++a) signals.col(informative[a]) += dev.col(a);
  return signals;
}

Eigen::MatrixXd simulate_posterior_factors(const GaussianBelief& posterior,
                                           const Eigen::MatrixXd& eps2) {
  if (eps2.cols() != posterior.mean.size())
    throw std::invalid_argument("eps2 dimension mismatch");
  const Eigen::MatrixXd root = sqrt_psd(posterior.cov);
  return (eps2 * root.transpose()).rowwise() + posterior.mean.transpose();
}

Eigen::MatrixXd simulate_asset_returns(const LqModel& model,
                                       const Eigen::MatrixXd& factors,
                                       const Eigen::MatrixXd& eps3) {
  if (factors.cols() != model.n_factors || eps3.cols() != model.n_assets ||
      factors.rows() != eps3.rows())
    throw std::invalid_argument("sample dimension mismatch");
  const Eigen::MatrixXd root = sqrt_psd(model.asset_noise_cov);
  return ((factors * model.loading_D.transpose() + eps3 * root.transpose())
              .rowwise() +
          model.loading_c.transpose());
}

}  // namespace attnlq
