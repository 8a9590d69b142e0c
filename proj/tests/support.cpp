#include "support.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace attnlq_test {

using namespace attnlq;

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(static_cast<double>(i));
    jacobi(i, i - 1) = off;
    jacobi(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(n);
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = v0 * v0;
  }
  return {nodes, weights};
}

double lq_cell_value(double q_t, double a, const Eigen::MatrixXd& A,
                     const Eigen::VectorXd& p, double m0,
                     const Eigen::VectorXd& m1, const Eigen::MatrixXd& m2) {
  const Eigen::VectorXd r = p + a * m1;
  Eigen::LLT<Eigen::MatrixXd> llt(A + m2);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("A + m2 not positive definite in oracle");
  return q_t + a * a * m0 - r.dot(llt.solve(r));
}

double quadrature_g(const LqModel& model, double h_terminal, double f0,
                    double lambda) {
  if (model.n_factors != 1)
    throw std::invalid_argument("quadrature oracle is for k = 1");
  const int n = model.n_assets;
  const double a = model.riskfree[0];
  const Eigen::MatrixXd& A = model.cost_A[0];
  const Eigen::VectorXd& p = model.cost_p[0];
  const double q = model.cost_q[0];
  const double theta = model.attention_efficiency[0];
  const double s2 = model.factor_noise_cov(0, 0);

  const double prior = (1.0 - model.mean_reversion(0, 0)) * f0;
  const double prec = std::expm1(lambda * theta) / s2;
  const double post_var = 1.0 / (1.0 / s2 + prec);
  const double gain = post_var * prec;
  const double shift_sd =
      prec > 0 ? gain * std::sqrt(s2 + 1.0 / prec) : 0.0;

  const auto [outer_x, outer_w] = gauss_hermite(64);
  const auto [inner_x, inner_w] = gauss_hermite(32);
  const double post_sd = std::sqrt(post_var);
  const Eigen::VectorXd d = model.loading_D.col(0);

  const int n_outer = shift_sd > 0 ? 64 : 1;
  double g = 0.0;
  for (int o = 0; o < n_outer; ++o) {
    const double mu_f = prior + shift_sd * (shift_sd > 0 ? outer_x[o] : 0.0);
    double m0 = 0.0;
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < 32; ++i) {
      const double f = mu_f + post_sd * inner_x[i];
      const Eigen::VectorXd b = model.loading_c + d * f;
      const double w = inner_w[i];
      m0 += w * h_terminal;
      m1 += w * h_terminal * b;
      m2 += w * h_terminal * (b * b.transpose() + model.asset_noise_cov);
    }
    const double v = lq_cell_value(q, a, A, p, m0, m1, m2);
    g += (shift_sd > 0 ? outer_w[o] : 1.0) * v;
  }
  return g;
}

double quadrature_min(const LqModel& model, double h_terminal, double f0,
                      double budget, double step) {
  double best = quadrature_g(model, h_terminal, f0, 0.0);
  for (double lam = step; lam <= budget + 1e-12; lam += step)
    best = std::min(best,
                    quadrature_g(model, h_terminal, f0,
                                 std::min(lam, budget)));
  return best;
}

std::vector<std::vector<double>> no_attention_recursion(
    const LqModel& model, const GridSpec& grids, int L, std::uint64_t seed) {
  if (grids.n_budget() != 1)
    throw std::invalid_argument("oracle expects a single zero-budget node");
  const int T = model.horizon;
  const int k = model.n_factors;
  const int n = model.n_assets;
  const std::size_t fc = grids.factor_cells();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd eta_root =
      Eigen::LLT<Eigen::MatrixXd>(model.factor_noise_cov).matrixL();

  std::vector<std::vector<double>> tables(T);
  for (int t = T - 1; t >= 0; --t) {
    tables[t].assign(fc, 0.0);
    for (std::size_t i = 0; i < fc; ++i) {
      const Eigen::VectorXd f = grids.factor_point(i);
      const SampleBatch batch = draw_batch(
          seed, {static_cast<std::uint64_t>(t), 0, i}, L, k, n);
      const Eigen::VectorXd prior = (eye - model.mean_reversion) * f;
      // factor shocks are consumed antithetically, matching the solver
      Eigen::MatrixXd e2(L, k);
      for (int l = 0; l < L; ++l)
        e2.row(l) = ((l & 1) ? -1.0 : 1.0) * batch.eps2.row(l >> 1);
      const Eigen::MatrixXd fmc =
          (e2 * eta_root.transpose()).rowwise() + prior.transpose();
      // conditional means E[b | f]; Sigma_eps enters the second moment
      // exactly, mirroring the solver's estimator
      const Eigen::MatrixXd bmc =
          (fmc * model.loading_D.transpose()).rowwise() +
          model.loading_c.transpose();

      double m0 = 0.0;
      Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n);
      Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(n, n);
      Eigen::VectorXd frow(k);
      for (int l = 0; l < L; ++l) {
        double h;
        if (t + 1 < T) {
          frow = fmc.row(l);
          h = interp_factors(grids.factor_grids, tables[t + 1].data(),
                             frow.data());
        } else {
          h = model.terminal_q;
        }
        const Eigen::VectorXd b = bmc.row(l);
        m0 += h;
        m1 += h * b;
        m2 += h * b * b.transpose();
      }
      m0 /= L;
      m1 /= L;
      m2 /= L;
      m2 += m0 * model.asset_noise_cov;
      tables[t][i] = lq_cell_value(model.cost_q[t], model.riskfree[t],
                                   model.cost_A[t], model.cost_p[t], m0, m1,
                                   m2);
    }
  }
  return tables;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1));
}

namespace {

LqModel base_two_asset(int horizon) {
  LqModel m;
  m.horizon = horizon;
  m.n_assets = 2;
  m.n_factors = 1;
  m.riskfree.assign(horizon, 1.0036);
  m.cost_A.assign(horizon, 0.01 * Eigen::MatrixXd::Identity(2, 2));
  m.cost_p.assign(horizon, Eigen::VectorXd::Zero(2));
  m.cost_q.assign(horizon, 0.0);
  m.terminal_q = 1.0;
  m.loading_c = (Eigen::VectorXd(2) << 0.004, 0.002).finished();
  m.loading_D = (Eigen::MatrixXd(2, 1) << 0.8, 0.5).finished();
  m.mean_reversion = (Eigen::MatrixXd(1, 1) << 0.1).finished();
  m.factor_noise_cov = (Eigen::MatrixXd(1, 1) << 0.04).finished();
  m.asset_noise_cov =
      (Eigen::VectorXd(2) << 0.0009, 0.0016).finished().asDiagonal();
  m.attention_efficiency = (Eigen::VectorXd(1) << 0.69).finished();
  m.validate();
  return m;
}

}  // namespace

LqModel one_period_model() { return base_two_asset(1); }

LqModel small_multiperiod_model() { return base_two_asset(3); }

LqModel paper_scale_model() {
  LqModel m;
  m.horizon = 3;
  m.n_assets = 5;
  m.n_factors = 3;
  m.riskfree.assign(3, 1.0036);
  m.cost_A.assign(3, Eigen::MatrixXd::Zero(5, 5));
  m.cost_p.assign(3, Eigen::VectorXd::Zero(5));
  m.cost_q.assign(3, 0.0);
  m.terminal_q = 1.0;
  m.loading_c =
      (Eigen::VectorXd(5) << 0.0015, 0.0010, 0.0020, 0.0012, 0.0018)
          .finished();
  m.loading_D = (Eigen::MatrixXd(5, 3) <<
      0.9,  0.1,  0.2,
      1.1,  0.4, -0.1,
      1.0, -0.2,  0.5,
      1.2,  0.6,  0.3,
      0.8, -0.1, -0.3).finished();
  m.mean_reversion = 0.9 * Eigen::MatrixXd::Identity(3, 3);
  m.factor_noise_cov =
      (Eigen::VectorXd(3) << 0.044 * 0.044, 0.031 * 0.031, 0.028 * 0.028)
          .finished().asDiagonal();
  m.asset_noise_cov =
      (Eigen::VectorXd(5) << 0.0009, 0.0012, 0.0016, 0.0010, 0.0014)
          .finished().asDiagonal();
  m.attention_efficiency = Eigen::VectorXd::Constant(3, 0.69);
  m.validate();
  return m;
}

}  // namespace attnlq_test
