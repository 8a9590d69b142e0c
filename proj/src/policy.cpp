#include "attnlq/policy.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <json.hpp>

namespace attnlq {
namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean =
      std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1));
}

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

std::vector<std::vector<double>> to_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> rows(m.rows());
  for (long i = 0; i < m.rows(); ++i) {
    rows[i].resize(m.cols());
    for (long j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
  }
  return rows;
}

}  // namespace

Eigen::VectorXd optimal_control(const LqModel& model, int t, double x_t,
                                const Moments& moments) {
  if (t < 0 || t >= model.horizon) throw std::invalid_argument("bad period");
  Eigen::LLT<Eigen::MatrixXd> llt(model.cost_A[t] + moments.m2);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "A_t + E[h b b'] is not positive definite; control is undefined");
  const Eigen::VectorXd r = model.cost_p[t] + model.riskfree[t] * moments.m1;
  return -(llt.solve(r) * x_t);
}

Trajectory rollout(const LqModel& model,
                   const std::vector<PolicyTable>& tables, double x0,
                   double budget0, const Eigen::VectorXd& f0,
                   const SeedSpec& seed, const RolloutOptions& opts) {
  const int T = model.horizon;
  const int k = model.n_factors;
  const int n = model.n_assets;
  if (static_cast<int>(tables.size()) != T)
    throw std::invalid_argument("one policy table per period required");
  if (f0.size() != k) throw std::invalid_argument("f0 dim mismatch");
  if (budget0 < 0) throw std::invalid_argument("budget0 must be >= 0");
  if (opts.inner_samples < 1)
    throw std::invalid_argument("inner_samples must be >= 1");
  if (opts.mv && static_cast<int>(opts.mv->rho.size()) != T + 1)
    throw std::invalid_argument("mv context needs rho_0..rho_T");

  const LqModel& nature = opts.ground_truth ? *opts.ground_truth : model;
  if (opts.realized) {
    if (opts.realized->factors.rows() < T || opts.realized->assets.rows() < T ||
        opts.realized->factors.cols() != nature.n_factors ||
        opts.realized->assets.cols() != n)
      throw std::invalid_argument("realized path shape mismatch");
  }

  Trajectory tr;
  tr.x_path.resize(T + 1);
  tr.budget_path.resize(T + 1);
  tr.factor_path.resize(T + 1, k);
  tr.attention_path.resize(T, k);
  tr.signal_path.resize(T, k);
  tr.control_path.resize(T, n);

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd eta_root = sqrt_psd(nature.factor_noise_cov);
  const Eigen::MatrixXd eps_root = sqrt_psd(nature.asset_noise_cov);

  double x = x0;
  double budget = budget0;
  Eigen::VectorXd f = f0;

  for (int t = 0; t < T; ++t) {
    tr.x_path[t] = x;
    tr.budget_path[t] = budget;
    tr.factor_path.row(t) = f;

    const Eigen::VectorXd lambda = eval_lambda_star(tables[t], budget, f);
    tr.attention_path.row(t) = lambda;

    NormalStream ns(seed.with(static_cast<std::uint64_t>(t)));
    const Eigen::VectorXd eta = ns.normal_vector(k);
    const Eigen::VectorXd z = ns.normal_vector(k);
    const Eigen::VectorXd eps = ns.normal_vector(n);

    Eigen::VectorXd f_true;
    if (opts.realized)
      f_true = opts.realized->factors.row(t);
    else
      f_true = (eye - nature.mean_reversion) * f + eta_root * eta;

    const auto [cov_v, prec_v] = signal_noise(lambda, model);
    const Eigen::VectorXd prior = (eye - model.mean_reversion) * f;
    Eigen::VectorXd s(k);
    for (int j = 0; j < k; ++j)
      s[j] = lambda[j] > 0 ? f_true[j] + std::sqrt(cov_v[j]) * z[j]
                           : prior[j];
    tr.signal_path.row(t) = s;

    const auto [post_f, post_b] = posterior_beliefs(model, f, lambda, s);

    const SeedSpec inner = seed.with(static_cast<std::uint64_t>(t)).with(1);
    const SampleBatch batch = draw_batch(
        inner.base_seed, inner.stream_key, opts.inner_samples, k, n);
    const Eigen::MatrixXd fmc = simulate_posterior_factors(post_f, batch.eps2);
    // Conditional means E[b | f]; the idiosyncratic covariance enters the
    // second moment exactly below, matching the solver's estimator.
    const Eigen::MatrixXd bmc =
        (fmc * model.loading_D.transpose()).rowwise() +
        model.loading_c.transpose();

    double budget_next = budget - lambda.sum();
    if (budget_next < -1e-9)
      throw std::logic_error("attention exceeded remaining budget");
    if (budget_next < 0) budget_next = 0;

    const double terminal = opts.mv ? 1.0 : model.terminal_q;
    const ValueFunction h_next =
        t + 1 < T ? ValueFunction::from_table(tables[t + 1])
                  : ValueFunction::constant(terminal);
    Moments m = conditional_moments(h_next, budget_next, fmc, bmc);
    m.m2 += m.m0 * model.asset_noise_cov;

    Eigen::VectorXd u;
    if (opts.mv) {
      const double rho_t = opts.mv->rho[t];
      const double x_tilde = x - (opts.mv->d - opts.mv->mu) / rho_t;
      Eigen::LLT<Eigen::MatrixXd> llt(m.m2);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "E[h b b'] is not positive definite; control is undefined");
      u = -(llt.solve(m.m1) * (model.riskfree[t] * x_tilde));
    } else {
      u = optimal_control(model, t, x, m);
    }
    tr.control_path.row(t) = u;

    Eigen::VectorXd b_real;
    if (opts.realized)
      b_real = opts.realized->assets.row(t);
    else
      b_real = nature.loading_c + nature.loading_D * f_true + eps_root * eps;

    if (!opts.mv)
      tr.realized_cost += u.dot(model.cost_A[t] * u) +
                          2.0 * x * u.dot(model.cost_p[t]) +
                          model.cost_q[t] * x * x;

    x = model.riskfree[t] * x + b_real.dot(u);
    f = f_true;
    budget = budget_next;
  }

  tr.x_path[T] = x;
  tr.budget_path[T] = budget;
  tr.factor_path.row(T) = f;
  tr.realized_cost += (opts.mv ? 1.0 : model.terminal_q) * x * x;
  return tr;
}

CostCheck verify_cost(const LqModel& model,
                      const std::vector<PolicyTable>& tables, double x0,
                      double budget0, const Eigen::VectorXd& f0, int episodes,
                      std::uint64_t seed, int threads, int inner_samples) {
  if (episodes < 2) throw std::invalid_argument("need at least 2 episodes");
  std::vector<double> costs(episodes);
  RolloutOptions opts;
  opts.inner_samples = inner_samples;
  parallel_for(static_cast<std::size_t>(episodes), threads,
               [&](std::size_t e) {
                 SeedSpec spec{seed, {0x6570ULL, e}};
                 costs[e] = rollout(model, tables, x0, budget0, f0, spec, opts)
                                .realized_cost;
               });
  CostCheck out;
  out.mc_cost = std::accumulate(costs.begin(), costs.end(), 0.0) /
                static_cast<double>(episodes);
  out.std_err = sample_sd(costs) / std::sqrt(static_cast<double>(episodes));
  out.predicted = eval_h(tables[0], budget0, f0) * x0 * x0;
  return out;
}

std::string Trajectory::to_csv() const {
  const int T = static_cast<int>(control_path.rows());
  const int k = static_cast<int>(factor_path.cols());
  const int n = static_cast<int>(control_path.cols());
  std::ostringstream out;
  out << std::setprecision(17);
  out << "t,x,budget";
  for (int j = 0; j < k; ++j) out << ",f" << j;
  for (int j = 0; j < k; ++j) out << ",lambda" << j;
  for (int j = 0; j < k; ++j) out << ",s" << j;
  for (int i = 0; i < n; ++i) out << ",u" << i;
  out << '\n';
  for (int t = 0; t <= T; ++t) {
    out << t << ',' << x_path[t] << ',' << budget_path[t];
    for (int j = 0; j < k; ++j) out << ',' << factor_path(t, j);
    if (t < T) {
      for (int j = 0; j < k; ++j) out << ',' << attention_path(t, j);
      for (int j = 0; j < k; ++j) out << ',' << signal_path(t, j);
      for (int i = 0; i < n; ++i) out << ',' << control_path(t, i);
    } else {
      for (int c = 0; c < 2 * k + n; ++c) out << ',';
    }
    out << '\n';
  }
  return out.str();
}

std::string Trajectory::to_json_string(int indent) const {
  nlohmann::json j;
  j["x"] = to_vec(x_path);
  j["budget"] = to_vec(budget_path);
  j["factors"] = to_rows(factor_path);
  j["attention"] = to_rows(attention_path);
  j["signals"] = to_rows(signal_path);
  j["controls"] = to_rows(control_path);
  j["realized_cost"] = realized_cost;
  return j.dump(indent);
}

}  // namespace attnlq
