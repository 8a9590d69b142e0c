#include "attnlq/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace attnlq {
namespace {

using nlohmann::json;

constexpr double kPsdTol = 1e-10;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool is_psd(const Eigen::MatrixXd& m, double tol) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvalues().minCoeff() >= -tol;
}

bool is_spd(const Eigen::MatrixXd& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw std::invalid_argument("field '" + name + "' must be a nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols)
      throw std::invalid_argument("field '" + name + "' has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& name) {
  if (!j.is_array())
    throw std::invalid_argument("field '" + name + "' must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

void AttentionAllocation::validate() const {
  if ((lambda.array() < 0).any())
    throw std::invalid_argument("attention components must be nonnegative");
  if (budget < 0)
    throw std::invalid_argument("attention budget must be nonnegative");
  if (lambda.sum() > budget + 1e-12)
    throw std::invalid_argument("attention exceeds remaining budget");
}

void LqModel::validate() const {
  require(horizon >= 1, "horizon must be >= 1");
  require(n_assets >= 1 && n_factors >= 1, "dimensions must be >= 1");
  require(n_factors < n_assets, "n_factors must be < n_assets");

  const auto T = static_cast<std::size_t>(horizon);
  require(riskfree.size() == T, "riskfree must have one entry per period");
  require(cost_A.size() == T && cost_p.size() == T && cost_q.size() == T,
          "cost sequences must have one entry per period");
  for (double a : riskfree) require(a > 0, "all riskfree multipliers must be > 0");
  require(terminal_q > 0, "terminal_q must be > 0");

  for (std::size_t t = 0; t < T; ++t) {
    require(cost_A[t].rows() == n_assets && cost_A[t].cols() == n_assets,
            "cost_A dimension mismatch");
    require(cost_p[t].size() == n_assets, "cost_p dimension mismatch");
    require(cost_q[t] >= 0, "cost_q must be nonnegative");
    Eigen::MatrixXd block(n_assets + 1, n_assets + 1);
    block.topLeftCorner(n_assets, n_assets) = cost_A[t];
    block.topRightCorner(n_assets, 1) = cost_p[t];
    block.bottomLeftCorner(1, n_assets) = cost_p[t].transpose();
    block(n_assets, n_assets) = cost_q[t];
    require(is_psd(block, kPsdTol),
            "stage cost block B_" + std::to_string(t) + " is not PSD");
  }

  require(loading_c.size() == n_assets, "loading_c dimension mismatch");
  require(loading_D.rows() == n_assets && loading_D.cols() == n_factors,
          "loading_D dimension mismatch");
  require(mean_reversion.rows() == n_factors &&
              mean_reversion.cols() == n_factors,
          "mean_reversion dimension mismatch");
  require(factor_noise_cov.rows() == n_factors &&
              factor_noise_cov.cols() == n_factors,
          "factor_noise_cov dimension mismatch");
  require(asset_noise_cov.rows() == n_assets &&
              asset_noise_cov.cols() == n_assets,
          "asset_noise_cov dimension mismatch");
  require(attention_efficiency.size() == n_factors,
          "attention_efficiency dimension mismatch");

  require(is_spd(factor_noise_cov), "factor_noise_cov must be SPD");
  require(is_spd(asset_noise_cov), "asset_noise_cov must be SPD");
  require((attention_efficiency.array() > 0).all(),
          "attention efficiencies must be positive");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> signal_noise(
    const Eigen::VectorXd& lambda, const LqModel& model) {
  if (lambda.size() != model.n_factors)
    throw std::invalid_argument("lambda dimension mismatch");
  if ((lambda.array() < 0).any())
    throw std::domain_error("negative attention component");

  const int k = model.n_factors;
  Eigen::VectorXd cov(k), precision(k);
  for (int j = 0; j < k; ++j) {
    const double s2 = model.factor_noise_cov(j, j);
    const double em1 = std::expm1(lambda[j] * model.attention_efficiency[j]);
    precision[j] = em1 / s2;
    cov[j] = em1 > 0 ? s2 / em1 : std::numeric_limits<double>::infinity();
  }
  return {cov, precision};
}

std::pair<GaussianBelief, GaussianBelief> prior_beliefs(
    const LqModel& model, const Eigen::VectorXd& f_t) {
  if (f_t.size() != model.n_factors)
    throw std::invalid_argument("factor dimension mismatch");
  if (!f_t.allFinite()) throw std::domain_error("non-finite factor value");

  const Eigen::MatrixXd reversion =
      Eigen::MatrixXd::Identity(model.n_factors, model.n_factors) -
      model.mean_reversion;
  GaussianBelief factor{reversion * f_t, model.factor_noise_cov};
  GaussianBelief asset{
      model.loading_c + model.loading_D * factor.mean,
      model.loading_D * model.factor_noise_cov * model.loading_D.transpose() +
          model.asset_noise_cov};
  return {std::move(factor), std::move(asset)};
}

std::pair<GaussianBelief, GaussianBelief> posterior_beliefs(
    const LqModel& model, const Eigen::VectorXd& f_t,
    const Eigen::VectorXd& lambda, const Eigen::VectorXd& signal) {
  auto [prior_f, prior_b] = prior_beliefs(model, f_t);
  const Eigen::VectorXd precision = signal_noise(lambda, model).second;
  if (signal.size() != model.n_factors)
    throw std::invalid_argument("signal dimension mismatch");
  for (int j = 0; j < model.n_factors; ++j) {
    if (precision[j] > 0 && !std::isfinite(signal[j]))
      throw std::domain_error("non-finite signal with positive attention");
  }

  const Eigen::MatrixXd prior_prec =
      Eigen::LLT<Eigen::MatrixXd>(model.factor_noise_cov)
          .solve(Eigen::MatrixXd::Identity(model.n_factors, model.n_factors));
  Eigen::MatrixXd post_prec = prior_prec;
  post_prec.diagonal() += precision;
  Eigen::MatrixXd post_cov = Eigen::LLT<Eigen::MatrixXd>(post_prec).solve(
      Eigen::MatrixXd::Identity(model.n_factors, model.n_factors));
  post_cov = 0.5 * (post_cov + post_cov.transpose()).eval();

  const Eigen::MatrixXd gain = post_cov * precision.asDiagonal();
  Eigen::VectorXd innovation = Eigen::VectorXd::Zero(model.n_factors);
  for (int j = 0; j < model.n_factors; ++j)
    if (precision[j] > 0) innovation[j] = signal[j] - prior_f.mean[j];

  GaussianBelief factor{prior_f.mean + gain * innovation, post_cov};
  GaussianBelief asset{
      model.loading_c + model.loading_D * factor.mean,
      model.loading_D * post_cov * model.loading_D.transpose() +
          model.asset_noise_cov};
  return {std::move(factor), std::move(asset)};
}

Eigen::VectorXd entropy_reduction(const Eigen::VectorXd& lambda,
                                  const LqModel& model) {
  if ((lambda.array() < 0).any())
    throw std::domain_error("negative attention component");
  return 0.5 * lambda.cwiseProduct(model.attention_efficiency);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * clamped.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

std::string LqModel::to_json_string(int indent) const {
  json j;
  j["horizon"] = horizon;
  j["n_assets"] = n_assets;
  j["n_factors"] = n_factors;
  j["riskfree"] = riskfree;
  json a = json::array();
  for (const auto& m : cost_A) a.push_back(matrix_to_json(m));
  j["cost_A"] = std::move(a);
  json p = json::array();
  for (const auto& v : cost_p) p.push_back(vector_to_json(v));
  j["cost_p"] = std::move(p);
  j["cost_q"] = cost_q;
  j["terminal_q"] = terminal_q;
  j["loading_c"] = vector_to_json(loading_c);
  j["loading_D"] = matrix_to_json(loading_D);
  j["mean_reversion"] = matrix_to_json(mean_reversion);
  j["factor_noise_cov"] = matrix_to_json(factor_noise_cov);
  j["asset_noise_cov"] = matrix_to_json(asset_noise_cov);
  j["attention_efficiency"] = vector_to_json(attention_efficiency);
  return j.dump(indent);
}

LqModel LqModel::from_json_string(const std::string& text) {
  json j = json::parse(text);
  LqModel m;
  m.horizon = j.at("horizon").get<int>();
  m.n_assets = j.at("n_assets").get<int>();
  m.n_factors = j.at("n_factors").get<int>();
  m.riskfree = j.at("riskfree").get<std::vector<double>>();
  for (const auto& mat : j.at("cost_A"))
    m.cost_A.push_back(matrix_from_json(mat, "cost_A"));
  for (const auto& vec : j.at("cost_p"))
    m.cost_p.push_back(vector_from_json(vec, "cost_p"));
  m.cost_q = j.at("cost_q").get<std::vector<double>>();
  m.terminal_q = j.at("terminal_q").get<double>();
  m.loading_c = vector_from_json(j.at("loading_c"), "loading_c");
  m.loading_D = matrix_from_json(j.at("loading_D"), "loading_D");
  m.mean_reversion = matrix_from_json(j.at("mean_reversion"), "mean_reversion");
  m.factor_noise_cov =
      matrix_from_json(j.at("factor_noise_cov"), "factor_noise_cov");
  m.asset_noise_cov =
      matrix_from_json(j.at("asset_noise_cov"), "asset_noise_cov");
  m.attention_efficiency =
      vector_from_json(j.at("attention_efficiency"), "attention_efficiency");
  m.validate();
  return m;
}

void LqModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json_string() << '\n';
}

LqModel LqModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

}  // namespace attnlq
