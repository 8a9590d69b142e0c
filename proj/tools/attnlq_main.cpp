// Command-line front end: estimate, solve, simulate, frontier, backtest,
// inspect. Every run writes a resolved copy of its configuration and seed
// next to the outputs so results can be reproduced exactly.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnlq/market.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attnlq;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::int64_t seed = -1;   // -1: use the config value (default 0)
  int threads = 0;
  std::string mode = "";    // "", "general" or "mv"
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

json load_config(const CommonArgs& args) {
  json cfg = json::parse(read_file(args.config_path));
  if (!cfg.is_object())
    throw std::invalid_argument("config must be a JSON object");
  if (args.seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(args.seed);
  if (!cfg.contains("seed")) cfg["seed"] = 0;
  if (args.threads > 0) cfg["threads"] = args.threads;
  if (!args.mode.empty()) cfg["mode"] = args.mode;
  return cfg;
}

void write_resolved(const CommonArgs& args, const std::string& command,
                    const json& cfg) {
  fs::create_directories(args.out_dir);
  json resolved;
  resolved["command"] = command;
  resolved["seed"] = cfg.value("seed", std::uint64_t{0});
  resolved["config"] = cfg;
  write_file((fs::path(args.out_dir) / "resolved_config.json").string(),
             resolved.dump(2));
}

Eigen::VectorXd vec_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

LqModel model_from_config(const json& cfg) {
  if (!cfg.contains("model"))
    throw std::invalid_argument("config needs a 'model' entry");
  const json& m = cfg["model"];
  if (m.is_string()) return LqModel::load(m.get<std::string>());
  return LqModel::from_json_string(m.dump());
}

SolverOptions solver_from_config(const json& cfg) {
  SolverOptions opts;
  if (cfg.contains("solver")) {
    const json& s = cfg["solver"];
    opts.max_iterations = s.value("max_iterations", opts.max_iterations);
    opts.fd_step = s.value("fd_step", opts.fd_step);
    opts.pg_tol = s.value("pg_tol", opts.pg_tol);
    opts.random_starts = s.value("random_starts", opts.random_starts);
    opts.grad_subsample = s.value("grad_subsample", opts.grad_subsample);
    opts.grad_outer_subsample =
        s.value("grad_outer_subsample", opts.grad_outer_subsample);
    opts.outer_subsample = s.value("outer_subsample", opts.outer_subsample);
    opts.descend_top = s.value("descend_top", opts.descend_top);
    opts.full_eval_starts = s.value("full_eval_starts", opts.full_eval_starts);
  }
  opts.threads = cfg.value("threads", 0);
  return opts;
}

GridSpec grid_from_config(const LqModel& model, const json& cfg,
                          double budget0) {
  const int n_budget = cfg.value("n_budget", 13);
  std::vector<int> n_factor;
  if (cfg.contains("n_factor") && cfg["n_factor"].is_array())
    n_factor = cfg["n_factor"].get<std::vector<int>>();
  else
    n_factor.assign(model.n_factors, cfg.value("n_factor", 7));
  if (cfg.contains("factor_bounds")) {
    std::vector<std::pair<double, double>> bounds;
    for (const auto& b : cfg["factor_bounds"])
      bounds.emplace_back(b[0].get<double>(), b[1].get<double>());
    return make_grid(budget0, n_budget, bounds, n_factor);
  }
  return build_grids(model, budget0, n_budget, n_factor);
}

std::vector<PolicyTable> tables_from_config(const json& cfg) {
  if (!cfg.contains("tables"))
    throw std::invalid_argument("config needs a 'tables' list of paths");
  std::vector<PolicyTable> tables;
  for (const auto& p : cfg["tables"])
    tables.push_back(PolicyTable::load(p.get<std::string>()));
  for (std::size_t t = 0; t < tables.size(); ++t)
    if (tables[t].period != static_cast<int>(t))
      throw std::invalid_argument("tables must be listed in period order");
  return tables;
}

Eigen::VectorXd f0_from_config(const json& cfg, int k) {
  if (cfg.contains("f0")) {
    Eigen::VectorXd f = vec_from_json(cfg["f0"]);
    if (static_cast<int>(f.size()) != k)
      throw std::invalid_argument("f0 has wrong dimension");
    return f;
  }
  return Eigen::VectorXd::Zero(k);
}

int cmd_solve(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "solve", cfg);
  const LqModel model = model_from_config(cfg);
  const double budget0 = cfg.value("budget0", 0.0);
  const int L = cfg.value("L", 2000);
  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  const SolverOptions opts = solver_from_config(cfg);
  const GridSpec grids = grid_from_config(model, cfg, budget0);
  const SolveMode mode = cfg.value("mode", "general") == "mv"
                             ? SolveMode::mean_variance
                             : SolveMode::general;

  const auto tables = backward_solve(model, budget0, grids, L, seed, mode,
                                     opts);

  json summary;
  Eigen::VectorXd center(model.n_factors);
  for (int j = 0; j < model.n_factors; ++j) {
    const auto& g = grids.factor_grids[j];
    center[j] = g[g.size() / 2];
  }
  const Eigen::VectorXd f0 = cfg.contains("f0")
                                 ? vec_from_json(cfg["f0"])
                                 : center;
  summary["h0"] = eval_h(tables[0], budget0, f0);
  summary["f0"] = std::vector<double>(f0.data(), f0.data() + f0.size());
  summary["budget0"] = budget0;
  json attn = json::array();
  for (const auto& tab : tables) {
    const Eigen::VectorXd lam = eval_lambda_star(tab, budget0, center);
    attn.push_back(lam.sum());
  }
  summary["total_attention_at_center"] = std::move(attn);

  std::vector<std::string> table_paths;
  for (const auto& tab : tables) {
    const std::string path =
        (fs::path(args.out_dir) /
         ("table_t" + std::to_string(tab.period) + ".json")).string();
    tab.save(path);
    table_paths.push_back(path);
  }
  summary["tables"] = table_paths;
  write_file((fs::path(args.out_dir) / "summary.json").string(),
             summary.dump(2));
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_simulate(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "simulate", cfg);
  const LqModel model = model_from_config(cfg);
  const auto tables = tables_from_config(cfg);
  const double x0 = cfg.value("x0", 1.0);
  const double budget0 = cfg.value("budget0", 0.0);
  const Eigen::VectorXd f0 = f0_from_config(cfg, model.n_factors);
  const int episodes = cfg.value("episodes", 10000);
  const int inner = cfg.value("inner_samples", 4096);
  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  const int threads = cfg.value("threads", 0);
  const bool mv_mode = cfg.value("mode", "general") == "mv";

  json report;
  if (mv_mode) {
    MvContext mv;
    mv.rho = discount_factors(model);
    const double h0 = eval_h(tables[0], budget0, f0);
    mv.d = cfg.value("target_d", mv.rho[0] * x0 * 1.05);
    mv.mu = mu_star(h0, mv.rho[0], x0, mv.d);
    RolloutOptions opts;
    opts.inner_samples = inner;
    opts.mv = &mv;
    std::vector<double> wealth(episodes);
    parallel_for(static_cast<std::size_t>(episodes), threads,
                 [&](std::size_t e) {
                   const SeedSpec spec{seed, {0x6570ULL, e}};
                   wealth[e] = rollout(model, tables, x0, budget0, f0, spec,
                                       opts).x_path[model.horizon];
                 });
    const double mean =
        std::accumulate(wealth.begin(), wealth.end(), 0.0) / episodes;
    double ss = 0.0;
    for (double w : wealth) ss += (w - mean) * (w - mean);
    const double var = ss / (episodes - 1);
    report["mean_terminal_wealth"] = mean;
    report["sample_variance"] = var;
    report["target_d"] = mv.d;
    report["mu_star"] = mv.mu;
    report["predicted_variance"] = mv_variance(h0, mv.rho[0], x0, mv.d);
    report["h0"] = h0;
    report["episodes"] = episodes;
  } else {
    const CostCheck check = verify_cost(model, tables, x0, budget0, f0,
                                        episodes, seed, threads, inner);
    report["mc_cost"] = check.mc_cost;
    report["std_err"] = check.std_err;
    report["predicted"] = check.predicted;
    report["episodes"] = episodes;
  }

  const Trajectory sample =
      rollout(model, tables, x0, budget0, f0, SeedSpec{seed, {0x6570ULL, 0}},
              RolloutOptions{inner});
  write_file((fs::path(args.out_dir) / "trajectory.csv").string(),
             sample.to_csv());
  write_file((fs::path(args.out_dir) / "cost_report.json").string(),
             report.dump(2));
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_frontier(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "frontier", cfg);
  const double x0 = cfg.value("x0", 1.0);

  double h0, rho0;
  if (cfg.contains("h0") && cfg.contains("rho0")) {
    h0 = cfg["h0"].get<double>();
    rho0 = cfg["rho0"].get<double>();
  } else {
    const LqModel model = model_from_config(cfg);
    const auto tables = tables_from_config(cfg);
    const double budget0 = cfg.value("budget0", 0.0);
    const Eigen::VectorXd f0 = f0_from_config(cfg, model.n_factors);
    h0 = eval_h(tables[0], budget0, f0);
    rho0 = discount_factors(model)[0];
  }

  std::vector<double> targets;
  if (cfg.contains("targets") && cfg["targets"].is_array()) {
    targets = cfg["targets"].get<std::vector<double>>();
  } else {
    const json t = cfg.value("targets", json::object());
    const double lo = t.value("min", rho0 * x0);
    const double hi = t.value("max", rho0 * x0 * 1.2);
    const int count = t.value("count", 21);
    for (int i = 0; i < count; ++i)
      targets.push_back(count > 1 ? lo + (hi - lo) * i / (count - 1) : lo);
  }

  const auto frontier = efficient_frontier(h0, rho0, x0, targets);
  write_file((fs::path(args.out_dir) / "frontier.csv").string(),
             frontier_to_csv(frontier));
  std::cout << "h0=" << h0 << " rho0=" << rho0 << " points="
            << frontier.size() << '\n';
  return 0;
}

int cmd_estimate(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "estimate", cfg);
  const ReturnSeries series =
      load_returns(cfg.at("factor_file").get<std::string>(),
                   cfg.at("asset_file").get<std::string>());
  int start = 0, end = series.n_obs();
  if (cfg.contains("window")) {
    start = cfg["window"].value("start_index", 0);
    end = cfg["window"].value("end_index", series.n_obs());
  }
  const EstimatedParams p = estimate(series, start, end);

  const auto mat = [](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (long r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  json out;
  out["c"] = std::vector<double>(p.c.data(), p.c.data() + p.c.size());
  out["D"] = mat(p.D);
  out["sigma_eps"] = mat(p.sigma_eps);
  out["phi"] = mat(p.phi);
  out["sigma_eta"] = mat(p.sigma_eta);
  out["window_start"] = p.window_start;
  out["window_end"] = p.window_end;
  out["n_obs"] = p.n_obs;
  out["residual_df"] = p.residual_df;
  out["r_squared"] = std::vector<double>(
      p.r_squared.data(), p.r_squared.data() + p.r_squared.size());
  out["stationary"] = p.stationary;
  out["dropped_rows"] = series.dropped_rows;
  write_file((fs::path(args.out_dir) / "params.json").string(), out.dump(2));
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_backtest(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "backtest", cfg);
  const ReturnSeries series =
      load_returns(cfg.at("factor_file").get<std::string>(),
                   cfg.at("asset_file").get<std::string>());

  BacktestConfig bc;
  bc.horizon = cfg.value("horizon", bc.horizon);
  bc.window_len = cfg.value("window_len", bc.window_len);
  bc.budget0 = cfg.value("budget0", bc.budget0);
  bc.riskfree_gross = cfg.value("riskfree_gross", bc.riskfree_gross);
  bc.n_budget = cfg.value("n_budget", bc.n_budget);
  bc.n_factor = cfg.value("n_factor", bc.n_factor);
  bc.L = cfg.value("L", bc.L);
  bc.seed = cfg["seed"].get<std::uint64_t>();
  bc.target_delta = cfg.value("target_delta", bc.target_delta);
  bc.x0 = cfg.value("x0", bc.x0);
  bc.oos_start = cfg.value("oos_start", bc.oos_start);
  bc.oos_end = cfg.value("oos_end", bc.oos_end);
  bc.inner_samples = cfg.value("inner_samples", bc.inner_samples);
  bc.solver = solver_from_config(cfg);
  if (cfg.contains("theta"))
    bc.theta = vec_from_json(cfg["theta"]);
  else
    bc.theta = Eigen::VectorXd::Constant(series.factors.cols(), 0.69);

  const BacktestReport report = backtest(series, bc);
  write_file((fs::path(args.out_dir) / "backtest.json").string(),
             report.to_json_string());
  write_file((fs::path(args.out_dir) / "terminal_wealths.csv").string(),
             report.wealths_to_csv());
  std::cout << "episodes=" << report.terminal_wealths.size()
            << " skipped=" << report.skipped_dates.size()
            << " mean=" << report.mean << " std=" << report.stddev
            << " sharpe=" << report.sharpe << '\n';
  return 0;
}

int cmd_inspect(const CommonArgs& args) {
  const json cfg = load_config(args);
  write_resolved(args, "inspect", cfg);
  const auto tables = tables_from_config(cfg);
  const int k = tables.front().k();
  const double budget = cfg.value("budget", 0.0);
  const Eigen::VectorXd f = f0_from_config(cfg, k);

  for (const auto& tab : tables) {
    const double h = eval_h(tab, budget, f);
    const Eigen::VectorXd lam = eval_lambda_star(tab, budget, f);
    std::cout << "t=" << tab.period << " h=" << h << " lambda=[";
    for (int j = 0; j < k; ++j)
      std::cout << (j ? "," : "") << lam[j];
    std::cout << "] total=" << lam.sum() << '\n';
  }

  if (cfg.contains("cases")) {
    std::ostringstream csv;
    csv.precision(12);
    csv << "case,period";
    for (int j = 0; j < k; ++j) csv << ",lambda" << j;
    csv << ",total\n";
    for (const auto& c : cfg["cases"]) {
      const std::string label = c.value("label", "case");
      const Eigen::VectorXd fc = vec_from_json(c.at("f"));
      double remaining = c.value("budget", budget);
      for (const auto& tab : tables) {
        const Eigen::VectorXd lam = eval_lambda_star(tab, remaining, fc);
        csv << label << ',' << tab.period;
        for (int j = 0; j < k; ++j) csv << ',' << lam[j];
        csv << ',' << lam.sum() << '\n';
        remaining = std::max(0.0, remaining - lam.sum());
      }
    }
    write_file((fs::path(args.out_dir) / "cases.csv").string(), csv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-limited stochastic LQ portfolio toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string command;
  for (const char* name :
       {"estimate", "solve", "simulate", "frontier", "backtest", "inspect"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config_path, "JSON config file")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--seed", args.seed, "seed override");
    sub->add_option("--threads", args.threads, "worker thread cap");
    sub->add_option("--mode", args.mode, "general or mv")
        ->check(CLI::IsMember({"general", "mv"}));
    sub->callback([&args, &command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (command == "solve") return cmd_solve(args);
    if (command == "simulate") return cmd_simulate(args);
    if (command == "frontier") return cmd_frontier(args);
    if (command == "estimate") return cmd_estimate(args);
    if (command == "backtest") return cmd_backtest(args);
    if (command == "inspect") return cmd_inspect(args);
    std::cerr << "unknown command\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  }
}
