#pragma once

#include <functional>
#include <string>

#include "attnlq/grid.hpp"
#include "attnlq/sampler.hpp"

namespace attnlq {

/// h-weighted posterior moments of next-period returns:
/// m0 = E[h], m1 = E[h b], m2 = E[h b b'] (sample averages, m2 symmetrized).
struct Moments {
  double m0 = 0.0;
  Eigen::VectorXd m1;
  Eigen::MatrixXd m2;
};

Moments conditional_moments(const ValueFunction& h_next, double budget_next,
                            const Eigen::MatrixXd& factors,
                            const Eigen::MatrixXd& assets);

/// Euclidean projection onto {lambda >= 0, sum(lambda) <= budget}.
Eigen::VectorXd project_budget_simplex(const Eigen::VectorXd& v,
                                       double budget);

struct SolverOptions {
  int max_iterations = 500;    // projected gradient iterations per start
  double fd_step = 1e-4;       // central finite-difference step
  double pg_tol = 1e-6;        // projected-gradient norm stopping rule
  int random_starts = 2;       // random feasible multistart points
  int grad_subsample = 0;      // batch rows used for gradient/line-search
                               // evaluations; 0 = full batch
  int outer_subsample = 0;     // signal (outer-loop) draws used when the
                               // next-period value needs interpolation;
                               // 0 = full batch. The inner batch stays at L.
  int grad_outer_subsample = 0;  // signal draws for gradient/line-search
                                 // evaluations; 0 = grad_subsample. With the
                                 // inner loop Rao-Blackwellized the signal
                                 // loop carries most of the variance, so
                                 // search accuracy is bought more cheaply
                                 // with outer draws than inner rows.
  int descend_top = 0;         // run PGD from the best m starts only; 0 = all
  bool full_eval_starts = true;  // also evaluate lambda=0 and the uniform
                                 // split at full batch size when picking the
                                 // winner (guarantees optimizer dominance)
  int threads = 0;             // worker threads for grid cells; 0 = hardware

  std::string to_json_string() const;
};

/// Sample-average DP objective for one grid cell, set up once and evaluated
/// at many attention vectors with common random numbers.
///
/// The signal only enters through the posterior-mean shift K(s - prior),
/// so the inner-batch draws are shared across the outer signal loop and the
/// objective costs O(L^2) interpolations, not O(L^2) full resimulations.
/// The idiosyncratic asset noise is integrated out in closed form: given a
/// factor draw f, E[b | f] = c + D f and E[b b' | f] = (c + D f)(c + D f)'
/// + Sigma_eps, so only the factor and signal shocks are sampled. This is
/// the conditional expectation of the naive estimator, hence unbiased with
/// strictly smaller variance, and it keeps E[h b b'] well conditioned in
/// the directions spanned by the idiosyncratic noise alone.
class AttentionObjective {
 public:
  AttentionObjective(const LqModel& model, int t, double budget,
                     const Eigen::VectorXd& f_t, const ValueFunction& h_next,
                     const SampleBatch& batch, int outer_subsample = 0);

  int batch_size() const { return L_; }

  double value(const Eigen::VectorXd& lambda) const;
  double value(const Eigen::VectorXd& lambda, int subsample) const;
  /// Subsampled value with independent caps on the inner batch rows and the
  /// signal (outer-loop) draws.
  double value(const Eigen::VectorXd& lambda, int subsample,
               int outer_subsample) const;
  /// Full-batch value plus a combined Monte-Carlo standard error
  /// (signal-loop spread and inner-batch block spread).
  double value_with_stderr(const Eigen::VectorXd& lambda,
                           double* std_err) const;

 private:
  double evaluate(const Eigen::VectorXd& lambda, int rows, int outer_rows,
                  double* std_err) const;

  const LqModel& model_;
  const ValueFunction& h_next_;
  const SampleBatch& batch_;
  int t_;
  double budget_;
  Eigen::VectorXd f_;
  int L_;
  int outer_cap_;

  double a_next_, q_t_;
  Eigen::MatrixXd cost_a_;
  Eigen::VectorXd cost_p_;
  Eigen::VectorXd prior_mean_;
  Eigen::MatrixXd prior_precision_;
  Eigen::VectorXd asset_base_;  // c + D * prior mean
};

struct AttentionOptimum {
  Eigen::VectorXd lambda;
  double h = 0.0;
  CellDiagnostics diagnostics;
};

/// Minimizes the cell objective over the attention budget simplex:
/// multistart projected gradient descent with finite-difference gradients
/// and backtracking line search. The winner is re-evaluated on the full
/// batch; ties within 1e-12 break toward smaller l1 norm, then
/// lexicographically, so tables are deterministic.
AttentionOptimum optimize_attention(const LqModel& model, int t, double budget,
                                    const Eigen::VectorXd& f_t,
                                    const ValueFunction& h_next,
                                    const SampleBatch& batch,
                                    const SolverOptions& opts = {});

double g_objective(const Eigen::VectorXd& lambda, const LqModel& model, int t,
                   double budget, const Eigen::VectorXd& f_t,
                   const ValueFunction& h_next, const SampleBatch& batch);

enum class SolveMode { general, mean_variance };

/// Backward dynamic programming over all grid cells, t = T-1 down to 0.
/// Mean-variance mode zeroes the stage costs and sets the terminal
/// coefficient to 1. Deterministic given the seed: each cell draws its own
/// stream keyed by (period, budget index, factor index), independent of the
/// worker count. Returns tables indexed by period (element 0 is t = 0).
std::vector<PolicyTable> backward_solve(const LqModel& model, double budget0,
                                        const GridSpec& grids, int L,
                                        std::uint64_t base_seed,
                                        SolveMode mode = SolveMode::general,
                                        const SolverOptions& opts = {});

/// Runs `fn(i)` for i in [0, count) on `threads` workers (0 = hardware
/// concurrency). Results must be written to pre-indexed slots.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace attnlq
