#pragma once

// Shared test utilities: independent oracles (Gauss-Hermite quadrature for
// the one-period objective, a no-attention moment recursion) and small
// model builders used across the test binaries.

#include <utility>
#include <vector>

#include "attnlq/market.hpp"

namespace attnlq_test {

// Nodes and weights for E[g(Z)], Z ~ N(0,1), via Golub-Welsch on the
// probabilists' Hermite recurrence (tridiagonal with off-diagonals sqrt(i)).
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n);

// Quadrature value of the one-period objective g(lambda) for a k=1 model
// with a constant next-period value coefficient: 64 nodes over the signal
// shift, 32 nodes over the posterior factor.
double quadrature_g(const attnlq::LqModel& model, double h_terminal,
                    double f0, double lambda);

// min over lambda in {0, step, ..., budget} of quadrature_g.
double quadrature_min(const attnlq::LqModel& model, double h_terminal,
                      double f0, double budget, double step = 0.01);

// Stage value q_t + a^2 m0 - (p + a m1)' (A + m2)^{-1} (p + a m1).
double lq_cell_value(double q_t, double a, const Eigen::MatrixXd& A,
                     const Eigen::VectorXd& p, double m0,
                     const Eigen::VectorXd& m1, const Eigen::MatrixXd& m2);

// Independent backward recursion for the zero-attention problem: prior
// moments only, same per-cell sample streams as backward_solve. Returns
// one flat h table per period (factor cells only; the budget is 0).
std::vector<std::vector<double>> no_attention_recursion(
    const attnlq::LqModel& model, const attnlq::GridSpec& grids, int L,
    std::uint64_t seed);

double mean_of(const std::vector<double>& v);
double sd_of(const std::vector<double>& v);

// T=1, k=1, n=2 instance used by the quadrature-oracle checks.
attnlq::LqModel one_period_model();

// T=3, k=1, n=2 instance for recursion / cost-consistency / frontier checks.
attnlq::LqModel small_multiperiod_model();

// T=3, k=3, n=5 synthetic instance at the scale of the empirical study.
attnlq::LqModel paper_scale_model();

}  // namespace attnlq_test
