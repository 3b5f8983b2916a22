#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace piadm {

// Unbiased sample moments with per-entry standard errors. Mean errors are
// sd/sqrt(n); covariance-entry errors use the Gaussian asymptotic
// sqrt((c_ii c_jj + c_ij^2) / n).
struct MomentSummary {
    std::int64_t n = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::VectorXd mean_se;
    Eigen::MatrixXd cov_se;
};

MomentSummary moment_summary(const std::vector<Eigen::VectorXd>& samples);

// Average one-dimensional transport distance over seeded random unit
// projections; a lower proxy for the full quadratic transport distance.
double sliced_w2(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                 int n_projections, std::uint64_t seed);

// Per-block residual decay diagnostics of a Picard run.
struct ResidualTrace {
    std::vector<std::vector<double>> per_block;  // sup-squared residual per iteration
};

inline constexpr double kRateExactSentinel = -std::numeric_limits<double>::infinity();

// Least-squares slope of log residual vs iteration over iterations
// [2, K-1]; returns the sentinel when residuals vanish exactly.
double picard_rate(const std::vector<double>& residuals);
std::vector<double> picard_rates(const ResidualTrace& trace);

}  // namespace piadm
