#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "piadm/target.hpp"

namespace piadm {

// One Gaussian component of a forward-time marginal.
struct MarginalComponent {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    double weight;
};

// Law of the forward noising process at time t applied to `target`:
// each component (mu, Sigma) maps to (e^{-t/2} mu, e^{-t} Sigma + (1-e^{-t}) I).
std::vector<MarginalComponent> ou_marginal(const TargetSpec& target, double t);

// Exact gradient of log p_t for the OU-evolved target, with the backward-time
// view and cached per-time factorizations. All evaluations are pure in
// (t, x) and safe to call concurrently.
class ScoreOracle {
public:
    ScoreOracle(TargetSpec target, double horizon, double box_radius = 0.0);

    const TargetSpec& target() const { return target_; }
    double horizon() const { return horizon_; }
    int dimension() const { return target_.dimension(); }

    // Metadata bounds valid on the declared box [-box_radius, box_radius]^d.
    double lipschitz_bound() const { return lipschitz_; }
    double magnitude_bound() const { return magnitude_; }
    double box_radius() const { return box_radius_; }

    // grad log p_t(x), forward time t in [0, horizon + slack].
    Eigen::VectorXd score(double t, const Eigen::VectorXd& x) const;

    // grad log of the time-reversed marginal: score at forward time T - t.
    // Throws std::domain_error outside [0, horizon].
    Eigen::VectorXd backward_score(double t, const Eigen::VectorXd& x) const;

    // log p_t(x); used by finite-difference checks and responsibilities.
    double log_density(double t, const Eigen::VectorXd& x) const;

    // Draw from p_t exactly (component choice + Gaussian), keyed by `key`.
    Eigen::VectorXd sample_marginal(double t, std::uint64_t key) const;

private:
    struct Cached {
        std::vector<Eigen::VectorXd> means;
        std::vector<Eigen::MatrixXd> inv;       // Sigma_t^{-1} per component
        std::vector<Eigen::MatrixXd> chol;      // lower Cholesky of Sigma_t
        std::vector<double> log_norm;           // -d/2 log(2 pi) - 1/2 logdet
    };

    const Cached& cached(double t) const;
    void compute_bounds();

    TargetSpec target_;
    double horizon_;
    double box_radius_;
    double lipschitz_ = 0.0;
    double magnitude_ = 0.0;

    mutable std::shared_mutex cache_mutex_;
    mutable std::unordered_map<std::uint64_t, std::shared_ptr<const Cached>> cache_;
};

// Emulates learned-score error: adds a deterministic pseudo-random direction
// of controlled magnitude on top of an exact oracle.
class PerturbedOracle {
public:
    enum class Mode { L2Budget, LinfBudget };

    PerturbedOracle(std::shared_ptr<const ScoreOracle> base, Mode mode, double amplitude,
                    std::uint64_t seed);

    const ScoreOracle& base() const { return *base_; }
    Mode mode() const { return mode_; }
    double amplitude() const { return amplitude_; }

    // Pointwise perturbation magnitude implied by the budget.
    double pointwise_magnitude() const { return pointwise_; }

    double lipschitz_bound() const { return base_->lipschitz_bound(); }
    double magnitude_bound() const { return base_->magnitude_bound() + pointwise_; }

    Eigen::VectorXd score(double t, const Eigen::VectorXd& x) const;
    Eigen::VectorXd backward_score(double t, const Eigen::VectorXd& x) const;

private:
    Eigen::VectorXd direction(double forward_t) const;

    std::shared_ptr<const ScoreOracle> base_;
    Mode mode_;
    double amplitude_;
    double pointwise_;
    std::uint64_t seed_;
};

}  // namespace piadm
