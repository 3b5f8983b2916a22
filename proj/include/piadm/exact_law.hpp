#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "piadm/ode_sampler.hpp"
#include "piadm/schedule.hpp"
#include "piadm/score_oracle.hpp"
#include "piadm/sde_sampler.hpp"
#include "piadm/target.hpp"

namespace piadm {

struct GaussianLaw {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;  // symmetry to 1e-12, eigenvalues >= -1e-10
    static GaussianLaw standard(int d);
};

// x -> A x + b + L n with L L^T = noise_cov; every sampler step specializes
// to this form once the score is affine.
struct AffineStep {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::MatrixXd noise_cov;

    Eigen::VectorXd apply(const Eigen::VectorXd& x, const Eigen::VectorXd& noise) const;
};

GaussianLaw propagate(const GaussianLaw& law, const AffineStep& step);

// Affine representation s(x) = -P (x - mu) of a Gaussian target's score at
// one backward time.
struct GaussianScoreParams {
    Eigen::MatrixXd precision;
    Eigen::VectorXd mean;

    Eigen::VectorXd score(const Eigen::VectorXd& x) const {
        return -(precision * (x - mean));
    }
};
GaussianScoreParams gaussian_score_params(const TargetSpec& target, double horizon,
                                          double backward_t);

AffineStep sde_affine_step(double eps, const GaussianScoreParams& p, StepMode mode);
// first_step: the printed probability-flow rule halves the homogeneous term
// once per block.
AffineStep predictor_affine_step(double eps, const GaussianScoreParams& p, StepMode mode,
                                 bool first_step);
// 2d x 2d phase-space step; steps_to_end = M - j + 1 sets the printed noise
// scale in paper_verbatim mode.
AffineStep corrector_affine_step(double gamma, double eps, const GaussianScoreParams& p,
                                 StepMode mode, int steps_to_end);

// Exact one-shot propagator of the linear momentum dynamics
// du = v dt, dv = (-gamma v - P (u - mu)) dt + sqrt(2 gamma) dW over time t,
// without freezing the score within the step. Preserves the product law
// N(mu, P^{-1}) x N(0, I) exactly.
AffineStep ulmc_exact_linear_step(double gamma, const Eigen::MatrixXd& precision,
                                  const Eigen::VectorXd& mean, double t);

// Law of the sampler output for a single-Gaussian target, stepping the exact
// law through every discrete update (fixed-point semantics of the Picard
// iteration). `trace` collects the law after each step when non-null.
GaussianLaw propagate_sde_plan(const DiscretizationPlan& plan, const TargetSpec& target,
                               StepMode mode, std::vector<GaussianLaw>* trace = nullptr);
GaussianLaw propagate_ode_plan(const DiscretizationPlan& plan, const CorrectorPlan& cplan,
                               const TargetSpec& target, StepMode mode,
                               std::vector<GaussianLaw>* trace = nullptr);

// Moments of the forward marginal at time t (mixtures allowed).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> marginal_moments(const TargetSpec& target, double t);

double kl_gaussian(const GaussianLaw& p, const GaussianLaw& q);
double w2_gaussian(const GaussianLaw& p, const GaussianLaw& q);
double tv_bound_from_kl(double kl);

// Symmetric PSD square root through an eigendecomposition.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

}  // namespace piadm
