#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "piadm/sampler_common.hpp"
#include "piadm/schedule.hpp"
#include "piadm/sde_sampler.hpp"  // StepMode, PicardOptions, RunOptions

namespace piadm {

// Friction-only phase-space propagator: the matrix exponential of
// [[0, I], [0, -gamma I]] * t, stored through its two distinct scalars.
struct GMatrix {
    double gamma;
    double t;
    double pos_vel;    // (1 - e^{-gamma t}) / gamma
    double vel_decay;  // e^{-gamma t}

    static GMatrix make(double gamma, double t);
    GMatrix compose(const GMatrix& other) const;  // G(this.t + other.t)

    // [u; v] -> [u + pos_vel v; vel_decay v]
    void apply(Eigen::VectorXd& u, Eigen::VectorXd& v) const;
};

struct PhaseState {
    Eigen::VectorXd u;
    Eigen::VectorXd v;
};

// One corrector step of length eps: the state advances by G(eps) plus a
// score drift and Gaussian noise whose shape depends on the mode.
struct CorrectorStepCoeffs {
    double g_pos_vel;   // G(eps) upper-right scalar
    double g_vel;      // G(eps) lower-right scalar
    double drift_u;    // weight of the frozen score in the position channel
    double drift_v;    // weight of the frozen score in the velocity channel
    // exact mode: lower Cholesky of the 2x2 per-coordinate noise covariance
    double l_uu = 0.0, l_vu = 0.0, l_vv = 0.0;
};
CorrectorStepCoeffs corrector_step_coeffs(double gamma, double eps, StepMode mode);

// Per-coordinate covariance of the Gaussian injected by one exact step of
// the underdamped dynamics (position row first).
Eigen::Matrix2d ulmc_step_noise_cov(double gamma, double eps);

// Covariance of one step's noise contribution observed `offset_steps` steps
// later (offset 1 = immediately after the step).
Eigen::Matrix2d corrector_noise_cov_exact(double gamma, double eps, int offset_steps);

// The literal per-step scalar variance printed for the velocity channel,
// with r = M - j + 1 offset steps.
double corrector_noise_cov_paper(double gamma, double eps, int offset_steps);

// Deterministic probability-flow block: depth-K Picard iteration of
// y_{m+1} = e^{eps/2} y_m + (e^{eps/2}-1) s(t_n + tau_m, y_m^{prev}).
std::pair<Eigen::VectorXd, std::vector<double>> run_predictor_block(
    const DiscretizationPlan& plan, int n, const Eigen::VectorXd& start_state,
    const BackwardScoreFn& score, PicardOptions opts = {}, ScoreCounter* counter = nullptr);

// Noise drawn once per corrector block; layout depends on the mode.
struct CorrectorNoise {
    StepMode mode = StepMode::Exact;
    // exact: z1/z2 standard normal d-vectors per step (correlated via Cholesky)
    std::vector<Eigen::VectorXd> z1, z2;
    // paper_verbatim: pre-scaled velocity kicks per step
    std::vector<Eigen::VectorXd> xi;
};

CorrectorNoise make_corrector_noise(const CorrectorPlan& cplan, int d, StepMode mode,
                                    std::uint64_t seed, std::uint64_t sample, int block,
                                    int inner_block);

// Depth-K' Picard iteration of the momentum-augmented correction dynamics
// with the score frozen at one backward time.
std::pair<PhaseState, std::vector<double>> run_corrector_block(
    const CorrectorPlan& cplan, const PhaseState& start, const BackwardScoreFn& score,
    double frozen_time, const CorrectorNoise& noise, PicardOptions opts = {},
    ScoreCounter* counter = nullptr);

// Sequential reference for the corrector: one step at a time, score at the
// current position.
PhaseState run_sequential_corrector_block(const CorrectorPlan& cplan, const PhaseState& start,
                                          const BackwardScoreFn& score, double frozen_time,
                                          const CorrectorNoise& noise,
                                          StepMode mode = StepMode::Exact,
                                          ScoreCounter* counter = nullptr);

// Predictor + corrector sampler; momentum is resampled fresh at the start of
// each outer block and carried through the inner corrector blocks.
SamplerOutput run_piadm_ode(const DiscretizationPlan& plan, const CorrectorPlan& cplan, int d,
                            const BackwardScoreFn& score, std::uint64_t seed,
                            std::int64_t n_samples, RunOptions opts = {},
                            ScoreCounter* counter = nullptr);

// Serial reference: sequential probability-flow steps plus sequential
// corrector steps, sharing the parallel sampler's noise streams.
SamplerOutput run_sequential_ode(const DiscretizationPlan& plan, const CorrectorPlan& cplan,
                                 int d, const BackwardScoreFn& score, std::uint64_t seed,
                                 std::int64_t n_samples, StepMode mode = StepMode::Exact,
                                 ScoreCounter* counter = nullptr);

}  // namespace piadm
