#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "piadm/sampler_common.hpp"
#include "piadm/schedule.hpp"

namespace piadm {

enum class StepMode { Exact, PaperVerbatim };

// Coefficients of one exponential-integrator step of length eps:
// y' = decay * y + score_weight * s + noise_std * xi.
struct SdeStepCoeffs {
    double decay;
    double score_weight;
    double noise_std;
};
SdeStepCoeffs sde_step_coeffs(double eps, StepMode mode = StepMode::Exact);

// y' = e^{eps/2} y + 2 (e^{eps/2} - 1) s(t_abs, y) + sqrt(e^{eps} - 1) xi.
Eigen::VectorXd sequential_exp_integrator_step(const Eigen::VectorXd& state, double t_abs,
                                               double eps, const BackwardScoreFn& score,
                                               const Eigen::VectorXd& noise,
                                               StepMode mode = StepMode::Exact);

// Grid-wide iterate state for one block. The noise cache is filled once per
// block before iteration 0 and never regenerated; node 0 is pinned to the
// block start state.
struct PicardWorkspace {
    int d = 0;
    Eigen::VectorXd block_start_state;
    std::vector<Eigen::VectorXd> prev_states;
    std::vector<Eigen::VectorXd> next_states;
    std::vector<Eigen::VectorXd> noise_cache;  // standard normals, scaled at use

    void init(const Eigen::VectorXd& start, int grid_nodes);
};

struct PicardOptions {
    int iterations = 0;              // fixed depth; <=0 means use plan depth
    double residual_tol = 0.0;       // >0: stop early once sup residual^2 < tol
    int max_iterations = 1 << 20;    // safety cap when residual_tol drives the loop
    StepMode mode = StepMode::Exact;
    double divergence_factor = 1e6;  // residual growth beyond this aborts
    double lipschitz_hint = 1.0;     // only used in divergence diagnostics
};

struct BlockResult {
    Eigen::VectorXd end_state;
    std::vector<double> residuals;  // sup-norm-squared per iteration
    std::int64_t rounds = 0;
    std::int64_t score_evals = 0;
};

// Depth-K Picard iteration of the per-block exponential integrator; all grid
// nodes of one iteration are independent given the previous iterate.
BlockResult run_piadm_sde_block(const DiscretizationPlan& plan, int n, PicardWorkspace& ws,
                                const BackwardScoreFn& score, const PicardOptions& opts,
                                ScoreCounter* counter = nullptr);

// Convenience wrapper that seeds the workspace noise deterministically from
// (seed, sample, block) and starts from `start_state`.
std::pair<Eigen::VectorXd, std::vector<double>> run_piadm_sde_block(
    const DiscretizationPlan& plan, int n, const Eigen::VectorXd& start_state,
    const BackwardScoreFn& score, std::uint64_t seed, std::uint64_t sample = 0,
    PicardOptions opts = {});

void fill_block_noise(PicardWorkspace& ws, int grid_steps, int d, std::uint64_t seed,
                      std::uint64_t sample, int block);

struct RunOptions {
    PicardOptions picard;
    int residual_batch = 256;  // samples contributing to the mean residual trace
};

// Parallel sampler: every sample chains blocks from a standard normal start.
SamplerOutput run_piadm_sde(const DiscretizationPlan& plan, int d, const BackwardScoreFn& score,
                            std::uint64_t seed, std::int64_t n_samples, RunOptions opts = {},
                            ScoreCounter* counter = nullptr);

// Serial reference: the same integrator applied step by step over the full
// flattened grid (one score evaluation per sequential round).
SamplerOutput run_sequential_sde(const DiscretizationPlan& plan, int d,
                                 const BackwardScoreFn& score, std::uint64_t seed,
                                 std::int64_t n_samples, StepMode mode = StepMode::Exact,
                                 ScoreCounter* counter = nullptr);

}  // namespace piadm
