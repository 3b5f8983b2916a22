#include "piadm/sde_sampler.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "piadm/rng.hpp"

namespace piadm {

SdeStepCoeffs sde_step_coeffs(double eps, StepMode mode) {
    SdeStepCoeffs c;
    const double em_half = std::expm1(0.5 * eps);
    c.decay = 1.0 + em_half;
    c.score_weight = (mode == StepMode::Exact) ? 2.0 * em_half : 2.0 * std::expm1(eps);
    c.noise_std = std::sqrt(std::expm1(eps));
    return c;
}

Eigen::VectorXd sequential_exp_integrator_step(const Eigen::VectorXd& state, double t_abs,
                                               double eps, const BackwardScoreFn& score,
                                               const Eigen::VectorXd& noise, StepMode mode) {
    if (!(eps > 0.0)) throw std::invalid_argument("step: eps must be positive");
    const SdeStepCoeffs c = sde_step_coeffs(eps, mode);
    const Eigen::VectorXd s = score(t_abs, state);
    if (!s.allFinite()) {
        std::ostringstream msg;
        msg << "step: non-finite score at t=" << t_abs;
        throw DivergenceError(msg.str());
    }
    return c.decay * state + c.score_weight * s + c.noise_std * noise;
}

void PicardWorkspace::init(const Eigen::VectorXd& start, int grid_nodes) {
    d = static_cast<int>(start.size());
    block_start_state = start;
    prev_states.assign(grid_nodes, start);
    next_states.assign(grid_nodes, start);
}

void fill_block_noise(PicardWorkspace& ws, int grid_steps, int d, std::uint64_t seed,
                      std::uint64_t sample, int block) {
    rng::Key key(seed);
    key = key.with(rng::kBlockNoise).with(sample).with(static_cast<std::uint64_t>(block));
    ws.noise_cache.resize(grid_steps);
    for (int m = 0; m < grid_steps; ++m)
        ws.noise_cache[m] = rng::normal_vector(key.with(static_cast<std::uint64_t>(m)), d);
}

BlockResult run_piadm_sde_block(const DiscretizationPlan& plan, int n, PicardWorkspace& ws,
                                const BackwardScoreFn& score, const PicardOptions& opts,
                                ScoreCounter* counter) {
    const auto& grid = plan.grids.at(n);
    const int M = static_cast<int>(grid.size()) - 1;
    if (static_cast<int>(ws.noise_cache.size()) != M)
        throw std::invalid_argument("block: noise cache size mismatch");
    if (static_cast<int>(ws.prev_states.size()) != M + 1)
        throw std::invalid_argument("block: workspace size mismatch");
    const double t_n = plan.block_start(n);

    const int depth = opts.iterations > 0 ? opts.iterations : plan.picard_depth;
    const bool adaptive = opts.residual_tol > 0.0;
    const int max_iter = adaptive ? opts.max_iterations : depth;

    std::vector<SdeStepCoeffs> coeffs(M);
    for (int m = 0; m < M; ++m) coeffs[m] = sde_step_coeffs(grid[m + 1] - grid[m], opts.mode);

    BlockResult out;
    std::vector<Eigen::VectorXd> scores(M + 1);
    for (int k = 0; k < max_iter; ++k) {
        if (counter) counter->begin_round(M + 1);
        parallel_for(M + 1, [&](std::int64_t m) {
            scores[m] = score(t_n + grid[m], ws.prev_states[m]);
        });
        out.rounds += 1;
        out.score_evals += M + 1;
        for (int m = 0; m <= M; ++m) {
            if (!scores[m].allFinite()) {
                std::ostringstream msg;
                msg << "block " << n << ": non-finite score at node " << m;
                throw DivergenceError(msg.str());
            }
        }

        ws.next_states[0] = ws.block_start_state;
        for (int m = 0; m < M; ++m) {
            ws.next_states[m + 1] = coeffs[m].decay * ws.next_states[m] +
                                    coeffs[m].score_weight * scores[m] +
                                    coeffs[m].noise_std * ws.noise_cache[m];
        }

        double res = 0.0;
        for (int m = 0; m <= M; ++m)
            res = std::max(res, (ws.next_states[m] - ws.prev_states[m]).squaredNorm());
        out.residuals.push_back(res);
        if (!std::isfinite(res) ||
            (out.residuals.front() > 0.0 && res > opts.divergence_factor * out.residuals.front())) {
            const double diag = plan.contraction_factor(opts.lipschitz_hint);
            std::ostringstream msg;
            msg << "block " << n << ": residual " << res << " grew beyond "
                << opts.divergence_factor << "x initial; L^2 h e^{2h} = " << diag;
            throw DivergenceError(msg.str());
        }
        ws.prev_states.swap(ws.next_states);
        if (adaptive && res < opts.residual_tol) break;
    }
    out.end_state = ws.prev_states[M];
    return out;
}

std::pair<Eigen::VectorXd, std::vector<double>> run_piadm_sde_block(
    const DiscretizationPlan& plan, int n, const Eigen::VectorXd& start_state,
    const BackwardScoreFn& score, std::uint64_t seed, std::uint64_t sample, PicardOptions opts) {
    const int M = plan.steps_in_block(n);
    PicardWorkspace ws;
    ws.init(start_state, M + 1);
    fill_block_noise(ws, M, static_cast<int>(start_state.size()), seed, sample, n);
    BlockResult r = run_piadm_sde_block(plan, n, ws, score, opts, nullptr);
    return {std::move(r.end_state), std::move(r.residuals)};
}

namespace {

Eigen::VectorXd initial_state(std::uint64_t seed, std::uint64_t sample, int d) {
    rng::Key key(seed);
    return rng::normal_vector(key.with(rng::kInitState).with(sample), d);
}

void fold_residual_histories(SamplerReport& report,
                             const std::vector<std::vector<std::vector<double>>>& hist) {
    if (hist.empty() || hist[0].empty()) return;
    report.residual_history = hist[0];
    report.residual_history_mean = hist[0];
    const std::size_t N = hist[0].size();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < report.residual_history_mean[n].size(); ++k) {
            double acc = 0.0;
            std::size_t cnt = 0;
            for (const auto& h : hist) {
                if (n < h.size() && k < h[n].size()) {
                    acc += h[n][k];
                    ++cnt;
                }
            }
            if (cnt > 0) report.residual_history_mean[n][k] = acc / static_cast<double>(cnt);
        }
    }
}

}  // namespace

SamplerOutput run_piadm_sde(const DiscretizationPlan& plan, int d, const BackwardScoreFn& score,
                            std::uint64_t seed, std::int64_t n_samples, RunOptions opts,
                            ScoreCounter* counter) {
    const auto t0 = std::chrono::steady_clock::now();
    SamplerOutput out;
    out.samples.resize(n_samples);

    const std::int64_t n_hist = std::min<std::int64_t>(n_samples, opts.residual_batch);
    std::vector<std::vector<std::vector<double>>> hist(n_hist);
    std::vector<std::int64_t> rounds_per_sample(n_samples, 0);

    parallel_for(n_samples, [&](std::int64_t i) {
        Eigen::VectorXd y = initial_state(seed, static_cast<std::uint64_t>(i), d);
        std::vector<std::vector<double>> local_hist;
        for (int n = 0; n < plan.N; ++n) {
            const int M = plan.steps_in_block(n);
            PicardWorkspace ws;
            ws.init(y, M + 1);
            fill_block_noise(ws, M, d, seed, static_cast<std::uint64_t>(i), n);
            BlockResult r =
                run_piadm_sde_block(plan, n, ws, score, opts.picard, i == 0 ? counter : nullptr);
            y = r.end_state;
            rounds_per_sample[i] += r.rounds;
            if (i < n_hist) local_hist.push_back(std::move(r.residuals));
        }
        out.samples[i] = y;
        if (i < n_hist) hist[i] = std::move(local_hist);
    });

    SamplerReport& rep = out.report;
    std::int64_t max_rounds = 0;
    for (auto r : rounds_per_sample) max_rounds = std::max(max_rounds, r);
    rep.sequential_rounds = max_rounds;
    std::int64_t width = 0;
    for (int n = 0; n < plan.N; ++n)
        width = std::max<std::int64_t>(width, plan.steps_in_block(n) + 1);
    rep.max_parallel_width = width;

    std::int64_t evals = 0;
    if (opts.picard.residual_tol > 0.0 && !hist.empty()) {
        for (int n = 0; n < plan.N; ++n)
            evals += static_cast<std::int64_t>(hist[0][n].size()) * (plan.steps_in_block(n) + 1);
    } else {
        const int K = opts.picard.iterations > 0 ? opts.picard.iterations : plan.picard_depth;
        for (int n = 0; n < plan.N; ++n)
            evals += static_cast<std::int64_t>(K) * (plan.steps_in_block(n) + 1);
    }
    rep.total_score_evals = evals;
    fold_residual_histories(rep, hist);
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

SamplerOutput run_sequential_sde(const DiscretizationPlan& plan, int d,
                                 const BackwardScoreFn& score, std::uint64_t seed,
                                 std::int64_t n_samples, StepMode mode, ScoreCounter* counter) {
    const auto t0 = std::chrono::steady_clock::now();
    SamplerOutput out;
    out.samples.resize(n_samples);

    parallel_for(n_samples, [&](std::int64_t i) {
        Eigen::VectorXd y = initial_state(seed, static_cast<std::uint64_t>(i), d);
        for (int n = 0; n < plan.N; ++n) {
            const auto& grid = plan.grids[n];
            const int M = static_cast<int>(grid.size()) - 1;
            const double t_n = plan.block_start(n);
            rng::Key key(seed);
            key = key.with(rng::kBlockNoise)
                      .with(static_cast<std::uint64_t>(i))
                      .with(static_cast<std::uint64_t>(n));
            for (int m = 0; m < M; ++m) {
                const Eigen::VectorXd xi =
                    rng::normal_vector(key.with(static_cast<std::uint64_t>(m)), d);
                if (counter && i == 0) counter->begin_round(1);
                y = sequential_exp_integrator_step(y, t_n + grid[m], grid[m + 1] - grid[m], score,
                                                   xi, mode);
            }
        }
        out.samples[i] = y;
    });

    SamplerReport& rep = out.report;
    rep.sequential_rounds = static_cast<std::int64_t>(plan.total_steps());
    rep.total_score_evals = rep.sequential_rounds;
    rep.max_parallel_width = 1;
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace piadm
