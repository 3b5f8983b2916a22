#include "piadm/ode_sampler.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "piadm/rng.hpp"

namespace piadm {

GMatrix GMatrix::make(double gamma, double t) {
    if (!(gamma > 0.0)) throw std::invalid_argument("G: gamma must be positive");
    GMatrix g;
    g.gamma = gamma;
    g.t = t;
    g.pos_vel = -std::expm1(-gamma * t) / gamma;
    g.vel_decay = std::exp(-gamma * t);
    return g;
}

GMatrix GMatrix::compose(const GMatrix& other) const {
    if (gamma != other.gamma) throw std::invalid_argument("G: friction mismatch");
    GMatrix g;
    g.gamma = gamma;
    g.t = t + other.t;
    g.pos_vel = other.pos_vel + pos_vel * other.vel_decay;
    g.vel_decay = vel_decay * other.vel_decay;
    return g;
}

void GMatrix::apply(Eigen::VectorXd& u, Eigen::VectorXd& v) const {
    u += pos_vel * v;
    v *= vel_decay;
}

Eigen::Matrix2d ulmc_step_noise_cov(double gamma, double eps) {
    const double e1 = -std::expm1(-gamma * eps);   // 1 - e^{-g e}
    const double e2 = -std::expm1(-2.0 * gamma * eps);
    double var_u;
    if (gamma * eps < 1e-3) {
        // series: cubic leading order suffers cancellation in the direct form
        const double ge = gamma * eps;
        var_u = gamma * eps * eps * eps *
                (2.0 / 3.0 - 0.5 * ge + (7.0 / 30.0) * ge * ge - (1.0 / 12.0) * ge * ge * ge);
    } else {
        var_u = (2.0 / gamma) * (eps - 2.0 * e1 / gamma + e2 / (2.0 * gamma));
    }
    const double var_v = e2;
    const double cov_uv = e1 * e1 / gamma;
    Eigen::Matrix2d c;
    c << var_u, cov_uv, cov_uv, var_v;
    return c;
}

CorrectorStepCoeffs corrector_step_coeffs(double gamma, double eps, StepMode mode) {
    if (!(gamma > 0.0 && eps > 0.0))
        throw std::invalid_argument("corrector: gamma and eps must be positive");
    CorrectorStepCoeffs c;
    const double beta = -std::expm1(-gamma * eps) / gamma;  // (1 - e^{-g e}) / g
    c.g_pos_vel = beta;
    c.g_vel = std::exp(-gamma * eps);
    if (mode == StepMode::Exact) {
        c.drift_u = (eps - beta) / gamma;
        c.drift_v = beta;
        const Eigen::Matrix2d cov = ulmc_step_noise_cov(gamma, eps);
        c.l_uu = std::sqrt(cov(0, 0));
        c.l_vu = cov(1, 0) / c.l_uu;
        c.l_vv = std::sqrt(std::max(0.0, cov(1, 1) - c.l_vu * c.l_vu));
    } else {
        // the printed update: (I - G(eps)) applied to [0; s]
        c.drift_u = -beta;
        c.drift_v = gamma * beta;  // 1 - e^{-g e}
    }
    return c;
}

Eigen::Matrix2d corrector_noise_cov_exact(double gamma, double eps, int offset_steps) {
    if (offset_steps < 1) throw std::invalid_argument("corrector: offset must be >= 1");
    const Eigen::Matrix2d base = ulmc_step_noise_cov(gamma, eps);
    const GMatrix g = GMatrix::make(gamma, (offset_steps - 1) * eps);
    Eigen::Matrix2d G;
    G << 1.0, g.pos_vel, 0.0, g.vel_decay;
    return G * base * G.transpose();
}

double corrector_noise_cov_paper(double gamma, double eps, int offset_steps) {
    if (offset_steps < 1) throw std::invalid_argument("corrector: offset must be >= 1");
    const double e1 = -std::expm1(-gamma * eps);
    return 2.0 * gamma * (1.0 + 1.0 / (gamma * gamma)) * e1 * e1 *
           std::exp(-2.0 * gamma * offset_steps * eps);
}

std::pair<Eigen::VectorXd, std::vector<double>> run_predictor_block(
    const DiscretizationPlan& plan, int n, const Eigen::VectorXd& start_state,
    const BackwardScoreFn& score, PicardOptions opts, ScoreCounter* counter) {
    const auto& grid = plan.grids.at(n);
    const int M = static_cast<int>(grid.size()) - 1;
    const double t_n = plan.block_start(n);
    const int depth = opts.iterations > 0 ? opts.iterations : plan.picard_depth;
    const bool adaptive = opts.residual_tol > 0.0;
    const int max_iter = adaptive ? opts.max_iterations : depth;

    std::vector<double> decay(M), weight(M);
    for (int m = 0; m < M; ++m) {
        const double eps = grid[m + 1] - grid[m];
        decay[m] = std::exp(0.5 * eps);
        weight[m] = (opts.mode == StepMode::Exact) ? std::expm1(0.5 * eps)
                                                   : 0.5 * std::expm1(eps);
    }

    std::vector<Eigen::VectorXd> prev(M + 1, start_state), next(M + 1, start_state);
    std::vector<Eigen::VectorXd> scores(M + 1);
    std::vector<double> residuals;
    for (int k = 0; k < max_iter; ++k) {
        if (counter) counter->begin_round(M + 1);
        parallel_for(M + 1, [&](std::int64_t m) { scores[m] = score(t_n + grid[m], prev[m]); });
        next[0] = start_state;
        if (opts.mode == StepMode::Exact) {
            for (int m = 0; m < M; ++m)
                next[m + 1] = decay[m] * next[m] + weight[m] * scores[m];
        } else {
            // printed rule halves the homogeneous part; run the recurrence on
            // the halved accumulator so node 0 can keep the start state
            Eigen::VectorXd acc = 0.5 * start_state;
            for (int m = 0; m < M; ++m) {
                acc = decay[m] * acc + weight[m] * scores[m];
                next[m + 1] = acc;
            }
        }
        double res = 0.0;
        for (int m = 0; m <= M; ++m) res = std::max(res, (next[m] - prev[m]).squaredNorm());
        residuals.push_back(res);
        if (!std::isfinite(res) ||
            (residuals.front() > 0.0 && res > opts.divergence_factor * residuals.front())) {
            std::ostringstream msg;
            msg << "predictor block " << n << ": residual " << res << " diverged; L^2 h e^{2h} = "
                << plan.contraction_factor(opts.lipschitz_hint);
            throw DivergenceError(msg.str());
        }
        prev.swap(next);
        if (adaptive && res < opts.residual_tol) break;
    }
    return {prev[M], residuals};
}

CorrectorNoise make_corrector_noise(const CorrectorPlan& cplan, int d, StepMode mode,
                                    std::uint64_t seed, std::uint64_t sample, int block,
                                    int inner_block) {
    CorrectorNoise noise;
    noise.mode = mode;
    rng::Key key(seed);
    key = key.with(rng::kCorrectorNoise)
              .with(sample)
              .with(static_cast<std::uint64_t>(block))
              .with(static_cast<std::uint64_t>(inner_block));
    const int M = cplan.M_dagger;
    if (mode == StepMode::Exact) {
        noise.z1.resize(M);
        noise.z2.resize(M);
        for (int j = 0; j < M; ++j) {
            noise.z1[j] = rng::normal_vector(key.with(j).with(0), d);
            noise.z2[j] = rng::normal_vector(key.with(j).with(1), d);
        }
    } else {
        noise.xi.resize(M);
        for (int j = 0; j < M; ++j) {
            const double std_v = std::sqrt(
                corrector_noise_cov_paper(cplan.gamma, cplan.eps_dagger, M - j + 1));
            noise.xi[j] = std_v * rng::normal_vector(key.with(j).with(0), d);
        }
    }
    return noise;
}

namespace {

struct CorrectorKick {
    Eigen::VectorXd du;
    Eigen::VectorXd dv;
};

CorrectorKick noise_kick(const CorrectorNoise& noise, const CorrectorStepCoeffs& c, int j,
                         int d) {
    CorrectorKick k;
    if (noise.mode == StepMode::Exact) {
        k.du = c.l_uu * noise.z1[j];
        k.dv = c.l_vu * noise.z1[j] + c.l_vv * noise.z2[j];
    } else {
        k.du = Eigen::VectorXd::Zero(d);
        k.dv = noise.xi[j];
    }
    return k;
}

}  // namespace

std::pair<PhaseState, std::vector<double>> run_corrector_block(
    const CorrectorPlan& cplan, const PhaseState& start, const BackwardScoreFn& score,
    double frozen_time, const CorrectorNoise& noise, PicardOptions opts, ScoreCounter* counter) {
    const int M = cplan.M_dagger;
    const int d = static_cast<int>(start.u.size());
    const CorrectorStepCoeffs c = corrector_step_coeffs(cplan.gamma, cplan.eps_dagger, opts.mode);
    const int depth = opts.iterations > 0 ? opts.iterations : cplan.K_dagger;
    const bool adaptive = opts.residual_tol > 0.0;
    const int max_iter = adaptive ? opts.max_iterations : depth;

    std::vector<PhaseState> prev(M + 1, start), next(M + 1, start);
    std::vector<Eigen::VectorXd> scores(M + 1);
    std::vector<double> residuals;
    for (int k = 0; k < max_iter; ++k) {
        if (counter) counter->begin_round(M + 1);
        parallel_for(M + 1, [&](std::int64_t j) { scores[j] = score(frozen_time, prev[j].u); });
        next[0] = start;
        for (int j = 0; j < M; ++j) {
            const CorrectorKick kick = noise_kick(noise, c, j, d);
            next[j + 1].u = next[j].u + c.g_pos_vel * next[j].v + c.drift_u * scores[j] + kick.du;
            next[j + 1].v = c.g_vel * next[j].v + c.drift_v * scores[j] + kick.dv;
        }
        double res = 0.0;
        for (int j = 0; j <= M; ++j) {
            res = std::max(res, (next[j].u - prev[j].u).squaredNorm() +
                                    (next[j].v - prev[j].v).squaredNorm());
        }
        residuals.push_back(res);
        if (!std::isfinite(res) ||
            (residuals.front() > 0.0 && res > opts.divergence_factor * residuals.front()))
            throw DivergenceError("corrector block: residual diverged");
        prev.swap(next);
        if (adaptive && res < opts.residual_tol) break;
    }
    return {prev[M], residuals};
}

PhaseState run_sequential_corrector_block(const CorrectorPlan& cplan, const PhaseState& start,
                                          const BackwardScoreFn& score, double frozen_time,
                                          const CorrectorNoise& noise, StepMode mode,
                                          ScoreCounter* counter) {
    const int M = cplan.M_dagger;
    const int d = static_cast<int>(start.u.size());
    const CorrectorStepCoeffs c = corrector_step_coeffs(cplan.gamma, cplan.eps_dagger, mode);
    PhaseState s = start;
    for (int j = 0; j < M; ++j) {
        if (counter) counter->begin_round(1);
        const Eigen::VectorXd sc = score(frozen_time, s.u);
        const CorrectorKick kick = noise_kick(noise, c, j, d);
        PhaseState nxt;
        nxt.u = s.u + c.g_pos_vel * s.v + c.drift_u * sc + kick.du;
        nxt.v = c.g_vel * s.v + c.drift_v * sc + kick.dv;
        s = std::move(nxt);
    }
    return s;
}

namespace {

Eigen::VectorXd initial_state(std::uint64_t seed, std::uint64_t sample, int d) {
    rng::Key key(seed);
    return rng::normal_vector(key.with(rng::kInitState).with(sample), d);
}

Eigen::VectorXd initial_momentum(std::uint64_t seed, std::uint64_t sample, int block, int d) {
    rng::Key key(seed);
    return rng::normal_vector(
        key.with(rng::kMomentum).with(sample).with(static_cast<std::uint64_t>(block)), d);
}

}  // namespace

SamplerOutput run_piadm_ode(const DiscretizationPlan& plan, const CorrectorPlan& cplan, int d,
                            const BackwardScoreFn& score, std::uint64_t seed,
                            std::int64_t n_samples, RunOptions opts, ScoreCounter* counter) {
    const auto t0 = std::chrono::steady_clock::now();
    SamplerOutput out;
    out.samples.resize(n_samples);

    const std::int64_t n_hist = std::min<std::int64_t>(n_samples, opts.residual_batch);
    std::vector<std::vector<std::vector<double>>> pred_hist(n_hist), corr_hist(n_hist);
    std::vector<std::int64_t> rounds_per_sample(n_samples, 0);

    parallel_for(n_samples, [&](std::int64_t i) {
        Eigen::VectorXd y = initial_state(seed, static_cast<std::uint64_t>(i), d);
        std::vector<std::vector<double>> predh, corrh;
        for (int n = 0; n < plan.N; ++n) {
            auto [end_state, pres] =
                run_predictor_block(plan, n, y, score, opts.picard, i == 0 ? counter : nullptr);
            y = end_state;
            rounds_per_sample[i] += static_cast<std::int64_t>(pres.size());
            std::vector<double> cres_all;
            if (cplan.N_dagger > 0) {
                PhaseState ph{y, initial_momentum(seed, static_cast<std::uint64_t>(i), n, d)};
                const double frozen = plan.block_start(n) + plan.block_lengths[n];
                for (int nd = 0; nd < cplan.N_dagger; ++nd) {
                    const CorrectorNoise noise = make_corrector_noise(
                        cplan, d, opts.picard.mode, seed, static_cast<std::uint64_t>(i), n, nd);
                    auto [next_ph, cres] = run_corrector_block(cplan, ph, score, frozen, noise,
                                                               opts.picard,
                                                               i == 0 ? counter : nullptr);
                    ph = std::move(next_ph);
                    rounds_per_sample[i] += static_cast<std::int64_t>(cres.size());
                    cres_all.insert(cres_all.end(), cres.begin(), cres.end());
                }
                y = ph.u;
            }
            if (i < n_hist) {
                predh.push_back(std::move(pres));
                corrh.push_back(std::move(cres_all));
            }
        }
        out.samples[i] = y;
        if (i < n_hist) {
            pred_hist[i] = std::move(predh);
            corr_hist[i] = std::move(corrh);
        }
    });

    SamplerReport& rep = out.report;
    const int K = opts.picard.iterations > 0 ? opts.picard.iterations : plan.picard_depth;
    const int Kd = cplan.K_dagger;
    rep.sequential_rounds = 0;
    for (auto r : rounds_per_sample)
        rep.sequential_rounds = std::max(rep.sequential_rounds, r);
    std::int64_t evals = 0, width = 0;
    const bool adaptive = opts.picard.residual_tol > 0.0;
    for (int n = 0; n < plan.N; ++n) {
        const std::int64_t pred_iters =
            adaptive && !pred_hist.empty() ? static_cast<std::int64_t>(pred_hist[0][n].size())
                                           : K;
        const std::int64_t corr_iters =
            adaptive && !corr_hist.empty()
                ? static_cast<std::int64_t>(corr_hist[0][n].size())
                : static_cast<std::int64_t>(cplan.N_dagger) * Kd;
        evals += pred_iters * (plan.steps_in_block(n) + 1);
        evals += corr_iters * (cplan.M_dagger + 1);
        width = std::max<std::int64_t>(width, plan.steps_in_block(n) + 1);
    }
    if (cplan.N_dagger > 0) width = std::max<std::int64_t>(width, cplan.M_dagger + 1);
    rep.total_score_evals = evals;
    rep.max_parallel_width = width;
    if (!pred_hist.empty() && !pred_hist[0].empty()) {
        rep.residual_history = pred_hist[0];
        rep.corrector_residual_history = corr_hist[0];
        rep.residual_history_mean = pred_hist[0];
        for (std::size_t n = 0; n < pred_hist[0].size(); ++n) {
            for (std::size_t k = 0; k < rep.residual_history_mean[n].size(); ++k) {
                double acc = 0.0;
                std::size_t cnt = 0;
                for (const auto& h : pred_hist) {
                    if (n < h.size() && k < h[n].size()) {
                        acc += h[n][k];
                        ++cnt;
                    }
                }
                if (cnt > 0) rep.residual_history_mean[n][k] = acc / static_cast<double>(cnt);
            }
        }
    }
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

SamplerOutput run_sequential_ode(const DiscretizationPlan& plan, const CorrectorPlan& cplan,
                                 int d, const BackwardScoreFn& score, std::uint64_t seed,
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
            for (int m = 0; m < M; ++m) {
                const double eps = grid[m + 1] - grid[m];
                if (counter && i == 0) counter->begin_round(1);
                const Eigen::VectorXd s = score(t_n + grid[m], y);
                const double w =
                    (mode == StepMode::Exact) ? std::expm1(0.5 * eps) : 0.5 * std::expm1(eps);
                // the printed rule halves the homogeneous part once per block
                const double dec = (mode == StepMode::PaperVerbatim && m == 0)
                                       ? 0.5 * std::exp(0.5 * eps)
                                       : std::exp(0.5 * eps);
                y = dec * y + w * s;
            }
            if (cplan.N_dagger > 0) {
                PhaseState ph{y, initial_momentum(seed, static_cast<std::uint64_t>(i), n, d)};
                const double frozen = plan.block_start(n) + plan.block_lengths[n];
                for (int nd = 0; nd < cplan.N_dagger; ++nd) {
                    const CorrectorNoise noise = make_corrector_noise(
                        cplan, d, mode, seed, static_cast<std::uint64_t>(i), n, nd);
                    ph = run_sequential_corrector_block(cplan, ph, score, frozen, noise, mode,
                                                        i == 0 ? counter : nullptr);
                }
                y = ph.u;
            }
        }
        out.samples[i] = y;
    });

    SamplerReport& rep = out.report;
    rep.sequential_rounds = static_cast<std::int64_t>(plan.total_steps()) +
                            static_cast<std::int64_t>(plan.N) * cplan.N_dagger * cplan.M_dagger;
    rep.total_score_evals = rep.sequential_rounds;
    rep.max_parallel_width = 1;
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace piadm
