#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "piadm/exact_law.hpp"
#include "piadm/metrics.hpp"
#include "piadm/rng.hpp"
#include "piadm/schedule.hpp"
#include "piadm/score_oracle.hpp"
#include "piadm/sde_sampler.hpp"
#include "test_util.hpp"

using namespace piadm;

namespace {

BackwardScoreFn oracle_fn(std::shared_ptr<ScoreOracle> o) {
    return [o](double t, const Eigen::VectorXd& x) { return o->backward_score(t, x); };
}

// Serial forward-substitution on the block recurrence with a given noise
// cache: the unique fixed point the iteration must reach.
std::vector<Eigen::VectorXd> solve_block_directly(const DiscretizationPlan& plan, int n,
                                                  const Eigen::VectorXd& start,
                                                  const BackwardScoreFn& score,
                                                  const std::vector<Eigen::VectorXd>& noise,
                                                  StepMode mode) {
    const auto& grid = plan.grids[n];
    const int M = static_cast<int>(grid.size()) - 1;
    const double t_n = plan.block_start(n);
    std::vector<Eigen::VectorXd> states(M + 1);
    states[0] = start;
    for (int m = 0; m < M; ++m) {
        const SdeStepCoeffs c = sde_step_coeffs(grid[m + 1] - grid[m], mode);
        states[m + 1] = c.decay * states[m] + c.score_weight * score(t_n + grid[m], states[m]) +
                        c.noise_std * noise[m];
    }
    return states;
}

}  // namespace

TEST_CASE("step reduces to pure drift without score and noise") {
    const int d = 3;
    BackwardScoreFn zero = [](double, const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Zero(x.size()).eval();
    };
    rng::Key key(1);
    const Eigen::VectorXd x = rng::normal_vector(key, d);
    const Eigen::VectorXd out =
        sequential_exp_integrator_step(x, 0.3, 0.2, zero, Eigen::VectorXd::Zero(d));
    CHECK((out - std::exp(0.1) * x).norm() < 1e-14);
}

TEST_CASE("step drift matches the continuous dynamics as eps -> 0") {
    const int d = 2;
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(d), 4.0);
    BackwardScoreFn fn = oracle_fn(oracle);
    rng::Key key(2);
    const Eigen::VectorXd x = rng::normal_vector(key, d);
    const double eps = 1e-6;
    const Eigen::VectorXd out =
        sequential_exp_integrator_step(x, 1.0, eps, fn, Eigen::VectorXd::Zero(d));
    const Eigen::VectorXd rate = (out - x) / eps;
    const Eigen::VectorXd expected = 0.5 * x + fn(1.0, x);
    CHECK((rate - expected).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("noise injection has the advertised variance") {
    const int n = 100000;
    const double eps = 0.3;
    BackwardScoreFn zero = [](double, const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Zero(x.size()).eval();
    };
    rng::Key key(3);
    std::vector<double> outs(n);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = rng::normal_vector(key.with(i), 1);
        outs[i] = sequential_exp_integrator_step(x0, 0.5, eps, zero, xi)[0];
    }
    const double var = testutil::var_of(outs);
    const double expected = std::expm1(eps);
    CHECK(std::abs(var - expected) < 3.0 * testutil::var_se(expected, n));
}

TEST_CASE("zero depth leaves every node at the start state") {
    const DiscretizationPlan plan = build_plan(1.0, 0.01, 2, 0.125, 5);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(2), 1.0);
    PicardWorkspace ws;
    rng::Key key(4);
    const Eigen::VectorXd start = rng::normal_vector(key, 2);
    ws.init(start, plan.steps_in_block(0) + 1);
    fill_block_noise(ws, plan.steps_in_block(0), 2, 9, 0, 0);
    PicardOptions opts;
    opts.iterations = 0;  // fall back to plan depth...
    DiscretizationPlan p0 = plan;
    p0.picard_depth = 0;
    BlockResult r = run_piadm_sde_block(p0, 0, ws, oracle_fn(oracle), opts);
    CHECK((r.end_state - start).norm() == 0.0);
    for (const auto& s : ws.prev_states) CHECK((s - start).norm() == 0.0);
}

TEST_CASE("picard iterates converge to the serial solve") {
    // 20 random configurations, both target families, both modes
    rng::Key key(55);
    int cases = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + static_cast<int>(rng::uniform01(rng::mix(key.state, trial)) * 8.0);
        const double h = 0.25 + 0.25 * rng::uniform01(rng::mix(key.state, 100 + trial));
        const int M = 8 + static_cast<int>(rng::uniform01(rng::mix(key.state, 200 + trial)) * 24);
        const double T = 2.0 * h;
        const double eta = 0.2 * h;
        const StepMode mode = (trial % 3 == 0) ? StepMode::PaperVerbatim : StepMode::Exact;

        TargetSpec target;
        if (trial % 2 == 0) {
            target = TargetSpec::standard_gaussian(d);
        } else {
            Eigen::VectorXd m1 = Eigen::VectorXd::Constant(d, -0.8);
            Eigen::VectorXd m2 = Eigen::VectorXd::Constant(d, 0.8);
            const Eigen::MatrixXd v = 0.7 * Eigen::MatrixXd::Identity(d, d);
            target = TargetSpec::mixture({m1, m2}, {v, v}, {0.5, 0.5});
        }
        auto oracle = std::make_shared<ScoreOracle>(target, T);
        BackwardScoreFn fn = oracle_fn(oracle);
        const DiscretizationPlan plan = build_plan(T, eta, 2, h / M, 4);

        for (int n = 0; n < plan.N; ++n) {
            const Eigen::VectorXd start = rng::normal_vector(key.with(trial).with(n), d);
            PicardWorkspace ws;
            ws.init(start, plan.steps_in_block(n) + 1);
            fill_block_noise(ws, plan.steps_in_block(n), d, 77, trial, n);

            PicardOptions opts;
            opts.residual_tol = 1e-24;
            opts.max_iterations = 400;
            opts.mode = mode;
            run_piadm_sde_block(plan, n, ws, fn, opts);

            const auto direct = solve_block_directly(plan, n, start, fn, ws.noise_cache, mode);
            for (std::size_t m = 0; m < direct.size(); ++m) {
                const double rel = (ws.prev_states[m] - direct[m]).norm() /
                                   (1.0 + direct[m].norm());
                CHECK(rel < 1e-9);
            }
            ++cases;
        }
    }
    CHECK(cases == 40);
}

TEST_CASE("residuals contract at the predicted rate") {
    const double h = 0.5;
    const DiscretizationPlan plan = build_plan(1.0, 0.05, 2, h / 32, 14);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(3), 1.0);
    const double L = oracle->lipschitz_bound();
    CHECK(L == doctest::Approx(1.0));
    const double factor = L * L * h * std::exp(2.0 * h);
    REQUIRE(factor <= 2.0);  // within the contracting regime

    rng::Key key(6);
    const Eigen::VectorXd start = rng::normal_vector(key, 3);
    auto [end_state, residuals] = run_piadm_sde_block(plan, 0, start, oracle_fn(oracle), 5, 0);
    REQUIRE(residuals.size() >= 6);
    for (std::size_t k = 2; k + 1 < residuals.size(); ++k) {
        CHECK(residuals[k + 1] <= residuals[k]);  // monotone after warmup
        CHECK(residuals[k + 1] <= 2.0 * factor * residuals[k]);
    }
    const double rate = picard_rate(residuals);
    CHECK(std::exp(rate) <= 2.0 * factor);
}

TEST_CASE("extending a block run keeps the earlier residuals") {
    const DiscretizationPlan plan = build_plan(1.0, 0.02, 2, 0.05, 4);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(2), 1.0);
    BackwardScoreFn fn = oracle_fn(oracle);
    rng::Key key(7);
    const Eigen::VectorXd start = rng::normal_vector(key, 2);

    PicardWorkspace ws;
    ws.init(start, plan.steps_in_block(0) + 1);
    fill_block_noise(ws, plan.steps_in_block(0), 2, 11, 0, 0);
    PicardOptions opts;
    opts.iterations = 3;
    BlockResult first = run_piadm_sde_block(plan, 0, ws, fn, opts);
    BlockResult second = run_piadm_sde_block(plan, 0, ws, fn, opts);  // continue in place

    PicardWorkspace fresh;
    fresh.init(start, plan.steps_in_block(0) + 1);
    fill_block_noise(fresh, plan.steps_in_block(0), 2, 11, 0, 0);
    PicardOptions full;
    full.iterations = 6;
    BlockResult whole = run_piadm_sde_block(plan, 0, fresh, fn, full);

    REQUIRE(whole.residuals.size() == 6);
    for (int k = 0; k < 3; ++k) {
        CHECK(whole.residuals[k] == first.residuals[k]);
        CHECK(whole.residuals[k + 3] == second.residuals[k]);
    }
    CHECK((whole.end_state - second.end_state).norm() == 0.0);
}

TEST_CASE("sampled law matches the exact propagated law in one dimension") {
    const DiscretizationPlan plan = build_plan(2.0, 0.02, 4, 0.05, 10);
    const TargetSpec target = TargetSpec::standard_gaussian(1);
    auto oracle = std::make_shared<ScoreOracle>(target, 2.0);
    const int n = 100000;
    const SamplerOutput out = run_piadm_sde(plan, 1, oracle_fn(oracle), 123, n);
    const GaussianLaw law = propagate_sde_plan(plan, target, StepMode::Exact);

    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[i] = out.samples[i][0];
    const double mean = testutil::mean_of(xs);
    const double var = testutil::var_of(xs);
    CHECK(std::abs(mean - law.mean[0]) < 3.0 * std::sqrt(var / n));
    CHECK(std::abs(var - law.cov(0, 0)) < 3.0 * testutil::var_se(var, n));
}

TEST_CASE("round counting matches the fixed-depth formula") {
    const DiscretizationPlan plan = build_plan(2.0, 0.02, 4, 0.05, 7);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(2), 2.0);
    CountingScore counting{oracle_fn(oracle)};
    BackwardScoreFn fn = [&counting](double t, const Eigen::VectorXd& x) {
        return counting(t, x);
    };
    const SamplerOutput out = run_piadm_sde(plan, 2, fn, 5, 1, {}, counting.counter.get());
    CHECK(out.report.sequential_rounds == plan.N * 7);
    CHECK(out.report.sequential_rounds == counting.counter->rounds());
    std::int64_t expected_evals = 0;
    for (int n = 0; n < plan.N; ++n) expected_evals += 7 * (plan.steps_in_block(n) + 1);
    CHECK(out.report.total_score_evals == expected_evals);
    CHECK(out.report.total_score_evals == counting.counter->evals());
    CHECK(out.report.max_parallel_width == counting.counter->max_width());
}

TEST_CASE("serial reference counts one evaluation per round") {
    const DiscretizationPlan plan = build_plan(2.0, 0.02, 4, 0.05, 7);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(2), 2.0);
    CountingScore counting{oracle_fn(oracle)};
    BackwardScoreFn fn = [&counting](double t, const Eigen::VectorXd& x) {
        return counting(t, x);
    };
    const SamplerOutput out = run_sequential_sde(plan, 2, fn, 5, 1, StepMode::Exact,
                                                 counting.counter.get());
    CHECK(out.report.sequential_rounds == std::int64_t(plan.total_steps()));
    CHECK(out.report.sequential_rounds == counting.counter->rounds());
    CHECK(out.report.max_parallel_width == 1);
    CHECK(counting.counter->evals() == counting.counter->rounds());
}

TEST_CASE("serial reference law matches the affine propagation") {
    const DiscretizationPlan plan = build_plan(2.0, 0.02, 2, 0.025, 4);
    const TargetSpec target = TargetSpec::standard_gaussian(1);
    auto oracle = std::make_shared<ScoreOracle>(target, 2.0);
    const int n = 100000;
    const SamplerOutput out = run_sequential_sde(plan, 1, oracle_fn(oracle), 321, n);
    const GaussianLaw law = propagate_sde_plan(plan, target, StepMode::Exact);
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[i] = out.samples[i][0];
    CHECK(std::abs(testutil::mean_of(xs) - law.mean[0]) < 3.0 * std::sqrt(law.cov(0, 0) / n));
    CHECK(std::abs(testutil::var_of(xs) - law.cov(0, 0)) <
          3.0 * testutil::var_se(law.cov(0, 0), n));
}

TEST_CASE("thread count cannot change the samples") {
    const DiscretizationPlan plan = build_plan(1.0, 0.02, 2, 0.05, 6);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(3), 1.0);
    BackwardScoreFn fn = oracle_fn(oracle);

    std::vector<SamplerOutput> outs;
    for (int threads : {1, 4, 8}) {
#ifdef _OPENMP
        omp_set_num_threads(threads);
#else
        (void)threads;
#endif
        outs.push_back(run_piadm_sde(plan, 3, fn, 99, 64));
    }
    for (std::size_t i = 1; i < outs.size(); ++i) {
        for (int s = 0; s < 64; ++s)
            CHECK((outs[i].samples[s] - outs[0].samples[s]).norm() == 0.0);
        CHECK(outs[i].report.sequential_rounds == outs[0].report.sequential_rounds);
        CHECK(outs[i].report.residual_history == outs[0].report.residual_history);
        CHECK(outs[i].report.residual_history_mean == outs[0].report.residual_history_mean);
    }
#ifdef _OPENMP
    omp_set_num_threads(0);
    omp_set_num_threads(omp_get_num_procs());
#endif
}

TEST_CASE("divergent dynamics raise a structured error") {
    // an explosive "score" breaks the contraction assumption on purpose
    const DiscretizationPlan plan = build_plan(1.0, 0.02, 1, 0.05, 40);
    BackwardScoreFn bad = [](double, const Eigen::VectorXd& x) {
        return (40.0 * x).eval();
    };
    rng::Key key(8);
    const Eigen::VectorXd start = rng::normal_vector(key, 2);
    CHECK_THROWS_AS((void)run_piadm_sde_block(plan, 0, start, bad, 1, 0), DivergenceError);
}
