#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "piadm/exact_law.hpp"
#include "piadm/metrics.hpp"
#include "piadm/rng.hpp"
#include "piadm/schedule.hpp"
#include "piadm/score_oracle.hpp"
#include "piadm/sde_sampler.hpp"
#include "test_util.hpp"

using namespace piadm;

TEST_CASE("constant samples have zero spread") {
    Eigen::VectorXd x(2);
    x << 1.0, -3.0;
    const std::vector<Eigen::VectorXd> samples(10, x);
    const MomentSummary ms = moment_summary(samples);
    CHECK((ms.mean - x).norm() == 0.0);
    CHECK(ms.cov.cwiseAbs().maxCoeff() == 0.0);
    CHECK(ms.mean_se.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("standard normal draws satisfy the central limit scale") {
    const int n = 100000, d = 3;
    rng::Key key(40);
    std::vector<Eigen::VectorXd> samples(n);
    for (int i = 0; i < n; ++i) samples[i] = rng::normal_vector(key.with(i), d);
    const MomentSummary ms = moment_summary(samples);
    for (int i = 0; i < d; ++i) {
        CHECK(std::abs(ms.mean[i]) < 3.0 / std::sqrt(double(n)));
        CHECK(std::abs(ms.cov(i, i) - 1.0) < 3.0 * ms.cov_se(i, i));
    }
    CHECK_THROWS_AS((void)moment_summary({samples[0]}), std::invalid_argument);
}

TEST_CASE("mixture target round trip recovers the stopped moments") {
    // forward-noised two-component target sampled back down to eta
    Eigen::VectorXd m1(1), m2(1);
    m1 << -0.9;
    m2 << 0.9;
    const Eigen::MatrixXd v = 0.19 * Eigen::MatrixXd::Identity(1, 1);
    const TargetSpec mix = TargetSpec::mixture({m1, m2}, {v, v}, {0.5, 0.5}, true);
    const DiscretizationPlan plan = build_plan(6.0, 0.02, 12, 0.01, 10);
    auto oracle = std::make_shared<ScoreOracle>(mix, plan.T);
    BackwardScoreFn fn = [oracle](double t, const Eigen::VectorXd& x) {
        return oracle->backward_score(t, x);
    };
    const int n = 60000;
    const SamplerOutput out = run_sequential_sde(plan, 1, fn, 313, n);
    const MomentSummary ms = moment_summary(out.samples);
    auto [mean, cov] = marginal_moments(mix, plan.eta);
    CHECK(std::abs(ms.mean[0] - mean[0]) < 4.0 * ms.mean_se[0]);
    CHECK(std::abs(ms.cov(0, 0) - cov(0, 0)) < 4.0 * ms.cov_se(0, 0));
}

TEST_CASE("identical sample sets have zero sliced distance") {
    rng::Key key(41);
    std::vector<Eigen::VectorXd> a(500);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng::normal_vector(key.with(i), 3);
    CHECK(sliced_w2(a, a, 8, 7) == 0.0);
}

TEST_CASE("shifting samples moves them at most by the shift length") {
    rng::Key key(42);
    Eigen::VectorXd shift(2);
    shift << 0.7, -0.4;
    std::vector<Eigen::VectorXd> a(2000), b(2000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng::normal_vector(key.with(i), 2);
        b[i] = a[i] + shift;
    }
    const double sw = sliced_w2(a, b, 32, 11);
    CHECK(sw <= shift.norm() * (1.0 + 1e-12));
    CHECK(sw > 0.0);
}

TEST_CASE("sliced distance brackets the closed-form Gaussian distance") {
    const int d = 2, n = 10000;
    GaussianLaw p = GaussianLaw::standard(d);
    GaussianLaw q;
    q.mean = Eigen::VectorXd::Zero(d);
    q.mean << 1.0, -0.5;
    q.cov = Eigen::MatrixXd::Zero(d, d);
    q.cov << 1.8, 0.2, 0.2, 0.6;
    const double w2 = w2_gaussian(p, q);

    rng::Key key(43);
    const Eigen::MatrixXd qL = sqrt_psd(q.cov);
    std::vector<Eigen::VectorXd> a(n), b(n);
    for (int i = 0; i < n; ++i) {
        a[i] = rng::normal_vector(key.with(0).with(i), d);
        b[i] = q.mean + qL * rng::normal_vector(key.with(1).with(i), d);
    }
    const double sw = sliced_w2(a, b, 64, 17);
    CHECK(sw < w2);
    CHECK(sw > 0.3 * w2);
}

TEST_CASE("sliced distance is symmetric and seed-deterministic") {
    rng::Key key(44);
    std::vector<Eigen::VectorXd> a(300), b(300);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng::normal_vector(key.with(0).with(i), 2);
        b[i] = 0.6 * rng::normal_vector(key.with(1).with(i), 2);
    }
    CHECK(sliced_w2(a, b, 16, 5) == sliced_w2(b, a, 16, 5));
    CHECK(sliced_w2(a, b, 16, 5) == sliced_w2(a, b, 16, 5));
    CHECK(sliced_w2(a, b, 16, 5) != sliced_w2(a, b, 16, 6));
}

TEST_CASE("exactly geometric residuals fit their own log slope") {
    std::vector<double> res;
    const double r0 = 0.7, rho = 0.37;
    for (int k = 0; k < 12; ++k) res.push_back(r0 * std::pow(rho, k));
    CHECK(picard_rate(res) == doctest::Approx(std::log(rho)).epsilon(1e-10));
    CHECK_THROWS_AS((void)picard_rate(std::vector<double>{1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("fitted block decay stays under the contraction budget") {
    const double h = 0.5;
    const DiscretizationPlan plan = build_plan(1.0, 0.05, 2, h / 40, 14);
    auto oracle = std::make_shared<ScoreOracle>(TargetSpec::standard_gaussian(2), 1.0);
    BackwardScoreFn fn = [oracle](double t, const Eigen::VectorXd& x) {
        return oracle->backward_score(t, x);
    };
    rng::Key key(45);
    auto [end_state, residuals] =
        run_piadm_sde_block(plan, 0, rng::normal_vector(key, 2), fn, 3, 0);
    const double L = oracle->lipschitz_bound();
    const double budget = 2.0 * L * L * h * std::exp(2.0 * h);
    CHECK(std::exp(picard_rate(residuals)) <= budget);
}

TEST_CASE("one-shot convergence reports the sentinel rate") {
    // zero-score dynamics settle after the first sweep
    std::vector<double> res{0.5, 0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(picard_rate(res) == kRateExactSentinel);
}
