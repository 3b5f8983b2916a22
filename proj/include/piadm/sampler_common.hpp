#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace piadm {

// Backward-time score map used by all samplers: s(t, x) with t measured from
// the noise end (t = 0) towards the data end (t = T - eta).
using BackwardScoreFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

// Counts evaluations along the score call path. A "round" is one batch whose
// members may all run concurrently; rounds are the sequential unit of cost.
class ScoreCounter {
public:
    void begin_round(std::int64_t batch) {
        rounds_.fetch_add(1, std::memory_order_relaxed);
        std::int64_t prev = width_.load(std::memory_order_relaxed);
        while (batch > prev && !width_.compare_exchange_weak(prev, batch)) {
        }
    }
    void count_eval() { evals_.fetch_add(1, std::memory_order_relaxed); }

    std::int64_t rounds() const { return rounds_.load(); }
    std::int64_t evals() const { return evals_.load(); }
    std::int64_t max_width() const { return width_.load(); }
    void reset() { rounds_ = 0; evals_ = 0; width_ = 0; }

private:
    std::atomic<std::int64_t> rounds_{0};
    std::atomic<std::int64_t> evals_{0};
    std::atomic<std::int64_t> width_{0};
};

// Wraps a score function so every evaluation is tallied.
struct CountingScore {
    BackwardScoreFn fn;
    std::shared_ptr<ScoreCounter> counter = std::make_shared<ScoreCounter>();

    Eigen::VectorXd operator()(double t, const Eigen::VectorXd& x) const {
        counter->count_eval();
        return fn(t, x);
    }
};

// Per-sample accounting of a sampler run. Counts are per sample: a batch of
// samples shares the same number of sequential rounds.
struct SamplerReport {
    std::int64_t sequential_rounds = 0;
    std::int64_t total_score_evals = 0;
    std::int64_t max_parallel_width = 0;
    // residual_history[n][k]: sup over grid nodes of ||y^{(k+1)} - y^{(k)}||^2
    // for the first sample; residual_history_mean averages over a small batch.
    std::vector<std::vector<double>> residual_history;
    std::vector<std::vector<double>> residual_history_mean;
    // phase-space residuals of the correction iterations, flattened per block
    std::vector<std::vector<double>> corrector_residual_history;
    double wall_clock_seconds = 0.0;
};

struct SamplerOutput {
    std::vector<Eigen::VectorXd> samples;
    SamplerReport report;
};

// Thrown when a Picard iteration stops contracting.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Runs fn(i) for i in [0, n) in parallel when not already inside a parallel
// region; each index writes only its own slots, so scheduling cannot change
// results.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace piadm
