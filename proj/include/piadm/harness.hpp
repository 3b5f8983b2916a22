#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "piadm/exact_law.hpp"
#include "piadm/metrics.hpp"
#include "piadm/schedule.hpp"
#include "piadm/score_oracle.hpp"
#include "piadm/sde_sampler.hpp"

// nlohmann/json ships as a single header in vendor/
#include <json.hpp>

namespace piadm {

enum class Implementation { PiadmSde, PiadmOde, SequentialSde, SequentialOde };

Implementation implementation_from_string(const std::string& s);
std::string to_string(Implementation impl);
std::string to_string(StepMode mode);
StepMode step_mode_from_string(const std::string& s);

struct PlanInputs {
    double T = 0.0;
    double eta = 0.0;
    int N = 0;
    double epsilon = 0.0;
    int K = 0;
};

struct PresetChoice {
    std::string name;  // "theorem1" | "theorem2"
    int d = 0;
    double delta = 0.0;
    PresetConstants constants;
};

struct CorrectorConfig {
    double T_dagger = 1.0;
    int N_dagger = 1;
    int M_dagger = 16;
    int K_dagger = 8;
    double gamma = 1.0;
};

struct PerturbationConfig {
    std::string mode = "linf_budget";  // or "l2_budget"
    double amplitude = 0.0;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    TargetSpec target;
    Implementation implementation = Implementation::SequentialSde;
    std::optional<PlanInputs> plan;
    std::optional<PresetChoice> preset;
    std::optional<CorrectorConfig> corrector;
    StepMode mode = StepMode::Exact;
    std::uint64_t seed = 0;
    std::int64_t n_samples = 1;
    int threads = 0;  // 0 = library default
    std::optional<PerturbationConfig> perturbation;
    std::size_t memory_cap_doubles = 200'000'000;
    bool write_samples = false;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Stable hexadecimal FNV-1a hash of the canonical config serialization.
std::string config_hash(const ExperimentConfig& config);

struct RunRecord {
    std::string hash;
    SamplerReport report;
    nlohmann::json payload;  // the full machine-readable record
};

inline constexpr const char* kRowsCsvHeader =
    "d,delta,implementation,mode,sequential_rounds,total_score_evals,max_parallel_width,KL,W2,"
    "wall_clock";
inline constexpr const char* kResidualsCsvHeader = "block,iteration,residual";
inline constexpr const char* kSweepCsvHeader =
    "d,delta,preset,M,M_dagger,memory_doubles,K_min,sequential_rounds,skipped";

// Executes the full pipeline described by `config`. When `out_dir` is
// non-empty, persists record.json, rows.csv and residuals.csv (and
// samples.csv when requested).
RunRecord run(const ExperimentConfig& config, const std::string& out_dir = "");

struct SweepRow {
    int d = 0;
    double delta = 0.0;
    std::string preset;
    std::size_t M = 0;
    std::size_t M_dagger = 0;
    double memory_doubles = 0.0;
    int K_min = 0;
    std::int64_t sequential_rounds = 0;
    bool skipped = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    nlohmann::json payload;
};

// For each dimension: records both preset parameter orders at the sweep's
// accuracy and measures the minimal Picard depth reaching `residual_tol`
// on the base plan (bisection over fixed-depth runs).
SweepResult sweep_dimension(const ExperimentConfig& base, const std::vector<int>& dims,
                            double residual_tol, const std::string& out_dir = "");

// Minimal fixed depth K whose final residual in every block is below tol.
int minimal_depth(const DiscretizationPlan& plan, int d, const BackwardScoreFn& score,
                  std::uint64_t seed, double residual_tol, int max_depth = 4096);

nlohmann::json report_to_json(const SamplerReport& report);
nlohmann::json law_to_json(const GaussianLaw& law);
GaussianLaw law_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const DiscretizationPlan& plan);
DiscretizationPlan plan_from_json(const nlohmann::json& j);

// Strips fields that legitimately vary between identical reruns (timings).
nlohmann::json reproducible_view(const nlohmann::json& record);

}  // namespace piadm
