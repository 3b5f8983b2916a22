#include "piadm/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "piadm/ode_sampler.hpp"
#include "piadm/rng.hpp"

namespace piadm {

namespace {
constexpr const char* kVersion = "piadm 0.1.0";
}

Implementation implementation_from_string(const std::string& s) {
    if (s == "piadm_sde") return Implementation::PiadmSde;
    if (s == "piadm_ode") return Implementation::PiadmOde;
    if (s == "sequential_sde") return Implementation::SequentialSde;
    if (s == "sequential_ode") return Implementation::SequentialOde;
    throw std::invalid_argument("config: unknown implementation '" + s + "'");
}

std::string to_string(Implementation impl) {
    switch (impl) {
        case Implementation::PiadmSde: return "piadm_sde";
        case Implementation::PiadmOde: return "piadm_ode";
        case Implementation::SequentialSde: return "sequential_sde";
        case Implementation::SequentialOde: return "sequential_ode";
    }
    return "?";
}

std::string to_string(StepMode mode) {
    return mode == StepMode::Exact ? "exact" : "paper_verbatim";
}

StepMode step_mode_from_string(const std::string& s) {
    if (s == "exact") return StepMode::Exact;
    if (s == "paper_verbatim") return StepMode::PaperVerbatim;
    throw std::invalid_argument("config: unknown mode '" + s + "'");
}

namespace {

TargetSpec target_from_json(const nlohmann::json& j) {
    TargetSpec t;
    const std::string variant = j.value("variant", "gaussian");
    if (variant == "gaussian") {
        t.variant = TargetSpec::Variant::Gaussian;
    } else if (variant == "gaussian_mixture") {
        t.variant = TargetSpec::Variant::GaussianMixture;
    } else {
        throw std::invalid_argument("config: unknown target variant '" + variant + "'");
    }
    for (const auto& m : j.at("means")) {
        Eigen::VectorXd v(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i].get<double>();
        t.means.push_back(std::move(v));
    }
    for (const auto& c : j.at("covariances")) {
        const int d = static_cast<int>(c.size());
        Eigen::MatrixXd m(d, d);
        for (int r = 0; r < d; ++r)
            for (int col = 0; col < d; ++col) m(r, col) = c[r][col].get<double>();
        t.covariances.push_back(std::move(m));
    }
    if (j.contains("weights")) {
        for (const auto& w : j.at("weights")) t.weights.push_back(w.get<double>());
    } else {
        t.weights.assign(t.means.size(), 1.0 / static_cast<double>(t.means.size()));
    }
    t.normalized = j.value("normalized", false);
    t.validate();
    return t;
}

nlohmann::json target_to_json(const TargetSpec& t) {
    nlohmann::json j;
    j["variant"] =
        t.variant == TargetSpec::Variant::Gaussian ? "gaussian" : "gaussian_mixture";
    for (const auto& m : t.means) {
        nlohmann::json v = nlohmann::json::array();
        for (int i = 0; i < m.size(); ++i) v.push_back(m[i]);
        j["means"].push_back(v);
    }
    for (const auto& c : t.covariances) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < c.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int col = 0; col < c.cols(); ++col) row.push_back(c(r, col));
            rows.push_back(row);
        }
        j["covariances"].push_back(rows);
    }
    j["weights"] = t.weights;
    j["normalized"] = t.normalized;
    return j;
}

PresetConstants constants_from_json(const nlohmann::json& j) {
    PresetConstants c;
    c.c_T = j.value("c_T", 1.0);
    c.c_eps = j.value("c_eps", 1.0);
    c.c_K = j.value("c_K", 1.0);
    c.c_Tdag = j.value("c_Tdag", 1.0);
    c.c_eps_dag = j.value("c_eps_dag", 1.0);
    c.c_Kdag = j.value("c_Kdag", 1.0);
    c.c_gamma = j.value("c_gamma", 1.0);
    c.lipschitz_hint = j.value("lipschitz_hint", 1.0);
    return c;
}

nlohmann::json constants_to_json(const PresetConstants& c) {
    return {{"c_T", c.c_T},           {"c_eps", c.c_eps},
            {"c_K", c.c_K},           {"c_Tdag", c.c_Tdag},
            {"c_eps_dag", c.c_eps_dag}, {"c_Kdag", c.c_Kdag},
            {"c_gamma", c.c_gamma},   {"lipschitz_hint", c.lipschitz_hint}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.target = target_from_json(j.at("target"));
    c.implementation = implementation_from_string(j.at("implementation").get<std::string>());
    if (j.contains("plan") && j.contains("preset"))
        throw std::invalid_argument("config: plan and preset are mutually exclusive");
    if (!j.contains("plan") && !j.contains("preset"))
        throw std::invalid_argument("config: one of plan or preset is required");
    if (j.contains("plan")) {
        const auto& p = j.at("plan");
        PlanInputs in;
        in.T = p.at("T").get<double>();
        in.eta = p.at("eta").get<double>();
        in.N = p.at("N").get<int>();
        in.epsilon = p.at("epsilon").get<double>();
        in.K = p.at("K").get<int>();
        c.plan = in;
    }
    if (j.contains("preset")) {
        const auto& p = j.at("preset");
        PresetChoice pc;
        pc.name = p.at("name").get<std::string>();
        if (pc.name != "theorem1" && pc.name != "theorem2")
            throw std::invalid_argument("config: unknown preset '" + pc.name + "'");
        pc.d = p.at("d").get<int>();
        pc.delta = p.at("delta").get<double>();
        if (p.contains("constants")) pc.constants = constants_from_json(p.at("constants"));
        c.preset = pc;
    }
    if (j.contains("corrector")) {
        const auto& k = j.at("corrector");
        CorrectorConfig cc;
        cc.T_dagger = k.value("T_dagger", 1.0);
        cc.N_dagger = k.value("N_dagger", 1);
        cc.M_dagger = k.value("M_dagger", 16);
        cc.K_dagger = k.value("K_dagger", 8);
        cc.gamma = k.value("gamma", 1.0);
        c.corrector = cc;
    }
    c.mode = step_mode_from_string(j.value("mode", "exact"));
    c.seed = j.value("seed", std::uint64_t{0});
    c.n_samples = j.value("n_samples", std::int64_t{1});
    c.threads = j.value("threads", 0);
    if (j.contains("score") && j.at("score").contains("perturbation")) {
        const auto& p = j.at("score").at("perturbation");
        PerturbationConfig pc;
        pc.mode = p.value("mode", "linf_budget");
        pc.amplitude = p.value("amplitude", 0.0);
        pc.seed = p.value("seed", std::uint64_t{0});
        c.perturbation = pc;
    }
    c.memory_cap_doubles = j.value("memory_cap_doubles", std::size_t{200'000'000});
    c.write_samples = j.value("write_samples", false);
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["target"] = target_to_json(target);
    j["implementation"] = to_string(implementation);
    if (plan) {
        j["plan"] = {{"T", plan->T},
                     {"eta", plan->eta},
                     {"N", plan->N},
                     {"epsilon", plan->epsilon},
                     {"K", plan->K}};
    }
    if (preset) {
        j["preset"] = {{"name", preset->name},
                       {"d", preset->d},
                       {"delta", preset->delta},
                       {"constants", constants_to_json(preset->constants)}};
    }
    if (corrector) {
        j["corrector"] = {{"T_dagger", corrector->T_dagger},
                          {"N_dagger", corrector->N_dagger},
                          {"M_dagger", corrector->M_dagger},
                          {"K_dagger", corrector->K_dagger},
                          {"gamma", corrector->gamma}};
    }
    j["mode"] = to_string(mode);
    j["seed"] = seed;
    j["n_samples"] = n_samples;
    j["threads"] = threads;
    if (perturbation) {
        j["score"] = {{"perturbation",
                       {{"mode", perturbation->mode},
                        {"amplitude", perturbation->amplitude},
                        {"seed", perturbation->seed}}}};
    }
    j["memory_cap_doubles"] = memory_cap_doubles;
    j["write_samples"] = write_samples;
    return j;
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string s = config.to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

nlohmann::json report_to_json(const SamplerReport& r) {
    nlohmann::json j;
    j["sequential_rounds"] = r.sequential_rounds;
    j["total_score_evals"] = r.total_score_evals;
    j["max_parallel_width"] = r.max_parallel_width;
    j["residual_history"] = r.residual_history;
    j["residual_history_mean"] = r.residual_history_mean;
    j["corrector_residual_history"] = r.corrector_residual_history;
    j["wall_clock_seconds"] = r.wall_clock_seconds;
    return j;
}

nlohmann::json law_to_json(const GaussianLaw& law) {
    nlohmann::json j;
    j["mean"] = nlohmann::json::array();
    for (int i = 0; i < law.mean.size(); ++i) j["mean"].push_back(law.mean[i]);
    j["cov"] = nlohmann::json::array();  // row-major
    for (int r = 0; r < law.cov.rows(); ++r)
        for (int c = 0; c < law.cov.cols(); ++c) j["cov"].push_back(law.cov(r, c));
    return j;
}

GaussianLaw law_from_json(const nlohmann::json& j) {
    GaussianLaw law;
    const auto& mean = j.at("mean");
    const int d = static_cast<int>(mean.size());
    law.mean = Eigen::VectorXd(d);
    for (int i = 0; i < d; ++i) law.mean[i] = mean[i].get<double>();
    law.cov = Eigen::MatrixXd(d, d);
    const auto& cov = j.at("cov");
    if (static_cast<int>(cov.size()) != d * d)
        throw std::invalid_argument("law: cov length mismatch");
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) law.cov(r, c) = cov[r * d + c].get<double>();
    return law;
}

nlohmann::json plan_to_json(const DiscretizationPlan& plan) {
    nlohmann::json j;
    j["T"] = plan.T;
    j["eta"] = plan.eta;
    j["N"] = plan.N;
    j["base_step"] = plan.base_step;
    j["picard_depth"] = plan.picard_depth;
    j["block_lengths"] = plan.block_lengths;
    j["grids"] = plan.grids;
    return j;
}

DiscretizationPlan plan_from_json(const nlohmann::json& j) {
    DiscretizationPlan p;
    p.T = j.at("T").get<double>();
    p.eta = j.at("eta").get<double>();
    p.N = j.at("N").get<int>();
    p.base_step = j.at("base_step").get<double>();
    p.picard_depth = j.at("picard_depth").get<int>();
    p.block_lengths = j.at("block_lengths").get<std::vector<double>>();
    p.grids = j.at("grids").get<std::vector<std::vector<double>>>();
    p.h = p.T / p.N;
    p.validate();
    return p;
}

nlohmann::json reproducible_view(const nlohmann::json& record) {
    nlohmann::json r = record;
    if (r.contains("report")) r["report"].erase("wall_clock_seconds");
    r.erase("wall_clock");
    return r;
}

namespace {

struct BuiltExperiment {
    DiscretizationPlan plan;
    CorrectorPlan cplan;  // N_dagger = 0 when absent
    std::shared_ptr<ScoreOracle> oracle;
    std::shared_ptr<PerturbedOracle> perturbed;
    BackwardScoreFn score;
};

BuiltExperiment build_experiment(const ExperimentConfig& config) {
    BuiltExperiment b;
    if (config.plan) {
        b.plan = build_plan(config.plan->T, config.plan->eta, config.plan->N,
                            config.plan->epsilon, config.plan->K, config.memory_cap_doubles);
    } else if (config.preset) {
        if (config.preset->name == "theorem1") {
            b.plan = theorem1_preset(config.preset->d, config.preset->delta,
                                     config.preset->constants, config.memory_cap_doubles);
        } else {
            auto [plan, cplan] = theorem2_preset(config.preset->d, config.preset->delta,
                                                 config.preset->constants,
                                                 config.memory_cap_doubles);
            b.plan = std::move(plan);
            b.cplan = cplan;
        }
    }
    if (config.corrector) {
        const auto& cc = *config.corrector;
        b.cplan = cc.N_dagger > 0
                      ? CorrectorPlan::make(cc.T_dagger, cc.N_dagger, cc.M_dagger, cc.K_dagger,
                                            cc.gamma)
                      : CorrectorPlan{};
    }

    b.oracle = std::make_shared<ScoreOracle>(config.target, b.plan.T);
    if (config.perturbation && config.perturbation->amplitude > 0.0) {
        const auto mode = config.perturbation->mode == "l2_budget"
                              ? PerturbedOracle::Mode::L2Budget
                              : PerturbedOracle::Mode::LinfBudget;
        b.perturbed = std::make_shared<PerturbedOracle>(b.oracle, mode,
                                                        config.perturbation->amplitude,
                                                        config.perturbation->seed);
        auto p = b.perturbed;
        b.score = [p](double t, const Eigen::VectorXd& x) { return p->backward_score(t, x); };
    } else {
        auto o = b.oracle;
        b.score = [o](double t, const Eigen::VectorXd& x) { return o->backward_score(t, x); };
    }
    return b;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("harness: cannot write " + path);
    f << contents;
}

std::string csv_num(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace

RunRecord run(const ExperimentConfig& config, const std::string& out_dir) {
    config.target.validate();
#ifdef _OPENMP
    if (config.threads > 0) omp_set_num_threads(config.threads);
#endif
    BuiltExperiment built = build_experiment(config);
    const int d = config.target.dimension();

    if (built.plan.contraction_warning(built.oracle->lipschitz_bound())) {
        std::fprintf(stderr,
                     "warning: contraction margin L^2 h e^{2h} = %.3f > 0.5; "
                     "Picard iterations may converge slowly or diverge\n",
                     built.plan.contraction_factor(built.oracle->lipschitz_bound()));
    }

    CountingScore counting{built.score};
    BackwardScoreFn score = [&counting](double t, const Eigen::VectorXd& x) {
        return counting(t, x);
    };

    RunOptions opts;
    opts.picard.mode = config.mode;
    opts.picard.lipschitz_hint = built.oracle->lipschitz_bound();

    SamplerOutput out;
    switch (config.implementation) {
        case Implementation::PiadmSde:
            out = run_piadm_sde(built.plan, d, score, config.seed, config.n_samples, opts,
                                counting.counter.get());
            break;
        case Implementation::SequentialSde:
            out = run_sequential_sde(built.plan, d, score, config.seed, config.n_samples,
                                     config.mode, counting.counter.get());
            break;
        case Implementation::PiadmOde:
            out = run_piadm_ode(built.plan, built.cplan, d, score, config.seed, config.n_samples,
                                opts, counting.counter.get());
            break;
        case Implementation::SequentialOde:
            out = run_sequential_ode(built.plan, built.cplan, d, score, config.seed,
                                     config.n_samples, config.mode, counting.counter.get());
            break;
    }

    nlohmann::json record;
    record["version"] = kVersion;
    record["config"] = config.to_json();
    record["config_hash"] = config_hash(config);
    record["report"] = report_to_json(out.report);
    record["score_counter"] = {{"rounds", counting.counter->rounds()},
                               {"evals", counting.counter->evals()},
                               {"max_width", counting.counter->max_width()}};
    record["plan"] = plan_to_json(built.plan);

    double kl = std::numeric_limits<double>::quiet_NaN();
    double w2 = std::numeric_limits<double>::quiet_NaN();
    if (config.target.variant == TargetSpec::Variant::Gaussian) {
        const bool is_ode = config.implementation == Implementation::PiadmOde ||
                            config.implementation == Implementation::SequentialOde;
        const GaussianLaw out_law =
            is_ode ? propagate_ode_plan(built.plan, built.cplan, config.target, config.mode)
                   : propagate_sde_plan(built.plan, config.target, config.mode);
        const auto comps = ou_marginal(config.target, built.plan.eta);
        const GaussianLaw reference{comps[0].mean, comps[0].cov};
        kl = kl_gaussian(reference, out_law);
        w2 = w2_gaussian(reference, out_law);
        record["law_comparison"] = {{"output_law", law_to_json(out_law)},
                                    {"reference_law", law_to_json(reference)},
                                    {"kl", kl},
                                    {"w2", w2},
                                    {"tv_bound", tv_bound_from_kl(kl)}};
    } else {
        const MomentSummary ms = moment_summary(out.samples);
        nlohmann::json mj;
        mj["n"] = ms.n;
        for (int i = 0; i < d; ++i) mj["mean"].push_back(ms.mean[i]);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) mj["cov"].push_back(ms.cov(r, c));
        record["moments"] = mj;
        // reference samples drawn directly from the early-stopped marginal
        std::vector<Eigen::VectorXd> ref(out.samples.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            ref[i] = built.oracle->sample_marginal(
                built.plan.eta, rng::mix(config.seed ^ 0x5eedULL, i));
        const double sw2 = sliced_w2(out.samples, ref, 16, config.seed ^ 0xabcdULL);
        record["sliced_w2"] = sw2;
        w2 = sw2;
    }
    record["oracle"] = {{"lipschitz_bound", built.oracle->lipschitz_bound()},
                        {"magnitude_bound", built.oracle->magnitude_bound()},
                        {"box_radius", built.oracle->box_radius()}};
    record["wall_clock"] = out.report.wall_clock_seconds;

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_file(out_dir + "/record.json", record.dump(2) + "\n");

        std::ostringstream rows;
        rows << kRowsCsvHeader << "\n";
        rows << d << "," << (config.preset ? csv_num(config.preset->delta) : "nan") << ","
             << to_string(config.implementation) << "," << to_string(config.mode) << ","
             << out.report.sequential_rounds << "," << out.report.total_score_evals << ","
             << out.report.max_parallel_width << "," << csv_num(kl) << "," << csv_num(w2) << ","
             << csv_num(out.report.wall_clock_seconds) << "\n";
        write_file(out_dir + "/rows.csv", rows.str());

        std::ostringstream res;
        res << kResidualsCsvHeader << "\n";
        for (std::size_t n = 0; n < out.report.residual_history.size(); ++n)
            for (std::size_t k = 0; k < out.report.residual_history[n].size(); ++k)
                res << n << "," << k << "," << csv_num(out.report.residual_history[n][k]) << "\n";
        write_file(out_dir + "/residuals.csv", res.str());

        if (config.write_samples) {
            std::ostringstream sc;
            for (const auto& s : out.samples) {
                for (int i = 0; i < s.size(); ++i) sc << (i ? "," : "") << csv_num(s[i]);
                sc << "\n";
            }
            write_file(out_dir + "/samples.csv", sc.str());
        }
    }

    RunRecord rr;
    rr.hash = record["config_hash"].get<std::string>();
    rr.report = out.report;
    rr.payload = std::move(record);
    return rr;
}

int minimal_depth(const DiscretizationPlan& plan, int d, const BackwardScoreFn& score,
                  std::uint64_t seed, double residual_tol, int max_depth) {
    auto converged = [&](int K) {
        RunOptions opts;
        opts.picard.iterations = K;
        SamplerOutput out = run_piadm_sde(plan, d, score, seed, 1, opts);
        for (const auto& block : out.report.residual_history) {
            if (block.empty() || block.back() > residual_tol) return false;
        }
        return true;
    };
    int hi = 1;
    while (hi < max_depth && !converged(hi)) hi *= 2;
    if (hi >= max_depth) throw std::runtime_error("minimal_depth: no convergence by max depth");
    int lo = hi / 2 + 1;
    if (hi == 1) return 1;
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (converged(mid))
            hi = mid;
        else
            lo = mid + 1;
    }
    return hi;
}

SweepResult sweep_dimension(const ExperimentConfig& base, const std::vector<int>& dims,
                            double residual_tol, const std::string& out_dir) {
    if (!base.plan) throw std::invalid_argument("sweep: base config must carry an explicit plan");
    for (std::size_t i = 1; i < dims.size(); ++i)
        if (dims[i] <= dims[i - 1]) throw std::invalid_argument("sweep: dims must be sorted");
    const double delta = 0.01;  // accuracy at which preset orders are recorded
    const DiscretizationPlan probe_plan =
        build_plan(base.plan->T, base.plan->eta, base.plan->N, base.plan->epsilon, base.plan->K,
                   base.memory_cap_doubles);

    SweepResult result;
    bool any_failed = false;
    for (int d : dims) {
        const PresetParams t1 = theorem1_params(d, delta);
        const PresetParams t2 = theorem2_params(d, delta);

        TargetSpec target = TargetSpec::standard_gaussian(d);
        auto oracle = std::make_shared<ScoreOracle>(target, probe_plan.T);
        BackwardScoreFn score = [oracle](double t, const Eigen::VectorXd& x) {
            return oracle->backward_score(t, x);
        };
        int kmin = 0;
        bool skipped = false;
        try {
            kmin = minimal_depth(probe_plan, d, score, base.seed, residual_tol);
        } catch (const std::exception&) {
            skipped = true;
            any_failed = true;
        }

        SweepRow r1{d,       delta, "theorem1",          t1.M, 0,
                    double(d) * double(t1.M), kmin, std::int64_t(probe_plan.N) * kmin, skipped};
        r1.skipped = r1.skipped || r1.memory_doubles > double(base.memory_cap_doubles);
        SweepRow r2{d,       delta, "theorem2",          t2.M, t2.M_dagger,
                    double(d) * double(std::max(t2.M, t2.M_dagger)), kmin,
                    std::int64_t(probe_plan.N) * kmin, skipped};
        r2.skipped = r2.skipped || r2.memory_doubles > double(base.memory_cap_doubles);
        result.rows.push_back(r1);
        result.rows.push_back(r2);
    }

    nlohmann::json j;
    j["version"] = kVersion;
    j["residual_tol"] = residual_tol;
    j["base_plan"] = plan_to_json(probe_plan);
    for (const auto& r : result.rows) {
        j["rows"].push_back({{"d", r.d},
                             {"delta", r.delta},
                             {"preset", r.preset},
                             {"M", r.M},
                             {"M_dagger", r.M_dagger},
                             {"memory_doubles", r.memory_doubles},
                             {"K_min", r.K_min},
                             {"sequential_rounds", r.sequential_rounds},
                             {"skipped", r.skipped}});
    }
    j["any_failed"] = any_failed;
    result.payload = std::move(j);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ostringstream csv;
        csv << kSweepCsvHeader << "\n";
        for (const auto& r : result.rows) {
            csv << r.d << "," << csv_num(r.delta) << "," << r.preset << "," << r.M << ","
                << r.M_dagger << "," << csv_num(r.memory_doubles) << "," << r.K_min << ","
                << r.sequential_rounds << "," << (r.skipped ? 1 : 0) << "\n";
        }
        write_file(out_dir + "/sweep.csv", csv.str());
        write_file(out_dir + "/sweep.json", result.payload.dump(2) + "\n");
    }
    return result;
}

}  // namespace piadm
