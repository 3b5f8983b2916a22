#pragma once

#include <cstdint>
#include <vector>

#include "piadm/target.hpp"

namespace piadm {

// Two-level time grid for the backward horizon: N blocks of nominal length
// h = T/N, uniform inner steps everywhere except the last block, whose steps
// shrink geometrically towards the early-stop time T - eta.
struct DiscretizationPlan {
    double T = 0.0;       // total horizon
    double eta = 0.0;     // early-stop offset
    int N = 0;            // block count
    double base_step = 0.0;
    int picard_depth = 0;

    double h = 0.0;                            // nominal block length T/N
    std::vector<double> block_lengths;         // size N; last one is h - eta
    std::vector<std::vector<double>> grids;    // per block: tau_0..tau_{M_n}

    int steps_in_block(int n) const { return static_cast<int>(grids.at(n).size()) - 1; }
    double block_start(int n) const;           // t_n
    double step_size(int n, int m) const { return grids[n][m + 1] - grids[n][m]; }
    std::size_t total_steps() const;

    // Largest admissible contraction factor diagnostic L^2 h e^{2h}.
    double contraction_factor(double score_lipschitz) const;
    bool contraction_warning(double score_lipschitz) const {
        return contraction_factor(score_lipschitz) > 0.5;
    }

    // Index of the step whose half-open cell contains tau (closed at the
    // final node). Throws std::domain_error outside [0, h_n].
    int index(int n, double tau) const;
    // Grid node at or below tau: tau_{n, index(n,tau)}.
    double snap(int n, double tau) const;

    void validate() const;  // throws std::runtime_error on internal inconsistency
};

// Inner schedule of the momentum-augmented correction run after each block.
struct CorrectorPlan {
    double T_dagger = 0.0;
    int N_dagger = 0;
    double h_dagger = 0.0;
    int M_dagger = 0;
    double eps_dagger = 0.0;
    int K_dagger = 0;
    double gamma = 1.0;

    void validate() const;
    static CorrectorPlan make(double T_dagger, int N_dagger, int M_dagger, int K_dagger,
                              double gamma);
};

// eps must divide T/N up to 1e-12; the last block is generated by the
// geometric rule tau_{m+1} = tau_m + min(eps, eps (h - tau_m) / (1 + eps)).
DiscretizationPlan build_plan(double T, double eta, int N, double eps, int K,
                              std::size_t memory_cap_doubles = 200'000'000);

// Parameter orders behind the preset plans; kept separate from plan
// construction so scaling studies can inspect them without materializing
// huge grids.
struct PresetParams {
    double T = 0.0;
    double eta = 0.0;
    int N = 0;
    double eps = 0.0;
    std::size_t M = 0;       // uniform steps per block
    int K = 0;
    // corrector (second preset only)
    double T_dagger = 0.0;
    int N_dagger = 0;
    std::size_t M_dagger = 0;
    int K_dagger = 0;
    double gamma = 1.0;
};

struct PresetConstants {
    double c_T = 1.0;
    double c_eps = 1.0;
    double c_K = 1.0;
    double c_Tdag = 1.0;
    double c_eps_dag = 1.0;
    double c_Kdag = 1.0;
    double c_gamma = 1.0;
    double lipschitz_hint = 1.0;  // sets gamma = max(1, sqrt(L)) scaling
};

PresetParams theorem1_params(int d, double delta, const PresetConstants& c = {});
PresetParams theorem2_params(int d, double delta, const PresetConstants& c = {});

DiscretizationPlan theorem1_preset(int d, double delta, const PresetConstants& c = {},
                                   std::size_t memory_cap_doubles = 200'000'000);
std::pair<DiscretizationPlan, CorrectorPlan> theorem2_preset(
    int d, double delta, const PresetConstants& c = {},
    std::size_t memory_cap_doubles = 200'000'000);

}  // namespace piadm
