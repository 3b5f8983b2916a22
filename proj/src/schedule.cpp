#include "piadm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace piadm {

double DiscretizationPlan::block_start(int n) const {
    double t = 0.0;
    for (int j = 0; j < n; ++j) t += block_lengths.at(j);
    return t;
}

std::size_t DiscretizationPlan::total_steps() const {
    std::size_t s = 0;
    for (int n = 0; n < N; ++n) s += static_cast<std::size_t>(steps_in_block(n));
    return s;
}

double DiscretizationPlan::contraction_factor(double L) const {
    return L * L * h * std::exp(2.0 * h);
}

int DiscretizationPlan::index(int n, double tau) const {
    const auto& g = grids.at(n);
    const double hn = block_lengths.at(n);
    if (tau < 0.0 || tau > hn) throw std::domain_error("plan: tau outside block");
    const int M = static_cast<int>(g.size()) - 1;
    if (tau >= g[M]) return M - 1;  // closed right endpoint
    int m;
    if (n < N - 1) {
        m = static_cast<int>(std::floor(tau / base_step));
        m = std::clamp(m, 0, M - 1);
    } else {
        m = static_cast<int>(std::upper_bound(g.begin(), g.end(), tau) - g.begin()) - 1;
        m = std::clamp(m, 0, M - 1);
    }
    while (m > 0 && tau < g[m]) --m;
    while (m + 1 < M && tau >= g[m + 1]) ++m;
    return m;
}

double DiscretizationPlan::snap(int n, double tau) const { return grids.at(n)[index(n, tau)]; }

void DiscretizationPlan::validate() const {
    if (N < 1 || static_cast<int>(grids.size()) != N ||
        static_cast<int>(block_lengths.size()) != N)
        throw std::runtime_error("plan: malformed block arrays");
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
        const auto& g = grids[n];
        if (g.size() < 2) throw std::runtime_error("plan: empty block grid");
        if (g.front() != 0.0) throw std::runtime_error("plan: grid must start at 0");
        if (std::abs(g.back() - block_lengths[n]) > 1e-12)
            throw std::runtime_error("plan: grid must end at the block length");
        for (std::size_t m = 0; m + 1 < g.size(); ++m) {
            if (!(g[m + 1] > g[m])) throw std::runtime_error("plan: grid not strictly sorted");
        }
        sum += block_lengths[n];
    }
    if (std::abs(sum - (T - eta)) > 1e-10 * std::max(1.0, T))
        throw std::runtime_error("plan: block lengths do not sum to T - eta");

    // Uniform blocks.
    for (int n = 0; n + 1 < N; ++n) {
        const auto& g = grids[n];
        for (std::size_t m = 0; m + 1 < g.size(); ++m) {
            if (std::abs((g[m + 1] - g[m]) - base_step) > 1e-12)
                throw std::runtime_error("plan: non-uniform step in a uniform block");
        }
    }
    // Decaying last block: eps_{m} <= eps and eps_{m} <= eps (h - tau_{m+1}).
    const auto& g = grids[N - 1];
    for (std::size_t m = 0; m + 1 < g.size(); ++m) {
        const double step = g[m + 1] - g[m];
        if (step > base_step * (1.0 + 1e-12))
            throw std::runtime_error("plan: last-block step exceeds base step");
        if (step > base_step * (h - g[m + 1]) * (1.0 + 1e-9) + 1e-15)
            throw std::runtime_error("plan: last-block step violates the decay rule");
    }
}

DiscretizationPlan build_plan(double T, double eta, int N, double eps, int K,
                              std::size_t memory_cap_doubles) {
    if (!(T > eta && eta > 0.0)) throw std::invalid_argument("plan: need T > eta > 0");
    if (N < 1) throw std::invalid_argument("plan: need N >= 1");
    if (!(eps > 0.0)) throw std::invalid_argument("plan: need eps > 0");
    if (K < 0) throw std::invalid_argument("plan: need K >= 0");

    DiscretizationPlan plan;
    plan.T = T;
    plan.eta = eta;
    plan.N = N;
    plan.base_step = eps;
    plan.picard_depth = K;
    plan.h = T / N;
    if (eta >= plan.h) throw std::invalid_argument("plan: eta must be smaller than T/N");

    const double steps = plan.h / eps;
    const auto M = static_cast<std::size_t>(std::llround(steps));
    if (M < 1 || std::abs(steps - static_cast<double>(M)) > 1e-12 * std::max(1.0, steps))
        throw std::invalid_argument("plan: eps must divide T/N");

    std::vector<double> uniform(M + 1);
    for (std::size_t m = 0; m <= M; ++m) uniform[m] = (static_cast<double>(m) * plan.h) / M;
    uniform[M] = plan.h;

    // Last block: full steps while far from the data end, then geometric
    // shrinking, with the final step clipped to land exactly on h - eta.
    std::vector<double> last;
    last.push_back(0.0);
    const double h = plan.h;
    double tau = 0.0;
    while (h - tau > eta * (1.0 + eps)) {
        const double step = std::min(eps, eps * (h - tau) / (1.0 + eps));
        tau += step;
        last.push_back(tau);
    }
    if (h - eta > last.back()) {
        last.push_back(h - eta);
    } else {
        last.back() = h - eta;
    }

    const std::size_t budget =
        static_cast<std::size_t>(std::ceil(std::log(h / eta) / eps)) +
        static_cast<std::size_t>(std::ceil(h / eps));
    if (last.size() - 1 > budget) {
        std::ostringstream msg;
        msg << "plan: last block used " << last.size() - 1 << " steps, budget " << budget;
        throw std::runtime_error(msg.str());
    }

    std::size_t grid_doubles = (N - 1) * (M + 1) + last.size();
    if (grid_doubles > memory_cap_doubles) {
        std::ostringstream msg;
        msg << "plan: grid needs " << grid_doubles << " doubles, cap " << memory_cap_doubles;
        throw std::runtime_error(msg.str());
    }

    for (int n = 0; n + 1 < N; ++n) {
        plan.block_lengths.push_back(plan.h);
        plan.grids.push_back(uniform);
    }
    plan.block_lengths.push_back(plan.h - eta);
    plan.grids.push_back(std::move(last));
    plan.validate();
    return plan;
}

void CorrectorPlan::validate() const {
    if (N_dagger < 0 || M_dagger < 1 || K_dagger < 0 || gamma <= 0.0)
        throw std::invalid_argument("corrector plan: invalid parameters");
    if (N_dagger > 0) {
        if (std::abs(N_dagger * h_dagger - T_dagger) > 1e-12 * std::max(1.0, T_dagger))
            throw std::invalid_argument("corrector plan: N h != T");
        if (std::abs(M_dagger * eps_dagger - h_dagger) > 1e-12 * std::max(1.0, h_dagger))
            throw std::invalid_argument("corrector plan: M eps != h");
    }
}

CorrectorPlan CorrectorPlan::make(double T_dagger, int N_dagger, int M_dagger, int K_dagger,
                                  double gamma) {
    CorrectorPlan p;
    p.T_dagger = T_dagger;
    p.N_dagger = N_dagger;
    p.h_dagger = N_dagger > 0 ? T_dagger / N_dagger : 0.0;
    p.M_dagger = M_dagger;
    p.eps_dagger = N_dagger > 0 ? p.h_dagger / M_dagger : 0.0;
    p.K_dagger = K_dagger;
    p.gamma = gamma;
    p.validate();
    return p;
}

namespace {

double preset_horizon(int d, double delta, double c_T) {
    return c_T * std::ceil(std::log(d / (delta * delta)));
}

double preset_eta(double T) { return std::max(std::exp(-T), 1e-6); }

}  // namespace

PresetParams theorem1_params(int d, double delta, const PresetConstants& c) {
    if (d < 1 || delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("preset: need d >= 1 and 0 < delta < 1");
    PresetParams p;
    p.T = preset_horizon(d, delta, c.c_T);
    p.N = static_cast<int>(std::llround(p.T));  // h = 1
    p.eta = preset_eta(p.T);
    const double h = p.T / p.N;
    const double eps_raw = c.c_eps * delta * delta / (d * p.T);
    p.M = static_cast<std::size_t>(std::ceil(h / eps_raw));
    p.eps = h / static_cast<double>(p.M);
    p.K = static_cast<int>(std::ceil(c.c_K * std::log2(d / (delta * delta))));
    return p;
}

PresetParams theorem2_params(int d, double delta, const PresetConstants& c) {
    if (d < 1 || delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("preset: need d >= 1 and 0 < delta < 1");
    PresetParams p;
    p.T = preset_horizon(d, delta, c.c_T);
    p.N = static_cast<int>(std::llround(p.T));
    p.eta = preset_eta(p.T);
    const double h = p.T / p.N;
    const double root_d = std::sqrt(static_cast<double>(d));
    const double log_term = std::max(1.0, std::log(root_d / delta));
    const double eps_raw = c.c_eps * delta / (root_d * log_term);
    p.M = static_cast<std::size_t>(std::ceil(h / eps_raw));
    p.eps = h / static_cast<double>(p.M);
    p.K = static_cast<int>(std::ceil(c.c_K * std::log2(d / (delta * delta))));

    p.T_dagger = c.c_Tdag * 1.0;
    p.N_dagger = 1;
    const double h_dag = p.T_dagger / p.N_dagger;
    const double eps_dag_raw = c.c_eps_dag * delta / root_d;
    p.M_dagger = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(std::ceil(h_dag / eps_dag_raw))));
    p.K_dagger = static_cast<int>(std::ceil(c.c_Kdag * std::log2(d / (delta * delta))));
    p.gamma = c.c_gamma * std::max(1.0, std::sqrt(c.lipschitz_hint));
    return p;
}

DiscretizationPlan theorem1_preset(int d, double delta, const PresetConstants& c,
                                   std::size_t memory_cap_doubles) {
    const PresetParams p = theorem1_params(d, delta, c);
    return build_plan(p.T, p.eta, p.N, p.eps, p.K, memory_cap_doubles);
}

std::pair<DiscretizationPlan, CorrectorPlan> theorem2_preset(int d, double delta,
                                                             const PresetConstants& c,
                                                             std::size_t memory_cap_doubles) {
    const PresetParams p = theorem2_params(d, delta, c);
    DiscretizationPlan plan = build_plan(p.T, p.eta, p.N, p.eps, p.K, memory_cap_doubles);
    CorrectorPlan cp = CorrectorPlan::make(p.T_dagger, p.N_dagger,
                                           static_cast<int>(p.M_dagger), p.K_dagger, p.gamma);
    return {std::move(plan), cp};
}

}  // namespace piadm
