#pragma once

// Test-only simulation oracles, independent of the sampler code paths they
// check: Euler-Maruyama integrators for the forward noising process and the
// momentum dynamics, plus small statistics helpers.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "piadm/rng.hpp"

namespace testutil {

// dx = -x/2 ds + dw from a given start, fixed step dt.
inline Eigen::VectorXd em_forward_ou(const Eigen::VectorXd& x0, double t, double dt,
                                     piadm::rng::Key key) {
    Eigen::VectorXd x = x0;
    const int d = static_cast<int>(x0.size());
    const int steps = static_cast<int>(std::llround(t / dt));
    const double sq = std::sqrt(dt);
    std::uint64_t ctr = 0;
    for (int s = 0; s < steps; ++s) {
        for (int i = 0; i < d; ++i) {
            x[i] += -0.5 * x[i] * dt + sq * piadm::rng::normal(key, ctr++);
        }
    }
    return x;
}

// du = v dt, dv = (-gamma v + f(u)) dt + sqrt(2 gamma) dw.
inline void em_ulmc(Eigen::VectorXd& u, Eigen::VectorXd& v, double gamma,
                    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& force,
                    double t, double dt, piadm::rng::Key key) {
    const int d = static_cast<int>(u.size());
    const int steps = static_cast<int>(std::llround(t / dt));
    const double sq = std::sqrt(2.0 * gamma * dt);
    std::uint64_t ctr = 0;
    for (int s = 0; s < steps; ++s) {
        const Eigen::VectorXd f = force(u);
        for (int i = 0; i < d; ++i) {
            const double du = v[i] * dt;
            v[i] += (-gamma * v[i] + f[i]) * dt + sq * piadm::rng::normal(key, ctr++);
            u[i] += du;
        }
    }
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double var_of(const std::vector<double>& xs) {
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

// standard error of a sample variance under approximate normality
inline double var_se(double var, std::size_t n) {
    return var * std::sqrt(2.0 / static_cast<double>(n - 1));
}

}  // namespace testutil
