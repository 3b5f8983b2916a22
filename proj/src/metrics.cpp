#include "piadm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "piadm/rng.hpp"

namespace piadm {

MomentSummary moment_summary(const std::vector<Eigen::VectorXd>& samples) {
    if (samples.size() < 2) throw std::invalid_argument("moments: need at least two samples");
    const int d = static_cast<int>(samples[0].size());
    const auto n = static_cast<std::int64_t>(samples.size());

    MomentSummary s;
    s.n = n;
    s.mean = Eigen::VectorXd::Zero(d);
    for (const auto& x : samples) s.mean += x;
    s.mean /= static_cast<double>(n);

    s.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& x : samples) {
        const Eigen::VectorXd dx = x - s.mean;
        s.cov += dx * dx.transpose();
    }
    s.cov /= static_cast<double>(n - 1);

    s.mean_se = (s.cov.diagonal() / static_cast<double>(n)).cwiseMax(0.0).cwiseSqrt();
    s.cov_se = Eigen::MatrixXd(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            s.cov_se(i, j) = std::sqrt(
                std::max(0.0, (s.cov(i, i) * s.cov(j, j) + s.cov(i, j) * s.cov(i, j)) /
                                  static_cast<double>(n)));
    return s;
}

namespace {

double w2_1d(std::vector<double>& a, std::vector<double>& b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            acc += d * d;
        }
        return std::sqrt(acc / static_cast<double>(a.size()));
    }
    // unequal sizes: couple through quantiles on a common grid
    const std::size_t n = std::max(a.size(), b.size());
    auto quantile = [](const std::vector<double>& v, double q) {
        const double pos = q * (static_cast<double>(v.size()) - 1.0);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        const double w = pos - static_cast<double>(lo);
        return (1.0 - w) * v[lo] + w * v[hi];
    };
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double d = quantile(a, q) - quantile(b, q);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace

double sliced_w2(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                 int n_projections, std::uint64_t seed) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("sliced_w2: need samples");
    if (a[0].size() != b[0].size()) throw std::invalid_argument("sliced_w2: dimension mismatch");
    if (n_projections < 1) throw std::invalid_argument("sliced_w2: need projections");
    const int d = static_cast<int>(a[0].size());

    rng::Key key(seed);
    double acc = 0.0;
    std::vector<double> pa(a.size()), pb(b.size());
    for (int p = 0; p < n_projections; ++p) {
        Eigen::VectorXd dir = rng::normal_vector(key.with(rng::kProjection).with(p), d);
        const double norm = dir.norm();
        dir = (norm > 1e-300) ? Eigen::VectorXd(dir / norm) : Eigen::VectorXd::Unit(d, 0);
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dir.dot(a[i]);
        for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dir.dot(b[i]);
        acc += w2_1d(pa, pb);
    }
    return acc / n_projections;
}

double picard_rate(const std::vector<double>& residuals) {
    const int K = static_cast<int>(residuals.size());
    if (K < 4) throw std::invalid_argument("picard_rate: need at least 4 iterations");
    // fit over iterations [2, K-1], skipping exact zeros
    std::vector<std::pair<double, double>> pts;
    for (int k = 2; k < K; ++k) {
        if (residuals[k] > 0.0) pts.emplace_back(static_cast<double>(k), std::log(residuals[k]));
    }
    if (pts.empty()) return kRateExactSentinel;
    if (pts.size() == 1) return kRateExactSentinel;
    double sx = 0, sy = 0;
    for (auto& [x, y] : pts) {
        sx += x;
        sy += y;
    }
    const double mx = sx / pts.size(), my = sy / pts.size();
    double num = 0, den = 0;
    for (auto& [x, y] : pts) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if (den == 0.0) return kRateExactSentinel;
    return num / den;
}

std::vector<double> picard_rates(const ResidualTrace& trace) {
    std::vector<double> out;
    out.reserve(trace.per_block.size());
    for (const auto& r : trace.per_block) out.push_back(picard_rate(r));
    return out;
}

}  // namespace piadm
