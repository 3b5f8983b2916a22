#include "piadm/score_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "piadm/rng.hpp"

namespace piadm {

namespace {

std::uint64_t double_bits(double t) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(t));
    std::memcpy(&bits, &t, sizeof(bits));
    return bits;
}

}  // namespace

std::vector<MarginalComponent> ou_marginal(const TargetSpec& target, double t) {
    if (t < 0.0) throw std::domain_error("ou_marginal: t must be nonnegative");
    target.validate();
    const int d = target.dimension();
    const double decay = std::exp(-t);
    const double mean_decay = std::exp(-0.5 * t);
    std::vector<MarginalComponent> out;
    out.reserve(target.components());
    for (int i = 0; i < target.components(); ++i) {
        MarginalComponent c;
        c.mean = mean_decay * target.means[i];
        c.cov = decay * target.covariances[i] + (1.0 - decay) * Eigen::MatrixXd::Identity(d, d);
        c.weight = target.weights[i];
        out.push_back(std::move(c));
    }
    return out;
}

ScoreOracle::ScoreOracle(TargetSpec target, double horizon, double box_radius)
    : target_(std::move(target)), horizon_(horizon) {
    if (horizon_ < 0.0) throw std::invalid_argument("oracle: horizon must be nonnegative");
    target_.validate();
    if (box_radius <= 0.0) {
        double mu_max = 0.0, var_max = 1.0;
        for (int i = 0; i < target_.components(); ++i) {
            mu_max = std::max(mu_max, target_.means[i].cwiseAbs().maxCoeff());
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(target_.covariances[i]);
            var_max = std::max(var_max, es.eigenvalues().maxCoeff());
        }
        box_radius = 8.0 * std::max(1.0, mu_max + std::sqrt(var_max));
    }
    box_radius_ = box_radius;
    compute_bounds();
}

const ScoreOracle::Cached& ScoreOracle::cached(double t) const {
    const std::uint64_t key = double_bits(t);
    {
        std::shared_lock lock(cache_mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return *it->second;
    }
    auto entry = std::make_shared<Cached>();
    const int d = dimension();
    const auto comps = ou_marginal(target_, t);
    for (const auto& c : comps) {
        Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("oracle: marginal covariance lost positive-definiteness");
        const Eigen::MatrixXd L = llt.matrixL();
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(L(i, i));
        entry->means.push_back(c.mean);
        entry->inv.push_back(llt.solve(Eigen::MatrixXd::Identity(d, d)));
        entry->chol.push_back(L);
        entry->log_norm.push_back(-0.5 * d * std::log(2.0 * M_PI) - 0.5 * logdet);
    }
    std::unique_lock lock(cache_mutex_);
    auto [it, inserted] = cache_.emplace(key, std::move(entry));
    return *it->second;
}

Eigen::VectorXd ScoreOracle::score(double t, const Eigen::VectorXd& x) const {
    if (t < 0.0 || t > horizon_ + 1e-9)
        throw std::domain_error("oracle: forward time outside [0, horizon]");
    if (x.size() != dimension()) throw std::invalid_argument("oracle: dimension mismatch");
    const Cached& c = cached(t);
    const int k = static_cast<int>(c.means.size());

    if (k == 1) return -(c.inv[0] * (x - c.means[0]));

    // Mixture responsibilities through log-sum-exp so well-separated
    // components at small t cannot underflow.
    std::vector<double> logw(k);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
        const Eigen::VectorXd dx = x - c.means[i];
        logw[i] = std::log(target_.weights[i]) + c.log_norm[i] -
                  0.5 * dx.dot(c.inv[i] * dx);
        max_logw = std::max(max_logw, logw[i]);
    }
    double denom = 0.0;
    for (int i = 0; i < k; ++i) denom += std::exp(logw[i] - max_logw);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dimension());
    for (int i = 0; i < k; ++i) {
        const double r = std::exp(logw[i] - max_logw) / denom;
        s.noalias() -= r * (c.inv[i] * (x - c.means[i]));
    }
    if (!s.allFinite()) throw std::runtime_error("oracle: non-finite score");
    return s;
}

Eigen::VectorXd ScoreOracle::backward_score(double t, const Eigen::VectorXd& x) const {
    if (t < 0.0 || t > horizon_)
        throw std::domain_error("oracle: backward time outside [0, horizon]");
    return score(horizon_ - t, x);
}

double ScoreOracle::log_density(double t, const Eigen::VectorXd& x) const {
    const Cached& c = cached(t);
    const int k = static_cast<int>(c.means.size());
    double max_logw = -std::numeric_limits<double>::infinity();
    std::vector<double> logw(k);
    for (int i = 0; i < k; ++i) {
        const Eigen::VectorXd dx = x - c.means[i];
        logw[i] = std::log(target_.weights[i]) + c.log_norm[i] - 0.5 * dx.dot(c.inv[i] * dx);
        max_logw = std::max(max_logw, logw[i]);
    }
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += std::exp(logw[i] - max_logw);
    return max_logw + std::log(acc);
}

Eigen::VectorXd ScoreOracle::sample_marginal(double t, std::uint64_t key) const {
    const Cached& c = cached(t);
    rng::Key k(key);
    int comp = 0;
    if (c.means.size() > 1) {
        const double u = rng::uniform01(rng::mix(k.state, 0xc0117ULL));
        double acc = 0.0;
        for (std::size_t i = 0; i < c.means.size(); ++i) {
            acc += target_.weights[i];
            if (u <= acc) { comp = static_cast<int>(i); break; }
            comp = static_cast<int>(i);
        }
    }
    const Eigen::VectorXd z = rng::normal_vector(k.with(0x5a3ULL), dimension());
    return c.means[comp] + c.chol[comp] * z;
}

void ScoreOracle::compute_bounds() {
    const int d = dimension();
    const int nt = 33;
    double lip = 0.0, mag = 0.0;

    if (target_.variant == TargetSpec::Variant::Gaussian) {
        // lambda_min(Sigma_t) is monotone in t, so the extreme inverse
        // eigenvalue sits at an endpoint.
        for (double t : {0.0, horizon_}) {
            const auto comps = ou_marginal(target_, t);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(comps[0].cov);
            lip = std::max(lip, 1.0 / es.eigenvalues().minCoeff());
        }
        for (int it = 0; it < nt; ++it) {
            const double t = horizon_ * it / (nt - 1.0);
            const auto comps = ou_marginal(target_, t);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(comps[0].cov);
            const double pnorm = 1.0 / es.eigenvalues().minCoeff();
            mag = std::max(mag, pnorm * (box_radius_ * std::sqrt(double(d)) + comps[0].mean.norm()));
        }
    } else {
        // No closed form for mixtures: probe the box numerically.
        rng::Key key(0x10cabdefULL);
        const int npts = 128;
        const double fd = 1e-4;
        for (int it = 0; it < nt; ++it) {
            const double t = std::max(1e-6, horizon_ * it / (nt - 1.0));
            double comp_pnorm = 0.0;
            const auto comps = ou_marginal(target_, t);
            for (const auto& c : comps) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.cov);
                comp_pnorm = std::max(comp_pnorm,
                                      1.0 / es.eigenvalues().minCoeff() *
                                          (box_radius_ * std::sqrt(double(d)) + c.mean.norm()));
            }
            mag = std::max(mag, comp_pnorm);
            for (int p = 0; p < npts; ++p) {
                rng::Key pk = key.with(it).with(p);
                Eigen::VectorXd x(d);
                for (int i = 0; i < d; ++i)
                    x[i] = box_radius_ * (2.0 * rng::uniform01(rng::mix(pk.state, i)) - 1.0);
                const Eigen::VectorXd s0 = score(std::min(t, horizon_), x);
                for (int i = 0; i < d; ++i) {
                    Eigen::VectorXd xp = x;
                    xp[i] += fd;
                    const Eigen::VectorXd sp = score(std::min(t, horizon_), xp);
                    lip = std::max(lip, (sp - s0).norm() / fd);
                }
            }
        }
        lip *= 2.0;  // sampling safety margin
    }
    lipschitz_ = lip;
    magnitude_ = mag;
}

PerturbedOracle::PerturbedOracle(std::shared_ptr<const ScoreOracle> base, Mode mode,
                                 double amplitude, std::uint64_t seed)
    : base_(std::move(base)), mode_(mode), amplitude_(amplitude), seed_(seed) {
    if (amplitude_ < 0.0) throw std::invalid_argument("perturbation: negative amplitude");
    // L2 budget is spread over the whole horizon; Linf budget applies per time.
    pointwise_ = (mode_ == Mode::L2Budget)
                     ? amplitude_ / std::sqrt(std::max(base_->horizon(), 1e-12))
                     : amplitude_;
}

Eigen::VectorXd PerturbedOracle::direction(double forward_t) const {
    rng::Key key(seed_);
    key = key.with(rng::kPerturbation).with(double_bits(forward_t));
    Eigen::VectorXd v = rng::normal_vector(key, base_->dimension());
    const double n = v.norm();
    if (n < 1e-300) return Eigen::VectorXd::Unit(base_->dimension(), 0);
    return v / n;
}

Eigen::VectorXd PerturbedOracle::score(double t, const Eigen::VectorXd& x) const {
    if (amplitude_ == 0.0) return base_->score(t, x);
    return base_->score(t, x) + pointwise_ * direction(t);
}

Eigen::VectorXd PerturbedOracle::backward_score(double t, const Eigen::VectorXd& x) const {
    if (t < 0.0 || t > base_->horizon())
        throw std::domain_error("perturbation: backward time outside [0, horizon]");
    return score(base_->horizon() - t, x);
}

}  // namespace piadm
