#include "piadm/target.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace piadm {

void TargetSpec::validate() const {
    if (means.empty()) throw std::invalid_argument("target: no components");
    if (means.size() != covariances.size() || means.size() != weights.size())
        throw std::invalid_argument("target: component lists disagree in length");
    if (variant == Variant::Gaussian && means.size() != 1)
        throw std::invalid_argument("target: Gaussian variant must have exactly one component");

    const int d = dimension();
    double wsum = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
        if (means[i].size() != d) throw std::invalid_argument("target: mean dimension mismatch");
        const Eigen::MatrixXd& c = covariances[i];
        if (c.rows() != d || c.cols() != d)
            throw std::invalid_argument("target: covariance dimension mismatch");
        if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw std::invalid_argument("target: covariance not symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(c);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("target: covariance not positive-definite");
        if (weights[i] < 0.0) throw std::invalid_argument("target: negative weight");
        wsum += weights[i];
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("target: weights must sum to 1");

    if (normalized) {
        const Eigen::MatrixXd cov = overall_covariance();
        if ((cov - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-8)
            throw std::invalid_argument("target: normalized flag set but overall covariance != I");
    }
}

Eigen::VectorXd TargetSpec::overall_mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dimension());
    for (std::size_t i = 0; i < means.size(); ++i) m += weights[i] * means[i];
    return m;
}

Eigen::MatrixXd TargetSpec::overall_covariance() const {
    const int d = dimension();
    const Eigen::VectorXd mbar = overall_mean();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < means.size(); ++i) {
        const Eigen::VectorXd dm = means[i] - mbar;
        cov += weights[i] * (covariances[i] + dm * dm.transpose());
    }
    return cov;
}

TargetSpec TargetSpec::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov, bool normalized) {
    TargetSpec t;
    t.variant = Variant::Gaussian;
    t.means = {std::move(mean)};
    t.covariances = {std::move(cov)};
    t.weights = {1.0};
    t.normalized = normalized;
    t.validate();
    return t;
}

TargetSpec TargetSpec::standard_gaussian(int d) {
    return gaussian(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), true);
}

TargetSpec TargetSpec::mixture(std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covs,
                               std::vector<double> weights, bool normalized) {
    TargetSpec t;
    t.variant = Variant::GaussianMixture;
    t.means = std::move(means);
    t.covariances = std::move(covs);
    t.weights = std::move(weights);
    t.normalized = normalized;
    t.validate();
    return t;
}

}  // namespace piadm
