#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace piadm {

// Data distribution the backward process should reproduce: a single Gaussian
// or a finite Gaussian mixture.
struct TargetSpec {
    enum class Variant { Gaussian, GaussianMixture };

    Variant variant = Variant::Gaussian;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;
    std::vector<double> weights;  // mixture only; single Gaussian uses {1}
    bool normalized = false;      // overall covariance is the identity

    int dimension() const { return static_cast<int>(means.at(0).size()); }
    int components() const { return static_cast<int>(means.size()); }

    // Throws std::invalid_argument on any violated structural constraint.
    void validate() const;

    Eigen::VectorXd overall_mean() const;
    Eigen::MatrixXd overall_covariance() const;

    static TargetSpec gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov, bool normalized = false);
    static TargetSpec standard_gaussian(int d);
    static TargetSpec mixture(std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covs,
                              std::vector<double> weights, bool normalized = false);
};

}  // namespace piadm
