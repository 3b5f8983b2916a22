#include "piadm/exact_law.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace piadm {

void GaussianLaw::validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw std::invalid_argument("law: dimension mismatch");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("law: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument("law: covariance not PSD");
}

GaussianLaw GaussianLaw::standard(int d) {
    return {Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d)};
}

Eigen::VectorXd AffineStep::apply(const Eigen::VectorXd& x, const Eigen::VectorXd& noise) const {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(noise_cov.rows(), noise_cov.cols());
    if (noise_cov.cwiseAbs().maxCoeff() > 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(noise_cov);
        const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        L = es.eigenvectors() * lam.asDiagonal();
    }
    return A * x + b + L * noise;
}

GaussianLaw propagate(const GaussianLaw& law, const AffineStep& step) {
    GaussianLaw out;
    out.mean = step.A * law.mean + step.b;
    Eigen::MatrixXd c = step.A * law.cov * step.A.transpose() + step.noise_cov;
    out.cov = 0.5 * (c + c.transpose());
    return out;
}

GaussianScoreParams gaussian_score_params(const TargetSpec& target, double horizon,
                                          double backward_t) {
    if (target.variant != TargetSpec::Variant::Gaussian)
        throw std::invalid_argument("exact law: mixture targets are unsupported");
    const auto comps = ou_marginal(target, horizon - backward_t);
    const int d = target.dimension();
    Eigen::LLT<Eigen::MatrixXd> llt(comps[0].cov);
    GaussianScoreParams p;
    p.precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
    p.mean = comps[0].mean;
    return p;
}

AffineStep sde_affine_step(double eps, const GaussianScoreParams& p, StepMode mode) {
    const SdeStepCoeffs c = sde_step_coeffs(eps, mode);
    const int d = static_cast<int>(p.mean.size());
    AffineStep s;
    s.A = c.decay * Eigen::MatrixXd::Identity(d, d) - c.score_weight * p.precision;
    s.b = c.score_weight * (p.precision * p.mean);
    s.noise_cov = (c.noise_std * c.noise_std) * Eigen::MatrixXd::Identity(d, d);
    return s;
}

AffineStep predictor_affine_step(double eps, const GaussianScoreParams& p, StepMode mode,
                                 bool first_step) {
    const int d = static_cast<int>(p.mean.size());
    const double w = (mode == StepMode::Exact) ? std::expm1(0.5 * eps) : 0.5 * std::expm1(eps);
    const double dec = (mode == StepMode::PaperVerbatim && first_step)
                           ? 0.5 * std::exp(0.5 * eps)
                           : std::exp(0.5 * eps);
    AffineStep s;
    s.A = dec * Eigen::MatrixXd::Identity(d, d) - w * p.precision;
    s.b = w * (p.precision * p.mean);
    s.noise_cov = Eigen::MatrixXd::Zero(d, d);
    return s;
}

AffineStep corrector_affine_step(double gamma, double eps, const GaussianScoreParams& p,
                                 StepMode mode, int steps_to_end) {
    const CorrectorStepCoeffs c = corrector_step_coeffs(gamma, eps, mode);
    const int d = static_cast<int>(p.mean.size());
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    AffineStep s;
    s.A = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    s.A.topLeftCorner(d, d) = I - c.drift_u * p.precision;
    s.A.topRightCorner(d, d) = c.g_pos_vel * I;
    s.A.bottomLeftCorner(d, d) = -c.drift_v * p.precision;
    s.A.bottomRightCorner(d, d) = c.g_vel * I;
    s.b = Eigen::VectorXd::Zero(2 * d);
    s.b.head(d) = c.drift_u * (p.precision * p.mean);
    s.b.tail(d) = c.drift_v * (p.precision * p.mean);
    s.noise_cov = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    if (mode == StepMode::Exact) {
        const Eigen::Matrix2d cov = ulmc_step_noise_cov(gamma, eps);
        s.noise_cov.topLeftCorner(d, d) = cov(0, 0) * I;
        s.noise_cov.topRightCorner(d, d) = cov(0, 1) * I;
        s.noise_cov.bottomLeftCorner(d, d) = cov(1, 0) * I;
        s.noise_cov.bottomRightCorner(d, d) = cov(1, 1) * I;
    } else {
        s.noise_cov.bottomRightCorner(d, d) =
            corrector_noise_cov_paper(gamma, eps, steps_to_end) * I;
    }
    return s;
}

AffineStep ulmc_exact_linear_step(double gamma, const Eigen::MatrixXd& precision,
                                  const Eigen::VectorXd& mean, double t) {
    const int d = static_cast<int>(mean.size());
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    C.topRightCorner(d, d) = I;
    C.bottomLeftCorner(d, d) = -precision;
    C.bottomRightCorner(d, d) = -gamma * I;

    Eigen::MatrixXd BBt = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    BBt.bottomRightCorner(d, d) = 2.0 * gamma * I;

    // Van Loan block-exponential: exp([[ -C, BBt ], [ 0, C^T ]] t) packs the
    // propagator and the noise Gramian into one call.
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(4 * d, 4 * d);
    H.topLeftCorner(2 * d, 2 * d) = -C;
    H.topRightCorner(2 * d, 2 * d) = BBt;
    H.bottomRightCorner(2 * d, 2 * d) = C.transpose();
    const Eigen::MatrixXd F = (H * t).exp();
    const Eigen::MatrixXd E = F.bottomRightCorner(2 * d, 2 * d).transpose();  // e^{C t}
    Eigen::MatrixXd Q = E * F.topRightCorner(2 * d, 2 * d);

    // Constant drift: [0; P mu] integrated against e^{C s}.
    Eigen::MatrixXd Ha = Eigen::MatrixXd::Zero(2 * d + 1, 2 * d + 1);
    Ha.topLeftCorner(2 * d, 2 * d) = C;
    Ha.topRightCorner(2 * d, 1).bottomRows(d) = precision * mean;
    const Eigen::MatrixXd Fa = (Ha * t).exp();

    AffineStep s;
    s.A = E;
    s.b = Fa.topRightCorner(2 * d, 1);
    s.noise_cov = 0.5 * (Q + Q.transpose());
    return s;
}

GaussianLaw propagate_sde_plan(const DiscretizationPlan& plan, const TargetSpec& target,
                               StepMode mode, std::vector<GaussianLaw>* trace) {
    GaussianLaw law = GaussianLaw::standard(target.dimension());
    const double horizon = plan.T;
    for (int n = 0; n < plan.N; ++n) {
        const auto& grid = plan.grids[n];
        const double t_n = plan.block_start(n);
        for (std::size_t m = 0; m + 1 < grid.size(); ++m) {
            const GaussianScoreParams p = gaussian_score_params(target, horizon, t_n + grid[m]);
            law = propagate(law, sde_affine_step(grid[m + 1] - grid[m], p, mode));
            if (trace) trace->push_back(law);
        }
    }
    return law;
}

GaussianLaw propagate_ode_plan(const DiscretizationPlan& plan, const CorrectorPlan& cplan,
                               const TargetSpec& target, StepMode mode,
                               std::vector<GaussianLaw>* trace) {
    const int d = target.dimension();
    GaussianLaw law = GaussianLaw::standard(d);
    const double horizon = plan.T;
    for (int n = 0; n < plan.N; ++n) {
        const auto& grid = plan.grids[n];
        const double t_n = plan.block_start(n);
        for (std::size_t m = 0; m + 1 < grid.size(); ++m) {
            const GaussianScoreParams p = gaussian_score_params(target, horizon, t_n + grid[m]);
            law = propagate(law, predictor_affine_step(grid[m + 1] - grid[m], p, mode, m == 0));
            if (trace) trace->push_back(law);
        }
        if (cplan.N_dagger > 0) {
            // momentum augmentation: fresh standard normal each outer block
            GaussianLaw phase;
            phase.mean = Eigen::VectorXd::Zero(2 * d);
            phase.mean.head(d) = law.mean;
            phase.cov = Eigen::MatrixXd::Zero(2 * d, 2 * d);
            phase.cov.topLeftCorner(d, d) = law.cov;
            phase.cov.bottomRightCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
            const double frozen = t_n + plan.block_lengths[n];
            const GaussianScoreParams p = gaussian_score_params(target, horizon, frozen);
            for (int nd = 0; nd < cplan.N_dagger; ++nd) {
                for (int j = 0; j < cplan.M_dagger; ++j) {
                    phase = propagate(phase,
                                      corrector_affine_step(cplan.gamma, cplan.eps_dagger, p,
                                                            mode, cplan.M_dagger - j + 1));
                    if (trace) {
                        GaussianLaw marg;
                        marg.mean = phase.mean.head(d);
                        marg.cov = phase.cov.topLeftCorner(d, d);
                        trace->push_back(marg);
                    }
                }
            }
            law.mean = phase.mean.head(d);
            law.cov = phase.cov.topLeftCorner(d, d);
        }
    }
    return law;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> marginal_moments(const TargetSpec& target, double t) {
    const auto comps = ou_marginal(target, t);
    const int d = target.dimension();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& c : comps) mean += c.weight * c.mean;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& c : comps) {
        const Eigen::VectorXd dm = c.mean - mean;
        cov += c.weight * (c.cov + dm * dm.transpose());
    }
    return {mean, cov};
}

double kl_gaussian(const GaussianLaw& p, const GaussianLaw& q) {
    const int d = p.dim();
    if (q.dim() != d) throw std::invalid_argument("kl: dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> lltq(q.cov);
    if (lltq.info() != Eigen::Success) throw std::domain_error("kl: singular reference covariance");
    Eigen::LLT<Eigen::MatrixXd> lltp(p.cov);
    if (lltp.info() != Eigen::Success) throw std::domain_error("kl: singular covariance");

    const Eigen::MatrixXd qi_p = lltq.solve(p.cov);
    const Eigen::VectorXd dm = q.mean - p.mean;
    double logdet_q = 0.0, logdet_p = 0.0;
    const Eigen::MatrixXd Lq = lltq.matrixL();
    const Eigen::MatrixXd Lp = lltp.matrixL();
    for (int i = 0; i < d; ++i) {
        logdet_q += 2.0 * std::log(Lq(i, i));
        logdet_p += 2.0 * std::log(Lp(i, i));
    }
    const double kl =
        0.5 * (qi_p.trace() + dm.dot(lltq.solve(dm)) - d + logdet_q - logdet_p);
    return std::max(0.0, kl);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double w2_gaussian(const GaussianLaw& p, const GaussianLaw& q) {
    if (p.dim() != q.dim()) throw std::invalid_argument("w2: dimension mismatch");
    const Eigen::MatrixXd sq = sqrt_psd(q.cov);
    const Eigen::MatrixXd cross = sqrt_psd(sq * p.cov * sq);
    const double t = (p.cov + q.cov - 2.0 * cross).trace();
    const double w2sq = (p.mean - q.mean).squaredNorm() + std::max(0.0, t);
    return std::sqrt(std::max(0.0, w2sq));
}

double tv_bound_from_kl(double kl) { return std::sqrt(std::max(0.0, kl) / 2.0); }

}  // namespace piadm
