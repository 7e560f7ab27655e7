#pragma once

#include <Eigen/Dense>

#include <msvg/errors.hpp>
#include <msvg/rng.hpp>
#include <msvg/special_functions.hpp>

#include <cmath>
#include <limits>
#include <utility>

namespace msvg {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLn2 = 0.69314718055994530942;

// Parameter tuple (mu, Sigma, gamma, nu) of the multivariate skewed
// variance-gamma distribution. Immutable after construction; the Cholesky
// factorization of Sigma and every derived scalar used by the density and the
// E-step are computed once here, so instances are cheap to share across
// threads and observations.
class VgParams {
public:
    VgParams(Eigen::VectorXd mu, Eigen::MatrixXd sigma, Eigen::VectorXd gamma, double nu)
        : mu_(std::move(mu)), gamma_(std::move(gamma)), sigma_(std::move(sigma)), nu_(nu) {
        const Eigen::Index d = mu_.size();
        if (d < 1) throw ParameterError("mu must have dimension >= 1");
        if (gamma_.size() != d) throw ParameterError("gamma dimension does not match mu");
        if (sigma_.rows() != d || sigma_.cols() != d)
            throw ParameterError("sigma must be d x d with d matching mu");
        if (!mu_.allFinite() || !gamma_.allFinite() || !sigma_.allFinite() || !std::isfinite(nu_))
            throw ParameterError("parameters must be finite");
        if (nu_ <= 0.0) throw ParameterError("nu must be positive");
        const double scale = std::max(1.0, sigma_.cwiseAbs().maxCoeff());
        if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
            throw ParameterError("sigma must be symmetric");
        sigma_ = 0.5 * (sigma_ + sigma_.transpose().eval());
        llt_.compute(sigma_);
        if (llt_.info() != Eigen::Success || !(llt_.matrixLLT().diagonal().minCoeff() > 0.0))
            throw ParameterError("sigma must be positive definite");

        log_det_sigma_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
        sigma_inv_gamma_ = llt_.solve(gamma_);
        gamma_quad_ = gamma_.dot(sigma_inv_gamma_);
        c2_ = 2.0 * nu_ + gamma_quad_;
        c_ = std::sqrt(c2_);
        eta_ = nu_ - 0.5 * static_cast<double>(d);
        log_norm_ = (1.0 - 0.5 * d) * kLn2 + nu_ * std::log(nu_) - 0.5 * log_det_sigma_ -
                    0.5 * d * std::log(kPi) - log_gamma(nu_) - 0.5 * eta_ * std::log(c2_);
    }

    const Eigen::VectorXd& mu() const { return mu_; }
    const Eigen::MatrixXd& sigma() const { return sigma_; }
    const Eigen::VectorXd& gamma() const { return gamma_; }
    double nu() const { return nu_; }
    Eigen::Index dim() const { return mu_.size(); }

    double log_det_sigma() const { return log_det_sigma_; }
    const Eigen::VectorXd& sigma_inv_gamma() const { return sigma_inv_gamma_; }
    double gamma_quad() const { return gamma_quad_; }
    double c2() const { return c2_; }
    double c() const { return c_; }
    double eta() const { return eta_; }
    double log_norm() const { return log_norm_; }

    Eigen::VectorXd solve_sigma(const Eigen::VectorXd& x) const { return llt_.solve(x); }
    Eigen::MatrixXd chol_lower() const { return llt_.matrixL(); }

private:
    Eigen::VectorXd mu_, gamma_;
    Eigen::MatrixXd sigma_;
    double nu_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_det_sigma_ = 0.0;
    Eigen::VectorXd sigma_inv_gamma_;
    double gamma_quad_ = 0.0, c2_ = 0.0, c_ = 0.0, eta_ = 0.0, log_norm_ = 0.0;
};

// Observation container: one row per observation, d columns. Finiteness is
// enforced here; operations that need n >= 2 (anything leave-one-out) check
// their own precondition at entry.
class Dataset {
public:
    explicit Dataset(Eigen::MatrixXd observations) : obs_(std::move(observations)) {
        if (obs_.rows() < 1 || obs_.cols() < 1)
            throw InputError("dataset must contain at least one observation and one column");
        if (!obs_.allFinite()) throw InputError("dataset contains non-finite values");
    }

    const Eigen::MatrixXd& observations() const { return obs_; }
    Eigen::Index n() const { return obs_.rows(); }
    Eigen::Index dim() const { return obs_.cols(); }
    Eigen::VectorXd row(Eigen::Index i) const { return obs_.row(i).transpose(); }

private:
    Eigen::MatrixXd obs_;
};

// (y - mu)' Sigma^{-1} (y - mu); exactly zero iff y == mu.
inline double mahalanobis_sq(const VgParams& params, const Eigen::VectorXd& y) {
    if (y.size() != params.dim()) throw ParameterError("observation dimension mismatch");
    const Eigen::VectorXd r = y - params.mu();
    if (r.isZero(0.0)) return 0.0;
    return r.dot(params.solve_sigma(r));
}

// Log-density, assembled entirely in the log domain:
//   log f = log_norm + r' Sigma^{-1} gamma + log K_eta(c z) + eta log z.
// At z == 0 the density has a finite limit when eta = nu - d/2 > 0 and
// diverges otherwise; +infinity is returned in the divergent case so callers
// (the leave-one-out machinery excises exactly this point) can decide.
inline double log_pdf(const VgParams& params, const Eigen::VectorXd& y) {
    const double z2 = mahalanobis_sq(params, y);
    if (z2 == 0.0) {
        if (params.eta() > 0.0) {
            const double d = static_cast<double>(params.dim());
            return (params.nu() - d) * kLn2 + params.nu() * std::log(params.nu()) -
                   0.5 * params.log_det_sigma() - 0.5 * d * std::log(kPi) -
                   log_gamma(params.nu()) + log_gamma(params.eta()) -
                   params.eta() * std::log(params.c2());
        }
        return std::numeric_limits<double>::infinity();
    }
    const double z = std::sqrt(z2);
    const double skew = (y - params.mu()).dot(params.sigma_inv_gamma());
    return params.log_norm() + skew + log_bessel_k(params.eta(), params.c() * z) +
           params.eta() * std::log(z);
}

// Exact sampler through the normal mean-variance mixture: lambda_i ~
// Gamma(nu, rate nu), y_i ~ N(mu + gamma lambda_i, lambda_i Sigma).
inline Dataset sample(const VgParams& params, Eigen::Index n, RngStream& rng) {
    if (n < 1) throw InputError("sample size must be >= 1");
    const Eigen::Index d = params.dim();
    const Eigen::MatrixXd chol = params.chol_lower();
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd noise(d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lambda = rng.gamma(params.nu()) / params.nu();
        for (Eigen::Index j = 0; j < d; ++j) noise(j) = rng.normal();
        out.row(i) = (params.mu() + lambda * params.gamma() +
                      std::sqrt(lambda) * (chol * noise))
                         .transpose();
    }
    return Dataset(std::move(out));
}

// E(Y) = mu + gamma, Cov(Y) = Sigma + gamma gamma' / nu.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> population_moments(const VgParams& params) {
    return {params.mu() + params.gamma(),
            params.sigma() + params.gamma() * params.gamma().transpose() / params.nu()};
}

} // namespace msvg
