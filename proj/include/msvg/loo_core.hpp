#pragma once

#include <Eigen/Dense>

#include <msvg/special_functions.hpp>
#include <msvg/vg_model.hpp>

#include <cmath>
#include <limits>
#include <utility>

namespace msvg {

// Mahalanobis-distance floor for retained observations. A retained point can
// sit numerically on top of mu only when the data contain duplicates; the
// distance is clamped here so the objective and the E-step stay finite, and
// the clamp count is surfaced as a diagnostic.
inline constexpr double kZFloor = 1e-12;

// Step used for the central difference of K_nu(z) in the order direction.
inline constexpr double kOrderStep = 1e-5;

// Per-observation conditional expectations of the mixing variable given the
// observation: E[lambda], E[1/lambda], E[log lambda]. Computed for all n
// observations; leave-one-out exclusion is applied later, in suff_stats,
// because the excluded index changes between sub-steps.
struct LatentMoments {
    Eigen::VectorXd lambda_hat;
    Eigen::VectorXd inv_lambda_hat;
    Eigen::VectorXd log_lambda_hat;
    int clamped = 0; // observations whose Mahalanobis distance hit the floor
};

// Leave-one-out sums of the complete-data sufficient statistics.
struct SuffStats {
    Eigen::VectorXd s_y;
    Eigen::VectorXd s_y_over_lambda;
    double s_lambda = 0.0;
    double s_inv_lambda = 0.0;
    double s_log_lambda = 0.0;
    Eigen::Index excluded = -1;
};

namespace detail {

// Squared Mahalanobis distances and skew inner products for every
// observation in two vectorized passes (d = 1 avoids the matrix solve
// entirely). Returns false in z2_valid... dimensions are validated upstream.
inline void bulk_quadratics(const VgParams& params, const Dataset& data, Eigen::VectorXd& z2,
                            Eigen::VectorXd& skew) {
    const Eigen::Index n = data.n();
    if (params.dim() == 1) {
        const double mu = params.mu()(0);
        const double inv_s = 1.0 / params.sigma()(0, 0);
        const double ig = params.sigma_inv_gamma()(0);
        z2.resize(n);
        skew.resize(n);
        const auto col = data.observations().col(0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = col(i) - mu;
            z2(i) = r * r * inv_s;
            skew(i) = r * ig;
        }
        return;
    }
    const Eigen::MatrixXd centered = data.observations().rowwise() - params.mu().transpose();
    Eigen::MatrixXd solved = centered.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
        solved.col(i) = params.solve_sigma(solved.col(i));
    z2 = (centered.transpose().cwiseProduct(solved)).colwise().sum().transpose();
    skew = centered * params.sigma_inv_gamma();
}

// log f at a clamped distance: identical to log_pdf away from the floor.
inline double log_pdf_from_parts(const VgParams& params, double z2, double skew) {
    const double z = std::sqrt(std::max(z2, kZFloor * kZFloor));
    return params.log_norm() + skew + log_bessel_k(params.eta(), params.c() * z) +
           params.eta() * std::log(z);
}

} // namespace detail

// Index of the observation nearest to mu in Mahalanobis distance; ties go to
// the smallest index (strict < scan in ascending order).
inline Eigen::Index loo_index(const Dataset& data, const Eigen::VectorXd& mu,
                              const Eigen::MatrixXd& sigma) {
    if (mu.size() != data.dim() || sigma.rows() != mu.size() || sigma.cols() != mu.size())
        throw ParameterError("dimension mismatch in loo_index");
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (sigma + sigma.transpose()));
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
        throw ParameterError("sigma must be positive definite");
    Eigen::Index best = 0;
    double best_q = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const Eigen::VectorXd r = data.row(i) - mu;
        const double q = r.dot(llt.solve(r));
        if (q < best_q) {
            best_q = q;
            best = i;
        }
    }
    return best;
}

inline Eigen::Index loo_index(const VgParams& params, const Dataset& data) {
    Eigen::VectorXd z2, skew;
    detail::bulk_quadratics(params, data, z2, skew);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < data.n(); ++i)
        if (z2(i) < z2(best)) best = i;
    return best;
}

// Observed leave-one-out log-likelihood: sum of log densities over all
// observations except the one nearest to mu. Retained distances are clamped
// at the floor so duplicate data cannot produce an infinite objective.
inline double loo_loglik(const VgParams& params, const Dataset& data) {
    if (data.n() < 2) throw InputError("leave-one-out likelihood requires n >= 2");
    if (data.dim() != params.dim()) throw ParameterError("dimension mismatch");
    Eigen::VectorXd z2, skew;
    detail::bulk_quadratics(params, data, z2, skew);
    Eigen::Index k = 0;
    for (Eigen::Index i = 1; i < data.n(); ++i)
        if (z2(i) < z2(k)) k = i;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        if (i == k) continue;
        total += detail::log_pdf_from_parts(params, z2(i), skew(i));
    }
    return total;
}

// E-step: conditional moments of the mixing variable for every observation.
// With c = sqrt(2 nu + gamma' Sigma^{-1} gamma), eta = nu - d/2, u = c z_i:
//   E[lambda_i]     = (z_i / c) K_{eta+1}(u) / K_eta(u)
//   E[1/lambda_i]   = (c / z_i) K_{eta-1}(u) / K_eta(u)
//   E[log lambda_i] = log(z_i / c) + (d/d eta) log-ish ratio K'_eta(u)/K_eta(u)
// All ratios go through differences of log K values, so extreme z neither
// overflows nor underflows. When want_log is false the third vector is filled
// with NaN and the two order-offset evaluations it needs are skipped (the
// fitter only requests it for the sub-step that uses it).
inline LatentMoments latent_moments(const VgParams& params, const Dataset& data,
                                    bool want_log = true) {
    if (data.dim() != params.dim()) throw ParameterError("dimension mismatch");
    const Eigen::Index n = data.n();
    LatentMoments m;
    m.lambda_hat.resize(n);
    m.inv_lambda_hat.resize(n);
    m.log_lambda_hat.setConstant(n, std::numeric_limits<double>::quiet_NaN());
    Eigen::VectorXd z2, skew;
    detail::bulk_quadratics(params, data, z2, skew);
    const double c = params.c();
    const double eta = params.eta();
    for (Eigen::Index i = 0; i < n; ++i) {
        double z = std::sqrt(z2(i));
        if (z < kZFloor) {
            z = kZFloor;
            ++m.clamped;
        }
        const double u = c * z;
        const double l0 = log_bessel_k(eta, u);
        m.lambda_hat(i) = (z / c) * std::exp(log_bessel_k(eta + 1.0, u) - l0);
        m.inv_lambda_hat(i) = (c / z) * std::exp(log_bessel_k(eta - 1.0, u) - l0);
        if (want_log) {
            // K'_eta(u)/K_eta(u) = d log K / d eta, estimated by the central
            // difference of log K at the same step; differencing the logs
            // instead of the raw K values drops the (d log K)^3 term from the
            // h^2 truncation error, which otherwise breaches 1e-8 when the
            // log-derivative is large.
            const double lp = log_bessel_k(eta + kOrderStep, u);
            const double lm = log_bessel_k(eta - kOrderStep, u);
            m.log_lambda_hat(i) = std::log(z / c) + 0.5 * (lp - lm) / kOrderStep;
        }
    }
    return m;
}

// Leave-one-out sums of the sufficient statistics, accumulated in ascending
// index order so parallel callers that share moments get identical results.
inline SuffStats suff_stats(const Dataset& data, const LatentMoments& moments,
                            Eigen::Index excluded) {
    if (excluded < 0 || excluded >= data.n()) throw InputError("excluded index out of range");
    if (moments.lambda_hat.size() != data.n()) throw InputError("moments/data size mismatch");
    SuffStats s;
    s.excluded = excluded;
    s.s_y = Eigen::VectorXd::Zero(data.dim());
    s.s_y_over_lambda = Eigen::VectorXd::Zero(data.dim());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        if (i == excluded) continue;
        s.s_y += data.row(i);
        s.s_y_over_lambda += moments.inv_lambda_hat(i) * data.row(i);
        s.s_lambda += moments.lambda_hat(i);
        s.s_inv_lambda += moments.inv_lambda_hat(i);
        s.s_log_lambda += moments.log_lambda_hat(i);
    }
    return s;
}

// Expected complete-data log-likelihood, split into its conditional-normal
// and gamma-mixing components with the latent moments substituted:
//   ell_N = -(n-1)/2 log|Sigma|
//           - 1/2 sum_{i != k} (E[1/l_i] z_i^2 - 2 skew_i + E[l_i] g)
//           - (n-1) d/2 log(pi)
//   ell_G = (n-1)(nu log nu - log Gamma(nu)) + (nu-1) S_log_lambda
//           - nu S_lambda
// where g = gamma' Sigma^{-1} gamma.
inline std::pair<double, double> complete_loglik_components(const VgParams& params,
                                                            const Dataset& data,
                                                            const LatentMoments& moments,
                                                            Eigen::Index excluded) {
    if (excluded < 0 || excluded >= data.n()) throw InputError("excluded index out of range");
    if (moments.lambda_hat.size() != data.n()) throw InputError("moments/data size mismatch");
    const double nm1 = static_cast<double>(data.n() - 1);
    const double d = static_cast<double>(data.dim());
    Eigen::VectorXd z2, skew;
    detail::bulk_quadratics(params, data, z2, skew);
    double quad = 0.0, s_lambda = 0.0, s_log_lambda = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        if (i == excluded) continue;
        quad += moments.inv_lambda_hat(i) * z2(i) - 2.0 * skew(i) +
                moments.lambda_hat(i) * params.gamma_quad();
        s_lambda += moments.lambda_hat(i);
        s_log_lambda += moments.log_lambda_hat(i);
    }
    const double ell_n = -0.5 * nm1 * params.log_det_sigma() - 0.5 * quad -
                         0.5 * nm1 * d * std::log(kPi);
    const double nu = params.nu();
    const double ell_g =
        nm1 * (nu * std::log(nu) - log_gamma(nu)) + (nu - 1.0) * s_log_lambda - nu * s_lambda;
    return {ell_n, ell_g};
}

} // namespace msvg
