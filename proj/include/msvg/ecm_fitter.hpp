#pragma once

#include <Eigen/Dense>

#include <msvg/loo_core.hpp>
#include <msvg/vg_model.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msvg {

struct EcmConfig {
    double tol = 1e-8;         // relative LOO log-likelihood increment
    int max_iter = 2000;       // full ECM sweeps
    int m_search = 20;         // nearest-point candidates in the local search
    double nu_min = 1e-3;      // shape clamp, lower
    double nu_max = 200.0;     // shape clamp, upper
    int nr_max_iter = 50;      // Newton-Raphson iterations for the shape step
    int line_search_evals = 30; // objective evaluations per line search
    bool fix_mu = false;
    bool fix_sigma = false;
    bool fix_gamma = false;
    bool fix_nu = false;
};

enum class Termination { converged, max_iter };

struct FitResult {
    VgParams params;
    // trace[0] is the log-likelihood of the initial parameters; one further
    // entry is appended per completed sweep, so trace.size() == iterations+1.
    std::vector<double> loglik_trace;
    int iterations = 0;
    Termination termination = Termination::converged;
    std::vector<std::string> warnings;
};

// Unvalidated parameter candidate, as produced by raw CM-steps. The line
// search blends proposals toward the last valid iterate; candidates whose
// scale matrix fails the positive-definite check (or whose shape leaves the
// positive axis) are simply infeasible points of the search.
struct VgProposal {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    Eigen::VectorXd gamma;
    double nu = 1.0;

    static VgProposal from(const VgParams& p) {
        return {p.mu(), p.sigma(), p.gamma(), p.nu()};
    }
};

// Starting values: the sample mean and covariance with zero skew and shape
// 4d, or the coordinatewise median and squared 1.4826*MAD diagonal scale when
// robust is requested.
inline VgParams initialize(const Dataset& data, bool robust = false) {
    const Eigen::Index n = data.n(), d = data.dim();
    if (n < d + 2) throw InitializationError("need at least d + 2 observations");
    const double nu0 = 4.0 * static_cast<double>(d);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    if (!robust) {
        const Eigen::VectorXd mean = data.observations().colwise().mean();
        const Eigen::MatrixXd centered = data.observations().rowwise() - mean.transpose();
        const Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(n - 1);
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
            throw InitializationError("sample covariance is not positive definite");
        return VgParams(mean, cov, zero, nu0);
    }
    auto column_median = [](Eigen::VectorXd v) {
        std::sort(v.begin(), v.end());
        const Eigen::Index m = v.size();
        return (m % 2) ? v(m / 2) : 0.5 * (v(m / 2 - 1) + v(m / 2));
    };
    Eigen::VectorXd med(d);
    Eigen::MatrixXd scale = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        med(j) = column_median(data.observations().col(j));
        const double mad =
            column_median((data.observations().col(j).array() - med(j)).abs());
        const double s = 1.4826 * mad;
        if (!(s > 0.0))
            throw InitializationError("zero median absolute deviation in column " +
                                      std::to_string(j));
        scale(j, j) = s * s;
    }
    return VgParams(med, scale, zero, nu0);
}

namespace detail {

struct ScoredParams {
    VgParams params;
    double loglik;
};

// Local point search with the objective value of the winner. Candidates are
// the m nearest observations (Mahalanobis distance to the current location)
// plus the current location itself; once m reaches n-1 the whole dataset is
// used (the current location typically occupies one ranking slot). Ties keep
// the current location first and the smallest data index second. Passing a
// finite loglik_old skips re-evaluating the current location.
inline ScoredParams local_point_search_ex(
    const VgParams& params, const Dataset& data, int m,
    double loglik_old = std::numeric_limits<double>::quiet_NaN()) {
    const Eigen::Index n = data.n();
    Eigen::VectorXd z2, skew;
    bulk_quadratics(params, data, z2, skew);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const std::size_t keep = static_cast<std::size_t>(
        static_cast<Eigen::Index>(m) >= n - 1 ? n : std::min<Eigen::Index>(std::max(m, 1), n));
    std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                          return z2(a) != z2(b) ? z2(a) < z2(b) : a < b;
                      });
    order.resize(keep);
    std::sort(order.begin(), order.end()); // evaluate in ascending data index

    VgParams best = params;
    double best_ll = std::isnan(loglik_old) ? loo_loglik(params, data) : loglik_old;
    for (Eigen::Index idx : order) {
        const Eigen::VectorXd cand = data.row(idx);
        if (cand == params.mu()) continue; // identical to the current location
        VgParams trial(cand, params.sigma(), params.gamma(), params.nu());
        const double ll = loo_loglik(trial, data);
        if (ll > best_ll) {
            best_ll = ll;
            best = std::move(trial);
        }
    }
    return {std::move(best), best_ll};
}

// Line search over theta(alpha) = theta_old + alpha * (proposal - theta_old),
// blending every parameter block entrywise. Probes alpha = 1 first, then
// golden-section points of [0, 1]; infeasible candidates count as -infinity.
// Returns the best point found if it improves on theta_old, otherwise
// theta_old itself (alpha = 0).
inline ScoredParams line_search_ex(const VgParams& theta_old, const VgProposal& proposal,
                                   const Dataset& data, const EcmConfig& cfg,
                                   double loglik_old) {
    auto evaluate = [&](double alpha) -> std::optional<ScoredParams> {
        const Eigen::VectorXd mu = theta_old.mu() + alpha * (proposal.mu - theta_old.mu());
        const Eigen::MatrixXd sigma =
            theta_old.sigma() + alpha * (proposal.sigma - theta_old.sigma());
        const Eigen::VectorXd gamma =
            theta_old.gamma() + alpha * (proposal.gamma - theta_old.gamma());
        const double nu = theta_old.nu() + alpha * (proposal.nu - theta_old.nu());
        try {
            VgParams cand(mu, sigma, gamma, nu);
            const double ll = loo_loglik(cand, data);
            if (!std::isfinite(ll)) return std::nullopt;
            return ScoredParams{std::move(cand), ll};
        } catch (const ParameterError&) {
            return std::nullopt;
        }
    };

    std::optional<ScoredParams> best;
    double best_ll = -std::numeric_limits<double>::infinity();
    int evals = 0;
    auto probe = [&](double alpha) {
        ++evals;
        auto cand = evaluate(alpha);
        const double ll = cand ? cand->loglik : -std::numeric_limits<double>::infinity();
        if (cand && ll > best_ll) {
            best_ll = ll;
            best = std::move(cand);
        }
        return ll;
    };

    probe(1.0);
    constexpr double kInvPhi = 0.6180339887498949;
    double a = 0.0, b = 1.0;
    double x1 = b - kInvPhi * (b - a);
    double x2 = a + kInvPhi * (b - a);
    double f1 = probe(x1);
    double f2 = probe(x2);
    while (evals < cfg.line_search_evals && (b - a) > 1e-2) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = probe(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = probe(x1);
        }
    }
    if (best && best_ll > loglik_old) return std::move(*best);
    return {theta_old, loglik_old};
}

} // namespace detail

inline VgParams local_point_search(const VgParams& params, const Dataset& data, int m) {
    if (m < 1) throw InputError("candidate count must be >= 1");
    return detail::local_point_search_ex(params, data, m).params;
}

// Joint stationary point of the expected complete-data objective in
// (mu, gamma) at a fixed excluded index:
//   mu    = (S_{y/l} S_l - (n-1) S_y) / (S_{1/l} S_l - (n-1)^2)
//   gamma = (S_y - (n-1) mu) / S_l.
// The denominator vanishes exactly when the posterior weights are constant.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> cm_step_mu_gamma(const SuffStats& stats,
                                                                    Eigen::Index n) {
    const double nm1 = static_cast<double>(n - 1);
    const double den = stats.s_inv_lambda * stats.s_lambda - nm1 * nm1;
    if (!(std::abs(den) > 1e-12 * nm1 * nm1))
        throw DegenerateStepError("constant posterior weights: location/skew step undefined");
    const Eigen::VectorXd mu = (stats.s_y_over_lambda * stats.s_lambda - nm1 * stats.s_y) / den;
    const Eigen::VectorXd gamma = (stats.s_y - nm1 * mu) / stats.s_lambda;
    return {mu, gamma};
}

// Single-block stationary points used when the other block is frozen.
inline Eigen::VectorXd cm_step_mu_only(const SuffStats& stats, Eigen::Index n,
                                       const Eigen::VectorXd& gamma_fixed) {
    const double nm1 = static_cast<double>(n - 1);
    return (stats.s_y_over_lambda - nm1 * gamma_fixed) / stats.s_inv_lambda;
}

inline Eigen::VectorXd cm_step_gamma_only(const SuffStats& stats, Eigen::Index n,
                                          const Eigen::VectorXd& mu_fixed) {
    const double nm1 = static_cast<double>(n - 1);
    return (stats.s_y - nm1 * mu_fixed) / stats.s_lambda;
}

namespace detail {

// Scale-step matrix before the positive-definiteness check; always
// symmetric. Kept separate so the fitter can feed a possibly indefinite
// proposal to the line search, which rejects infeasible blends on its own.
inline Eigen::MatrixXd cm_step_sigma_raw(const Dataset& data, const Eigen::VectorXd& mu,
                                         const Eigen::VectorXd& gamma,
                                         const LatentMoments& moments, Eigen::Index excluded,
                                         Eigen::Index n) {
    const Eigen::Index d = data.dim();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    double s_lambda = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i == excluded) continue;
        const Eigen::VectorXd r = data.row(i) - mu;
        acc += moments.inv_lambda_hat(i) * r * r.transpose();
        acc -= gamma * r.transpose() + r * gamma.transpose();
        s_lambda += moments.lambda_hat(i);
    }
    acc += s_lambda * gamma * gamma.transpose();
    acc /= static_cast<double>(n - 1);
    return 0.5 * (acc + acc.transpose());
}

} // namespace detail

// Stationary point of the expected complete-data objective in Sigma at fixed
// (mu, gamma, excluded index). Throws when the stationary matrix is not
// positive definite; the fitter treats that as an infeasible proposal and
// lets the line search fall back toward the previous iterate.
inline Eigen::MatrixXd cm_step_sigma(const Dataset& data, const Eigen::VectorXd& mu,
                                     const Eigen::VectorXd& gamma, const LatentMoments& moments,
                                     Eigen::Index excluded, Eigen::Index n) {
    if (n < data.dim() + 2) throw InputError("need at least d + 2 observations");
    const Eigen::MatrixXd sigma =
        detail::cm_step_sigma_raw(data, mu, gamma, moments, excluded, n);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
        throw DegenerateStepError("scale step produced a non-positive-definite matrix");
    return sigma;
}

// Newton-Raphson in log nu for the shape step, on
//   g(nu) = (n-1)(1 + log nu - digamma(nu)) + S_log_lambda - S_lambda,
//   g'(nu) = (n-1)(1/nu - trigamma(nu)) < 0,
// clamped to [nu_min, nu_max]; stops when |delta log nu| < 1e-10.
inline double cm_step_nu(const SuffStats& stats, Eigen::Index n, double nu_start,
                         const EcmConfig& cfg) {
    if (!(nu_start >= cfg.nu_min && nu_start <= cfg.nu_max))
        throw ParameterError("nu_start outside [nu_min, nu_max]");
    const double nm1 = static_cast<double>(n - 1);
    const double lo = std::log(cfg.nu_min), hi = std::log(cfg.nu_max);
    double t = std::log(nu_start);
    for (int it = 0; it < cfg.nr_max_iter; ++it) {
        const double nu = std::exp(t);
        const double g = nm1 * (1.0 + std::log(nu) - digamma(nu)) + stats.s_log_lambda -
                         stats.s_lambda;
        const double dg_dt = nm1 * (1.0 / nu - trigamma(nu)) * nu;
        double t_next = t - g / dg_dt;
        t_next = std::min(hi, std::max(lo, t_next));
        const double delta = std::abs(t_next - t);
        t = t_next;
        if (delta < 1e-10) break;
    }
    if (t >= hi) return cfg.nu_max; // report the bound exactly when clamped
    if (t <= lo) return cfg.nu_min;
    return std::exp(t);
}

inline VgParams line_search(const VgParams& theta_old, const VgProposal& theta_new,
                            const Dataset& data, const EcmConfig& cfg) {
    return detail::line_search_ex(theta_old, theta_new, data, cfg,
                                  loo_loglik(theta_old, data))
        .params;
}

// Full ECM sweep schedule, iterated until the relative increment of the LOO
// log-likelihood drops below cfg.tol:
//   local point search                     (location candidates)
//   E-step 1: E[lambda], E[1/lambda]       at the half-updated location
//   CM-step 1: (mu, gamma) + line search
//   E-step 2: E[lambda], E[1/lambda]       at the updated location/skew
//   CM-step 2: Sigma + line search
//   E-step 3: E[lambda], E[log lambda]     at the updated location/scale/skew
//   CM-step 3: nu (Newton-Raphson) + line search
// Parameter blocks named in the fixed mask keep their values; their CM-steps
// (and any E-step feeding only skipped CM-steps) are omitted.
inline FitResult fit(const Dataset& data, const EcmConfig& cfg = {},
                     std::optional<VgParams> init = std::nullopt) {
    const Eigen::Index n = data.n(), d = data.dim();
    if (n < d + 2) throw InputError("need at least d + 2 observations");
    if (!(cfg.tol > 0.0) || cfg.m_search < 1 || !(cfg.nu_min < cfg.nu_max))
        throw InputError("invalid fitter configuration");
    if (init && init->dim() != d) throw ParameterError("init dimension mismatch");

    VgParams theta = init ? *init : initialize(data, false);
    double loglik = loo_loglik(theta, data);

    FitResult result{theta, {loglik}, 0, Termination::max_iter, {}};
    int clamped_total = 0;
    bool degenerate_mu_gamma = false, degenerate_sigma = false, nu_clamped = false;
    bool lps_moved_last = false;

    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        const double loglik_prev = loglik;

        // ---- local point search (half-step location update) ----
        if (!cfg.fix_mu) {
            auto lps = detail::local_point_search_ex(theta, data, cfg.m_search, loglik);
            lps_moved_last = lps.params.mu() != theta.mu();
            theta = std::move(lps.params);
            loglik = lps.loglik;
        }

        // ---- E-step 1 + CM-step 1: location and skew ----
        if (!cfg.fix_mu || !cfg.fix_gamma) {
            const LatentMoments moments = latent_moments(theta, data, /*want_log=*/false);
            clamped_total += moments.clamped;
            const Eigen::Index k = loo_index(theta, data);
            const SuffStats stats = suff_stats(data, moments, k);
            VgProposal prop = VgProposal::from(theta);
            bool have_step = true;
            try {
                if (!cfg.fix_mu && !cfg.fix_gamma) {
                    auto [mu_new, gamma_new] = cm_step_mu_gamma(stats, n);
                    prop.mu = std::move(mu_new);
                    prop.gamma = std::move(gamma_new);
                } else if (!cfg.fix_mu) {
                    prop.mu = cm_step_mu_only(stats, n, theta.gamma());
                } else {
                    prop.gamma = cm_step_gamma_only(stats, n, theta.mu());
                }
            } catch (const DegenerateStepError&) {
                degenerate_mu_gamma = true;
                have_step = false;
            }
            if (have_step) {
                auto next = detail::line_search_ex(theta, prop, data, cfg, loglik);
                theta = std::move(next.params);
                loglik = next.loglik;
            }
        }

        // ---- E-step 2 + CM-step 2: scale matrix ----
        if (!cfg.fix_sigma) {
            const LatentMoments moments = latent_moments(theta, data, /*want_log=*/false);
            clamped_total += moments.clamped;
            const Eigen::Index k = loo_index(theta, data);
            VgProposal prop = VgProposal::from(theta);
            prop.sigma = detail::cm_step_sigma_raw(data, theta.mu(), theta.gamma(), moments, k, n);
            Eigen::LLT<Eigen::MatrixXd> llt(prop.sigma);
            if (llt.info() != Eigen::Success ||
                !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
                degenerate_sigma = true; // line search blends back until feasible
            auto next = detail::line_search_ex(theta, prop, data, cfg, loglik);
            theta = std::move(next.params);
            loglik = next.loglik;
        }

        // ---- E-step 3 + CM-step 3: shape ----
        if (!cfg.fix_nu) {
            const LatentMoments moments = latent_moments(theta, data, /*want_log=*/true);
            clamped_total += moments.clamped;
            const Eigen::Index k = loo_index(theta, data);
            const SuffStats stats = suff_stats(data, moments, k);
            VgProposal prop = VgProposal::from(theta);
            const double nu_from =
                std::min(cfg.nu_max, std::max(cfg.nu_min, theta.nu()));
            prop.nu = cm_step_nu(stats, n, nu_from, cfg);
            if (prop.nu == cfg.nu_min || prop.nu == cfg.nu_max) nu_clamped = true;
            auto next = detail::line_search_ex(theta, prop, data, cfg, loglik);
            theta = std::move(next.params);
            loglik = next.loglik;
        }

        result.loglik_trace.push_back(loglik);
        result.iterations = iter;
        if (loglik < loglik_prev - 1e-12 * (1.0 + std::abs(loglik_prev)))
            result.warnings.push_back("log-likelihood decreased at iteration " +
                                      std::to_string(iter));
        if (std::abs(loglik - loglik_prev) / (std::abs(loglik_prev) + 1.0) < cfg.tol) {
            result.termination = Termination::converged;
            break;
        }
    }

    result.params = std::move(theta);
    if (clamped_total > 0)
        result.warnings.push_back("Mahalanobis distances clamped at the floor " +
                                  std::to_string(clamped_total) +
                                  " times (duplicate observations at the location)");
    if (degenerate_mu_gamma)
        result.warnings.push_back("location/skew step skipped: constant posterior weights");
    if (degenerate_sigma)
        result.warnings.push_back("scale step proposal not positive definite; "
                                  "line search fell back");
    if (nu_clamped) result.warnings.push_back("shape estimate clamped at its bound");
    if (result.termination == Termination::max_iter && lps_moved_last)
        result.warnings.push_back("local point search still relocating at max_iter "
                                  "(possible oscillation)");
    return result;
}

// Location-only variant used by the rate study: iterates local point search,
// E-step 1, and the single-block location update with its line search, with
// (Sigma, gamma, nu) frozen at the supplied values.
inline Eigen::VectorXd fit_location_only(const Dataset& data, const VgParams& fixed,
                                         const EcmConfig& cfg, const Eigen::VectorXd& init_mu) {
    EcmConfig c = cfg;
    c.fix_sigma = true;
    c.fix_gamma = true;
    c.fix_nu = true;
    c.fix_mu = false;
    VgParams start(init_mu, fixed.sigma(), fixed.gamma(), fixed.nu());
    return fit(data, c, start).params.mu();
}

} // namespace msvg
