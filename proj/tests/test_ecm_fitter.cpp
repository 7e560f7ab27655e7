#include <catch2/catch_amalgamated.hpp>

#include <msvg/ecm_fitter.hpp>
#include <msvg/rng.hpp>
#include <msvg/special_functions.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

using msvg::cm_step_gamma_only;
using msvg::cm_step_mu_gamma;
using msvg::cm_step_mu_only;
using msvg::cm_step_nu;
using msvg::cm_step_sigma;
using msvg::complete_loglik_components;
using msvg::Dataset;
using msvg::DegenerateStepError;
using msvg::EcmConfig;
using msvg::fit;
using msvg::fit_location_only;
using msvg::initialize;
using msvg::InitializationError;
using msvg::InputError;
using msvg::LatentMoments;
using msvg::latent_moments;
using msvg::line_search;
using msvg::local_point_search;
using msvg::loo_index;
using msvg::loo_loglik;
using msvg::ParameterError;
using msvg::RngStream;
using msvg::SuffStats;
using msvg::suff_stats;
using msvg::Termination;
using msvg::VgParams;
using msvg::VgProposal;

namespace {

VgParams params_1d(double mu, double sigma2, double gamma, double nu) {
    Eigen::VectorXd m(1), g(1);
    Eigen::MatrixXd s(1, 1);
    m << mu;
    s << sigma2;
    g << gamma;
    return VgParams(m, s, g, nu);
}

Dataset dataset_1d(const std::vector<double>& values) {
    Eigen::MatrixXd y(static_cast<Eigen::Index>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = values[i];
    return Dataset(y);
}

VgParams random_params(RngStream& rng, Eigen::Index d) {
    Eigen::VectorXd mu(d), gamma(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        mu(j) = rng.normal();
        gamma(j) = 0.3 * rng.normal();
    }
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k) a(j, k) = 0.5 * rng.normal();
    Eigen::MatrixXd sigma = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
    const double nu = std::exp(-0.5 + 2.0 * rng.uniform01());
    return VgParams(mu, sigma, gamma, nu);
}

// Central difference with the step h = 1e-5 * (1 + |x|).
double central_diff(const std::function<double(double)>& f, double x) {
    const double h = 1e-5 * (1.0 + std::abs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

double blend_alpha_1d(const VgParams& result, double mu_old, double mu_prop) {
    return (result.mu()(0) - mu_old) / (mu_prop - mu_old);
}

} // namespace

TEST_CASE("initialization uses the sample mean and covariance with shape 4d", "[init]") {
    SECTION("hand-computed 1-D case") {
        const Dataset data = dataset_1d({-1.0, 0.0, 1.0, 2.0});
        const VgParams p = initialize(data);
        REQUIRE(p.mu()(0) == Catch::Approx(0.5).epsilon(1e-14));
        REQUIRE(p.sigma()(0, 0) == Catch::Approx(5.0 / 3.0).epsilon(1e-14));
        REQUIRE(p.gamma()(0) == 0.0);
        REQUIRE(p.nu() == 4.0);
    }
    SECTION("standard normal sample lands near (0, 1, 0, 4)") {
        RngStream rng(2024);
        Eigen::MatrixXd y(4000, 1);
        for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = rng.normal();
        const VgParams p = initialize(Dataset(y));
        REQUIRE(std::abs(p.mu()(0)) < 0.06);
        REQUIRE(p.sigma()(0, 0) == Catch::Approx(1.0).margin(0.08));
        REQUIRE(p.gamma()(0) == 0.0);
        REQUIRE(p.nu() == 4.0);
    }
    SECTION("bivariate covariance matches the direct formula") {
        RngStream rng(7);
        Eigen::MatrixXd y(50, 2);
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            y(i, 0) = rng.normal();
            y(i, 1) = 0.5 * y(i, 0) + rng.normal();
        }
        const VgParams p = initialize(Dataset(y));
        const Eigen::RowVectorXd mean = y.colwise().mean();
        const Eigen::MatrixXd centered = y.rowwise() - mean;
        const Eigen::MatrixXd cov = centered.transpose() * centered / 49.0;
        REQUIRE((p.sigma() - cov).cwiseAbs().maxCoeff() < 1e-14);
        REQUIRE(p.nu() == 8.0);
    }
}

TEST_CASE("robust initialization uses medians and MAD-based scale", "[init]") {
    const Dataset data = dataset_1d({0.0, 0.0, 1.0, 2.0, 100.0});
    const VgParams robust = initialize(data, true);
    REQUIRE(robust.mu()(0) == 1.0);                 // median, untouched by the outlier
    REQUIRE(robust.sigma()(0, 0) == Catch::Approx(1.4826 * 1.4826).epsilon(1e-14));
    REQUIRE(robust.gamma()(0) == 0.0);
    REQUIRE(robust.nu() == 4.0);

    const VgParams plain = initialize(data, false);
    REQUIRE(plain.mu()(0) == Catch::Approx(20.6).epsilon(1e-14)); // mean dragged by the outlier
    REQUIRE(std::abs(plain.mu()(0) - robust.mu()(0)) > 10.0);
}

TEST_CASE("initialization rejects degenerate input", "[init]") {
    REQUIRE_THROWS_AS(initialize(dataset_1d({3.0, 3.0, 3.0, 3.0})), InitializationError);
    REQUIRE_THROWS_AS(initialize(dataset_1d({3.0, 3.0, 3.0, 3.0}), true), InitializationError);
    REQUIRE_THROWS_AS(initialize(dataset_1d({1.0, 2.0})), InitializationError); // n < d+2
    // an exact duplicate mass at the median zeroes the MAD even when the
    // covariance is fine
    REQUIRE_THROWS_AS(initialize(dataset_1d({5.0, 5.0, 5.0, 1.0, 9.0}), true),
                      InitializationError);
}

TEST_CASE("location/skew step solves the stationarity equations", "[cm-step]") {
    SECTION("mirror-symmetric weights recover the plain mean with zero skew") {
        // Retained points are mirror pairs about 1.5 with pairwise-equal
        // weights, so s_y_over_lambda = s_inv_lambda * 1.5 and
        // s_y = (n-1) * 1.5; the step must return mu = 1.5, gamma = 0.
        const Dataset data = dataset_1d({1.5 - 2.0, 1.5 + 2.0, 1.5 - 0.5, 1.5 + 0.5, 40.0});
        LatentMoments mom;
        mom.lambda_hat.resize(5);
        mom.inv_lambda_hat.resize(5);
        mom.log_lambda_hat = Eigen::VectorXd::Zero(5);
        mom.lambda_hat << 0.7, 0.7, 1.3, 1.3, 1.0;
        mom.inv_lambda_hat << 2.0, 2.0, 0.9, 0.9, 1.0;
        const SuffStats st = suff_stats(data, mom, 4);
        const auto [mu, gamma] = cm_step_mu_gamma(st, data.n());
        REQUIRE(mu(0) == Catch::Approx(1.5).epsilon(1e-12));
        REQUIRE(gamma(0) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("finite-difference gradients vanish at the joint output") {
        RngStream rng(91);
        for (int rep = 0; rep < 6; ++rep) {
            const Eigen::Index d = (rep % 2) + 1;
            const VgParams p = random_params(rng, d);
            const Dataset data(msvg::sample(p, 12, rng));
            const LatentMoments mom = latent_moments(p, data);
            const Eigen::Index k = loo_index(p, data);
            const SuffStats st = suff_stats(data, mom, k);
            const auto [mu_star, gamma_star] = cm_step_mu_gamma(st, data.n());

            auto objective = [&](const Eigen::VectorXd& mu, const Eigen::VectorXd& gamma) {
                return complete_loglik_components(VgParams(mu, p.sigma(), gamma, p.nu()), data,
                                                  mom, k)
                    .first;
            };
            const double f0 = std::abs(objective(mu_star, gamma_star));
            for (Eigen::Index j = 0; j < d; ++j) {
                const double gmu = central_diff(
                    [&](double x) {
                        Eigen::VectorXd mu = mu_star;
                        mu(j) = x;
                        return objective(mu, gamma_star);
                    },
                    mu_star(j));
                const double ggam = central_diff(
                    [&](double x) {
                        Eigen::VectorXd gamma = gamma_star;
                        gamma(j) = x;
                        return objective(mu_star, gamma);
                    },
                    gamma_star(j));
                REQUIRE(std::abs(gmu) < 1e-9 * (1.0 + f0));
                REQUIRE(std::abs(ggam) < 1e-9 * (1.0 + f0));
            }
        }
    }
}

TEST_CASE("location/skew step detects constant posterior weights", "[cm-step]") {
    const Dataset data = dataset_1d({0.0, 1.0, 2.0, 3.0});
    LatentMoments mom;
    mom.lambda_hat = Eigen::VectorXd::Ones(4);
    mom.inv_lambda_hat = Eigen::VectorXd::Ones(4);
    mom.log_lambda_hat = Eigen::VectorXd::Zero(4);
    const SuffStats st = suff_stats(data, mom, 0);
    REQUIRE_THROWS_AS(cm_step_mu_gamma(st, data.n()), DegenerateStepError);
}

TEST_CASE("single-block location update equals the retained mean under unit weights",
          "[cm-step]") {
    const Dataset data = dataset_1d({2.0, 4.0, 9.0, 1.0});
    LatentMoments mom;
    mom.lambda_hat = Eigen::VectorXd::Ones(4);
    mom.inv_lambda_hat = Eigen::VectorXd::Ones(4);
    mom.log_lambda_hat = Eigen::VectorXd::Zero(4);
    const SuffStats st = suff_stats(data, mom, 2); // retain {2, 4, 1}
    const Eigen::VectorXd mu = cm_step_mu_only(st, data.n(), Eigen::VectorXd::Zero(1));
    REQUIRE(mu(0) == Catch::Approx(7.0 / 3.0).epsilon(1e-14));
    const Eigen::VectorXd gamma = cm_step_gamma_only(st, data.n(), mu);
    REQUIRE(gamma(0) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("scale step reduces to the mean squared deviation under unit weights", "[cm-step]") {
    const Dataset data = dataset_1d({1.0, 2.0, 4.0, 8.0});
    LatentMoments mom;
    mom.lambda_hat = Eigen::VectorXd::Ones(4);
    mom.inv_lambda_hat = Eigen::VectorXd::Ones(4);
    mom.log_lambda_hat = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.0);
    const Eigen::VectorXd gamma = Eigen::VectorXd::Zero(1);
    const Eigen::MatrixXd s = cm_step_sigma(data, mu, gamma, mom, 1, data.n());
    // retained residuals about mu=2: {-1, 2, 6}
    REQUIRE(s(0, 0) == Catch::Approx((1.0 + 4.0 + 36.0) / 3.0).epsilon(1e-14));
}

TEST_CASE("scale step rejects an indefinite proposal", "[cm-step]") {
    const Dataset data = dataset_1d({1.0, 1.0, 1.0});
    LatentMoments mom;
    mom.lambda_hat = Eigen::VectorXd::Constant(3, 0.1);
    mom.inv_lambda_hat = Eigen::VectorXd::Constant(3, 0.1);
    mom.log_lambda_hat = Eigen::VectorXd::Zero(3);
    const Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
    const Eigen::VectorXd gamma = Eigen::VectorXd::Constant(1, 2.0);
    // each retained term is 0.1 - 4 + 0.4 < 0
    REQUIRE_THROWS_AS(cm_step_sigma(data, mu, gamma, mom, 0, data.n()), DegenerateStepError);
}

TEST_CASE("scale step output is a stationary point of the expected objective", "[cm-step]") {
    RngStream rng(417);
    for (int rep = 0; rep < 6; ++rep) {
        const Eigen::Index d = (rep % 2) + 1;
        const VgParams p = random_params(rng, d);
        const Dataset data(msvg::sample(p, 12, rng));
        const LatentMoments mom = latent_moments(p, data);
        const Eigen::Index k = loo_index(p, data);
        const Eigen::MatrixXd s_star = cm_step_sigma(data, p.mu(), p.gamma(), mom, k, data.n());

        auto objective = [&](const Eigen::MatrixXd& s) {
            return complete_loglik_components(VgParams(p.mu(), s, p.gamma(), p.nu()), data, mom,
                                              k)
                .first;
        };
        const double f0 = std::abs(objective(s_star));
        for (Eigen::Index j = 0; j < d; ++j) {
            for (Eigen::Index l = j; l < d; ++l) {
                const double h = 1e-5 * (1.0 + std::abs(s_star(j, l)));
                Eigen::MatrixXd up = s_star, dn = s_star;
                up(j, l) += h;
                dn(j, l) -= h;
                if (j != l) { // keep the perturbed matrix symmetric
                    up(l, j) += h;
                    dn(l, j) -= h;
                }
                const double grad = (objective(up) - objective(dn)) / (2.0 * h);
                REQUIRE(std::abs(grad) < 1e-8 * (1.0 + f0));
            }
        }
    }
}

TEST_CASE("shape step solves its score equation", "[cm-step]") {
    const EcmConfig cfg;
    SECTION("planted root is recovered") {
        const Eigen::Index n = 20;
        SuffStats st;
        st.s_lambda = 3.0;
        st.s_log_lambda =
            3.0 - static_cast<double>(n - 1) * (1.0 + std::log(2.0) - msvg::digamma(2.0));
        const double nu = cm_step_nu(st, n, 1.0, cfg);
        REQUIRE(nu == Catch::Approx(2.0).epsilon(1e-9));
    }
    SECTION("Newton direction is defined on the whole shape range") {
        for (int i = 0; i <= 60; ++i) {
            const double nu = 1e-3 * std::pow(200.0 / 1e-3, i / 60.0);
            REQUIRE(1.0 / nu < msvg::trigamma(nu));
        }
    }
    SECTION("roots beyond the bounds clamp exactly") {
        const Eigen::Index n = 20;
        SuffStats high;
        high.s_lambda = 0.0;
        high.s_log_lambda =
            -static_cast<double>(n - 1) * (1.0 + std::log(500.0) - msvg::digamma(500.0));
        REQUIRE(cm_step_nu(high, n, 1.0, cfg) == cfg.nu_max);
        SuffStats low;
        low.s_lambda = 0.0;
        low.s_log_lambda =
            -static_cast<double>(n - 1) * (1.0 + std::log(1e-4) - msvg::digamma(1e-4));
        REQUIRE(cm_step_nu(low, n, 1.0, cfg) == cfg.nu_min);
    }
    SECTION("residual of the score vanishes on random statistics") {
        RngStream rng(55);
        for (int rep = 0; rep < 10; ++rep) {
            const VgParams p = random_params(rng, 1);
            const Dataset data(msvg::sample(p, 30, rng));
            const LatentMoments mom = latent_moments(p, data);
            const SuffStats st = suff_stats(data, mom, loo_index(p, data));
            const double nu = cm_step_nu(st, data.n(), p.nu(), cfg);
            if (nu == cfg.nu_min || nu == cfg.nu_max) continue;
            const double nm1 = static_cast<double>(data.n() - 1);
            const double g = nm1 * (1.0 + std::log(nu) - msvg::digamma(nu)) + st.s_log_lambda -
                             st.s_lambda;
            REQUIRE(std::abs(g) < 1e-8 * nm1);
        }
    }
    SECTION("start outside the clamp range is rejected") {
        SuffStats st;
        st.s_lambda = 1.0;
        st.s_log_lambda = 0.0;
        REQUIRE_THROWS_AS(cm_step_nu(st, 10, 1e-6, cfg), ParameterError);
    }
}

TEST_CASE("line search accepts a uniformly better proposal at full step", "[line-search]") {
    RngStream rng(100);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 3.0);
    const Dataset data(msvg::sample(truth, 200, rng));
    // propose the fitted optimum itself: no interior blend can beat it, so
    // the full step must win
    const VgParams fitted = fit(data).params;
    const VgParams theta_old(
        (fitted.mu().array() - 0.5).matrix(), 1.5 * fitted.sigma(), fitted.gamma(),
        fitted.nu());
    const VgProposal prop = VgProposal::from(fitted);
    REQUIRE(loo_loglik(fitted, data) > loo_loglik(theta_old, data));
    const VgParams out = line_search(theta_old, prop, data, EcmConfig{});
    REQUIRE(out.mu()(0) == Catch::Approx(fitted.mu()(0)).margin(1e-12));
    REQUIRE(out.sigma()(0, 0) == Catch::Approx(fitted.sigma()(0, 0)).epsilon(1e-12));
    REQUIRE(loo_loglik(out, data) >= loo_loglik(theta_old, data));
}

TEST_CASE("line search falls back to the old point when nothing improves", "[line-search]") {
    RngStream rng(101);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 3.0);
    const Dataset data(msvg::sample(truth, 150, rng));
    // start close to the optimum and propose a location far outside the data
    const VgParams theta_old = params_1d(0.01, 1.0, 0.0, 3.0);
    VgProposal prop = VgProposal::from(theta_old);
    prop.mu = Eigen::VectorXd::Constant(1, 50.0);
    const VgParams out = line_search(theta_old, prop, data, EcmConfig{});
    REQUIRE(out.mu()(0) == theta_old.mu()(0));
    REQUIRE(out.sigma()(0, 0) == theta_old.sigma()(0, 0));
}

TEST_CASE("line search locates an interior peak", "[line-search]") {
    RngStream rng(102);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 3.0);
    const Dataset data(msvg::sample(truth, 200, rng));
    const double mu_old = -0.8, mu_prop = 0.8;
    const VgParams theta_old = params_1d(mu_old, 1.0, 0.0, 3.0);
    VgProposal prop = VgProposal::from(theta_old);
    prop.mu = Eigen::VectorXd::Constant(1, mu_prop);

    double best_alpha = 0.0, best_ll = loo_loglik(theta_old, data);
    for (int i = 1; i <= 1000; ++i) {
        const double alpha = i / 1000.0;
        const VgParams cand = params_1d(mu_old + alpha * (mu_prop - mu_old), 1.0, 0.0, 3.0);
        const double ll = loo_loglik(cand, data);
        if (ll > best_ll) {
            best_ll = ll;
            best_alpha = alpha;
        }
    }
    REQUIRE(best_alpha > 0.1);
    REQUIRE(best_alpha < 0.9);

    const VgParams out = line_search(theta_old, prop, data, EcmConfig{});
    const double alpha_ls = blend_alpha_1d(out, mu_old, mu_prop);
    REQUIRE(std::abs(alpha_ls - best_alpha) <= 0.05);
    REQUIRE(loo_loglik(out, data) >= loo_loglik(theta_old, data));
}

TEST_CASE("line search skips infeasible scale blends", "[line-search]") {
    RngStream rng(103);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 3.0);
    const Dataset data(msvg::sample(truth, 150, rng));
    const VgParams theta_old = params_1d(-0.2, 1.0, 0.0, 3.0);
    VgProposal prop = VgProposal::from(theta_old);
    prop.mu = Eigen::VectorXd::Constant(1, 0.2);
    prop.sigma = Eigen::MatrixXd::Constant(1, 1, -0.5); // infeasible beyond alpha = 2/3
    const VgParams out = line_search(theta_old, prop, data, EcmConfig{});
    REQUIRE(out.sigma()(0, 0) > 0.0);
    REQUIRE(loo_loglik(out, data) >= loo_loglik(theta_old, data));
}

TEST_CASE("local point search picks the best candidate and honors ties", "[point-search]") {
    SECTION("current location wins when it is already the argmax") {
        const Dataset data = dataset_1d({-1.0, 1.0});
        const VgParams p = params_1d(0.0, 1.0, 0.0, 1.0);
        // candidates: current 0 (retains a point at distance 1) and the two
        // data points (each retains the other at distance 2)
        const VgParams out = local_point_search(p, data, 5);
        REQUIRE(out.mu()(0) == 0.0);
    }
    SECTION("equal-likelihood data candidates resolve to the smallest index") {
        const Dataset data = dataset_1d({-2.0, 2.0});
        const VgParams p = params_1d(5.0, 1.0, 0.0, 1.0);
        // from 5.0 the retained point is -2 (distance 7); candidates -2 and 2
        // tie by symmetry and both beat the current location
        const double ll_current = loo_loglik(p, data);
        const VgParams out = local_point_search(p, data, 5);
        REQUIRE(loo_loglik(out, data) > ll_current);
        REQUIRE(out.mu()(0) == -2.0);
    }
    SECTION("search relocates a poor start on a heavy-tailed sample") {
        RngStream rng(104);
        const VgParams truth = params_1d(0.0, 1.0, 0.0, 0.2);
        const Dataset data(msvg::sample(truth, 10, rng));
        std::vector<double> sorted(data.observations().col(0).begin(),
                                   data.observations().col(0).end());
        std::sort(sorted.begin(), sorted.end());
        // start midway between the two outermost points on the right
        const double start = 0.5 * (sorted[8] + sorted[9]);
        const VgParams p = params_1d(start, 1.0, 0.0, 0.2);
        const double before = loo_loglik(p, data);
        const VgParams out = local_point_search(p, data, 10);
        REQUIRE(loo_loglik(out, data) > before);
    }
    SECTION("a large candidate count covers the whole dataset") {
        const Dataset data = dataset_1d({0.0, 1.0, 2.0, 3.0, 40.0});
        const VgParams p = params_1d(39.0, 1.0, 0.0, 1.0);
        // m = n-1 = 4 must still consider every data point
        const VgParams out = local_point_search(p, data, 4);
        VgParams best = p;
        double best_ll = loo_loglik(p, data);
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            const VgParams cand(data.row(i), p.sigma(), p.gamma(), p.nu());
            const double ll = loo_loglik(cand, data);
            if (ll > best_ll) {
                best_ll = ll;
                best = cand;
            }
        }
        REQUIRE(out.mu()(0) == best.mu()(0));
    }
}

TEST_CASE("fits improve the objective monotonically", "[fit]") {
    RngStream rng(300);
    int fits = 0;
    for (Eigen::Index d : {1, 2}) {
        for (double nu : {0.3, 1.0, 3.0}) {
            for (bool skewed : {false, true}) {
                Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
                Eigen::VectorXd gamma =
                    skewed ? Eigen::VectorXd::Constant(d, 0.6) : Eigen::VectorXd::Zero(d);
                Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(d, d);
                if (d == 2) sigma(0, 1) = sigma(1, 0) = 0.3;
                const VgParams truth(mu, sigma, gamma, nu);
                const Dataset data(msvg::sample(truth, 120, rng));
                const auto result = fit(data);
                ++fits;
                REQUIRE(result.loglik_trace.size() ==
                        static_cast<std::size_t>(result.iterations) + 1);
                for (std::size_t t = 1; t < result.loglik_trace.size(); ++t) {
                    const double prev = result.loglik_trace[t - 1];
                    REQUIRE(result.loglik_trace[t] >= prev - 1e-12 * (1.0 + std::abs(prev)));
                }
            }
        }
    }
    REQUIRE(fits == 12);
}

TEST_CASE("fit recovers parameters on simulated data", "[fit][slow]") {
    RngStream rng(301);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 1.0);
    const Dataset data(msvg::sample(truth, 5000, rng));
    const auto result = fit(data);
    REQUIRE(result.termination == Termination::converged);
    REQUIRE(std::abs(result.params.mu()(0)) < 0.05);
    REQUIRE(std::abs(result.params.nu() - 1.0) < 0.15);
    REQUIRE(result.params.sigma()(0, 0) == Catch::Approx(1.0).margin(0.1));
    REQUIRE(std::abs(result.params.gamma()(0)) < 0.06);
}

TEST_CASE("fit is translation equivariant", "[fit]") {
    RngStream rng(302);
    const VgParams truth = params_1d(0.0, 1.0, 0.4, 0.8);
    const Dataset data(msvg::sample(truth, 150, rng));
    const double c = 7.25;
    const Dataset shifted((data.observations().array() + c).matrix());

    const VgParams init = initialize(data);
    const VgParams init_shifted((init.mu().array() + c).matrix(), init.sigma(), init.gamma(),
                                init.nu());
    const auto base = fit(data, EcmConfig{}, init);
    const auto moved = fit(shifted, EcmConfig{}, init_shifted);

    REQUIRE(moved.iterations == base.iterations);
    REQUIRE(moved.params.mu()(0) ==
            Catch::Approx(base.params.mu()(0) + c).margin(1e-9 * (1.0 + std::abs(c))));
    REQUIRE(moved.params.sigma()(0, 0) ==
            Catch::Approx(base.params.sigma()(0, 0)).epsilon(1e-9));
    REQUIRE(moved.params.gamma()(0) == Catch::Approx(base.params.gamma()(0)).margin(1e-9));
    REQUIRE(moved.params.nu() == Catch::Approx(base.params.nu()).epsilon(1e-9));
    REQUIRE(base.loglik_trace.size() == moved.loglik_trace.size());
    for (std::size_t t = 0; t < base.loglik_trace.size(); ++t)
        REQUIRE(moved.loglik_trace[t] ==
                Catch::Approx(base.loglik_trace[t]).margin(1e-9 * (1.0 + std::abs(base.loglik_trace[t]))));
}

TEST_CASE("fit is affine equivariant in one dimension", "[fit]") {
    RngStream rng(303);
    const VgParams truth = params_1d(0.5, 1.2, 0.3, 1.5);
    const Dataset data(msvg::sample(truth, 150, rng));
    const double s = 2.5, c = -3.0;
    const Dataset mapped((data.observations().array() * s + c).matrix());

    const VgParams init = initialize(data);
    const VgParams init_mapped(Eigen::VectorXd::Constant(1, s * init.mu()(0) + c),
                               Eigen::MatrixXd::Constant(1, 1, s * s * init.sigma()(0, 0)),
                               Eigen::VectorXd::Constant(1, s * init.gamma()(0)), init.nu());
    // The relative-increment stopping rule scales its threshold with |loglik|,
    // which shifts where the two runs stop by a few sweeps. Run both to the
    // floating-point plateau so the comparison sees the estimator, not the
    // stopping rule.
    EcmConfig cfg;
    cfg.tol = 1e-16;
    const auto base = fit(data, cfg, init);
    const auto scaled = fit(mapped, cfg, init_mapped);

    REQUIRE(scaled.params.mu()(0) ==
            Catch::Approx(s * base.params.mu()(0) + c).epsilon(1e-6));
    REQUIRE(scaled.params.sigma()(0, 0) ==
            Catch::Approx(s * s * base.params.sigma()(0, 0)).epsilon(1e-6));
    REQUIRE(scaled.params.gamma()(0) ==
            Catch::Approx(s * base.params.gamma()(0)).margin(1e-6 * (1.0 + std::abs(base.params.gamma()(0)))));
    REQUIRE(scaled.params.nu() == Catch::Approx(base.params.nu()).epsilon(1e-6));
}

TEST_CASE("refitting from a converged point stops immediately", "[fit]") {
    RngStream rng(304);
    const VgParams truth = params_1d(0.0, 1.0, 0.2, 1.0);
    const Dataset data(msvg::sample(truth, 200, rng));
    const auto first = fit(data);
    REQUIRE(first.termination == Termination::converged);
    const auto again = fit(data, EcmConfig{}, first.params);
    REQUIRE(again.iterations <= 2);
    REQUIRE(std::abs(again.params.mu()(0) - first.params.mu()(0)) < 1e-4);
    REQUIRE(std::abs(again.params.nu() - first.params.nu()) < 1e-3);
}

TEST_CASE("fixed blocks stay fixed", "[fit]") {
    RngStream rng(305);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 1.0);
    const Dataset data(msvg::sample(truth, 150, rng));

    SECTION("all blocks frozen -> immediate convergence at the init") {
        EcmConfig cfg;
        cfg.fix_mu = cfg.fix_sigma = cfg.fix_gamma = cfg.fix_nu = true;
        const VgParams init = initialize(data);
        const auto result = fit(data, cfg, init);
        REQUIRE(result.iterations == 1);
        REQUIRE(result.termination == Termination::converged);
        REQUIRE(result.params.mu()(0) == init.mu()(0));
        REQUIRE(result.params.sigma()(0, 0) == init.sigma()(0, 0));
        REQUIRE(result.params.nu() == init.nu());
    }
    SECTION("frozen shape and skew keep their initial values") {
        EcmConfig cfg;
        cfg.fix_gamma = cfg.fix_nu = true;
        const VgParams init = initialize(data);
        const auto result = fit(data, cfg, init);
        REQUIRE(result.params.gamma()(0) == 0.0);
        REQUIRE(result.params.nu() == init.nu());
        REQUIRE(result.params.mu()(0) != init.mu()(0)); // location still moves
    }
}

TEST_CASE("fit rejects undersized or mismatched input", "[fit]") {
    REQUIRE_THROWS_AS(fit(dataset_1d({1.0, 2.0})), InputError);
    RngStream rng(306);
    const VgParams truth = params_1d(0.0, 1.0, 0.0, 1.0);
    const Dataset data(msvg::sample(truth, 20, rng));
    Eigen::VectorXd mu2 = Eigen::VectorXd::Zero(2);
    const VgParams init2(mu2, Eigen::MatrixXd::Identity(2, 2), mu2, 1.0);
    REQUIRE_THROWS_AS(fit(data, EcmConfig{}, init2), ParameterError);
    EcmConfig bad;
    bad.tol = 0.0;
    REQUIRE_THROWS_AS(fit(data, bad), InputError);
}

TEST_CASE("location-only fit is reflection equivariant", "[location-only]") {
    RngStream rng(400);
    const VgParams fixed = params_1d(0.0, 1.0, 0.0, 0.3);
    const Dataset data(msvg::sample(fixed, 200, rng));
    const Dataset reflected(-data.observations());

    auto median_of = [](const Dataset& ds) {
        std::vector<double> v(ds.observations().col(0).begin(),
                              ds.observations().col(0).end());
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size();
        return (m % 2) ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    };
    const double med = median_of(data);
    const Eigen::VectorXd mu_hat =
        fit_location_only(data, fixed, EcmConfig{}, Eigen::VectorXd::Constant(1, med));
    const Eigen::VectorXd mu_ref = fit_location_only(
        reflected, fixed, EcmConfig{}, Eigen::VectorXd::Constant(1, -med));
    REQUIRE(mu_ref(0) == Catch::Approx(-mu_hat(0)).margin(1e-12));
}

TEST_CASE("location-only fit matches a dense grid scan", "[location-only][slow]") {
    // With shape 0.2 the objective spikes inside tiny gaps between
    // near-coincident observations, so the optimizer routinely BEATS any
    // fixed-step scan; the optimality check is one-sided. This seed is one
    // where the scan argmax and the optimizer land in the same gap, so the
    // flanking-points assertion is meaningful as well.
    RngStream rng = RngStream::substream(424242, 19, 0, 0);
    const VgParams fixed = params_1d(0.0, 1.0, 0.0, 0.2);
    const Dataset data(msvg::sample(fixed, 500, rng));

    std::vector<double> sorted(data.observations().col(0).begin(),
                               data.observations().col(0).end());
    std::sort(sorted.begin(), sorted.end());
    const double med = 0.5 * (sorted[249] + sorted[250]);
    const Eigen::VectorXd mu_hat =
        fit_location_only(data, fixed, EcmConfig{}, Eigen::VectorXd::Constant(1, med));
    const double ll_hat =
        loo_loglik(VgParams(mu_hat, fixed.sigma(), fixed.gamma(), fixed.nu()), data);

    // dense scan of the objective over the data range
    const double lo = sorted.front(), hi = sorted.back();
    double grid_best = -std::numeric_limits<double>::infinity(), grid_arg = lo;
    const double step = 1e-4;
    const auto n_steps = static_cast<long>(std::floor((hi - lo) / step));
    for (long i = 0; i <= n_steps; ++i) {
        const double mu = lo + static_cast<double>(i) * step;
        const double ll = loo_loglik(params_1d(mu, 1.0, 0.0, 0.2), data);
        if (ll > grid_best) {
            grid_best = ll;
            grid_arg = mu;
        }
    }
    REQUIRE(ll_hat >= grid_best - 1e-6);

    // the estimate sits strictly between the data points flanking the argmax
    const auto above = std::upper_bound(sorted.begin(), sorted.end(), grid_arg);
    REQUIRE(above != sorted.begin());
    REQUIRE(above != sorted.end());
    const double left = *(above - 1), right = *above;
    REQUIRE(mu_hat(0) > left);
    REQUIRE(mu_hat(0) < right);
}
