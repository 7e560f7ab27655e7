#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

// Log-domain modified Bessel function of the second kind with real order,
// its order-derivative, and the gamma-family helpers (log Gamma, digamma,
// trigamma). Everything here is scalar, allocation-free and thread-safe.

namespace msvg {

namespace detail {

// Coefficients of 1/Gamma(1+x) = sum d[k] x^k, |x| <= 0.5 (power series of
// the entire function 1/Gamma shifted by one).
inline constexpr double kRecipGamma1p[26] = {
    1.00000000000000000000e+00,  5.77215664901532860607e-01,
    -6.55878071520253881077e-01, -4.20026350340952355290e-02,
    1.66538611382291489502e-01,  -4.21977345555443367482e-02,
    -9.62197152787697356211e-03, 7.21894324666309954240e-03,
    -1.16516759185906511211e-03, -2.15241674114950972816e-04,
    1.28050282388116186153e-04,  -2.01348547807882386557e-05,
    -1.25049348214267065735e-06, 1.13302723198169588237e-06,
    -2.05633841697760710345e-07, 6.11609510448141581786e-09,
    5.00200764446922293006e-09,  -1.18127457048702014459e-09,
    1.04342671169110051049e-10,  7.78226343990507125405e-12,
    -3.69680561864220570819e-12, 5.10037028745447597902e-13,
    -2.05832605356650678322e-14, -5.34812253942301798237e-15,
    1.22677862823826079016e-15,  -1.18125930169745876951e-16};

inline double recip_gamma1p(double x) {
    double s = 0.0;
    for (int k = 25; k >= 0; --k) s = s * x + kRecipGamma1p[k];
    return s;
}

// Temme's Gamma1(mu) = [1/Gamma(1-mu) - 1/Gamma(1+mu)]/(2 mu) and
// Gamma2(mu) = [1/Gamma(1-mu) + 1/Gamma(1+mu)]/2 via the odd/even parts of
// the series above; free of the subtractive cancellation the direct form has
// near mu = 0.
inline void temme_gammas(double mu, double& g1, double& g2, double& rg_plus, double& rg_minus) {
    const double m2 = mu * mu;
    double odd = 0.0, even = 0.0;
    for (int k = 24; k >= 0; k -= 2) {
        even = even * m2 + kRecipGamma1p[k];
        odd = odd * m2 + kRecipGamma1p[k + 1];
    }
    g1 = -odd;
    g2 = even;
    rg_plus = even + mu * odd;  // 1/Gamma(1+mu)
    rg_minus = even - mu * odd; // 1/Gamma(1-mu)
}

struct LogKPair {
    double log_kmu;  // log K_mu(z)
    double log_kmu1; // log K_{mu+1}(z)
};

// Temme series, valid for z <= 2, |mu| <= 1/2.
inline LogKPair log_kpair_series(double mu, double z) {
    const double eps = std::numeric_limits<double>::epsilon();
    const double half_z = 0.5 * z;
    const double d = -std::log(half_z); // log(2/z) > 0 for z < 2
    const double sigma = mu * d;
    const double pimu = 3.14159265358979323846 * mu;
    const double fact = (std::abs(pimu) < 1e-4)
                            ? 1.0 + pimu * pimu / 6.0 + pimu * pimu * pimu * pimu * (7.0 / 360.0)
                            : pimu / std::sin(pimu);
    const double fact2 = (std::abs(sigma) < 1e-4)
                             ? 1.0 + sigma * sigma / 6.0 + sigma * sigma * sigma * sigma / 120.0
                             : std::sinh(sigma) / sigma;
    double g1, g2, rgp, rgm;
    temme_gammas(mu, g1, g2, rgp, rgm);

    double f = fact * (g1 * std::cosh(sigma) + g2 * fact2 * d);
    double sum = f;
    const double esig = std::exp(sigma);
    double p = 0.5 * esig / rgp;  // = Gamma(1+mu) (2/z)^mu / 2
    double q = 0.5 / (esig * rgm); // = Gamma(1-mu) (z/2)^mu / 2
    double c = 1.0;
    const double z2q = half_z * half_z;
    double sum1 = p;
    const double mu2 = mu * mu;
    for (int k = 1; k <= 500; ++k) {
        f = (k * f + p + q) / (k * k - mu2);
        c *= z2q / k;
        p /= (k - mu);
        q /= (k + mu);
        const double del = c * f;
        sum += del;
        const double del1 = c * (p - k * f);
        sum1 += del1;
        if (std::abs(del) < std::abs(sum) * eps) break;
    }
    return {std::log(sum), std::log(2.0 * sum1) - std::log(z)};
}

// Steed/Thompson-Barnett continued fraction, valid for z > 2, |mu| <= 1/2.
inline LogKPair log_kpair_cf(double mu, double z) {
    const double eps = std::numeric_limits<double>::epsilon();
    double b = 2.0 * (1.0 + z);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    bool converged = false;
    for (int i = 2; i <= 10000; ++i) {
        a -= 2.0 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < eps) {
            converged = true;
            break;
        }
    }
    if (!converged) throw std::runtime_error("bessel k continued fraction failed to converge");
    h = a1 * h;
    const double log_kmu = 0.5 * std::log(3.14159265358979323846 / (2.0 * z)) - z - std::log(s);
    return {log_kmu, log_kmu + std::log((mu + z + 0.5 - h) / z)};
}

inline LogKPair log_kpair(double mu, double z) {
    return (z <= 2.0) ? log_kpair_series(mu, z) : log_kpair_cf(mu, z);
}

} // namespace detail

// log K_order(z). Symmetric in the sign of order; z > 0 required. Computed by
// reducing |order| to mu in [-1/2, 1/2], evaluating (K_mu, K_{mu+1}) by series
// (z <= 2) or continued fraction (z > 2), then running the three-term upward
// order recurrence on rescaled values so no intermediate over/underflows.
inline double log_bessel_k(double order, double z) {
    if (!std::isfinite(order) || !std::isfinite(z) || z <= 0.0)
        throw std::domain_error("log_bessel_k: requires finite order and z > 0, got order=" +
                                std::to_string(order) + " z=" + std::to_string(z));
    const double a = std::abs(order);
    const long n = std::lround(a);
    const double mu = a - static_cast<double>(n); // |mu| <= 1/2
    const detail::LogKPair kp = detail::log_kpair(mu, z);
    if (n == 0) return kp.log_kmu;
    double log_scale = kp.log_kmu;
    double km = 1.0;                                // K_{mu}   / scale
    double k = std::exp(kp.log_kmu1 - kp.log_kmu);  // K_{mu+1} / scale
    const double two_over_z = 2.0 / z;
    for (long i = 1; i < n; ++i) {
        const double knext = km + (mu + i) * two_over_z * k;
        km = k;
        k = knext;
        if (k > 1e250) {
            const double f = k;
            km /= f;
            k = 1.0;
            log_scale += std::log(f);
        }
    }
    return log_scale + std::log(k);
}

// d K_alpha(z) / d alpha at alpha = order, by the second-order central
// difference with step 1e-5 on log values; the subtraction is done after
// rescaling by the midpoint magnitude so it stays exact when the two
// neighbours agree to many digits. Exactly zero at order 0 (K is even in its
// order).
inline double bessel_k_dorder(double order, double z) {
    if (!std::isfinite(order) || !std::isfinite(z) || z <= 0.0)
        throw std::domain_error("bessel_k_dorder: requires finite order and z > 0");
    if (order == 0.0) return 0.0;
    const double h = 1e-5;
    const double lp = log_bessel_k(order + h, z);
    const double lm = log_bessel_k(order - h, z);
    const double mid = 0.5 * (lp + lm);
    return std::exp(mid) * std::sinh(0.5 * (lp - lm)) / h;
}

// log Gamma(x), x > 0. Lanczos approximation (g = 7, 9 terms).
inline double log_gamma(double x) {
    if (!std::isfinite(x) || x <= 0.0)
        throw std::domain_error("log_gamma: requires x > 0");
    static constexpr double lanczos[9] = {
        0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
        771.32342877765313,   -176.61502916214059,   12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
    const double xm1 = x - 1.0;
    double acc = lanczos[0];
    for (int i = 1; i < 9; ++i) acc += lanczos[i] / (xm1 + i);
    const double t = xm1 + 7.5;
    return 0.91893853320467274178 /* log sqrt(2 pi) */ + (xm1 + 0.5) * std::log(t) - t +
           std::log(acc);
}

// psi(x) = d log Gamma / dx, x > 0. Recurrence up to x >= 10, then the
// Bernoulli asymptotic series.
inline double digamma(double x) {
    if (!std::isfinite(x) || x <= 0.0)
        throw std::domain_error("digamma: requires x > 0");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi(x) ~ log x - 1/(2x) - sum B_{2k}/(2k x^{2k})
    double series = inv2 * (1.0 / 12.0 +
                    inv2 * (-1.0 / 120.0 +
                    inv2 * (1.0 / 252.0 +
                    inv2 * (-1.0 / 240.0 +
                    inv2 * (1.0 / 132.0 +
                    inv2 * (-691.0 / 32760.0 +
                    inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

// psi'(x), x > 0. Same recurrence/asymptotic split as digamma.
inline double trigamma(double x) {
    if (!std::isfinite(x) || x <= 0.0)
        throw std::domain_error("trigamma: requires x > 0");
    double acc = 0.0;
    while (x < 10.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_{2k}/x^{2k+1}
    double series = inv * inv2 * (1.0 / 6.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (1.0 / 42.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (5.0 / 66.0 +
                    inv2 * (-691.0 / 2730.0 +
                    inv2 * (7.0 / 6.0)))))));
    return acc + inv + 0.5 * inv2 + series;
}

} // namespace msvg
