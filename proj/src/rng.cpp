#include "adjud/rng.hpp"

#include <limits>
#include <stdexcept>

namespace adjud {

double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("norm_quantile: p outside (0,1)");

    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};

    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // one Halley refinement against erfc
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

namespace {

// Robert (1995) one-sided rejection sampler for the standard normal
// truncated to (lo, inf) with lo well into the tail.
double tail_sample(Rng& rng, double lo) {
    const double alpha = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
    for (;;) {
        double u = runif(rng);
        double x = lo - std::log(1.0 - u) / alpha;
        double rho = std::exp(-0.5 * (x - alpha) * (x - alpha));
        if (runif(rng) <= rho) return x;
    }
}

}  // namespace

double sample_trunc_normal(Rng& rng, double mean, double sd, bool positive) {
    // reduce to standard normal truncated to (lo, inf)
    double lo = positive ? (0.0 - mean) / sd : (0.0 + mean) / sd;
    double z;
    if (lo > 5.0) {
        z = tail_sample(rng, lo);
    } else {
        double plo = norm_cdf(lo);
        double u = plo + (1.0 - plo) * runif(rng);
        if (u >= 1.0) u = std::nextafter(1.0, 0.0);
        z = norm_quantile(u);
        if (z < lo) z = lo;  // guard against round-off at the boundary
    }
    return positive ? mean + sd * z : mean - sd * z;
}

}  // namespace adjud
