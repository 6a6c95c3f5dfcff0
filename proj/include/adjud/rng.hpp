#ifndef ADJUD_RNG_HPP
#define ADJUD_RNG_HPP

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <random>

namespace adjud {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive statistically independent child seeds
// from (root seed, coordinate tags) without any dependence on scheduling.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix64(root);
    for (std::uint64_t t : tags) s = mix64(s ^ mix64(t));
    return s;
}

inline double norm_cdf(double x) {
    return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

inline double norm_logpdf(double x, double mu, double sd) {
    const double z = (x - mu) / sd;
    return -0.5 * z * z - std::log(sd) - 0.91893853320467274178;
}

// Acklam's rational approximation refined by one Halley step; |err| < 1e-13.
double norm_quantile(double p);

// N(mean, sd^2) truncated to (0, inf) if positive, else (-inf, 0).
// Inverse-CDF in the body, exponential-proposal rejection in the far tail.
double sample_trunc_normal(Rng& rng, double mean, double sd, bool positive);

inline double runif(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double rnorm(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline double rgamma(Rng& rng, double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

}  // namespace adjud

#endif
