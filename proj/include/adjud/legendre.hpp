#ifndef ADJUD_LEGENDRE_HPP
#define ADJUD_LEGENDRE_HPP

#include <cmath>
#include <stdexcept>
#include <utility>

namespace adjud {

// Second-order shifted Legendre basis on [0, T]:
//   P1(t) = 2t/T - 1,  P2(t) = (3 P1(t)^2 - 1) / 2.
inline std::pair<double, double> legendre_basis(double t, double T) {
    if (!(T > 0.0)) throw std::invalid_argument("legendre_basis: T must be positive");
    const double u = 2.0 * t / T - 1.0;
    return {u, 0.5 * (3.0 * u * u - 1.0)};
}

struct TrajectoryCoefficients {
    double b0 = 0.0;           // intercept (random + fixed polynomial intercept)
    double b1 = 0.0;           // P1 coefficient
    double b2 = 0.0;           // P2 coefficient
    double fixed_offset = 0.0; // time-constant covariate contribution
    double scale = 1.0;        // T
};

struct FeatureTriple {
    double value = 0.0;  // factor units
    double slope = 0.0;  // factor units / year
    double area = 0.0;   // factor units * years
    double eval_age = 0.0;
};

namespace detail {
inline void check_range(const TrajectoryCoefficients& c, double t) {
    if (!(c.scale > 0.0)) throw std::invalid_argument("trajectory: scale must be positive");
    if (t < 0.0 || t > c.scale)
        throw std::domain_error("trajectory: evaluation age outside [0, T]");
}
}  // namespace detail

inline double trajectory_value(const TrajectoryCoefficients& c, double t) {
    detail::check_range(c, t);
    auto [p1, p2] = legendre_basis(t, c.scale);
    return c.fixed_offset + c.b0 + c.b1 * p1 + c.b2 * p2;
}

inline double trajectory_slope(const TrajectoryCoefficients& c, double t) {
    detail::check_range(c, t);
    const double u = 2.0 * t / c.scale - 1.0;
    return (2.0 / c.scale) * (c.b1 + 3.0 * c.b2 * u);
}

// Antiderivatives on [0,T] with u = 2s/T - 1:
//   int P1 ds = s^2/T - s,  int P2 ds = (T/4) (u^3 - u).
inline double trajectory_area(const TrajectoryCoefficients& c, double t0, double t) {
    detail::check_range(c, t);
    if (t0 < 0.0 || t0 > t) throw std::domain_error("trajectory_area: need 0 <= t0 <= t");
    auto anti1 = [&](double s) { return s * s / c.scale - s; };
    auto anti2 = [&](double s) {
        const double u = 2.0 * s / c.scale - 1.0;
        return (c.scale / 4.0) * (u * u * u - u);
    };
    return (c.fixed_offset + c.b0) * (t - t0) + c.b1 * (anti1(t) - anti1(t0)) +
           c.b2 * (anti2(t) - anti2(t0));
}

inline FeatureTriple trajectory_features(const TrajectoryCoefficients& c, double t, double t0 = 0.0) {
    FeatureTriple f;
    f.value = trajectory_value(c, t);
    f.slope = trajectory_slope(c, t);
    f.area = trajectory_area(c, t0, t);
    f.eval_age = t;
    return f;
}

}  // namespace adjud

#endif
