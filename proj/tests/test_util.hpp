#ifndef ADJUD_TEST_UTIL_HPP
#define ADJUD_TEST_UTIL_HPP

#include <cmath>

#include "adjud/cohort.hpp"
#include "adjud/sim.hpp"

namespace adjud::test {

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

// small simulated cohort used across model tests
inline Cohort small_cohort(int n, std::uint64_t seed) {
    SimulationTruth truth = SimulationTruth::defaults();
    truth.n = n;
    return simulate_cohort(truth, seed);
}

}  // namespace adjud::test

#endif
