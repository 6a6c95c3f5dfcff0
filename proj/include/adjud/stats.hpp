#ifndef ADJUD_STATS_HPP
#define ADJUD_STATS_HPP

#include <vector>

namespace adjud {

double mean(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

// type-7 quantile (linear interpolation), matching common statistical software
double quantile(std::vector<double> v, double p);

// effective sample size via Geyer's initial positive sequence on a single chain
double effective_sample_size(const std::vector<double>& chain);

// split-Rhat: the chain is halved and treated as two chains
double split_rhat(const std::vector<double>& chain);

}  // namespace adjud

#endif
