#include "adjud/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adjud {

double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v), ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw std::invalid_argument("quantile: empty vector");
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile: p outside [0,1]");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

std::vector<double> autocovariance(const std::vector<double>& x, std::size_t max_lag) {
    const std::size_t n = x.size();
    double m = mean(x);
    std::vector<double> acov(max_lag + 1, 0.0);
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
        acov[lag] = s / static_cast<double>(n);
    }
    return acov;
}

}  // namespace

double effective_sample_size(const std::vector<double>& chain) {
    const std::size_t n = chain.size();
    if (n < 4) return static_cast<double>(n);
    std::size_t max_lag = n / 2;
    auto acov = autocovariance(chain, max_lag);
    if (acov[0] <= 0.0) return static_cast<double>(n);

    // sum of consecutive autocorrelation pairs until the pair goes negative
    double sum = 0.0;
    for (std::size_t lag = 1; lag + 1 <= max_lag; lag += 2) {
        double pair = (acov[lag] + acov[lag + 1]) / acov[0];
        if (pair < 0.0) break;
        sum += pair;
    }
    double ess = static_cast<double>(n) / (1.0 + 2.0 * sum);
    return std::min(ess, static_cast<double>(n));
}

double split_rhat(const std::vector<double>& chain) {
    const std::size_t n = chain.size();
    if (n < 4) return 1.0;
    const std::size_t half = n / 2;
    std::vector<double> a(chain.begin(), chain.begin() + half);
    std::vector<double> b(chain.end() - half, chain.end());
    double ma = mean(a), mb = mean(b);
    double va = 0.0, vb = 0.0;
    for (double x : a) va += (x - ma) * (x - ma);
    for (double x : b) vb += (x - mb) * (x - mb);
    va /= static_cast<double>(half - 1);
    vb /= static_cast<double>(half - 1);
    double w = 0.5 * (va + vb);
    double gm = 0.5 * (ma + mb);
    double bvar = static_cast<double>(half) * ((ma - gm) * (ma - gm) + (mb - gm) * (mb - gm));
    if (w <= 0.0) return 1.0;
    double var_plus = (static_cast<double>(half - 1) / half) * w + bvar / half;
    return std::sqrt(var_plus / w);
}

}  // namespace adjud
