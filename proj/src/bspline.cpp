#include "adjud/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adjud {

BSplineBasis::BSplineBasis(double lo, double hi, std::vector<double> interior_knots, int degree)
    : degree_(degree), interior_(std::move(interior_knots)) {
    if (!(hi > lo)) throw std::invalid_argument("bspline: hi must exceed lo");
    if (degree_ < 1) throw std::invalid_argument("bspline: degree must be >= 1");
    for (double k : interior_)
        if (k <= lo || k >= hi) throw std::invalid_argument("bspline: interior knot outside (lo,hi)");
    if (!std::is_sorted(interior_.begin(), interior_.end()))
        throw std::invalid_argument("bspline: interior knots must be nondecreasing");

    knots_.assign(static_cast<std::size_t>(degree_ + 1), lo);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), static_cast<std::size_t>(degree_ + 1), hi);
    num_basis_ = static_cast<int>(interior_.size()) + degree_ + 1;
}

int BSplineBasis::find_span(double t) const {
    const int n = num_basis_;
    if (t >= knots_[static_cast<std::size_t>(n)]) return n - 1;  // right boundary
    // span s satisfies knots[s] <= t < knots[s+1], degree <= s <= n-1
    auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 1, t);
    int s = static_cast<int>(it - knots_.begin()) - 1;
    return std::clamp(s, degree_, n - 1);
}

void BSplineBasis::eval_sparse(double t, int& offset, double* values) const {
    if (t < lo() - 1e-12 || t > hi() + 1e-12)
        throw std::domain_error("bspline: t outside boundary knots");
    t = std::clamp(t, lo(), hi());
    const int span = find_span(t);
    offset = span - degree_;

    // Cox-de Boor triangular scheme
    double left[8], right[8];
    values[0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
        left[j] = t - knots_[static_cast<std::size_t>(span + 1 - j)];
        right[j] = knots_[static_cast<std::size_t>(span + j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double denom = right[r + 1] + left[j - r];
            double temp = denom > 0.0 ? values[r] / denom : 0.0;
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
}

std::vector<double> BSplineBasis::eval(double t) const {
    std::vector<double> row(static_cast<std::size_t>(num_basis_), 0.0);
    int offset = 0;
    double vals[8];
    eval_sparse(t, offset, vals);
    for (int j = 0; j <= degree_; ++j) row[static_cast<std::size_t>(offset + j)] = vals[j];
    return row;
}

double BSplineBasis::dot(double t, const std::vector<double>& coef) const {
    if (static_cast<int>(coef.size()) != num_basis_)
        throw std::invalid_argument("bspline: coefficient length mismatch");
    int offset = 0;
    double vals[8];
    eval_sparse(t, offset, vals);
    double s = 0.0;
    for (int j = 0; j <= degree_; ++j) s += vals[j] * coef[static_cast<std::size_t>(offset + j)];
    return s;
}

BSplineBasis BSplineBasis::from_quantiles(const std::vector<double>& times, double lo, double hi,
                                          int n_interior, int degree) {
    std::vector<double> sorted(times);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> interior;
    if (!sorted.empty() && n_interior > 0) {
        for (int k = 1; k <= n_interior; ++k) {
            double p = static_cast<double>(k) / (n_interior + 1);
            double h = p * (static_cast<double>(sorted.size()) - 1.0);
            std::size_t i = static_cast<std::size_t>(std::floor(h));
            std::size_t j = std::min(i + 1, sorted.size() - 1);
            double q = sorted[i] + (h - static_cast<double>(i)) * (sorted[j] - sorted[i]);
            if (q > lo && q < hi &&
                (interior.empty() || q > interior.back() + 1e-9 * (hi - lo)))
                interior.push_back(q);
        }
    }
    return BSplineBasis(lo, hi, std::move(interior), degree);
}

const std::array<double, 15> GaussLegendre15::nodes = {
    -0.9879925180204854, -0.9372733924007060, -0.8482065834104272, -0.7244177313601701,
    -0.5709721726085388, -0.3941513470775634, -0.2011940939974345, 0.0,
    0.2011940939974345,  0.3941513470775634,  0.5709721726085388,  0.7244177313601701,
    0.8482065834104272,  0.9372733924007060,  0.9879925180204854};

const std::array<double, 15> GaussLegendre15::weights = {
    0.0307532419961173, 0.0703660474881081, 0.1071592204671719, 0.1395706779261543,
    0.1662692058169939, 0.1861610000155622, 0.1984314853271116, 0.2025782419255613,
    0.1984314853271116, 0.1861610000155622, 0.1662692058169939, 0.1395706779261543,
    0.1071592204671719, 0.0703660474881081, 0.0307532419961173};

}  // namespace adjud
