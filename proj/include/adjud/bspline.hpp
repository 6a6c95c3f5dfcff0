#ifndef ADJUD_BSPLINE_HPP
#define ADJUD_BSPLINE_HPP

#include <array>
#include <vector>

namespace adjud {

// Clamped B-spline basis on [lo, hi] with the given interior knots.
class BSplineBasis {
public:
    BSplineBasis(double lo, double hi, std::vector<double> interior_knots, int degree = 3);

    int size() const { return num_basis_; }
    int degree() const { return degree_; }
    double lo() const { return knots_[degree_]; }
    double hi() const { return knots_[knots_.size() - degree_ - 1]; }
    const std::vector<double>& interior_knots() const { return interior_; }

    // Dense basis row (size() entries). t must lie in [lo, hi].
    std::vector<double> eval(double t) const;

    // Sparse evaluation: fills degree+1 values starting at basis index `offset`.
    void eval_sparse(double t, int& offset, double* values) const;

    double dot(double t, const std::vector<double>& coef) const;

    // Interior knots at evenly spaced quantiles of `times` (deduplicated).
    static BSplineBasis from_quantiles(const std::vector<double>& times, double lo, double hi,
                                       int n_interior, int degree = 3);

private:
    int degree_;
    int num_basis_;
    std::vector<double> interior_;
    std::vector<double> knots_;  // clamped knot vector
    int find_span(double t) const;
};

struct GaussLegendre15 {
    // nodes/weights on [-1, 1]
    static const std::array<double, 15> nodes;
    static const std::array<double, 15> weights;
};

}  // namespace adjud

#endif
