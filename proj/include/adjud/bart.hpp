#ifndef ADJUD_BART_HPP
#define ADJUD_BART_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjud/rng.hpp"

namespace adjud {

struct BartConfig {
    int m = 200;  // number of trees
    double alpha_split = 0.95;
    double beta_depth = 2.0;
    double k_sigma = 2.0;  // sigma_mu = 3 / (k sqrt(m)) on the probit scale
    int n_iter = 1000;
    int n_burn = 250;
    int thin = 1;
    int n_cutpoints = 100;
    double p_grow = 0.4, p_prune = 0.4, p_change = 0.2;
    std::uint64_t seed = 1;

    double sigma_mu() const { return 3.0 / (k_sigma * std::sqrt(static_cast<double>(m))); }
};

struct TreeNode {
    int var = -1;      // split variable; -1 for leaves
    double cut = 0.0;  // split value (left: x <= cut)
    double mu = 0.0;   // leaf value
    int left = -1, right = -1;
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
    double predict(const Eigen::VectorXd& row) const;
    int leaf_index(const Eigen::VectorXd& row) const;
    int depth_of(int node) const;
};

struct Forest {
    std::vector<Tree> trees;
    double sum(const Eigen::VectorXd& row) const;
};

double split_prior_probability(int depth, double alpha_split = 0.95, double beta_depth = 2.0);

struct BartFit {
    std::vector<Forest> draws;  // retained post-burn-in forests
    int n_cols = 0;
};

// Probit BART via truncated-normal data augmentation. labels must contain both
// classes; X columns with a single distinct value are never split on.
BartFit fit_bart_probit(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                        const BartConfig& cfg);

// Phi(sum of leaf values across trees)
double predict_probability(const Forest& forest, const Eigen::VectorXd& row);

// Posterior-mean probability across all retained draws.
double posterior_mean_probability(const BartFit& fit, const Eigen::VectorXd& row);

void write_forest_ndjson(const BartFit& fit, const std::string& path);
BartFit read_forest_ndjson(const std::string& path);

}  // namespace adjud

#endif
