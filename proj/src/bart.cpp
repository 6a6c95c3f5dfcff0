#include "adjud/bart.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace adjud {

double Tree::predict(const Eigen::VectorXd& row) const {
    int node = 0;
    while (nodes[static_cast<std::size_t>(node)].var >= 0) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
        node = row[nd.var] <= nd.cut ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(node)].mu;
}

int Tree::leaf_index(const Eigen::VectorXd& row) const {
    int node = 0;
    while (nodes[static_cast<std::size_t>(node)].var >= 0) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
        node = row[nd.var] <= nd.cut ? nd.left : nd.right;
    }
    return node;
}

int Tree::depth_of(int node) const {
    // trees are tiny; walk down from the root
    struct Item {
        int node, depth;
    };
    std::vector<Item> stack{{0, 0}};
    while (!stack.empty()) {
        Item it = stack.back();
        stack.pop_back();
        if (it.node == node) return it.depth;
        const TreeNode& nd = nodes[static_cast<std::size_t>(it.node)];
        if (nd.var >= 0) {
            stack.push_back({nd.left, it.depth + 1});
            stack.push_back({nd.right, it.depth + 1});
        }
    }
    throw std::logic_error("Tree::depth_of: node not reachable");
}

double Forest::sum(const Eigen::VectorXd& row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    return s;
}

double split_prior_probability(int depth, double alpha_split, double beta_depth) {
    if (depth < 0) throw std::invalid_argument("split_prior_probability: depth < 0");
    return alpha_split * std::pow(1.0 + static_cast<double>(depth), -beta_depth);
}

double predict_probability(const Forest& forest, const Eigen::VectorXd& row) {
    return norm_cdf(forest.sum(row));
}

double posterior_mean_probability(const BartFit& fit, const Eigen::VectorXd& row) {
    if (fit.draws.empty()) throw std::invalid_argument("posterior_mean_probability: no draws");
    double s = 0.0;
    for (const auto& f : fit.draws) s += predict_probability(f, row);
    return s / static_cast<double>(fit.draws.size());
}

namespace {

struct Sampler {
    const Eigen::MatrixXd& X;
    const BartConfig& cfg;
    std::vector<std::vector<double>> cutpoints;  // per column
    std::vector<int> usable_cols;
    double sig2mu;

    std::vector<Tree> trees;
    std::vector<Eigen::VectorXd> tree_pred;  // per tree, length n
    Eigen::VectorXd fit_total;
    Eigen::VectorXd z;  // latent probit utilities

    std::vector<int> assign;   // leaf index per observation for the tree in play
    std::vector<double> rbuf;  // partial residuals

    Sampler(const Eigen::MatrixXd& x, const BartConfig& c) : X(x), cfg(c) {
        const Eigen::Index n = X.rows(), p = X.cols();
        sig2mu = cfg.sigma_mu() * cfg.sigma_mu();
        cutpoints.resize(static_cast<std::size_t>(p));
        for (Eigen::Index j = 0; j < p; ++j) {
            std::vector<double> vals(X.col(j).data(), X.col(j).data() + n);
            std::sort(vals.begin(), vals.end());
            vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
            auto& cp = cutpoints[static_cast<std::size_t>(j)];
            if (vals.size() < 2) continue;  // constant column: never split
            if (vals.size() == 2) {
                cp.push_back(0.5 * (vals[0] + vals[1]));
            } else {
                const double lo = vals.front(), hi = vals.back();
                for (int k = 1; k <= cfg.n_cutpoints; ++k)
                    cp.push_back(lo + (hi - lo) * static_cast<double>(k) /
                                          (cfg.n_cutpoints + 1));
            }
            usable_cols.push_back(static_cast<int>(j));
        }
        trees.assign(static_cast<std::size_t>(cfg.m), Tree{{TreeNode{}}});
        tree_pred.assign(static_cast<std::size_t>(cfg.m), Eigen::VectorXd::Zero(n));
        fit_total = Eigen::VectorXd::Zero(n);
        z = Eigen::VectorXd::Zero(n);
        assign.resize(static_cast<std::size_t>(n));
        rbuf.resize(static_cast<std::size_t>(n));
    }

    // marginal-likelihood score of one leaf given (count, residual sum)
    double leaf_score(double cnt, double s) const {
        const double denom = 1.0 + cnt * sig2mu;
        return -0.5 * std::log(denom) + 0.5 * sig2mu * s * s / denom;
    }

    void collect_leaves(const Tree& t, std::vector<int>& leaves, std::vector<int>& nog) const {
        leaves.clear();
        nog.clear();
        for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
            const TreeNode& nd = t.nodes[static_cast<std::size_t>(i)];
            if (nd.var < 0) {
                if (nd.left == -2) continue;  // tombstone
                leaves.push_back(i);
            } else {
                const bool lchild = t.nodes[static_cast<std::size_t>(nd.left)].var < 0;
                const bool rchild = t.nodes[static_cast<std::size_t>(nd.right)].var < 0;
                if (lchild && rchild) nog.push_back(i);
            }
        }
    }

    void update_tree(int ti, Rng& rng) {
        Tree& t = trees[static_cast<std::size_t>(ti)];
        const Eigen::Index n = X.rows();
        for (Eigen::Index i = 0; i < n; ++i) {
            rbuf[static_cast<std::size_t>(i)] =
                z[i] - fit_total[i] + tree_pred[static_cast<std::size_t>(ti)][i];
            assign[static_cast<std::size_t>(i)] = t.leaf_index(X.row(i).transpose());
        }

        std::vector<int> leaves, nog;
        collect_leaves(t, leaves, nog);

        const double u_move = runif(rng);
        const bool can_grow = !usable_cols.empty();
        if (u_move < cfg.p_grow && can_grow) {
            propose_grow(t, leaves, nog, rng);
        } else if (u_move < cfg.p_grow + cfg.p_prune && !nog.empty()) {
            propose_prune(t, leaves, nog, rng);
        } else if (!nog.empty() && can_grow) {
            propose_change(t, nog, rng);
        }

        // refresh assignments (structure may have changed), then redraw leaves
        std::vector<double> cnt(t.nodes.size(), 0.0), ssum(t.nodes.size(), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int leaf = t.leaf_index(X.row(i).transpose());
            assign[static_cast<std::size_t>(i)] = leaf;
            cnt[static_cast<std::size_t>(leaf)] += 1.0;
            ssum[static_cast<std::size_t>(leaf)] += rbuf[static_cast<std::size_t>(i)];
        }
        for (std::size_t k = 0; k < t.nodes.size(); ++k) {
            TreeNode& nd = t.nodes[k];
            if (nd.var >= 0 || nd.left == -2) continue;
            const double post_var = 1.0 / (cnt[k] + 1.0 / sig2mu);
            nd.mu = post_var * ssum[k] + std::sqrt(post_var) * rnorm(rng);
        }
        auto& pred = tree_pred[static_cast<std::size_t>(ti)];
        for (Eigen::Index i = 0; i < n; ++i) {
            const double newv = t.nodes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].mu;
            fit_total[i] += newv - pred[i];
            pred[i] = newv;
        }
    }

    void propose_grow(Tree& t, const std::vector<int>& leaves, const std::vector<int>& nog,
                      Rng& rng) {
        const int leaf = leaves[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(leaves.size()) - 1)(rng))];
        const int var = usable_cols[static_cast<std::size_t>(std::uniform_int_distribution<int>(
            0, static_cast<int>(usable_cols.size()) - 1)(rng))];
        const auto& cp = cutpoints[static_cast<std::size_t>(var)];
        const double cut = cp[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(cp.size()) - 1)(rng))];

        double cl = 0.0, cr = 0.0, sl = 0.0, sr = 0.0, c0 = 0.0, s0 = 0.0;
        for (std::size_t i = 0; i < assign.size(); ++i) {
            if (assign[i] != leaf) continue;
            c0 += 1.0;
            s0 += rbuf[i];
            if (X(static_cast<Eigen::Index>(i), var) <= cut) {
                cl += 1.0;
                sl += rbuf[i];
            } else {
                cr += 1.0;
                sr += rbuf[i];
            }
        }
        if (cl == 0.0 || cr == 0.0) return;  // empty cell: reject

        const int depth = t.depth_of(leaf);
        const double ps = split_prior_probability(depth, cfg.alpha_split, cfg.beta_depth);
        const double psc = split_prior_probability(depth + 1, cfg.alpha_split, cfg.beta_depth);
        const double log_prior =
            std::log(ps) + 2.0 * std::log1p(-psc) - std::log1p(-ps);
        const double log_lik = leaf_score(cl, sl) + leaf_score(cr, sr) - leaf_score(c0, s0);
        // number of prunable nodes after growing
        int n_nog_after = 1;
        for (int nd : nog)
            if (nd != leaf) {
                // still a nog node unless `leaf` was its child (it wasn't: leaf is a leaf)
                const TreeNode& p = t.nodes[static_cast<std::size_t>(nd)];
                if (p.left != leaf && p.right != leaf) ++n_nog_after;
            }
        const double log_prop = std::log(cfg.p_prune / cfg.p_grow) +
                                std::log(static_cast<double>(leaves.size())) -
                                std::log(static_cast<double>(n_nog_after));
        if (std::log(runif(rng)) < log_prior + log_lik + log_prop) {
            TreeNode& nd = t.nodes[static_cast<std::size_t>(leaf)];
            nd.var = var;
            nd.cut = cut;
            nd.left = static_cast<int>(t.nodes.size());
            nd.right = nd.left + 1;
            t.nodes.push_back(TreeNode{});
            t.nodes.push_back(TreeNode{});
        }
    }

    void propose_prune(Tree& t, const std::vector<int>& leaves, const std::vector<int>& nog,
                       Rng& rng) {
        const int node = nog[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(nog.size()) - 1)(rng))];
        TreeNode& nd = t.nodes[static_cast<std::size_t>(node)];

        double cl = 0.0, cr = 0.0, sl = 0.0, sr = 0.0;
        for (std::size_t i = 0; i < assign.size(); ++i) {
            if (assign[i] == nd.left) {
                cl += 1.0;
                sl += rbuf[i];
            } else if (assign[i] == nd.right) {
                cr += 1.0;
                sr += rbuf[i];
            }
        }
        const int depth = t.depth_of(node);
        const double ps = split_prior_probability(depth, cfg.alpha_split, cfg.beta_depth);
        const double psc = split_prior_probability(depth + 1, cfg.alpha_split, cfg.beta_depth);
        const double log_prior =
            -(std::log(ps) + 2.0 * std::log1p(-psc) - std::log1p(-ps));
        const double log_lik =
            leaf_score(cl + cr, sl + sr) - leaf_score(cl, sl) - leaf_score(cr, sr);
        const double log_prop = std::log(cfg.p_grow / cfg.p_prune) +
                                std::log(static_cast<double>(nog.size())) -
                                std::log(static_cast<double>(leaves.size()) - 1.0);
        if (std::log(runif(rng)) < log_prior + log_lik + log_prop) {
            // tombstone the children rather than compacting indices
            t.nodes[static_cast<std::size_t>(nd.left)].left = -2;
            t.nodes[static_cast<std::size_t>(nd.right)].left = -2;
            nd.var = -1;
            nd.left = -1;
            nd.right = -1;
        }
    }

    void propose_change(Tree& t, const std::vector<int>& nog, Rng& rng) {
        const int node = nog[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(nog.size()) - 1)(rng))];
        TreeNode& nd = t.nodes[static_cast<std::size_t>(node)];
        const int var = usable_cols[static_cast<std::size_t>(std::uniform_int_distribution<int>(
            0, static_cast<int>(usable_cols.size()) - 1)(rng))];
        const auto& cp = cutpoints[static_cast<std::size_t>(var)];
        const double cut = cp[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(cp.size()) - 1)(rng))];

        double ocl = 0.0, ocr = 0.0, osl = 0.0, osr = 0.0;
        double ncl = 0.0, ncr = 0.0, nsl = 0.0, nsr = 0.0;
        for (std::size_t i = 0; i < assign.size(); ++i) {
            const bool in_node = assign[i] == nd.left || assign[i] == nd.right;
            if (!in_node) continue;
            if (assign[i] == nd.left) {
                ocl += 1.0;
                osl += rbuf[i];
            } else {
                ocr += 1.0;
                osr += rbuf[i];
            }
            if (X(static_cast<Eigen::Index>(i), var) <= cut) {
                ncl += 1.0;
                nsl += rbuf[i];
            } else {
                ncr += 1.0;
                nsr += rbuf[i];
            }
        }
        if (ncl == 0.0 || ncr == 0.0) return;
        const double log_lik = leaf_score(ncl, nsl) + leaf_score(ncr, nsr) -
                               leaf_score(ocl, osl) - leaf_score(ocr, osr);
        if (std::log(runif(rng)) < log_lik) {
            nd.var = var;
            nd.cut = cut;
        }
    }
};

Tree compact_tree(const Tree& t) {
    // drop tombstoned nodes and renumber
    Tree out;
    std::vector<int> map(t.nodes.size(), -1);
    std::vector<int> stack{0};
    // preorder copy
    struct Item {
        int node, parent;
        bool is_left;
    };
    std::vector<Item> st{{0, -1, false}};
    while (!st.empty()) {
        Item it = st.back();
        st.pop_back();
        const TreeNode& nd = t.nodes[static_cast<std::size_t>(it.node)];
        const int ni = static_cast<int>(out.nodes.size());
        out.nodes.push_back(nd);
        if (it.parent >= 0) {
            if (it.is_left)
                out.nodes[static_cast<std::size_t>(it.parent)].left = ni;
            else
                out.nodes[static_cast<std::size_t>(it.parent)].right = ni;
        }
        if (nd.var >= 0) {
            st.push_back({nd.right, ni, false});
            st.push_back({nd.left, ni, true});
        } else {
            out.nodes.back().left = -1;
            out.nodes.back().right = -1;
        }
    }
    return out;
}

}  // namespace

BartFit fit_bart_probit(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                        const BartConfig& cfg) {
    const Eigen::Index n = X.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw std::invalid_argument("fit_bart_probit: label/row mismatch");
    bool any0 = false, any1 = false;
    for (int c : labels) {
        any0 |= c == 0;
        any1 |= c == 1;
    }
    if (!any0 || !any1) throw std::invalid_argument("fit_bart_probit: single-class labels");
    if (cfg.n_iter <= cfg.n_burn)
        throw std::invalid_argument("fit_bart_probit: n_iter must exceed n_burn");

    Rng rng(cfg.seed);
    Sampler s(X, cfg);

    BartFit fit;
    fit.n_cols = static_cast<int>(X.cols());

    for (int iter = 0; iter < cfg.n_iter; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i)
            s.z[i] = sample_trunc_normal(rng, s.fit_total[i], 1.0, labels[static_cast<std::size_t>(i)] == 1);
        for (int t = 0; t < cfg.m; ++t) s.update_tree(t, rng);
        if (iter >= cfg.n_burn && (iter - cfg.n_burn) % cfg.thin == 0) {
            Forest f;
            f.trees.reserve(static_cast<std::size_t>(cfg.m));
            for (const auto& t : s.trees) f.trees.push_back(compact_tree(t));
            fit.draws.push_back(std::move(f));
        }
    }
    return fit;
}

void write_forest_ndjson(const BartFit& fit, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& f : fit.draws) {
        nlohmann::json jd;
        jd["n_cols"] = fit.n_cols;
        auto& jt = jd["trees"];
        jt = nlohmann::json::array();
        for (const auto& t : f.trees) {
            nlohmann::json tree;
            for (const auto& nd : t.nodes) {
                tree["var"].push_back(nd.var);
                tree["cut"].push_back(nd.cut);
                tree["mu"].push_back(nd.mu);
                tree["left"].push_back(nd.left);
                tree["right"].push_back(nd.right);
            }
            jt.push_back(std::move(tree));
        }
        out << jd.dump() << "\n";
    }
}

BartFit read_forest_ndjson(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    BartFit fit;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json jd = nlohmann::json::parse(line);
        fit.n_cols = jd["n_cols"].get<int>();
        Forest f;
        for (const auto& tree : jd["trees"]) {
            Tree t;
            const auto& var = tree["var"];
            for (std::size_t i = 0; i < var.size(); ++i) {
                TreeNode nd;
                nd.var = tree["var"][i].get<int>();
                nd.cut = tree["cut"][i].get<double>();
                nd.mu = tree["mu"][i].get<double>();
                nd.left = tree["left"][i].get<int>();
                nd.right = tree["right"][i].get<int>();
                t.nodes.push_back(nd);
            }
            f.trees.push_back(std::move(t));
        }
        fit.draws.push_back(std::move(f));
    }
    return fit;
}

}  // namespace adjud
