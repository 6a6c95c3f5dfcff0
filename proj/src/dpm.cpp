#include "adjud/dpm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace adjud {

int default_truncation(double alpha_prior_mean, int n) {
    if (!(alpha_prior_mean > 0.0) || n < 1)
        throw std::invalid_argument("default_truncation: need positive mean and n");
    int k = static_cast<int>(std::ceil(5.0 * alpha_prior_mean * std::log(static_cast<double>(n))));
    return std::clamp(k, 2, 50);
}

Eigen::VectorXd stick_breaking_weights(const Eigen::VectorXd& v) {
    const Eigen::Index K = v.size() + 1;
    Eigen::VectorXd pi(K);
    double rest = 1.0;
    for (Eigen::Index k = 0; k + 1 < K; ++k) {
        if (!(v[k] > 0.0 && v[k] < 1.0))
            throw std::invalid_argument("stick_breaking_weights: V outside (0,1)");
        pi[k] = v[k] * rest;
        rest *= 1.0 - v[k];
    }
    pi[K - 1] = rest;
    return pi;
}

double update_concentration(Rng& rng, const Eigen::VectorXd& v, double a, double b) {
    double rate = b;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        if (v[k] >= 1.0) throw std::invalid_argument("update_concentration: V_k = 1");
        rate -= std::log1p(-v[k]);
    }
    return rgamma(rng, a + static_cast<double>(v.size()), rate);
}

namespace {

double rbeta(Rng& rng, double a, double b) {
    const double x = rgamma(rng, a, 1.0);
    const double y = rgamma(rng, b, 1.0);
    return x / (x + y);
}

// Sigma ~ IW(df, S): Sigma = W^{-1} with W ~ Wishart(df, S^{-1}) via Bartlett.
Eigen::Matrix3d riwish(Rng& rng, double df, const Eigen::Matrix3d& S) {
    Eigen::Matrix3d Sinv = S.inverse();
    Eigen::LLT<Eigen::Matrix3d> llt(Sinv);
    if (llt.info() != Eigen::Success) {
        Sinv += 1e-8 * Eigen::Matrix3d::Identity();
        llt.compute(Sinv);
    }
    Eigen::Matrix3d L = llt.matrixL();
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 3; ++i) {
        A(i, i) = std::sqrt(std::chi_squared_distribution<double>(df - i)(rng));
        for (int j = 0; j < i; ++j) A(i, j) = rnorm(rng);
    }
    Eigen::Matrix3d LA = L * A;
    Eigen::Matrix3d W = LA * LA.transpose();
    return W.inverse();
}

Eigen::Vector3d rmvnorm3(Rng& rng, const Eigen::Vector3d& mean, const Eigen::Matrix3d& cov) {
    Eigen::LLT<Eigen::Matrix3d> llt(cov);
    Eigen::Vector3d z(rnorm(rng), rnorm(rng), rnorm(rng));
    return mean + Eigen::Matrix3d(llt.matrixL()) * z;
}

// draw from N(prec^{-1} lin, prec^{-1})
Eigen::Vector3d rmvnorm_canonical3(Rng& rng, const Eigen::Matrix3d& prec,
                                   const Eigen::Vector3d& lin) {
    Eigen::LLT<Eigen::Matrix3d> llt(prec);
    Eigen::Vector3d mean = llt.solve(lin);
    Eigen::Vector3d z(rnorm(rng), rnorm(rng), rnorm(rng));
    return mean + Eigen::Matrix3d(llt.matrixL()).transpose().triangularView<Eigen::Upper>().solve(z);
}

struct SubjectBlock {
    std::string id;
    Eigen::Vector4d x;               // sex, race, lh, ah
    std::vector<Eigen::Vector3d> u;  // (1, P1, P2)
    std::vector<double> y;
    Eigen::Matrix3d utu;
    double death_age = 0.0;
};

}  // namespace

DpmFit fit_dpm_model(const Cohort& stratum, int factor, const DpmConfig& cfg) {
    if (stratum.subjects.empty()) throw std::invalid_argument("fit_dpm_model: empty stratum");
    if (cfg.n_iter <= cfg.n_burn)
        throw std::invalid_argument("fit_dpm_model: n_iter must exceed n_burn");
    const double T = stratum.t_max;

    std::vector<SubjectBlock> data;
    {
        std::map<std::string, std::size_t> index;
        for (const auto& s : stratum.subjects) {
            SubjectBlock blk;
            blk.id = s.id;
            blk.x << static_cast<double>(s.sex), static_cast<double>(s.race),
                static_cast<double>(s.educ_lh), static_cast<double>(s.educ_ah);
            blk.utu.setZero();
            index[s.id] = data.size();
            data.push_back(std::move(blk));
        }
        for (const auto& r : stratum.longitudinal) {
            if (r.factor != factor) continue;
            auto it = index.find(r.subject_id);
            if (it == index.end()) continue;
            auto [p1, p2] = legendre_basis(r.age, T);
            Eigen::Vector3d u(1.0, p1, p2);
            data[it->second].u.push_back(u);
            data[it->second].y.push_back(r.value);
            data[it->second].utu.noalias() += u * u.transpose();
        }
    }
    const int n = static_cast<int>(data.size());
    long n_obs = 0;
    for (const auto& blk : data) n_obs += static_cast<long>(blk.y.size());
    if (n_obs == 0) throw std::invalid_argument("fit_dpm_model: no observations for factor");

    Rng rng(cfg.seed);

    // per-subject least squares for empirical hyperpriors and initialization
    std::vector<Eigen::Vector3d> ls(static_cast<std::size_t>(n));
    {
        // covariate fit on pooled data first
        Eigen::Matrix<double, 7, 7> xtx = Eigen::Matrix<double, 7, 7>::Identity() * 1e-6;
        Eigen::Matrix<double, 7, 1> xty = Eigen::Matrix<double, 7, 1>::Zero();
        for (const auto& blk : data)
            for (std::size_t j = 0; j < blk.y.size(); ++j) {
                Eigen::Matrix<double, 7, 1> row;
                row << blk.u[j], blk.x;
                xtx.noalias() += row * row.transpose();
                xty.noalias() += row * blk.y[j];
            }
        Eigen::Matrix<double, 7, 1> pooled = xtx.ldlt().solve(xty);
        for (int i = 0; i < n; ++i) {
            const auto& blk = data[static_cast<std::size_t>(i)];
            Eigen::Matrix3d a = blk.utu + 1e-6 * Eigen::Matrix3d::Identity();
            Eigen::Vector3d b = Eigen::Vector3d::Zero();
            const double off = blk.x.dot(pooled.tail<4>());
            for (std::size_t j = 0; j < blk.y.size(); ++j) b += blk.u[j] * (blk.y[j] - off);
            ls[static_cast<std::size_t>(i)] = a.ldlt().solve(b);
        }
    }

    const int dim = 3;
    Eigen::Vector3d mu0;
    Eigen::Matrix3d D, R1;
    if (cfg.base_mean.size() == dim) {
        mu0 = cfg.base_mean;
        D = cfg.base_scale;
        R1 = cfg.iw_scale;
    } else {
        mu0.setZero();
        for (const auto& b : ls) mu0 += b;
        mu0 /= static_cast<double>(n);
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& b : ls) cov.noalias() += (b - mu0) * (b - mu0).transpose();
        cov /= std::max(1.0, static_cast<double>(n - 1));
        cov += 1e-6 * Eigen::Matrix3d::Identity();
        D = 4.0 * cov;
        R1 = cov;
    }
    const double c_df = cfg.iw_df > 0.0 ? cfg.iw_df : static_cast<double>(dim + 2);
    const Eigen::Matrix3d D_inv = D.inverse();

    int K = cfg.K;
    if (K <= 0) K = default_truncation(cfg.alpha_a / cfg.alpha_b, n);
    if (K < 2) throw std::invalid_argument("fit_dpm_model: K must be >= 2");

    // state
    std::vector<Eigen::Vector3d> b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) b[static_cast<std::size_t>(i)] = ls[static_cast<std::size_t>(i)];
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Vector3d> mu(static_cast<std::size_t>(K), mu0);
    std::vector<Eigen::Matrix3d> sig(static_cast<std::size_t>(K), R1);
    Eigen::Vector4d beta = Eigen::Vector4d::Zero();
    double sigma = 1.0;
    {
        double ssr = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto& blk = data[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < blk.y.size(); ++j) {
                const double r = blk.y[j] - blk.u[j].dot(b[static_cast<std::size_t>(i)]);
                ssr += r * r;
            }
        }
        sigma = std::sqrt(std::max(ssr / static_cast<double>(n_obs), 1e-4));
    }
    double alpha = cfg.alpha_a / cfg.alpha_b;
    Eigen::VectorXd V(K - 1);
    for (int k = 0; k < K - 1; ++k) V[k] = std::clamp(rbeta(rng, 1.0, alpha), 1e-12, 1.0 - 1e-12);
    Eigen::VectorXd pi = stick_breaking_weights(V);
    std::uniform_int_distribution<int> init_cluster(0, std::min(K, 5) - 1);
    for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = init_cluster(rng);

    std::ofstream diag;
    if (!cfg.diag_path.empty()) diag.open(cfg.diag_path);

    DpmFit fit;
    fit.t_scale = T;
    fit.factor = factor;
    for (const auto& blk : data) {
        fit.subject_ids.push_back(blk.id);
        fit.covariates.push_back(blk.x);
    }

    std::vector<int> members(static_cast<std::size_t>(K));
    std::vector<Eigen::LLT<Eigen::Matrix3d>> chol(static_cast<std::size_t>(K));
    std::vector<double> logdet(static_cast<std::size_t>(K));

    for (int iter = 0; iter < cfg.n_iter; ++iter) {
        // (i) cluster parameters
        std::fill(members.begin(), members.end(), 0);
        std::vector<Eigen::Vector3d> bsum(static_cast<std::size_t>(K), Eigen::Vector3d::Zero());
        for (int i = 0; i < n; ++i) {
            ++members[static_cast<std::size_t>(z[static_cast<std::size_t>(i)])];
            bsum[static_cast<std::size_t>(z[static_cast<std::size_t>(i)])] +=
                b[static_cast<std::size_t>(i)];
        }
        for (int k = 0; k < K; ++k) {
            const int m = members[static_cast<std::size_t>(k)];
            auto& sk = sig[static_cast<std::size_t>(k)];
            if (m == 0) {
                sig[static_cast<std::size_t>(k)] = riwish(rng, c_df, R1);
                mu[static_cast<std::size_t>(k)] = rmvnorm3(rng, mu0, D);
            } else {
                Eigen::Matrix3d sk_reg = sk;
                if (m < dim + 2) sk_reg += 1e-8 * Eigen::Matrix3d::Identity();
                const Eigen::Matrix3d sk_inv = sk_reg.inverse();
                Eigen::Matrix3d prec = D_inv + static_cast<double>(m) * sk_inv;
                Eigen::Vector3d lin = D_inv * mu0 + sk_inv * bsum[static_cast<std::size_t>(k)];
                mu[static_cast<std::size_t>(k)] = rmvnorm_canonical3(rng, prec, lin);

                Eigen::Matrix3d scat = R1;
                for (int i = 0; i < n; ++i) {
                    if (z[static_cast<std::size_t>(i)] != k) continue;
                    Eigen::Vector3d d = b[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(k)];
                    scat.noalias() += d * d.transpose();
                }
                if (m < dim + 2) scat += 1e-8 * Eigen::Matrix3d::Identity();
                sig[static_cast<std::size_t>(k)] = riwish(rng, c_df + static_cast<double>(m), scat);
            }
            chol[static_cast<std::size_t>(k)].compute(sig[static_cast<std::size_t>(k)]);
            const auto& Lk = chol[static_cast<std::size_t>(k)].matrixLLT();
            logdet[static_cast<std::size_t>(k)] =
                2.0 * (std::log(Lk(0, 0)) + std::log(Lk(1, 1)) + std::log(Lk(2, 2)));
        }

        // (ii) assignments
        for (int i = 0; i < n; ++i) {
            double logp[64];
            double best = -1e300;
            for (int k = 0; k < K; ++k) {
                Eigen::Vector3d d = b[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(k)];
                Eigen::Vector3d w = chol[static_cast<std::size_t>(k)].matrixL().solve(d);
                logp[k] = std::log(std::max(pi[k], 1e-300)) - 0.5 * w.squaredNorm() -
                          0.5 * logdet[static_cast<std::size_t>(k)];
                best = std::max(best, logp[k]);
            }
            double tot = 0.0;
            for (int k = 0; k < K; ++k) {
                logp[k] = std::exp(logp[k] - best);
                tot += logp[k];
            }
            double u = runif(rng) * tot;
            int pick = K - 1;
            for (int k = 0; k < K; ++k) {
                u -= logp[k];
                if (u <= 0.0) {
                    pick = k;
                    break;
                }
            }
            z[static_cast<std::size_t>(i)] = pick;
        }

        // (iii) sticks
        std::fill(members.begin(), members.end(), 0);
        for (int i = 0; i < n; ++i) ++members[static_cast<std::size_t>(z[static_cast<std::size_t>(i)])];
        {
            int tail = n;
            for (int k = 0; k < K - 1; ++k) {
                tail -= members[static_cast<std::size_t>(k)];
                V[k] = std::clamp(rbeta(rng, 1.0 + members[static_cast<std::size_t>(k)],
                                        alpha + static_cast<double>(tail)),
                                  1e-12, 1.0 - 1e-12);
            }
            pi = stick_breaking_weights(V);
        }

        // (iv) concentration
        alpha = update_concentration(rng, V, cfg.alpha_a, cfg.alpha_b);

        // (v) subject coefficients
        const double inv_s2 = 1.0 / (sigma * sigma);
        for (int i = 0; i < n; ++i) {
            const auto& blk = data[static_cast<std::size_t>(i)];
            const int k = z[static_cast<std::size_t>(i)];
            Eigen::Matrix3d sk_inv = sig[static_cast<std::size_t>(k)].inverse();
            Eigen::Matrix3d prec = sk_inv + inv_s2 * blk.utu;
            Eigen::Vector3d lin = sk_inv * mu[static_cast<std::size_t>(k)];
            const double off = blk.x.dot(beta);
            for (std::size_t j = 0; j < blk.y.size(); ++j)
                lin += inv_s2 * blk.u[j] * (blk.y[j] - off);
            b[static_cast<std::size_t>(i)] = rmvnorm_canonical3(rng, prec, lin);
        }

        // (vi) fixed effects and residual sd
        {
            Eigen::Matrix4d prec =
                Eigen::Matrix4d::Identity() / (cfg.fixed_prior_sd * cfg.fixed_prior_sd);
            Eigen::Vector4d lin = Eigen::Vector4d::Zero();
            for (int i = 0; i < n; ++i) {
                const auto& blk = data[static_cast<std::size_t>(i)];
                double rsum = 0.0;
                for (std::size_t j = 0; j < blk.y.size(); ++j)
                    rsum += blk.y[j] - blk.u[j].dot(b[static_cast<std::size_t>(i)]);
                prec.noalias() +=
                    inv_s2 * static_cast<double>(blk.y.size()) * blk.x * blk.x.transpose();
                lin += inv_s2 * blk.x * rsum;
            }
            Eigen::LLT<Eigen::Matrix4d> llt(prec);
            Eigen::Vector4d mean = llt.solve(lin);
            Eigen::Vector4d zv(rnorm(rng), rnorm(rng), rnorm(rng), rnorm(rng));
            beta = mean +
                   Eigen::Matrix4d(llt.matrixL()).transpose().triangularView<Eigen::Upper>().solve(zv);

            double ssr = 0.0;
            for (int i = 0; i < n; ++i) {
                const auto& blk = data[static_cast<std::size_t>(i)];
                const double off = blk.x.dot(beta);
                for (std::size_t j = 0; j < blk.y.size(); ++j) {
                    const double r = blk.y[j] - off - blk.u[j].dot(b[static_cast<std::size_t>(i)]);
                    ssr += r * r;
                }
            }
            const double prec_draw = rgamma(rng, cfg.sigma_a + 0.5 * static_cast<double>(n_obs),
                                            cfg.sigma_b + 0.5 * ssr);
            sigma = std::sqrt(1.0 / prec_draw);
        }

        int occupied = 0;
        for (int k = 0; k < K; ++k) occupied += members[static_cast<std::size_t>(k)] > 0 ? 1 : 0;

        if (diag.is_open()) {
            double ll = 0.0;
            for (int i = 0; i < n; ++i) {
                const auto& blk = data[static_cast<std::size_t>(i)];
                const double off = blk.x.dot(beta);
                for (std::size_t j = 0; j < blk.y.size(); ++j)
                    ll += norm_logpdf(blk.y[j],
                                      off + blk.u[j].dot(b[static_cast<std::size_t>(i)]), sigma);
            }
            diag << iter << "," << ll << "," << alpha << "," << occupied << "\n";
        }

        if (iter >= cfg.n_burn && (iter - cfg.n_burn) % cfg.thin == 0) {
            DpmDraw draw;
            draw.coef.resize(n, 3);
            for (int i = 0; i < n; ++i)
                draw.coef.row(i) = b[static_cast<std::size_t>(i)].transpose();
            draw.fixed = beta;
            draw.sigma = sigma;
            draw.alpha = alpha;
            draw.occupied = occupied;
            draw.weights = pi;
            draw.mu = mu;
            draw.cov = sig;
            fit.draws.push_back(std::move(draw));
        }
    }
    return fit;
}

std::vector<FeatureTriple> posterior_features(const DpmFit& fit, const std::string& subject_id,
                                              double t, int M) {
    if (M < 1) throw std::invalid_argument("posterior_features: M must be >= 1");
    auto it = std::find(fit.subject_ids.begin(), fit.subject_ids.end(), subject_id);
    if (it == fit.subject_ids.end())
        throw std::invalid_argument("posterior_features: unknown subject '" + subject_id + "'");
    const Eigen::Index i = it - fit.subject_ids.begin();
    const std::size_t D = fit.draws.size();
    if (D == 0) throw std::invalid_argument("posterior_features: no retained draws");

    std::vector<FeatureTriple> out;
    for (int m = 0; m < M; ++m) {
        // evenly spaced over the retained draws, always including the last
        const std::size_t idx =
            ((static_cast<std::size_t>(m) + 1) * D) / static_cast<std::size_t>(M) - 1;
        const DpmDraw& draw = fit.draws[idx];
        TrajectoryCoefficients c;
        c.b0 = draw.coef(i, 0);
        c.b1 = draw.coef(i, 1);
        c.b2 = draw.coef(i, 2);
        c.fixed_offset = fit.covariates[static_cast<std::size_t>(i)].dot(draw.fixed);
        c.scale = fit.t_scale;
        out.push_back(trajectory_features(c, t));
    }
    return out;
}

std::vector<FeatureDraw> compute_feature_table(const Cohort& dead, const DpmConfig& cfg, int M) {
    std::vector<FeatureDraw> rows;
    for (int stratum = 0; stratum <= 1; ++stratum) {
        Cohort sub;
        sub.t_max = dead.t_max;
        sub.factor_names = dead.factor_names;
        for (const auto& e : dead.events) {
            if (!e.dead || !e.delta || *e.delta != stratum) continue;
            sub.events.push_back(e);
            sub.subjects.push_back(*dead.find_subject(e.subject_id));
        }
        if (sub.subjects.empty()) continue;
        for (const auto& r : dead.longitudinal)
            for (const auto& s : sub.subjects)
                if (s.id == r.subject_id) {
                    sub.longitudinal.push_back(r);
                    break;
                }
        for (int g = 0; g < dead.num_factors(); ++g) {
            DpmConfig c = cfg;
            c.seed = derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(stratum),
                                            static_cast<std::uint64_t>(g)});
            DpmFit fit = fit_dpm_model(sub, g, c);
            for (const auto& e : sub.events) {
                auto triples = posterior_features(fit, e.subject_id, *e.death_age, M);
                for (int m = 0; m < M; ++m)
                    rows.push_back({e.subject_id, g, m + 1,
                                    triples[static_cast<std::size_t>(m)].value,
                                    triples[static_cast<std::size_t>(m)].slope,
                                    triples[static_cast<std::size_t>(m)].area});
            }
        }
    }
    return rows;
}

void write_feature_csv(const std::vector<FeatureDraw>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "subject_id,factor,draw_m,value,slope,area\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.12g,%.12g,%.12g\n", r.subject_id.c_str(),
                      r.factor, r.draw_m, r.value, r.slope, r.area);
        out << buf;
    }
}

std::vector<FeatureDraw> read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<FeatureDraw> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        FeatureDraw r;
        std::size_t pos = 0;
        auto next = [&]() {
            std::size_t comma = line.find(',', pos);
            std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
            pos = comma == std::string::npos ? line.size() : comma + 1;
            return tok;
        };
        try {
            r.subject_id = next();
            r.factor = std::stoi(next());
            r.draw_m = std::stoi(next());
            r.value = std::stod(next());
            r.slope = std::stod(next());
            r.area = std::stod(next());
        } catch (const std::exception&) {
            throw std::runtime_error(path + ": malformed row at line " + std::to_string(lineno));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace adjud
