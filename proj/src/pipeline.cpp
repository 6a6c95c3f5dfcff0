#include "adjud/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "adjud/parallel.hpp"
#include "adjud/stats.hpp"

namespace adjud {

int generate_adjudication(double w_hat, double u) {
    if (w_hat < 0.0 || w_hat > 1.0)
        throw std::invalid_argument("generate_adjudication: w_hat outside [0,1]");
    if (u < 0.0 || u >= 1.0) throw std::invalid_argument("generate_adjudication: u outside [0,1)");
    return u < w_hat ? 1 : 0;
}

std::pair<double, double> mcse(const std::vector<double>& estimates) {
    if (estimates.empty()) throw std::invalid_argument("mcse: empty vector");
    const double n = static_cast<double>(estimates.size());
    const double m = mean(estimates);
    double sst = 0.0;
    for (double e : estimates) sst += (e - m) * (e - m);
    return {m, std::sqrt(sst / n / n)};
}

std::pair<double, double> credible_interval(double estimate, double mcse_value) {
    if (mcse_value < 0.0) throw std::invalid_argument("credible_interval: negative mcse");
    return {estimate - 1.96 * mcse_value, estimate + 1.96 * mcse_value};
}

double epsilon_for_estimate(double estimate, double eps_min) {
    if (estimate == 0.0) return eps_min;
    return std::pow(10.0, std::floor(std::log10(std::abs(estimate))) - 1.0);
}

ChooseNResult choose_n(const std::map<std::string, double>& sst_pilot,
                       const std::map<std::string, double>& epsilon) {
    if (sst_pilot.empty()) throw std::invalid_argument("choose_n: missing pilot");
    ChooseNResult res;
    for (const auto& [p, sst] : sst_pilot) {
        auto it = epsilon.find(p);
        if (it == epsilon.end()) throw std::invalid_argument("choose_n: no epsilon for " + p);
        if (!(it->second > 0.0)) throw std::invalid_argument("choose_n: epsilon <= 0 for " + p);
        long np = sst <= 0.0 ? 1 : static_cast<long>(std::ceil(std::sqrt(sst) / it->second));
        np = std::max<long>(np, 1);
        res.per_parameter[p] = np;
        res.N = std::max(res.N, np);
    }
    // balanced factor triple M <= K <= L with M*K*L >= N, minimizing L/M
    double best = 1e300;
    long best_prod = std::numeric_limits<long>::max();
    for (long m = 1; m * m * m <= res.N || m == 1; ++m) {
        for (long k = m; m * k * k <= res.N || k == m; ++k) {
            long l = (res.N + m * k - 1) / (m * k);
            l = std::max(l, k);
            const double ratio = static_cast<double>(l) / static_cast<double>(m);
            const long prod = m * k * l;
            if (ratio < best - 1e-12 || (std::abs(ratio - best) <= 1e-12 && prod < best_prod)) {
                best = ratio;
                best_prod = prod;
                res.M = static_cast<int>(m);
                res.K = static_cast<int>(k);
                res.L = static_cast<int>(l);
            }
            if (k > res.N) break;
        }
        if (m > res.N) break;
    }
    return res;
}

CostEstimate estimate_cost(double t_feature, double t_fit, double t_pred, double t_joint, int M,
                           long N, int cap) {
    if (t_feature < 0 || t_fit < 0 || t_pred < 0 || t_joint < 0)
        throw std::invalid_argument("estimate_cost: negative timing");
    if (cap < 1) throw std::invalid_argument("estimate_cost: cap < 1");
    CostEstimate c;
    c.ideal = t_feature + t_fit + t_pred + t_joint;
    const long mb = (M + cap - 1) / cap;
    const long nb = (N + cap - 1) / cap;
    c.realistic = t_feature + static_cast<double>(mb) * t_fit + t_pred +
                  static_cast<double>(nb) * t_joint;
    return c;
}

namespace {

struct FeatureKey {
    std::string id;
    int m;
    bool operator<(const FeatureKey& o) const {
        return id < o.id || (id == o.id && m < o.m);
    }
};

// fixed BART design column order shared by train and predict
Eigen::VectorXd bart_row(const Subject& s, double death_age,
                         const std::vector<FeatureTriple>& feats) {
    const int G = static_cast<int>(feats.size());
    Eigen::VectorXd row(10 + 3 * G);
    row << static_cast<double>(s.sex), static_cast<double>(s.race),
        static_cast<double>(s.educ_lh), static_cast<double>(s.educ_ah), s.bmi, s.baseline_age,
        static_cast<double>(s.nonfatal_counts[0]), static_cast<double>(s.nonfatal_counts[1]),
        static_cast<double>(s.nonfatal_counts[2]), death_age,
        Eigen::VectorXd::Zero(3 * G);
    for (int g = 0; g < G; ++g) {
        row[10 + 3 * g] = feats[static_cast<std::size_t>(g)].value;
        row[10 + 3 * g + 1] = feats[static_cast<std::size_t>(g)].slope;
        row[10 + 3 * g + 2] = feats[static_cast<std::size_t>(g)].area;
    }
    return row;
}

std::vector<ParamSummary> read_posterior_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(in, line);
    if (line != "parameter,mean,sd,q025,q975,ess,rhat")
        throw std::runtime_error(path + ": unexpected header");
    std::vector<ParamSummary> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ParamSummary s;
        std::size_t pos = 0;
        auto next = [&]() {
            std::size_t comma = line.find(',', pos);
            std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
            pos = comma == std::string::npos ? line.size() : comma + 1;
            return tok;
        };
        s.name = next();
        s.mean = std::stod(next());
        s.sd = std::stod(next());
        s.q025 = std::stod(next());
        s.q975 = std::stod(next());
        s.ess = std::stod(next());
        s.rhat = std::stod(next());
        out.push_back(std::move(s));
    }
    return out;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

PipelineResult run_pipeline(const Cohort& cohort_a, const Cohort& cohort_b,
                            const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.M < 1 || cfg.K < 1 || cfg.L < 1)
        throw std::invalid_argument("run_pipeline: M, K, L must be >= 1");
    const int G = cohort_b.num_factors();

    const bool persist = !cfg.out_dir.empty();
    if (persist) fs::create_directories(fs::path(cfg.out_dir) / "fits");

    // dead subsets
    Cohort a_dead = filter_dead(cohort_a);
    Cohort b_dead = filter_dead(cohort_b);
    for (const auto& e : a_dead.events)
        if (!e.c_adjudicated)
            throw std::invalid_argument("run_pipeline: cohort A subject '" + e.subject_id +
                                        "' lacks adjudicated status");
    for (const auto& e : b_dead.events)
        if (!e.delta)
            throw std::invalid_argument("run_pipeline: cohort B subject '" + e.subject_id +
                                        "' lacks delta");

    // Step 1: posterior features on the pooled dead subjects, per Delta stratum
    double t0 = now_seconds();
    Cohort pooled = a_dead;
    for (const auto& s : b_dead.subjects) pooled.subjects.push_back(s);
    for (const auto& r : b_dead.longitudinal) pooled.longitudinal.push_back(r);
    for (const auto& e : b_dead.events) pooled.events.push_back(e);
    DpmConfig dpm_cfg = cfg.dpm;
    dpm_cfg.seed = derive_seed(cfg.seed, {1});
    std::vector<FeatureDraw> feature_rows = compute_feature_table(pooled, dpm_cfg, cfg.M);
    if (persist) write_feature_csv(feature_rows, (fs::path(cfg.out_dir) / "features.csv").string());

    std::map<FeatureKey, std::vector<FeatureTriple>> features;
    for (const auto& r : feature_rows) {
        auto& v = features[{r.subject_id, r.draw_m}];
        if (v.empty()) v.resize(static_cast<std::size_t>(G));
        v[static_cast<std::size_t>(r.factor)] = {r.value, r.slope, r.area, 0.0};
    }
    PipelineResult result;
    result.M = cfg.M;
    result.K = cfg.K;
    result.L = cfg.L;
    result.N = static_cast<long>(cfg.M) * cfg.K * cfg.L;
    result.t_feature = now_seconds() - t0;

    // sorted dead-B ids per stratum for deterministic iteration
    std::vector<std::string> b_ids[2];
    for (const auto& e : b_dead.events) b_ids[static_cast<std::size_t>(*e.delta)].push_back(e.subject_id);
    for (auto& v : b_ids) std::sort(v.begin(), v.end());

    // Step 2: per (stratum, m) BART fit on A, K thinned probability draws for B
    // w_hat[(stratum, m-1)][k-1][subject index within b_ids[stratum]]
    std::vector<std::vector<std::vector<double>>> w_hat[2];
    w_hat[0].resize(static_cast<std::size_t>(cfg.M));
    w_hat[1].resize(static_cast<std::size_t>(cfg.M));

    std::ofstream weight_csv;
    if (persist && cfg.write_weights) {
        weight_csv.open((fs::path(cfg.out_dir) / "weights.csv").string());
        weight_csv << "subject_id,m,k,w_hat\n";
    }

    for (int stratum = 0; stratum <= 1; ++stratum) {
        std::vector<const EventRecord*> train;
        for (const auto& e : a_dead.events)
            if (*e.delta == stratum) train.push_back(&e);
        std::sort(train.begin(), train.end(),
                  [](const EventRecord* x, const EventRecord* y) {
                      return x->subject_id < y->subject_id;
                  });
        for (int m = 1; m <= cfg.M; ++m) {
            auto& slot = w_hat[stratum][static_cast<std::size_t>(m - 1)];
            slot.assign(static_cast<std::size_t>(cfg.K),
                        std::vector<double>(b_ids[stratum].size(), 0.0));
            if (train.empty() || b_ids[stratum].empty()) continue;

            Eigen::MatrixXd X(static_cast<Eigen::Index>(train.size()), 10 + 3 * G);
            std::vector<int> labels;
            for (std::size_t i = 0; i < train.size(); ++i) {
                const auto* e = train[i];
                X.row(static_cast<Eigen::Index>(i)) =
                    bart_row(*cohort_a.find_subject(e->subject_id), *e->death_age,
                             features.at({e->subject_id, m}))
                        .transpose();
                labels.push_back(*e->c_adjudicated);
            }
            bool any0 = false, any1 = false;
            for (int c : labels) {
                any0 |= c == 0;
                any1 |= c == 1;
            }
            double tf = now_seconds();
            if (!any0 || !any1) {
                // degenerate training stratum: constant smoothed probability
                const double p = (std::count(labels.begin(), labels.end(), 1) + 0.5) /
                                 (static_cast<double>(labels.size()) + 1.0);
                for (int k = 0; k < cfg.K; ++k)
                    for (auto& w : slot[static_cast<std::size_t>(k)]) w = p;
                result.t_bart_fit += now_seconds() - tf;
                continue;
            }
            BartConfig bart_cfg = cfg.bart;
            bart_cfg.seed = derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(stratum),
                                                   static_cast<std::uint64_t>(m)});
            BartFit bfit = fit_bart_probit(X, labels, bart_cfg);
            result.t_bart_fit += now_seconds() - tf;
            if (persist && cfg.write_forests)
                write_forest_ndjson(bfit, (fs::path(cfg.out_dir) / ("forest_" +
                                                                    std::to_string(stratum) + "_" +
                                                                    std::to_string(m) + ".ndjson"))
                                              .string());

            tf = now_seconds();
            const std::size_t D = bfit.draws.size();
            for (int k = 1; k <= cfg.K; ++k) {
                const std::size_t idx =
                    (static_cast<std::size_t>(k) * D) / static_cast<std::size_t>(cfg.K) - 1;
                const Forest& forest = bfit.draws[idx];
                for (std::size_t i = 0; i < b_ids[stratum].size(); ++i) {
                    const std::string& id = b_ids[stratum][i];
                    const EventRecord* e = b_dead.find_event(id);
                    const double w = predict_probability(
                        forest, bart_row(*cohort_b.find_subject(id), *e->death_age,
                                         features.at({id, m})));
                    slot[static_cast<std::size_t>(k - 1)][i] = w;
                    if (weight_csv.is_open()) {
                        char buf[128];
                        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.12g\n", id.c_str(), m, k, w);
                        weight_csv << buf;
                    }
                }
            }
            result.t_bart_pred += now_seconds() - tf;
        }
    }

    // Step 3: adjudication sets; Step 4: joint fits
    std::vector<AdjudicationSet> sets(static_cast<std::size_t>(result.N));
    for (int m = 1; m <= cfg.M; ++m)
        for (int k = 1; k <= cfg.K; ++k)
            for (int l = 1; l <= cfg.L; ++l) {
                const std::size_t idx = static_cast<std::size_t>(
                    ((m - 1) * cfg.K + (k - 1)) * cfg.L + (l - 1));
                AdjudicationSet& set = sets[idx];
                set.m = m;
                set.k = k;
                set.l = l;
                Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(m),
                                               static_cast<std::uint64_t>(k),
                                               static_cast<std::uint64_t>(l)}));
                for (int stratum = 0; stratum <= 1; ++stratum)
                    for (std::size_t i = 0; i < b_ids[stratum].size(); ++i) {
                        const double u = runif(rng);
                        const double w = w_hat[stratum][static_cast<std::size_t>(m - 1)]
                                              [static_cast<std::size_t>(k - 1)][i];
                        set.a[b_ids[stratum][i]] = generate_adjudication(w, u);
                    }
                for (const auto& e : cohort_b.events) {
                    auto it = set.a.find(e.subject_id);
                    set.a_star[e.subject_id] = it == set.a.end() ? 0 : it->second;
                }
            }

    std::vector<std::vector<ParamSummary>> fit_summaries(static_cast<std::size_t>(result.N));
    const double t_joint_start = now_seconds();
    parallel_for(sets.size(), std::max(1, cfg.workers), [&](std::size_t idx) {
        const AdjudicationSet& set = sets[idx];
        std::string fit_path;
        if (persist) {
            fit_path = (fs::path(cfg.out_dir) / "fits" /
                        (std::to_string(set.m) + "_" + std::to_string(set.k) + "_" +
                         std::to_string(set.l)))
                           .string();
            fs::create_directories(fit_path);
            fit_path += "/summary.csv";
            if (cfg.resume && fs::exists(fit_path)) {
                try {
                    fit_summaries[idx] = read_posterior_summary(fit_path);
                    return;
                } catch (const std::exception&) {
                    // fall through and refit
                }
            }
        }
        JointConfig jc = cfg.joint;
        jc.seed = derive_seed(cfg.seed, {4, static_cast<std::uint64_t>(set.m),
                                         static_cast<std::uint64_t>(set.k),
                                         static_cast<std::uint64_t>(set.l)});
        JointFitResult fit;
        try {
            fit = fit_joint_model(cohort_b, jc, &set.a_star);
        } catch (const std::exception& ex) {
            throw std::runtime_error("joint fit (" + std::to_string(set.m) + "," +
                                     std::to_string(set.k) + "," + std::to_string(set.l) +
                                     ") failed: " + ex.what());
        }
        if (persist) write_posterior_summary(fit, fit_path);
        fit_summaries[idx] = std::move(fit.summaries);
    });
    result.t_joint = now_seconds() - t_joint_start;

    // Steps 5-6: pool in fixed fit order
    std::vector<std::string> track = cfg.track;
    if (track.empty())
        for (const auto& s : fit_summaries.front())
            if (s.name.rfind("gamma_", 0) == 0 || s.name.rfind("alpha_", 0) == 0)
                track.push_back(s.name);

    for (const auto& p : track) {
        std::vector<double> est;
        for (const auto& summaries : fit_summaries) {
            bool found = false;
            for (const auto& s : summaries)
                if (s.name == p) {
                    est.push_back(s.mean);
                    found = true;
                    break;
                }
            if (!found) throw std::runtime_error("run_pipeline: parameter '" + p + "' missing");
        }
        auto [pooled_est, se] = mcse(est);
        auto [lo, hi] = credible_interval(pooled_est, se);
        result.rows.push_back({p, pooled_est, se, lo, hi});
        result.per_fit_estimates[p] = std::move(est);
    }

    if (persist) {
        write_result_csv(result, (fs::path(cfg.out_dir) / "result.csv").string());

        nlohmann::json manifest;
        manifest["version"] = "0.1.0";
        manifest["seed"] = cfg.seed;
        manifest["M"] = cfg.M;
        manifest["K"] = cfg.K;
        manifest["L"] = cfg.L;
        manifest["N"] = result.N;
        manifest["timings"]["t_feature"] = result.t_feature;
        manifest["timings"]["t_bart_fit"] = result.t_bart_fit;
        manifest["timings"]["t_bart_pred"] = result.t_bart_pred;
        manifest["timings"]["t_joint"] = result.t_joint;
        for (const auto& row : result.rows) {
            const auto& est = result.per_fit_estimates.at(row.parameter);
            double sst = 0.0;
            for (double e : est) sst += (e - row.estimate) * (e - row.estimate);
            const double eps = epsilon_for_estimate(row.estimate, cfg.epsilon_min);
            auto& jp = manifest["n_selection"][row.parameter];
            jp["sst"] = sst;
            jp["epsilon"] = eps;
            jp["n_literal"] = sst <= 0.0 ? 1 : static_cast<long>(std::ceil(std::sqrt(sst) / eps));
            jp["n_variance_rule"] =
                sst <= 0.0 ? 1
                           : static_cast<long>(std::ceil(
                                 (sst / static_cast<double>(result.N)) / (eps * eps)));
        }
        std::ofstream mf((fs::path(cfg.out_dir) / "manifest.json").string());
        mf << manifest.dump(2) << "\n";
    }
    return result;
}

void write_result_csv(const PipelineResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "parameter,estimate,mcse,lo,hi\n";
    char buf[256];
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g\n", r.parameter.c_str(),
                      r.estimate, r.mcse, r.lo, r.hi);
        out << buf;
    }
}

}  // namespace adjud
