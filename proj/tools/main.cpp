#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adjud/bart.hpp"
#include "adjud/cohort.hpp"
#include "adjud/config.hpp"
#include "adjud/dpm.hpp"
#include "adjud/joint.hpp"
#include "adjud/pipeline.hpp"
#include "adjud/sim.hpp"

namespace fs = std::filesystem;
using namespace adjud;

namespace {

Config load_config(const std::string& path) {
    if (path.empty()) return Config{};
    return Config::from_file(path);
}

Cohort read_cohort_dir(const std::string& dir) {
    return read_cohort((fs::path(dir) / "longitudinal.csv").string(),
                       (fs::path(dir) / "subjects.jsonl").string(),
                       (fs::path(dir) / "events.csv").string());
}

void write_cohort_dir(const Cohort& cohort, const std::string& dir) {
    fs::create_directories(dir);
    write_cohort(cohort, (fs::path(dir) / "longitudinal.csv").string(),
                 (fs::path(dir) / "subjects.jsonl").string(),
                 (fs::path(dir) / "events.csv").string());
}

DpmConfig dpm_from_config(const Config& cfg, std::uint64_t seed) {
    DpmConfig d;
    d.K = static_cast<int>(cfg.get_int("dpm.K", d.K));
    d.n_iter = static_cast<int>(cfg.get_int("dpm.n_iter", d.n_iter));
    d.n_burn = static_cast<int>(cfg.get_int("dpm.n_burn", d.n_burn));
    d.thin = static_cast<int>(cfg.get_int("dpm.thin", d.thin));
    d.alpha_a = cfg.get_double("dpm.alpha_a", d.alpha_a);
    d.alpha_b = cfg.get_double("dpm.alpha_b", d.alpha_b);
    d.seed = seed;
    return d;
}

BartConfig bart_from_config(const Config& cfg, std::uint64_t seed) {
    BartConfig b;
    b.m = static_cast<int>(cfg.get_int("bart.m", b.m));
    b.n_iter = static_cast<int>(cfg.get_int("bart.n_iter", b.n_iter));
    b.n_burn = static_cast<int>(cfg.get_int("bart.n_burn", b.n_burn));
    b.alpha_split = cfg.get_double("bart.alpha_split", b.alpha_split);
    b.beta_depth = cfg.get_double("bart.beta_depth", b.beta_depth);
    b.k_sigma = cfg.get_double("bart.k_sigma", b.k_sigma);
    b.seed = seed;
    return b;
}

JointConfig joint_from_config(const Config& cfg, std::uint64_t seed) {
    JointConfig j;
    j.use_value = cfg.get_bool("joint.use_value", j.use_value);
    j.use_slope = cfg.get_bool("joint.use_slope", j.use_slope);
    j.use_area = cfg.get_bool("joint.use_area", j.use_area);
    j.n_interior_knots = static_cast<int>(cfg.get_int("joint.n_interior_knots", j.n_interior_knots));
    j.n_warmup = static_cast<int>(cfg.get_int("joint.n_warmup", j.n_warmup));
    j.n_iter = static_cast<int>(cfg.get_int("joint.n_iter", j.n_iter));
    j.leapfrog = static_cast<int>(cfg.get_int("joint.leapfrog", j.leapfrog));
    j.seed = seed;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adjudication-adjusted time-to-event toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 1;
    int threads = 1;
    std::string config_path;
    app.add_option("--seed", seed, "root random seed");
    app.add_option("--threads", threads, "worker threads");
    app.add_option("--config", config_path, "key = value configuration file");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic cohort");
    std::string sim_out;
    sim_cmd->add_option("--out", sim_out, "output directory")->required();

    // fit-risk
    auto* risk_cmd = app.add_subcommand("fit-risk", "DPM risk-factor model, feature draws");
    std::string risk_in, risk_out, risk_diag;
    int risk_m = 3;
    risk_cmd->add_option("--cohort", risk_in, "cohort directory")->required();
    risk_cmd->add_option("--out", risk_out, "feature CSV path")->required();
    risk_cmd->add_option("--draws", risk_m, "feature draws M");
    risk_cmd->add_option("--diag", risk_diag, "sampler diagnostics log");

    // fit-bart
    auto* bart_cmd = app.add_subcommand("fit-bart", "BART probit adjudication weights");
    std::string bart_in, bart_features, bart_out, bart_forest;
    int bart_k = 3;
    bart_cmd->add_option("--cohort", bart_in, "cohort directory (train = adjudicated dead)")
        ->required();
    bart_cmd->add_option("--features", bart_features, "feature CSV from fit-risk")->required();
    bart_cmd->add_option("--out", bart_out, "weight CSV path")->required();
    bart_cmd->add_option("--prob-draws", bart_k, "probability draws K");
    bart_cmd->add_option("--forests", bart_forest, "forest NDJSON output");

    // fit-joint
    auto* joint_cmd = app.add_subcommand("fit-joint", "joint longitudinal-survival model");
    std::string joint_in, joint_out;
    joint_cmd->add_option("--cohort", joint_in, "cohort directory")->required();
    joint_cmd->add_option("--out", joint_out, "posterior summary CSV")->required();

    // pipeline run
    auto* pipe_cmd = app.add_subcommand("pipeline", "adjudication pipeline");
    auto* pipe_run = pipe_cmd->add_subcommand("run", "run Steps 1-6");
    std::string pipe_config, pipe_out;
    bool pipe_resume = false;
    pipe_run->add_option("--config", pipe_config, "pipeline configuration")->required();
    pipe_run->add_option("--out", pipe_out, "output directory")->required();
    pipe_run->add_flag("--resume", pipe_resume, "reuse persisted per-fit estimates");

    // study
    auto* study_cmd = app.add_subcommand("study", "replicated simulation study");
    std::string study_out;
    int study_r = 100;
    study_cmd->add_option("--out", study_out, "output directory")->required();
    study_cmd->add_option("--replicates", study_r, "number of replicates R");

    // report
    auto* report_cmd = app.add_subcommand("report", "re-emit table CSVs from metrics.csv");
    std::string report_in, report_out;
    report_cmd->add_option("--in", report_in, "directory holding metrics.csv")->required();
    report_cmd->add_option("--out", report_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = load_config(config_path);
        if (cfg.has("seed") && !app.count("--seed"))
            seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
        if (cfg.has("threads") && !app.count("--threads"))
            threads = static_cast<int>(cfg.get_int("threads"));

        if (*sim_cmd) {
            SimulationTruth truth = SimulationTruth::from_config(cfg);
            Cohort cohort = simulate_cohort(truth, seed);
            write_cohort_dir(cohort, sim_out);
            long dead = 0, cvd = 0;
            for (const auto& e : cohort.events) {
                dead += e.dead ? 1 : 0;
                cvd += e.event_indicator;
            }
            std::printf("simulated %zu subjects (%ld dead, %ld CVD deaths) into %s\n",
                        cohort.subjects.size(), dead, cvd, sim_out.c_str());
        } else if (*risk_cmd) {
            Cohort cohort = read_cohort_dir(risk_in);
            DpmConfig dc = dpm_from_config(cfg, seed);
            dc.diag_path = risk_diag;
            auto rows = compute_feature_table(filter_dead(cohort), dc, risk_m);
            write_feature_csv(rows, risk_out);
            std::printf("wrote %zu feature rows to %s\n", rows.size(), risk_out.c_str());
        } else if (*bart_cmd) {
            Cohort cohort = read_cohort_dir(bart_in);
            Cohort dead = filter_dead(cohort);
            auto features = read_feature_csv(bart_features);
            int M = 0;
            for (const auto& r : features) M = std::max(M, r.draw_m);
            const int G = cohort.num_factors();
            std::map<std::pair<std::string, int>, std::vector<FeatureTriple>> feat;
            for (const auto& r : features) {
                auto& v = feat[{r.subject_id, r.draw_m}];
                if (v.empty()) v.resize(static_cast<std::size_t>(G));
                v[static_cast<std::size_t>(r.factor)] = {r.value, r.slope, r.area, 0.0};
            }
            std::ofstream out(bart_out);
            out << "subject_id,m,k,w_hat\n";
            for (int stratum = 0; stratum <= 1; ++stratum) {
                std::vector<const EventRecord*> train, pred;
                for (const auto& e : dead.events) {
                    if (!e.delta || *e.delta != stratum) continue;
                    (e.c_adjudicated ? train : pred).push_back(&e);
                }
                if (train.empty() || pred.empty()) continue;
                for (int m = 1; m <= M; ++m) {
                    Eigen::MatrixXd X(static_cast<Eigen::Index>(train.size()), 10 + 3 * G);
                    std::vector<int> labels;
                    auto fill_row = [&](const EventRecord& e) {
                        const Subject& s = *cohort.find_subject(e.subject_id);
                        const auto& f = feat.at({e.subject_id, m});
                        Eigen::VectorXd row(10 + 3 * G);
                        row << static_cast<double>(s.sex), static_cast<double>(s.race),
                            static_cast<double>(s.educ_lh), static_cast<double>(s.educ_ah),
                            s.bmi, s.baseline_age, static_cast<double>(s.nonfatal_counts[0]),
                            static_cast<double>(s.nonfatal_counts[1]),
                            static_cast<double>(s.nonfatal_counts[2]), *e.death_age,
                            Eigen::VectorXd::Zero(3 * G);
                        for (int g = 0; g < G; ++g) {
                            row[10 + 3 * g] = f[static_cast<std::size_t>(g)].value;
                            row[10 + 3 * g + 1] = f[static_cast<std::size_t>(g)].slope;
                            row[10 + 3 * g + 2] = f[static_cast<std::size_t>(g)].area;
                        }
                        return row;
                    };
                    for (std::size_t i = 0; i < train.size(); ++i) {
                        X.row(static_cast<Eigen::Index>(i)) = fill_row(*train[i]).transpose();
                        labels.push_back(*train[i]->c_adjudicated);
                    }
                    BartConfig bc = bart_from_config(
                        cfg, derive_seed(seed, {2, static_cast<std::uint64_t>(stratum),
                                                static_cast<std::uint64_t>(m)}));
                    BartFit fit = fit_bart_probit(X, labels, bc);
                    if (!bart_forest.empty())
                        write_forest_ndjson(fit, bart_forest + "." + std::to_string(stratum) +
                                                     "." + std::to_string(m));
                    const std::size_t D = fit.draws.size();
                    for (int k = 1; k <= bart_k; ++k) {
                        const std::size_t idx = (static_cast<std::size_t>(k) * D) /
                                                    static_cast<std::size_t>(bart_k) - 1;
                        for (const auto* e : pred) {
                            char buf[128];
                            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.12g\n",
                                          e->subject_id.c_str(), m, k,
                                          predict_probability(fit.draws[idx], fill_row(*e)));
                            out << buf;
                        }
                    }
                }
            }
            std::printf("wrote weights to %s\n", bart_out.c_str());
        } else if (*joint_cmd) {
            Cohort cohort = read_cohort_dir(joint_in);
            JointConfig jc = joint_from_config(cfg, seed);
            JointFitResult fit = fit_joint_model(cohort, jc);
            write_posterior_summary(fit, joint_out);
            std::printf("accept rate %.3f, step %.4g; wrote %s\n", fit.accept_rate, fit.step_size,
                        joint_out.c_str());
        } else if (*pipe_cmd) {
            Config pcfg = Config::from_file(pipe_config);
            PipelineConfig pc;
            pc.seed = pcfg.has("seed") ? static_cast<std::uint64_t>(pcfg.get_int("seed")) : seed;
            pc.M = static_cast<int>(pcfg.get_int("pipeline.M", 3));
            pc.K = static_cast<int>(pcfg.get_int("pipeline.K", 3));
            pc.L = static_cast<int>(pcfg.get_int("pipeline.L", 3));
            pc.workers = threads;
            pc.out_dir = pipe_out;
            pc.resume = pipe_resume;
            pc.dpm = dpm_from_config(pcfg, 0);
            pc.bart = bart_from_config(pcfg, 0);
            pc.joint = joint_from_config(pcfg, 0);
            Cohort a = read_cohort_dir(pcfg.get_string("cohort_a"));
            Cohort b = read_cohort_dir(pcfg.get_string("cohort_b"));
            PipelineResult res = run_pipeline(a, b, pc);
            std::printf("pooled %zu parameters over N=%ld fits into %s\n", res.rows.size(), res.N,
                        pipe_out.c_str());
        } else if (*study_cmd) {
            SimulationTruth truth = SimulationTruth::from_config(cfg);
            Config scfg = cfg;
            scfg.set("seed", std::to_string(seed));
            scfg.set("threads", std::to_string(threads));
            MetricsTable table = run_simulation_study(
                truth, study_r, {"adjudicated", "unadjudicated", "pipeline"}, scfg);
            report_tables(table, study_out);
            std::printf("study complete (%d failed replicates); tables in %s\n",
                        table.failed_replicates, study_out.c_str());
        } else if (*report_cmd) {
            MetricsTable table = read_tables(report_in);
            report_tables(table, report_out);
            std::printf("re-emitted tables to %s\n", report_out.c_str());
        }
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
