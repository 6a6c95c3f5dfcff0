#include "adjud/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include "adjud/parallel.hpp"
#include "adjud/stats.hpp"

namespace adjud {

namespace {
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

SimulationTruth SimulationTruth::defaults() {
    SimulationTruth t;
    const int G = 3;
    t.beta.resize(G, 7);
    //          int   P1    P2   sex  race   lh   ah
    t.beta << 125.0, 8.0, 2.0, -3.0, 4.0, 2.0, -2.0,      // bp
        100.0, 6.0, 3.0, -2.0, 3.0, 3.0, -3.0,            // glucose
        210.0, 10.0, -4.0, 5.0, 2.0, 4.0, -5.0;           // chol

    Eigen::VectorXd sds(3 * G);
    sds << 9.0, 3.0, 1.5, 12.0, 4.0, 2.0, 30.0, 8.0, 4.0;
    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(3 * G, 3 * G);
    for (int g = 0; g < G; ++g) corr(3 * g, 3 * g + 1) = corr(3 * g + 1, 3 * g) = 0.2;
    for (int g = 0; g < G; ++g)
        for (int h = g + 1; h < G; ++h) corr(3 * g, 3 * h) = corr(3 * h, 3 * g) = 0.3;
    t.d_sim = sds.asDiagonal() * corr * sds.asDiagonal();

    t.sigma.resize(G);
    t.sigma << 8.0, 10.0, 20.0;

    t.gamma.resize(6);
    t.gamma << 0.05, 0.02, 0.035, -0.489, 0.474, -0.470;
    t.alpha.resize(G);
    t.alpha << -0.050, 0.000, 0.032;
    t.log_hazard_intercept = -3.7;

    auto [p1, p0] = calibrate_delta(0.581, 0.852, 0.289);
    t.delta1 = Eigen::VectorXd::Zero(5 + G);
    t.delta0 = Eigen::VectorXd::Zero(5 + G);
    t.delta1[0] = std::log(p1 / (1.0 - p1));
    t.delta0[0] = std::log(p0 / (1.0 - p0));
    return t;
}

SimulationTruth SimulationTruth::from_config(const Config& cfg) {
    SimulationTruth t = defaults();
    t.n = static_cast<int>(cfg.get_int("sim.n", t.n));
    t.weibull_shape = cfg.get_double("sim.weibull_shape", t.weibull_shape);
    t.censor_mean = cfg.get_double("sim.censor_mean", t.censor_mean);
    t.log_hazard_intercept = cfg.get_double("sim.log_hazard_intercept", t.log_hazard_intercept);
    if (cfg.has("sim.gamma")) {
        auto v = cfg.get_vector("sim.gamma");
        if (v.size() != 6) throw std::invalid_argument("sim.gamma needs 6 entries");
        t.gamma = Eigen::Map<Eigen::VectorXd>(v.data(), 6);
    }
    if (cfg.has("sim.alpha")) {
        auto v = cfg.get_vector("sim.alpha");
        if (static_cast<int>(v.size()) != t.num_factors())
            throw std::invalid_argument("sim.alpha needs one entry per factor");
        t.alpha = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (cfg.has("sim.delta1")) {
        auto v = cfg.get_vector("sim.delta1");
        t.delta1 = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (cfg.has("sim.delta0")) {
        auto v = cfg.get_vector("sim.delta0");
        t.delta0 = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return t;
}

std::pair<double, double> calibrate_delta(double target_sens, double target_spec, double pi_ref) {
    if (!(target_sens > 0.0 && target_sens < 1.0) || !(target_spec > 0.0 && target_spec < 1.0) ||
        !(pi_ref > 0.0 && pi_ref < 1.0))
        throw std::invalid_argument("calibrate_delta: arguments must lie in (0,1)");
    // column-conditional targets: sens = P(C=1|D=1), spec = P(C=0|D=0); solve the
    // row-conditional p1 = P(D=1|C=1), p0 = P(D=1|C=0) at prevalence pi_ref
    const double k = (1.0 - target_spec) / target_spec;
    const double a = (pi_ref - k * (1.0 - pi_ref)) /
                     (1.0 - k * (1.0 - target_sens) / target_sens);
    const double b = a * (1.0 - target_sens) / target_sens;
    const double p1 = a / pi_ref;
    const double p0 = b / (1.0 - pi_ref);
    if (!(p1 > 0.0 && p1 < 1.0) || !(p0 > 0.0 && p0 < 1.0))
        throw std::invalid_argument("calibrate_delta: targets infeasible at this prevalence");
    return {p1, p0};
}

int generate_delta(int c, const Eigen::VectorXd& x, const Eigen::VectorXd& delta_c, double u) {
    (void)c;  // the caller picks the delta set for the stratum
    if (u < 0.0 || u >= 1.0) throw std::invalid_argument("generate_delta: u outside [0,1)");
    if (x.size() != delta_c.size())
        throw std::invalid_argument("generate_delta: x/delta dimension mismatch");
    return u < logistic(delta_c.dot(x)) ? 1 : 0;
}

std::optional<double> invert_cumulative_hazard(const std::function<double(double)>& cum_hazard,
                                               double target, double t_hi) {
    if (!(target > 0.0)) throw std::invalid_argument("invert_cumulative_hazard: target <= 0");
    if (cum_hazard(t_hi) < target) return std::nullopt;
    double lo = 1e-8, hi = t_hi;
    if (cum_hazard(lo) >= target) return lo;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double v = cum_hazard(mid);
        if (std::abs(v - target) <= 1e-8) return mid;
        if (v < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

Cohort simulate_cohort(const SimulationTruth& truth, std::uint64_t seed) {
    const int G = truth.num_factors();
    Cohort cohort;
    cohort.t_max = truth.t_max;
    cohort.factor_names = truth.factor_names;

    Eigen::LLT<Eigen::MatrixXd> llt(truth.d_sim);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("simulate_cohort: d_sim not positive definite");
    const Eigen::MatrixXd Lre = llt.matrixL();

    int width = 1;
    for (int n = truth.n; n > 0; n /= 10) ++width;

    for (int i = 0; i < truth.n; ++i) {
        Rng rng(derive_seed(seed, {7, static_cast<std::uint64_t>(i)}));
        Subject s;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "s%0*d", width, i + 1);
            s.id = buf;
        }
        s.baseline_age = truth.base_age_max * runif(rng);
        s.sex = runif(rng) < 0.5 ? 1 : 0;
        s.race = runif(rng) < 0.5 ? 1 : 0;
        const double ue = runif(rng);
        s.educ_lh = ue < 0.25 ? 1 : 0;
        s.educ_ah = ue > 0.75 ? 1 : 0;
        s.bmi = std::max(16.0, 27.0 + 4.0 * rnorm(rng));

        Eigen::VectorXd z(3 * G);
        for (int r = 0; r < 3 * G; ++r) z[r] = rnorm(rng);
        Eigen::VectorXd b = Lre * z;

        std::vector<TrajectoryCoefficients> traj(static_cast<std::size_t>(G));
        for (int g = 0; g < G; ++g) {
            TrajectoryCoefficients c;
            c.b0 = truth.beta(g, 0) + b[3 * g];
            c.b1 = truth.beta(g, 1) + b[3 * g + 1];
            c.b2 = truth.beta(g, 2) + b[3 * g + 2];
            c.fixed_offset = truth.beta(g, 3) * s.sex + truth.beta(g, 4) * s.race +
                             truth.beta(g, 5) * s.educ_lh + truth.beta(g, 6) * s.educ_ah;
            c.scale = truth.t_max;
            traj[static_cast<std::size_t>(g)] = c;
        }

        Eigen::VectorXd w(6);
        w << s.baseline_age, s.bmi, static_cast<double>(s.educ_lh),
            static_cast<double>(s.educ_ah), static_cast<double>(s.sex),
            static_cast<double>(s.race);
        const double wlin = truth.log_hazard_intercept + truth.gamma.dot(w);
        const double a = truth.weibull_shape;
        auto log_haz = [&](double t) {
            double lh = std::log(a) + (a - 1.0) * std::log(t) + wlin;
            for (int g = 0; g < G; ++g)
                lh += truth.alpha[g] *
                      trajectory_value(traj[static_cast<std::size_t>(g)], s.baseline_age + t);
            return lh;
        };
        auto cumhaz = [&](double t) { return integrate_hazard(log_haz, t, {}); };

        const double t_admin = truth.t_max - s.baseline_age;
        const double e_draw = -std::log(1.0 - runif(rng));
        const double t_other = -truth.censor_mean * std::log(1.0 - runif(rng));
        std::optional<double> t_cvd = invert_cumulative_hazard(cumhaz, e_draw, t_admin);

        double t_obs = t_admin;
        int dead = 0, c_true = 0;
        if (t_cvd && *t_cvd < t_obs) {
            t_obs = *t_cvd;
            dead = 1;
            c_true = 1;
        }
        if (t_other < t_obs) {
            t_obs = t_other;
            dead = 1;
            c_true = 0;
        }
        const double observed_age = s.baseline_age + t_obs;

        for (int j = 0; j < 3; ++j) {
            const double rate = std::exp(-1.5 + 0.3 * j + (0.9 - 0.1 * j) * (dead ? c_true : 0));
            s.nonfatal_counts[static_cast<std::size_t>(j)] =
                std::poisson_distribution<int>(rate)(rng);
        }

        EventRecord e;
        e.subject_id = s.id;
        e.dead = dead != 0;
        e.observed_time = observed_age;
        e.event_indicator = dead && c_true ? 1 : 0;
        if (dead) {
            e.death_age = observed_age;
            e.c_adjudicated = c_true;
            Eigen::VectorXd x(5 + G);
            x << 1.0, s.baseline_age, s.bmi, static_cast<double>(s.sex),
                static_cast<double>(s.race), Eigen::VectorXd::Zero(G);
            for (int g = 0; g < G; ++g)
                x[5 + g] = trajectory_value(traj[static_cast<std::size_t>(g)], observed_age);
            e.delta = generate_delta(c_true, x, c_true ? truth.delta1 : truth.delta0, runif(rng));
        }

        for (int l = 0; l < truth.max_visits; ++l) {
            const double age = s.baseline_age + truth.visit_interval * l;
            if (l > 0 && age > observed_age) break;
            for (int g = 0; g < G; ++g) {
                LongitudinalRecord r;
                r.subject_id = s.id;
                r.factor = g;
                r.age = age;
                r.value = trajectory_value(traj[static_cast<std::size_t>(g)], age) +
                          truth.sigma[g] * rnorm(rng);
                cohort.longitudinal.push_back(std::move(r));
            }
        }

        cohort.subjects.push_back(std::move(s));
        cohort.events.push_back(std::move(e));
    }
    return cohort;
}

const MetricsTable::Cell& MetricsTable::at(const std::string& parameter,
                                           const std::string& method) const {
    auto pit = std::find(parameters.begin(), parameters.end(), parameter);
    auto mit = std::find(methods.begin(), methods.end(), method);
    if (pit == parameters.end() || mit == methods.end())
        throw std::out_of_range("MetricsTable::at: unknown parameter or method");
    return cells[static_cast<std::size_t>(pit - parameters.begin())]
                [static_cast<std::size_t>(mit - methods.begin())];
}

MetricsTable run_simulation_study(const SimulationTruth& truth, int R,
                                  const std::vector<std::string>& methods, const Config& cfg) {
    if (R < 1) throw std::invalid_argument("run_simulation_study: R must be >= 1");
    if (methods.empty()) throw std::invalid_argument("run_simulation_study: no methods");
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
    const int threads = static_cast<int>(cfg.get_int("threads", 1));
    const double frac_a = cfg.get_double("split_fraction", 0.75);
    const int G = truth.num_factors();

    // the 9 tracked hazard parameters and their truth
    std::vector<std::string> params{"gamma_base_age", "gamma_bmi", "gamma_lh",
                                    "gamma_ah",       "gamma_sex", "gamma_race"};
    std::vector<double> truth_vals(truth.gamma.data(), truth.gamma.data() + 6);
    for (int g = 0; g < G; ++g) {
        params.push_back("alpha_value_" + truth.factor_names[static_cast<std::size_t>(g)]);
        truth_vals.push_back(truth.alpha[g]);
    }

    JointConfig base_joint;
    base_joint.use_value = true;
    base_joint.use_slope = cfg.get_bool("joint.use_slope", false);
    base_joint.use_area = cfg.get_bool("joint.use_area", false);
    base_joint.n_warmup = static_cast<int>(cfg.get_int("joint.n_warmup", 200));
    base_joint.n_iter = static_cast<int>(cfg.get_int("joint.n_iter", 200));
    base_joint.leapfrog = static_cast<int>(cfg.get_int("joint.leapfrog", 16));

    PipelineConfig base_pipe;
    base_pipe.M = static_cast<int>(cfg.get_int("pipeline.M", 2));
    base_pipe.K = static_cast<int>(cfg.get_int("pipeline.K", 2));
    base_pipe.L = static_cast<int>(cfg.get_int("pipeline.L", 2));
    base_pipe.workers = 1;
    base_pipe.joint = base_joint;
    base_pipe.dpm.n_iter = static_cast<int>(cfg.get_int("dpm.n_iter", 600));
    base_pipe.dpm.n_burn = static_cast<int>(cfg.get_int("dpm.n_burn", 200));
    base_pipe.bart.m = static_cast<int>(cfg.get_int("bart.m", 50));
    base_pipe.bart.n_iter = static_cast<int>(cfg.get_int("bart.n_iter", 400));
    base_pipe.bart.n_burn = static_cast<int>(cfg.get_int("bart.n_burn", 150));
    base_pipe.track = params;

    struct RepResult {
        // [method][param] -> (estimate, lo, hi)
        std::vector<std::array<std::array<double, 3>, 16>> vals;
        bool ok = false;
    };
    std::vector<RepResult> reps(static_cast<std::size_t>(R));
    std::mutex log_mutex;

    parallel_for(static_cast<std::size_t>(R), std::max(1, threads), [&](std::size_t r) {
        RepResult& rep = reps[r];
        rep.vals.resize(methods.size());
        try {
            Cohort cohort =
                simulate_cohort(truth, derive_seed(seed, {10, static_cast<std::uint64_t>(r)}));
            auto [a, b] =
                split_cohort(cohort, frac_a, derive_seed(seed, {11, static_cast<std::uint64_t>(r)}));

            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                const std::string& method = methods[mi];
                if (method == "pipeline") {
                    PipelineConfig pc = base_pipe;
                    pc.seed = derive_seed(seed, {14, static_cast<std::uint64_t>(r)});
                    PipelineResult pres = run_pipeline(a, b, pc);
                    for (std::size_t p = 0; p < params.size(); ++p) {
                        const auto& row = pres.rows[p];
                        rep.vals[mi][p] = {row.estimate, row.lo, row.hi};
                    }
                } else {
                    std::map<std::string, int> override;
                    for (const auto& e : b.events) {
                        int ev = 0;
                        if (e.dead) {
                            if (method == "adjudicated")
                                ev = *e.c_adjudicated;
                            else if (method == "unadjudicated")
                                ev = *e.delta;
                            else
                                throw std::invalid_argument("unknown method '" + method + "'");
                        }
                        override[e.subject_id] = ev;
                    }
                    JointConfig jc = base_joint;
                    jc.seed = derive_seed(seed, {method == "adjudicated" ? 12ULL : 13ULL,
                                                 static_cast<std::uint64_t>(r)});
                    JointFitResult fit = fit_joint_model(b, jc, &override);
                    for (std::size_t p = 0; p < params.size(); ++p) {
                        const auto& s = fit.summary(params[p]);
                        rep.vals[mi][p] = {s.mean, s.q025, s.q975};
                    }
                }
            }
            rep.ok = true;
        } catch (const std::exception& ex) {
            std::lock_guard<std::mutex> lock(log_mutex);
            std::ofstream("study_failures.log", std::ios::app)
                << "replicate " << r << ": " << ex.what() << "\n";
        }
    });

    MetricsTable table;
    table.parameters = params;
    table.methods = methods;
    table.cells.assign(params.size(), std::vector<MetricsTable::Cell>(methods.size()));
    for (const auto& rep : reps)
        if (!rep.ok) ++table.failed_replicates;

    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            std::vector<double> est;
            double cover = 0.0, len = 0.0;
            for (const auto& rep : reps) {
                if (!rep.ok) continue;
                const auto& v = rep.vals[mi][p];
                est.push_back(v[0]);
                if (v[1] <= truth_vals[p] && truth_vals[p] <= v[2]) cover += 1.0;
                len += v[2] - v[1];
            }
            MetricsTable::Cell& c = table.cells[p][mi];
            c.n_reps = static_cast<int>(est.size());
            if (est.empty()) continue;
            c.mean_est = mean(est);
            c.bias = c.mean_est - truth_vals[p];
            c.abs_bias = std::abs(c.bias);
            double sq = 0.0;
            for (double e : est) sq += (e - truth_vals[p]) * (e - truth_vals[p]);
            c.rmse = std::sqrt(sq / static_cast<double>(est.size()));
            c.coverage = cover / static_cast<double>(est.size());
            c.ci_length = len / static_cast<double>(est.size());
        }
    return table;
}

void report_tables(const MetricsTable& table, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (table.parameters.empty() || table.methods.empty())
        throw std::invalid_argument("report_tables: empty table");
    fs::create_directories(out_dir);
    char buf[64];
    auto open = [&](const std::string& name) {
        std::ofstream out((fs::path(out_dir) / name).string());
        if (!out) throw std::runtime_error("cannot write " + name);
        return out;
    };

    {  // full machine-readable dump (round-trip source)
        std::ofstream out = open("metrics.csv");
        out << "parameter,method,bias,abs_bias,mean_est,rmse,coverage,ci_length,n_reps\n";
        for (std::size_t p = 0; p < table.parameters.size(); ++p)
            for (std::size_t m = 0; m < table.methods.size(); ++m) {
                const auto& c = table.cells[p][m];
                out << table.parameters[p] << "," << table.methods[m];
                for (double v : {c.bias, c.abs_bias, c.mean_est, c.rmse, c.coverage, c.ci_length}) {
                    std::snprintf(buf, sizeof(buf), ",%.12g", v);
                    out << buf;
                }
                out << "," << c.n_reps << "\n";
            }
    }

    struct Layout {
        const char* file;
        const char* a;
        const char* b;
        double MetricsTable::Cell::* fa;
        double MetricsTable::Cell::* fb;
    };
    const Layout layouts[3] = {
        {"table2_bias.csv", "bias", "abs_bias", &MetricsTable::Cell::bias,
         &MetricsTable::Cell::abs_bias},
        {"table3_rmse.csv", "mean", "rmse", &MetricsTable::Cell::mean_est,
         &MetricsTable::Cell::rmse},
        {"table4_coverage.csv", "coverage", "ci_length", &MetricsTable::Cell::coverage,
         &MetricsTable::Cell::ci_length},
    };
    for (const auto& lay : layouts) {
        std::ofstream out = open(lay.file);
        out << "parameter";
        for (const auto& m : table.methods) out << "," << lay.a << "_" << m << "," << lay.b << "_" << m;
        out << "\n";
        for (std::size_t p = 0; p < table.parameters.size(); ++p) {
            out << table.parameters[p];
            for (std::size_t m = 0; m < table.methods.size(); ++m) {
                const auto& c = table.cells[p][m];
                std::snprintf(buf, sizeof(buf), ",%.12g,%.12g", c.*(lay.fa), c.*(lay.fb));
                out << buf;
            }
            out << "\n";
        }
    }
}

MetricsTable read_tables(const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::ifstream in((fs::path(out_dir) / "metrics.csv").string());
    if (!in) throw std::runtime_error("cannot read metrics.csv");
    std::string line;
    std::getline(in, line);
    MetricsTable table;
    std::vector<std::tuple<std::string, std::string, MetricsTable::Cell>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t pos = 0;
        auto next = [&]() {
            std::size_t comma = line.find(',', pos);
            std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
            pos = comma == std::string::npos ? line.size() : comma + 1;
            return tok;
        };
        std::string param = next(), method = next();
        MetricsTable::Cell c;
        c.bias = std::stod(next());
        c.abs_bias = std::stod(next());
        c.mean_est = std::stod(next());
        c.rmse = std::stod(next());
        c.coverage = std::stod(next());
        c.ci_length = std::stod(next());
        c.n_reps = std::stoi(next());
        if (std::find(table.parameters.begin(), table.parameters.end(), param) ==
            table.parameters.end())
            table.parameters.push_back(param);
        if (std::find(table.methods.begin(), table.methods.end(), method) == table.methods.end())
            table.methods.push_back(method);
        rows.emplace_back(param, method, c);
    }
    table.cells.assign(table.parameters.size(),
                       std::vector<MetricsTable::Cell>(table.methods.size()));
    for (const auto& [param, method, c] : rows) {
        const auto p = static_cast<std::size_t>(
            std::find(table.parameters.begin(), table.parameters.end(), param) -
            table.parameters.begin());
        const auto m = static_cast<std::size_t>(
            std::find(table.methods.begin(), table.methods.end(), method) - table.methods.begin());
        table.cells[p][m] = c;
    }
    return table;
}

}  // namespace adjud
