#ifndef ADJUD_PIPELINE_HPP
#define ADJUD_PIPELINE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adjud/bart.hpp"
#include "adjud/cohort.hpp"
#include "adjud/dpm.hpp"
#include "adjud/joint.hpp"

namespace adjud {

struct PipelineConfig {
    int M = 3, K = 3, L = 3;
    std::uint64_t seed = 1;
    int workers = 1;  // parallelism cap for the N joint fits
    std::string out_dir;
    bool resume = false;
    double epsilon_min = 1e-4;  // floor for epsilon_for_estimate at theta = 0
    DpmConfig dpm;
    BartConfig bart;
    JointConfig joint;
    std::vector<std::string> track;  // reported parameters; empty = gamma_* + alpha_*
    bool write_weights = true;
    bool write_forests = false;
};

struct AdjudicationSet {
    int m = 0, k = 0, l = 0;                // 1-based indices
    std::map<std::string, int> a;           // dead B subjects
    std::map<std::string, int> a_star;      // all B subjects; 0 on alive
};

int generate_adjudication(double w_hat, double u);

// (mean, population-sd / sqrt(N))
std::pair<double, double> mcse(const std::vector<double>& estimates);

std::pair<double, double> credible_interval(double estimate, double mcse_value);

// one unit in the second significant digit; eps_min when estimate == 0
double epsilon_for_estimate(double estimate, double eps_min = 1e-4);

struct ChooseNResult {
    long N = 1;
    int M = 1, K = 1, L = 1;
    std::map<std::string, long> per_parameter;
};

// N_p = ceil(sqrt(SST_p) / eps_p); N = max; balanced factors M <= K <= L.
ChooseNResult choose_n(const std::map<std::string, double>& sst_pilot,
                       const std::map<std::string, double>& epsilon);

struct CostEstimate {
    double ideal = 0.0;      // T^F + T^fit + T^pred + T^JM
    double realistic = 0.0;  // T^F + ceil(M/cap) T^fit + T^pred + ceil(N/cap) T^JM
};

CostEstimate estimate_cost(double t_feature, double t_fit, double t_pred, double t_joint, int M,
                           long N, int cap);

struct PipelineResult {
    struct Row {
        std::string parameter;
        double estimate = 0.0, mcse = 0.0, lo = 0.0, hi = 0.0;
    };
    std::vector<Row> rows;
    int M = 0, K = 0, L = 0;
    long N = 0;
    std::map<std::string, std::vector<double>> per_fit_estimates;
    double t_feature = 0.0, t_bart_fit = 0.0, t_bart_pred = 0.0, t_joint = 0.0;
};

// Steps 1-6 of the adjudication pipeline. cohort_a must carry adjudicated C on
// its dead subjects; cohort_b carries Delta on its dead subjects. Writes
// result.csv, manifest.json, and per-fit estimates under cfg.out_dir if set.
PipelineResult run_pipeline(const Cohort& cohort_a, const Cohort& cohort_b,
                            const PipelineConfig& cfg);

void write_result_csv(const PipelineResult& result, const std::string& path);

}  // namespace adjud

#endif
