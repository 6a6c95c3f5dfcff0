#ifndef ADJUD_SIM_HPP
#define ADJUD_SIM_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjud/cohort.hpp"
#include "adjud/config.hpp"
#include "adjud/pipeline.hpp"

namespace adjud {

struct SimulationTruth {
    int n = 600;
    std::vector<std::string> factor_names{"bp", "glucose", "chol"};
    Eigen::MatrixXd beta;    // G x 7: intercept, P1, P2, sex, race, lh, ah
    Eigen::MatrixXd d_sim;   // 3G x 3G random-effects covariance
    Eigen::VectorXd sigma;   // G residual sds
    Eigen::VectorXd gamma;   // base_age, bmi, lh, ah, sex, race
    Eigen::VectorXd alpha;   // G current-value links
    double log_hazard_intercept = 0.0;  // calibrated for the 800/400 event mix
    double weibull_shape = 1.75;
    double censor_mean = 8.0;  // exponential non-CVD death
    double t_max = 31.0;       // 19 + 4 * 3
    double base_age_max = 19.0;
    double visit_interval = 3.0;
    int max_visits = 5;
    // logistic misclassification delta per C stratum over
    // x = (1, base_age, bmi, sex, race, value_1..value_G at death)
    Eigen::VectorXd delta1, delta0;

    int num_factors() const { return static_cast<int>(factor_names.size()); }

    static SimulationTruth defaults();
    static SimulationTruth from_config(const Config& cfg);
};

// Row-conditional probabilities (P(Delta=1|C=1), P(Delta=1|C=0)) whose implied
// column-conditional confusion hits (target_sens, target_spec) at reference
// event prevalence pi_ref.
std::pair<double, double> calibrate_delta(double target_sens, double target_spec, double pi_ref);

int generate_delta(int c, const Eigen::VectorXd& x, const Eigen::VectorXd& delta_c, double u);

// Solve Lambda(t) = target on [1e-8, t_hi] by bisection (|Lambda - target| <= 1e-8);
// nullopt when Lambda(t_hi) < target (administrative censoring).
std::optional<double> invert_cumulative_hazard(const std::function<double(double)>& cum_hazard,
                                               double target, double t_hi);

Cohort simulate_cohort(const SimulationTruth& truth, std::uint64_t seed);

struct MetricsTable {
    struct Cell {
        double bias = 0.0, abs_bias = 0.0, mean_est = 0.0, rmse = 0.0;
        double coverage = 0.0, ci_length = 0.0;
        int n_reps = 0;
    };
    std::vector<std::string> parameters;
    std::vector<std::string> methods;
    std::vector<std::vector<Cell>> cells;  // [parameter][method]
    int failed_replicates = 0;

    const Cell& at(const std::string& parameter, const std::string& method) const;
};

// Per replicate: simulate, split 75/25, fit the joint model on B using C
// (adjudicated), Delta (unadjudicated), and the pipeline's pooled estimate.
MetricsTable run_simulation_study(const SimulationTruth& truth, int R,
                                  const std::vector<std::string>& methods, const Config& cfg);

void report_tables(const MetricsTable& table, const std::string& out_dir);
MetricsTable read_tables(const std::string& out_dir);

}  // namespace adjud

#endif
