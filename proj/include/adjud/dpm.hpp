#ifndef ADJUD_DPM_HPP
#define ADJUD_DPM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjud/cohort.hpp"
#include "adjud/legendre.hpp"
#include "adjud/rng.hpp"

namespace adjud {

struct DpmConfig {
    int K = 20;  // truncation level; <= 0 selects ceil(5 * E[alpha] * log n), capped at 50
    double alpha_a = 1.0, alpha_b = 1.0;  // Gamma prior on the concentration

    // Base-measure hyperpriors; left empty they are filled empirically from
    // per-subject least squares (mu0 = mean, D = 4*cov, R1 = cov, c = dim+2).
    Eigen::VectorXd base_mean;   // mu0
    Eigen::MatrixXd base_scale;  // D
    Eigen::MatrixXd iw_scale;    // R1
    double iw_df = 0.0;          // c; <= 0 selects dim+2

    int n_iter = 1500;
    int n_burn = 500;
    int thin = 1;
    double fixed_prior_sd = 10.0;       // beta3..beta6
    double sigma_a = 1.0, sigma_b = 1.0;  // Inv-Gamma on sigma_g^2
    std::uint64_t seed = 1;
    std::string diag_path;  // optional sampler log: iter, loglik, alpha, occupied
};

int default_truncation(double alpha_prior_mean, int n);

// pi_1 = V_1, pi_k = V_k prod_{l<k}(1 - V_l), pi_K = remainder
Eigen::VectorXd stick_breaking_weights(const Eigen::VectorXd& v);

// Draw from Gamma(a + K - 1, b - sum log(1 - V_k))
double update_concentration(Rng& rng, const Eigen::VectorXd& v, double a, double b);

struct DpmDraw {
    Eigen::MatrixXd coef;   // n x 3 subject random coefficients (b0, b1, b2)
    Eigen::Vector4d fixed;  // beta for (sex, race, educ_lh, educ_ah)
    double sigma = 0.0;
    double alpha = 0.0;
    int occupied = 0;
    Eigen::VectorXd weights;            // K
    std::vector<Eigen::Vector3d> mu;    // K cluster means
    std::vector<Eigen::Matrix3d> cov;   // K cluster covariances
};

struct DpmFit {
    std::vector<std::string> subject_ids;
    std::vector<Eigen::Vector4d> covariates;  // per subject (sex, race, lh, ah)
    double t_scale = 0.0;
    int factor = 0;
    std::vector<DpmDraw> draws;
};

// Blocked Gibbs for one factor on one Delta stratum.
DpmFit fit_dpm_model(const Cohort& stratum, int factor, const DpmConfig& cfg);

// M feature triples for a subject at age t, taken from evenly spaced retained draws.
std::vector<FeatureTriple> posterior_features(const DpmFit& fit, const std::string& subject_id,
                                              double t, int M);

struct FeatureDraw {
    std::string subject_id;
    int factor = 0;
    int draw_m = 0;  // 1-based
    double value = 0.0, slope = 0.0, area = 0.0;
};

// Fits every factor on each Delta stratum of the (dead) cohort and evaluates M
// feature draws at each subject's death age. Per-stratum/factor seeds derive
// from cfg.seed.
std::vector<FeatureDraw> compute_feature_table(const Cohort& dead, const DpmConfig& cfg, int M);

void write_feature_csv(const std::vector<FeatureDraw>& rows, const std::string& path);
std::vector<FeatureDraw> read_feature_csv(const std::string& path);

}  // namespace adjud

#endif
