#ifndef ADJUD_JOINT_HPP
#define ADJUD_JOINT_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjud/bspline.hpp"
#include "adjud/cohort.hpp"
#include "adjud/legendre.hpp"
#include "adjud/rng.hpp"

namespace adjud {

// ---------------------------------------------------------------------------
// Hazard building blocks (also used standalone by the simulator and tests)
// ---------------------------------------------------------------------------

struct BaselineHazard {
    std::shared_ptr<const BSplineBasis> basis;
    std::vector<double> coef;  // log-hazard scale
};

double log_baseline_hazard(const BaselineHazard& hazard, double t);

struct SurvivalRecord {
    double duration = 0.0;  // observed time on the since-baseline scale
    int event = 0;
    Eigen::VectorXd w;      // baseline covariates entering the hazard
    double base_age = 0.0;  // maps hazard time to the trajectory age scale
};

struct FactorLink {
    double alpha_value = 0.0;
    double alpha_slope = 0.0;
    double alpha_area = 0.0;
    TrajectoryCoefficients traj;
};

struct HazardSpec {
    BaselineHazard baseline;
    Eigen::VectorXd gamma;
    std::vector<FactorLink> links;
};

double log_hazard(const HazardSpec& spec, const SurvivalRecord& rec, double t);

// Gauss-Legendre 15 per inter-knot segment; the segment touching zero is
// subdivided geometrically so integrable endpoint singularities (Weibull
// shapes < 2) still integrate to ~1e-9 relative accuracy.
double integrate_hazard(const std::function<double(double)>& log_hazard_fn, double T,
                        const std::vector<double>& interior_knots);

double cumulative_hazard(const HazardSpec& spec, const SurvivalRecord& rec, double T);

double survival_loglik(const HazardSpec& spec, const SurvivalRecord& rec);

struct LongitudinalObs {
    double y = 0.0;
    double mu = 0.0;
    double sigma = 0.0;
};
double longitudinal_loglik(const std::vector<LongitudinalObs>& obs);

// ---------------------------------------------------------------------------
// Spike-and-slab machinery
// ---------------------------------------------------------------------------

// Under sigma_d^2 + c^2 tau^2 = 1 with sigma_d/tau = ratio, returns
// tau0 = sqrt(sigma_d^2 + tau^2).
double compute_tau0(double ratio, double c);

// log[(1-pi) N(d; 0, tau0^2) + pi N(d; 0, 1)]
double spike_slab_logprior(double d, double pi, double tau0);

// log[(1-pi) N+(tau; 0, (tau0 s)^2) + pi N+(tau; 0, s^2)], tau >= 0
double halfnormal_mixture_logprior(double tau, double pi, double tau0, double s);

// b = diag(sigma) * Lc * z
Eigen::VectorXd noncentered_random_effects(const Eigen::MatrixXd& Lc,
                                           const Eigen::VectorXd& sigma_diag,
                                           const Eigen::VectorXd& z);

// ---------------------------------------------------------------------------
// Full joint model
// ---------------------------------------------------------------------------

struct JointConfig {
    bool use_value = true;
    bool use_slope = false;
    bool use_area = false;
    int n_interior_knots = 5;
    int spline_degree = 3;

    int n_warmup = 300;
    int n_iter = 300;
    int leapfrog = 24;
    double init_step = 0.02;
    double target_accept = 0.8;
    std::uint64_t seed = 1;

    double beta_prior_sd = 10.0;
    double gamma_prior_sd = 10.0;
    double spline_prior_sd = 10.0;
    double sigma_resid_prior_sd = 10.0;
    double tau0_ratio = 1.0;
    double tau0_c = 10.0;
    double s2_a = 1.0, s2_b = 1.0;  // Inv-Gamma on s^2
    double pi_a = 1.0, pi_b = 1.0;  // Beta on pi_g

    int num_link_features() const {
        return (use_value ? 1 : 0) + (use_slope ? 1 : 0) + (use_area ? 1 : 0);
    }
};

struct JointData {
    struct Obs {
        int factor = 0;
        double age = 0.0;
        double y = 0.0;
    };
    struct Subj {
        std::string id;
        std::vector<Obs> obs;
        Eigen::VectorXd w;
        double sex = 0, race = 0, educ_lh = 0, educ_ah = 0;
        double base_age = 0.0;
        double duration = 0.0;
        int event = 0;
    };
    std::vector<Subj> subjects;
    std::vector<std::string> factor_names;
    std::vector<std::string> w_names;
    double t_scale = 0.0;  // Legendre T
};

// Event indicators come from the cohort unless `event_override` maps
// subject id -> indicator (the adjudication pipeline passes A*).
JointData make_joint_data(const Cohort& cohort,
                          const std::map<std::string, int>* event_override = nullptr);

struct ParamSummary {
    std::string name;
    double mean = 0, sd = 0, q025 = 0, q975 = 0, ess = 0, rhat = 0;
};

struct JointFitResult {
    std::vector<ParamSummary> summaries;
    std::vector<std::string> names;           // reported-parameter names
    std::vector<Eigen::VectorXd> draws;       // retained draws, reported scale
    double accept_rate = 0.0;
    double step_size = 0.0;
    const ParamSummary& summary(const std::string& name) const;
};

class JointModel {
public:
    JointModel(JointData data, JointConfig cfg);

    int dim() const { return n_param_; }
    double log_posterior(const Eigen::VectorXd& x) const;
    double log_posterior_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;

    Eigen::VectorXd initial_point(Rng& rng) const;

    const std::vector<std::string>& report_names() const { return report_names_; }
    Eigen::VectorXd report(const Eigen::VectorXd& x) const;

    JointFitResult fit() const;

    const BSplineBasis& basis() const { return *basis_; }
    double tau0() const { return tau0_; }

private:
    JointData data_;
    JointConfig cfg_;
    std::shared_ptr<BSplineBasis> basis_;
    double tau0_ = 0.0;

    int G_ = 0, J_ = 0, W_ = 0, S_ = 0, q_ = 0, n_ = 0;
    int n_param_ = 0;
    // parameter block offsets in the unconstrained vector
    int off_beta_, off_lsg_, off_gamma_, off_theta_, off_d_, off_xi_, off_ls_, off_zeta_,
        off_lsj_, off_lc_, off_z_;
    int n_lc_ = 0;

    struct NodeCache {
        double weight = 0.0;       // quadrature weight (0 for the event node)
        int spline_offset = 0;
        double spline_vals[4] = {0, 0, 0, 0};
        // per factor feature coefficient triples and centering offsets
        std::vector<double> coef;     // G * J * 3
        std::vector<double> center;   // G * J
        bool is_event = false;
    };
    struct ObsCache {
        int factor = 0;
        double u[3] = {1, 0, 0};  // (1, P1, P2) at the observation age
        double y = 0.0;
    };
    struct SubjCache {
        std::vector<NodeCache> nodes;
        std::vector<ObsCache> obs;
        Eigen::VectorXd wc;  // centered covariates
        double cov[4] = {0, 0, 0, 0};
    };
    std::vector<SubjCache> cache_;
    std::vector<double> feature_center_;  // G (factor mean, used by value/area centering)
    Eigen::VectorXd w_mean_;
    std::vector<int> active_features_;  // subset of {0=value,1=slope,2=area}
    std::vector<std::string> report_names_;

    void build_cache();
    double eval(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const;
};

JointFitResult fit_joint_model(const Cohort& cohort, const JointConfig& cfg,
                               const std::map<std::string, int>* event_override = nullptr);

void write_posterior_summary(const JointFitResult& fit, const std::string& path);

}  // namespace adjud

#endif
