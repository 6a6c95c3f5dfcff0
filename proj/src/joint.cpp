#include "adjud/joint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "adjud/stats.hpp"

namespace adjud {

// ---------------------------------------------------------------------------
// Standalone hazard pieces
// ---------------------------------------------------------------------------

double log_baseline_hazard(const BaselineHazard& hazard, double t) {
    if (!hazard.basis) throw std::invalid_argument("log_baseline_hazard: missing basis");
    return hazard.basis->dot(t, hazard.coef);
}

double log_hazard(const HazardSpec& spec, const SurvivalRecord& rec, double t) {
    double lh = log_baseline_hazard(spec.baseline, t);
    if (spec.gamma.size() != rec.w.size())
        throw std::invalid_argument("log_hazard: gamma/w dimension mismatch");
    lh += spec.gamma.dot(rec.w);
    const double age = rec.base_age + t;
    for (const auto& link : spec.links) {
        if (link.alpha_value != 0.0) lh += link.alpha_value * trajectory_value(link.traj, age);
        if (link.alpha_slope != 0.0) lh += link.alpha_slope * trajectory_slope(link.traj, age);
        if (link.alpha_area != 0.0) lh += link.alpha_area * trajectory_area(link.traj, 0.0, age);
    }
    return lh;
}

double integrate_hazard(const std::function<double(double)>& log_hazard_fn, double T,
                        const std::vector<double>& interior_knots) {
    if (!(T > 0.0)) return 0.0;

    std::vector<double> cuts{0.0};
    for (double k : interior_knots)
        if (k > 0.0 && k < T) cuts.push_back(k);
    cuts.push_back(T);
    std::sort(cuts.begin(), cuts.end());

    // refine the segment that touches zero: geometric subdivision keeps
    // Gauss-Legendre accurate for t^a integrands with a > -1
    std::vector<double> pts;
    const double t1 = cuts[1];
    pts.push_back(0.0);
    for (int k = 4; k >= 1; --k) pts.push_back(t1 * std::pow(8.0, -k));
    for (std::size_t i = 1; i < cuts.size(); ++i) pts.push_back(cuts[i]);

    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double a = pts[i], b = pts[i + 1];
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        double seg = 0.0;
        for (int j = 0; j < 15; ++j) {
            const double t = c + h * GaussLegendre15::nodes[static_cast<std::size_t>(j)];
            seg += GaussLegendre15::weights[static_cast<std::size_t>(j)] * std::exp(log_hazard_fn(t));
        }
        seg *= h;
        if (!std::isfinite(seg)) throw std::runtime_error("integrate_hazard: non-finite integrand");
        total += seg;
    }
    return total;
}

double cumulative_hazard(const HazardSpec& spec, const SurvivalRecord& rec, double T) {
    return integrate_hazard([&](double t) { return log_hazard(spec, rec, t); }, T,
                            spec.baseline.basis->interior_knots());
}

double survival_loglik(const HazardSpec& spec, const SurvivalRecord& rec) {
    double ll = -cumulative_hazard(spec, rec, rec.duration);
    if (rec.event) ll += log_hazard(spec, rec, rec.duration);
    return ll;
}

double longitudinal_loglik(const std::vector<LongitudinalObs>& obs) {
    double ll = 0.0;
    for (const auto& o : obs) {
        if (!(o.sigma > 0.0)) throw std::invalid_argument("longitudinal_loglik: sigma <= 0");
        ll += norm_logpdf(o.y, o.mu, o.sigma);
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Spike-and-slab machinery
// ---------------------------------------------------------------------------

double compute_tau0(double ratio, double c) {
    if (!(ratio > 0.0)) throw std::invalid_argument("compute_tau0: ratio must be positive");
    if (!(c > 1.0)) throw std::invalid_argument("compute_tau0: c must exceed 1");
    const double tau2 = 1.0 / (ratio * ratio + c * c);
    return std::sqrt(ratio * ratio * tau2 + tau2);
}

namespace {
inline double norm_pdf(double x, double sd) {
    const double z = x / sd;
    return std::exp(-0.5 * z * z) / (sd * 2.50662827463100050242);
}
}  // namespace

double spike_slab_logprior(double d, double pi, double tau0) {
    if (pi < 0.0 || pi > 1.0) throw std::invalid_argument("spike_slab_logprior: pi outside [0,1]");
    if (!(tau0 > 0.0)) throw std::invalid_argument("spike_slab_logprior: tau0 <= 0");
    return std::log((1.0 - pi) * norm_pdf(d, tau0) + pi * norm_pdf(d, 1.0));
}

double halfnormal_mixture_logprior(double tau, double pi, double tau0, double s) {
    if (tau < 0.0) throw std::invalid_argument("halfnormal_mixture_logprior: tau < 0");
    if (!(s > 0.0)) throw std::invalid_argument("halfnormal_mixture_logprior: s <= 0");
    return std::log((1.0 - pi) * 2.0 * norm_pdf(tau, tau0 * s) + pi * 2.0 * norm_pdf(tau, s));
}

Eigen::VectorXd noncentered_random_effects(const Eigen::MatrixXd& Lc,
                                           const Eigen::VectorXd& sigma_diag,
                                           const Eigen::VectorXd& z) {
    const Eigen::Index q = z.size();
    if (Lc.rows() != q || Lc.cols() != q || sigma_diag.size() != q)
        throw std::invalid_argument("noncentered_random_effects: dimension mismatch");
    for (Eigen::Index i = 0; i < q; ++i) {
        if (!(sigma_diag[i] > 0.0))
            throw std::invalid_argument("noncentered_random_effects: sigma_diag must be positive");
        double rownorm = Lc.row(i).head(i + 1).squaredNorm();
        if (std::abs(rownorm - 1.0) > 1e-8)
            throw std::invalid_argument("noncentered_random_effects: Lc rows must have unit norm");
    }
    return sigma_diag.asDiagonal() * (Lc.triangularView<Eigen::Lower>() * z);
}

// ---------------------------------------------------------------------------
// JointData construction
// ---------------------------------------------------------------------------

JointData make_joint_data(const Cohort& cohort, const std::map<std::string, int>* event_override) {
    JointData data;
    data.factor_names = cohort.factor_names;
    data.t_scale = cohort.t_max;
    data.w_names = {"base_age", "bmi", "lh", "ah", "sex", "race"};

    std::map<std::string, std::vector<JointData::Obs>> obs_by_id;
    for (const auto& r : cohort.longitudinal)
        obs_by_id[r.subject_id].push_back({r.factor, r.age, r.value});

    std::map<std::string, const EventRecord*> ev_by_id;
    for (const auto& e : cohort.events) ev_by_id[e.subject_id] = &e;

    for (const auto& s : cohort.subjects) {
        auto evit = ev_by_id.find(s.id);
        if (evit == ev_by_id.end())
            throw std::runtime_error("make_joint_data: subject '" + s.id + "' has no event record");
        const EventRecord& e = *evit->second;
        auto oit = obs_by_id.find(s.id);
        if (oit == obs_by_id.end() || oit->second.empty())
            throw std::runtime_error("make_joint_data: subject '" + s.id + "' has no longitudinal data");

        JointData::Subj subj;
        subj.id = s.id;
        subj.obs = oit->second;
        subj.sex = s.sex;
        subj.race = s.race;
        subj.educ_lh = s.educ_lh;
        subj.educ_ah = s.educ_ah;
        subj.base_age = s.baseline_age;
        subj.duration = e.observed_time - s.baseline_age;
        if (!(subj.duration > 0.0))
            throw std::runtime_error("make_joint_data: non-positive follow-up for '" + s.id + "'");
        if (event_override) {
            auto it = event_override->find(s.id);
            subj.event = it == event_override->end() ? 0 : it->second;
        } else {
            subj.event = e.event_indicator;
        }
        subj.w.resize(6);
        subj.w << s.baseline_age, s.bmi, static_cast<double>(s.educ_lh),
            static_cast<double>(s.educ_ah), static_cast<double>(s.sex), static_cast<double>(s.race);
        data.subjects.push_back(std::move(subj));
    }
    return data;
}

// ---------------------------------------------------------------------------
// JointModel
// ---------------------------------------------------------------------------

namespace {
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

JointModel::JointModel(JointData data, JointConfig cfg) : data_(std::move(data)), cfg_(cfg) {
    G_ = static_cast<int>(data_.factor_names.size());
    n_ = static_cast<int>(data_.subjects.size());
    if (n_ == 0) throw std::invalid_argument("JointModel: empty data");
    if (!(data_.t_scale > 0.0)) throw std::invalid_argument("JointModel: t_scale must be positive");
    W_ = static_cast<int>(data_.subjects.front().w.size());
    q_ = 3 * G_;
    tau0_ = compute_tau0(cfg_.tau0_ratio, cfg_.tau0_c);

    if (cfg_.use_value) active_features_.push_back(0);
    if (cfg_.use_slope) active_features_.push_back(1);
    if (cfg_.use_area) active_features_.push_back(2);
    J_ = static_cast<int>(active_features_.size());

    // knots at event-time quantiles (all durations if no events)
    std::vector<double> knot_times;
    double max_dur = 0.0;
    for (const auto& s : data_.subjects) {
        max_dur = std::max(max_dur, s.duration);
        if (s.event) knot_times.push_back(s.duration);
    }
    if (knot_times.empty())
        for (const auto& s : data_.subjects) knot_times.push_back(s.duration);
    basis_ = std::make_shared<BSplineBasis>(BSplineBasis::from_quantiles(
        knot_times, 0.0, max_dur * (1.0 + 1e-9), cfg_.n_interior_knots, cfg_.spline_degree));
    S_ = basis_->size();

    n_lc_ = q_ * (q_ - 1) / 2;
    int off = 0;
    off_beta_ = off;  off += G_ * 7;
    off_lsg_ = off;   off += G_;
    off_gamma_ = off; off += W_;
    off_theta_ = off; off += S_;
    off_d_ = off;     off += G_ * J_;
    off_xi_ = off;    off += G_ * J_;
    off_ls_ = off;    off += 1;
    off_zeta_ = off;  off += G_;
    off_lsj_ = off;   off += q_;
    off_lc_ = off;    off += n_lc_;
    off_z_ = off;     off += n_ * q_;
    n_param_ = off;

    build_cache();

    static const char* feat_name[3] = {"value", "slope", "area"};
    for (int g = 0; g < G_; ++g) {
        const std::string& f = data_.factor_names[static_cast<std::size_t>(g)];
        for (const char* part : {"int", "p1", "p2", "sex", "race", "lh", "ah"})
            report_names_.push_back("beta_" + f + "_" + part);
    }
    for (int g = 0; g < G_; ++g)
        report_names_.push_back("sigma_" + data_.factor_names[static_cast<std::size_t>(g)]);
    for (int k = 0; k < W_; ++k)
        report_names_.push_back("gamma_" + data_.w_names[static_cast<std::size_t>(k)]);
    for (int k = 0; k < S_; ++k) report_names_.push_back("spline_" + std::to_string(k));
    for (int g = 0; g < G_; ++g)
        for (int j = 0; j < J_; ++j) {
            std::string tag = std::string(feat_name[active_features_[static_cast<std::size_t>(j)]]) +
                              "_" + data_.factor_names[static_cast<std::size_t>(g)];
            report_names_.push_back("alpha_" + tag);
        }
    for (int g = 0; g < G_; ++g)
        for (int j = 0; j < J_; ++j) {
            std::string tag = std::string(feat_name[active_features_[static_cast<std::size_t>(j)]]) +
                              "_" + data_.factor_names[static_cast<std::size_t>(g)];
            report_names_.push_back("incl_" + tag);
        }
    for (int g = 0; g < G_; ++g)
        report_names_.push_back("pi_" + data_.factor_names[static_cast<std::size_t>(g)]);
    for (int r = 0; r < q_; ++r) report_names_.push_back("sigma_re_" + std::to_string(r));
}

void JointModel::build_cache() {
    const double T = data_.t_scale;

    // factor means for feature centering in the hazard
    feature_center_.assign(static_cast<std::size_t>(G_), 0.0);
    std::vector<long> counts(static_cast<std::size_t>(G_), 0);
    for (const auto& s : data_.subjects)
        for (const auto& o : s.obs) {
            feature_center_[static_cast<std::size_t>(o.factor)] += o.y;
            ++counts[static_cast<std::size_t>(o.factor)];
        }
    for (int g = 0; g < G_; ++g)
        if (counts[static_cast<std::size_t>(g)] > 0)
            feature_center_[static_cast<std::size_t>(g)] /= static_cast<double>(counts[static_cast<std::size_t>(g)]);

    w_mean_ = Eigen::VectorXd::Zero(W_);
    for (const auto& s : data_.subjects) w_mean_ += s.w;
    w_mean_ /= static_cast<double>(n_);

    const auto& knots = basis_->interior_knots();
    cache_.clear();
    cache_.resize(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
        const auto& subj = data_.subjects[static_cast<std::size_t>(i)];
        SubjCache& sc = cache_[static_cast<std::size_t>(i)];
        sc.wc = subj.w - w_mean_;
        sc.cov[0] = subj.sex;
        sc.cov[1] = subj.race;
        sc.cov[2] = subj.educ_lh;
        sc.cov[3] = subj.educ_ah;

        for (const auto& o : subj.obs) {
            ObsCache oc;
            oc.factor = o.factor;
            auto [p1, p2] = legendre_basis(o.age, T);
            oc.u[0] = 1.0;
            oc.u[1] = p1;
            oc.u[2] = p2;
            oc.y = o.y;
            sc.obs.push_back(oc);
        }

        // quadrature breakpoints: spline knots within (0, duration), with the
        // first segment geometrically subdivided (matches integrate_hazard)
        std::vector<double> cuts{0.0};
        for (double k : knots)
            if (k > 0.0 && k < subj.duration) cuts.push_back(k);
        cuts.push_back(subj.duration);
        std::vector<double> pts{0.0};
        const double t1 = cuts[1];
        for (int k = 4; k >= 1; --k) pts.push_back(t1 * std::pow(8.0, -k));
        for (std::size_t c = 1; c < cuts.size(); ++c) pts.push_back(cuts[c]);

        auto make_node = [&](double t, double weight, bool is_event) {
            NodeCache nc;
            nc.weight = weight;
            nc.is_event = is_event;
            basis_->eval_sparse(t, nc.spline_offset, nc.spline_vals);
            const double age = subj.base_age + t;
            auto [p1, p2] = legendre_basis(age, T);
            const double u = p1;
            const double a1 = age * age / T - age;
            const double a2 = (T / 4.0) * (u * u * u - u);
            nc.coef.resize(static_cast<std::size_t>(G_ * J_ * 3));
            nc.center.resize(static_cast<std::size_t>(G_ * J_));
            for (int g = 0; g < G_; ++g) {
                const double fbar = feature_center_[static_cast<std::size_t>(g)];
                for (int j = 0; j < J_; ++j) {
                    double* c3 = &nc.coef[static_cast<std::size_t>((g * J_ + j) * 3)];
                    double& ctr = nc.center[static_cast<std::size_t>(g * J_ + j)];
                    switch (active_features_[static_cast<std::size_t>(j)]) {
                        case 0:  // value
                            c3[0] = 1.0; c3[1] = p1; c3[2] = p2;
                            ctr = fbar;
                            break;
                        case 1:  // slope
                            c3[0] = 0.0; c3[1] = 2.0 / T; c3[2] = 6.0 * u / T;
                            ctr = 0.0;
                            break;
                        default:  // area on [0, age]
                            c3[0] = age; c3[1] = a1; c3[2] = a2;
                            ctr = fbar * age;
                            break;
                    }
                }
            }
            sc.nodes.push_back(std::move(nc));
        };

        for (std::size_t seg = 0; seg + 1 < pts.size(); ++seg) {
            const double a = pts[seg], b = pts[seg + 1];
            const double c = 0.5 * (a + b), h = 0.5 * (b - a);
            for (int jq = 0; jq < 15; ++jq)
                make_node(c + h * GaussLegendre15::nodes[static_cast<std::size_t>(jq)],
                          h * GaussLegendre15::weights[static_cast<std::size_t>(jq)], false);
        }
        if (subj.event) make_node(subj.duration, 0.0, true);
    }
}

double JointModel::log_posterior(const Eigen::VectorXd& x) const { return eval(x, nullptr); }

double JointModel::log_posterior_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    grad.setZero(n_param_);
    return eval(x, &grad);
}

double JointModel::eval(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (x.size() != n_param_) throw std::invalid_argument("JointModel::eval: dimension mismatch");
    const int GJ = G_ * J_;
    double lp = 0.0;

    // ---- unpack constrained parameters
    std::vector<double> sigma_g(static_cast<std::size_t>(G_));
    for (int g = 0; g < G_; ++g) sigma_g[static_cast<std::size_t>(g)] = std::exp(x[off_lsg_ + g]);
    std::vector<double> tau(static_cast<std::size_t>(GJ)), alpha(static_cast<std::size_t>(GJ));
    for (int t = 0; t < GJ; ++t) {
        tau[static_cast<std::size_t>(t)] = std::exp(x[off_xi_ + t]);
        alpha[static_cast<std::size_t>(t)] = tau[static_cast<std::size_t>(t)] * x[off_d_ + t];
    }
    const double s_scale = std::exp(x[off_ls_]);
    std::vector<double> pi_g(static_cast<std::size_t>(G_));
    for (int g = 0; g < G_; ++g) pi_g[static_cast<std::size_t>(g)] = logistic(x[off_zeta_ + g]);
    std::vector<double> sigma_j(static_cast<std::size_t>(q_));
    for (int r = 0; r < q_; ++r) sigma_j[static_cast<std::size_t>(r)] = std::exp(x[off_lsj_ + r]);

    // ---- Cholesky-correlation transform (tanh partial correlations)
    Eigen::MatrixXd Lc = Eigen::MatrixXd::Zero(q_, q_);
    Lc(0, 0) = 1.0;
    std::vector<std::vector<double>> row_w(static_cast<std::size_t>(q_)),
        row_rem(static_cast<std::size_t>(q_));
    {
        int idx = 0;
        for (int i = 1; i < q_; ++i) {
            double rem = 1.0;
            auto& ws = row_w[static_cast<std::size_t>(i)];
            auto& rems = row_rem[static_cast<std::size_t>(i)];
            for (int j = 0; j < i; ++j) {
                const double w = std::tanh(x[off_lc_ + idx]);
                ws.push_back(w);
                rems.push_back(rem);
                Lc(i, j) = w * std::sqrt(rem);
                lp += std::log1p(-w * w) + 0.5 * std::log(rem);  // transform Jacobian
                rem -= Lc(i, j) * Lc(i, j);
                rem = std::max(rem, 1e-300);
                ++idx;
            }
            rems.push_back(rem);
            Lc(i, i) = std::sqrt(rem);
            lp += static_cast<double>(q_ - 1 - i) * std::log(Lc(i, i));  // LKJ(1)
        }
    }

    Eigen::MatrixXd GL;  // gradient wrt Lc entries
    if (grad) GL = Eigen::MatrixXd::Zero(q_, q_);

    std::vector<double> galpha(static_cast<std::size_t>(GJ), 0.0);

    // ---- per-subject likelihood
    std::vector<double> eta_buf, f_buf;
    Eigen::VectorXd u_i(q_), b_i(q_), gb(q_), gz(q_);
    for (int i = 0; i < n_; ++i) {
        const SubjCache& sc = cache_[static_cast<std::size_t>(i)];
        const auto z_i = x.segment(off_z_ + i * q_, q_);
        u_i.noalias() = Lc.triangularView<Eigen::Lower>() * z_i;
        for (int r = 0; r < q_; ++r) b_i[r] = sigma_j[static_cast<std::size_t>(r)] * u_i[r];

        // effective trajectory coefficients per factor
        double c_eff[64][3];
        for (int g = 0; g < G_; ++g) {
            const double* bg = &x[off_beta_ + g * 7];
            c_eff[g][0] = bg[0] + bg[3] * sc.cov[0] + bg[4] * sc.cov[1] + bg[5] * sc.cov[2] +
                          bg[6] * sc.cov[3] + b_i[3 * g];
            c_eff[g][1] = bg[1] + b_i[3 * g + 1];
            c_eff[g][2] = bg[2] + b_i[3 * g + 2];
        }

        double gc[64][3] = {};

        // longitudinal sub-model
        for (const auto& oc : sc.obs) {
            const int g = oc.factor;
            const double sg = sigma_g[static_cast<std::size_t>(g)];
            const double mu =
                c_eff[g][0] * oc.u[0] + c_eff[g][1] * oc.u[1] + c_eff[g][2] * oc.u[2];
            const double r = oc.y - mu;
            lp += -0.5 * r * r / (sg * sg) - std::log(sg) - 0.91893853320467274178;
            if (grad) {
                const double gmu = r / (sg * sg);
                gc[g][0] += gmu * oc.u[0];
                gc[g][1] += gmu * oc.u[1];
                gc[g][2] += gmu * oc.u[2];
                // d/d(log sigma_g)
                (*grad)[off_lsg_ + g] += r * r / (sg * sg) - 1.0;
            }
        }

        // survival sub-model
        const double w_dot = [&] {
            double s = 0.0;
            for (int k = 0; k < W_; ++k) s += x[off_gamma_ + k] * sc.wc[k];
            return s;
        }();
        const std::size_t n_nodes = sc.nodes.size();
        eta_buf.assign(n_nodes, 0.0);
        f_buf.assign(n_nodes * static_cast<std::size_t>(GJ), 0.0);
        for (std::size_t nq = 0; nq < n_nodes; ++nq) {
            const NodeCache& nc = sc.nodes[nq];
            double eta = w_dot;
            for (int k = 0; k <= cfg_.spline_degree; ++k)
                eta += nc.spline_vals[k] * x[off_theta_ + nc.spline_offset + k];
            for (int g = 0; g < G_; ++g)
                for (int j = 0; j < J_; ++j) {
                    const int t = g * J_ + j;
                    const double* c3 = &nc.coef[static_cast<std::size_t>(t * 3)];
                    const double f = c3[0] * c_eff[g][0] + c3[1] * c_eff[g][1] +
                                     c3[2] * c_eff[g][2] - nc.center[static_cast<std::size_t>(t)];
                    f_buf[nq * static_cast<std::size_t>(GJ) + static_cast<std::size_t>(t)] = f;
                    eta += alpha[static_cast<std::size_t>(t)] * f;
                }
            eta_buf[nq] = eta;
            if (nc.is_event)
                lp += eta;
            else
                lp -= nc.weight * std::exp(eta);
        }

        if (grad) {
            for (std::size_t nq = 0; nq < n_nodes; ++nq) {
                const NodeCache& nc = sc.nodes[nq];
                const double e = nc.is_event ? 1.0 : -nc.weight * std::exp(eta_buf[nq]);
                for (int k = 0; k <= cfg_.spline_degree; ++k)
                    (*grad)[off_theta_ + nc.spline_offset + k] += e * nc.spline_vals[k];
                for (int k = 0; k < W_; ++k) (*grad)[off_gamma_ + k] += e * sc.wc[k];
                for (int g = 0; g < G_; ++g)
                    for (int j = 0; j < J_; ++j) {
                        const int t = g * J_ + j;
                        const double* c3 = &nc.coef[static_cast<std::size_t>(t * 3)];
                        galpha[static_cast<std::size_t>(t)] +=
                            e * f_buf[nq * static_cast<std::size_t>(GJ) + static_cast<std::size_t>(t)];
                        const double ea = e * alpha[static_cast<std::size_t>(t)];
                        gc[g][0] += ea * c3[0];
                        gc[g][1] += ea * c3[1];
                        gc[g][2] += ea * c3[2];
                    }
            }

            // distribute effective-coefficient gradients
            gb.setZero();
            for (int g = 0; g < G_; ++g) {
                double* gbeta = &(*grad)[off_beta_ + g * 7];
                gbeta[0] += gc[g][0];
                gbeta[1] += gc[g][1];
                gbeta[2] += gc[g][2];
                gbeta[3] += gc[g][0] * sc.cov[0];
                gbeta[4] += gc[g][0] * sc.cov[1];
                gbeta[5] += gc[g][0] * sc.cov[2];
                gbeta[6] += gc[g][0] * sc.cov[3];
                gb[3 * g] += gc[g][0];
                gb[3 * g + 1] += gc[g][1];
                gb[3 * g + 2] += gc[g][2];
            }
            // chain through b = sigma .* (Lc z)
            for (int r = 0; r < q_; ++r) {
                (*grad)[off_lsj_ + r] += gb[r] * u_i[r] * sigma_j[static_cast<std::size_t>(r)];
                gb[r] *= sigma_j[static_cast<std::size_t>(r)];  // now gradient wrt u
            }
            gz.noalias() = Lc.triangularView<Eigen::Lower>().transpose() * gb;
            for (int r = 0; r < q_; ++r) (*grad)[off_z_ + i * q_ + r] += gz[r];
            GL.noalias() += gb * z_i.transpose();
        }

        // z prior
        lp -= 0.5 * z_i.squaredNorm();
        lp -= static_cast<double>(q_) * 0.91893853320467274178;
        if (grad) (*grad).segment(off_z_ + i * q_, q_) -= z_i;
    }

    // ---- reverse pass through the Cholesky-correlation transform
    if (grad) {
        // LKJ(1) diagonal terms
        for (int i = 1; i < q_; ++i) GL(i, i) += static_cast<double>(q_ - 1 - i) / Lc(i, i);
        int base = 0;
        for (int i = 1; i < q_; ++i) {
            const auto& ws = row_w[static_cast<std::size_t>(i)];
            const auto& rems = row_rem[static_cast<std::size_t>(i)];
            double grem = GL(i, i) * 0.5 / std::sqrt(rems[static_cast<std::size_t>(i)]);
            for (int j = i - 1; j >= 0; --j) {
                const double w = ws[static_cast<std::size_t>(j)];
                const double rem = rems[static_cast<std::size_t>(j)];
                const double sr = std::sqrt(rem);
                const double L = w * sr;
                const double gLv = GL(i, j) - grem * 2.0 * L;
                const double gw = gLv * sr - 2.0 * w / (1.0 - w * w);
                const double grem_j = grem + gLv * w * 0.5 / sr + 0.5 / rem;
                (*grad)[off_lc_ + base + j] += gw * (1.0 - w * w);
                grem = grem_j;
            }
            base += i;
        }
    }

    // ---- priors
    auto add_normal_prior = [&](int off, int len, double sd) {
        for (int k = 0; k < len; ++k) {
            const double v = x[off + k];
            lp += norm_logpdf(v, 0.0, sd);
            if (grad) (*grad)[off + k] -= v / (sd * sd);
        }
    };
    add_normal_prior(off_beta_, G_ * 7, cfg_.beta_prior_sd);
    add_normal_prior(off_gamma_, W_, cfg_.gamma_prior_sd);
    add_normal_prior(off_theta_, S_, cfg_.spline_prior_sd);

    // residual sds: half-normal on sigma_g, sampled on the log scale
    for (int g = 0; g < G_; ++g) {
        const double sg = sigma_g[static_cast<std::size_t>(g)];
        const double psd = cfg_.sigma_resid_prior_sd;
        lp += std::log(2.0) + norm_logpdf(sg, 0.0, psd) + x[off_lsg_ + g];
        if (grad) (*grad)[off_lsg_ + g] += -sg * sg / (psd * psd) + 1.0;
    }

    // random-effect scales: half-normal(0,1)
    for (int r = 0; r < q_; ++r) {
        const double sj = sigma_j[static_cast<std::size_t>(r)];
        lp += std::log(2.0) + norm_logpdf(sj, 0.0, 1.0) + x[off_lsj_ + r];
        if (grad) (*grad)[off_lsj_ + r] += -sj * sj + 1.0;
    }

    // spike-and-slab link priors (discrete indicators marginalized)
    std::vector<double> gpi(static_cast<std::size_t>(G_), 0.0);
    double g_ls = 0.0;
    for (int g = 0; g < G_; ++g)
        for (int j = 0; j < J_; ++j) {
            const int t = g * J_ + j;
            const double pi = pi_g[static_cast<std::size_t>(g)];
            const double dv = x[off_d_ + t];
            const double phi0 = norm_pdf(dv, tau0_);
            const double phi1 = norm_pdf(dv, 1.0);
            const double md = (1.0 - pi) * phi0 + pi * phi1;
            lp += std::log(md);
            if (grad) {
                (*grad)[off_d_ + t] +=
                    ((1.0 - pi) * phi0 * (-dv / (tau0_ * tau0_)) + pi * phi1 * (-dv)) / md;
                gpi[static_cast<std::size_t>(g)] += (phi1 - phi0) / md;
            }

            const double tv = tau[static_cast<std::size_t>(t)];
            const double a0 = tau0_ * s_scale, a1 = s_scale;
            const double h0 = 2.0 * norm_pdf(tv, a0);
            const double h1 = 2.0 * norm_pdf(tv, a1);
            const double mt = (1.0 - pi) * h0 + pi * h1;
            lp += std::log(mt) + x[off_xi_ + t];  // + Jacobian of tau = exp(xi)
            if (grad) {
                const double dmt_dtau =
                    (1.0 - pi) * h0 * (-tv / (a0 * a0)) + pi * h1 * (-tv / (a1 * a1));
                (*grad)[off_xi_ + t] += (dmt_dtau / mt) * tv + 1.0;
                gpi[static_cast<std::size_t>(g)] += (h1 - h0) / mt;
                const double dh0_ds = h0 * (tv * tv / (a0 * a0 * s_scale) - 1.0 / s_scale);
                const double dh1_ds = h1 * (tv * tv / (a1 * a1 * s_scale) - 1.0 / s_scale);
                g_ls += (((1.0 - pi) * dh0_ds + pi * dh1_ds) / mt) * s_scale;
            }
        }

    // s^2 ~ Inv-Gamma(a, b), sampled as log s
    {
        const double as = cfg_.s2_a, bs = cfg_.s2_b;
        const double ls = x[off_ls_];
        lp += as * std::log(bs) - std::lgamma(as) - (as + 1.0) * 2.0 * ls -
              bs * std::exp(-2.0 * ls) + std::log(2.0) + 2.0 * ls;
        if (grad) (*grad)[off_ls_] += g_ls - 2.0 * (as + 1.0) + 2.0 * bs * std::exp(-2.0 * ls) + 2.0;
    }

    // pi_g ~ Beta(a, b), sampled on the logit scale
    for (int g = 0; g < G_; ++g) {
        const double pi = pi_g[static_cast<std::size_t>(g)];
        const double a = cfg_.pi_a, b = cfg_.pi_b;
        lp += (a - 1.0) * std::log(pi) + (b - 1.0) * std::log1p(-pi) + std::log(pi) +
              std::log1p(-pi);
        if (grad)
            (*grad)[off_zeta_ + g] += gpi[static_cast<std::size_t>(g)] * pi * (1.0 - pi) +
                                      (a - 1.0) * (1.0 - pi) - (b - 1.0) * pi + 1.0 - 2.0 * pi;
    }

    return lp;
}

Eigen::VectorXd JointModel::initial_point(Rng& rng) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_param_);

    // per-factor least squares for beta_g and sigma_g
    for (int g = 0; g < G_; ++g) {
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Identity(7, 7) * 1e-6;
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(7);
        for (int i = 0; i < n_; ++i) {
            const SubjCache& sc = cache_[static_cast<std::size_t>(i)];
            for (const auto& oc : sc.obs) {
                if (oc.factor != g) continue;
                Eigen::Matrix<double, 7, 1> row;
                row << oc.u[0], oc.u[1], oc.u[2], sc.cov[0], sc.cov[1], sc.cov[2], sc.cov[3];
                xtx.noalias() += row * row.transpose();
                xty.noalias() += row * oc.y;
            }
        }
        Eigen::VectorXd beta = xtx.ldlt().solve(xty);
        double ssr = 0.0;
        long cnt = 0;
        std::vector<double> subj_mean_resid;
        for (int i = 0; i < n_; ++i) {
            const SubjCache& sc = cache_[static_cast<std::size_t>(i)];
            double sr = 0.0;
            long sn = 0;
            for (const auto& oc : sc.obs) {
                if (oc.factor != g) continue;
                Eigen::Matrix<double, 7, 1> row;
                row << oc.u[0], oc.u[1], oc.u[2], sc.cov[0], sc.cov[1], sc.cov[2], sc.cov[3];
                const double r = oc.y - row.dot(beta);
                ssr += r * r;
                ++cnt;
                sr += r;
                ++sn;
            }
            if (sn > 0) subj_mean_resid.push_back(sr / static_cast<double>(sn));
        }
        for (int k = 0; k < 7; ++k) x[off_beta_ + g * 7 + k] = beta[k];
        const double sg = std::sqrt(std::max(ssr / std::max<long>(cnt, 1), 1e-4));
        x[off_lsg_ + g] = std::log(sg);

        const double re_sd = std::max(sample_sd(subj_mean_resid), 0.05);
        x[off_lsj_ + 3 * g] = std::log(re_sd);
        x[off_lsj_ + 3 * g + 1] = std::log(std::max(re_sd / 3.0, 0.02));
        x[off_lsj_ + 3 * g + 2] = std::log(std::max(re_sd / 6.0, 0.02));
    }

    // constant baseline hazard matching the overall event rate
    double events = 0.0, exposure = 0.0;
    for (const auto& s : data_.subjects) {
        events += s.event;
        exposure += s.duration;
    }
    const double rate = std::max(events, 0.5) / exposure;
    for (int k = 0; k < S_; ++k) x[off_theta_ + k] = std::log(rate);

    for (int t = 0; t < G_ * J_; ++t) {
        x[off_d_ + t] = 0.01 * rnorm(rng);
        x[off_xi_ + t] = std::log(0.5) + 0.05 * rnorm(rng);
    }
    x[off_ls_] = 0.0;
    for (int g = 0; g < G_; ++g) x[off_zeta_ + g] = 0.0;
    for (int k = 0; k < n_lc_; ++k) x[off_lc_ + k] = 0.01 * rnorm(rng);
    for (int i = 0; i < n_ * q_; ++i) x[off_z_ + i] = 0.01 * rnorm(rng);

    // mild jitter on regression blocks
    for (int k = 0; k < G_ * 7; ++k) x[off_beta_ + k] += 0.01 * rnorm(rng);
    for (int k = 0; k < W_; ++k) x[off_gamma_ + k] = 0.01 * rnorm(rng);
    return x;
}

Eigen::VectorXd JointModel::report(const Eigen::VectorXd& x) const {
    std::vector<double> out;
    out.reserve(report_names_.size());
    for (int k = 0; k < G_ * 7; ++k) out.push_back(x[off_beta_ + k]);
    for (int g = 0; g < G_; ++g) out.push_back(std::exp(x[off_lsg_ + g]));
    for (int k = 0; k < W_; ++k) out.push_back(x[off_gamma_ + k]);
    for (int k = 0; k < S_; ++k) out.push_back(x[off_theta_ + k]);
    for (int t = 0; t < G_ * J_; ++t) out.push_back(std::exp(x[off_xi_ + t]) * x[off_d_ + t]);
    for (int g = 0; g < G_; ++g)
        for (int j = 0; j < J_; ++j) {
            const int t = g * J_ + j;
            const double pi = logistic(x[off_zeta_ + g]);
            const double dv = x[off_d_ + t];
            const double phi0 = norm_pdf(dv, tau0_);
            const double phi1 = norm_pdf(dv, 1.0);
            out.push_back(pi * phi1 / ((1.0 - pi) * phi0 + pi * phi1));
        }
    for (int g = 0; g < G_; ++g) out.push_back(logistic(x[off_zeta_ + g]));
    for (int r = 0; r < q_; ++r) out.push_back(std::exp(x[off_lsj_ + r]));
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

JointFitResult JointModel::fit() const {
    Rng rng(derive_seed(cfg_.seed, {0x10177ULL}));

    Eigen::VectorXd x;
    Eigen::VectorXd g(n_param_);
    double lp = -std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < 10; ++attempt) {
        x = initial_point(rng);
        lp = log_posterior_grad(x, g);
        if (std::isfinite(lp) && g.allFinite()) break;
    }
    if (!std::isfinite(lp))
        throw std::runtime_error("fit_joint_model: non-finite posterior at initialization");

    Eigen::VectorXd metric = Eigen::VectorXd::Ones(n_param_);  // posterior variance estimate

    const int warmup = cfg_.n_warmup;
    const int phase1 = warmup / 2;
    double step = cfg_.init_step;

    // dual averaging state
    double mu_da = std::log(10.0 * step), log_step_bar = std::log(step), h_bar = 0.0;
    int da_count = 0;
    auto da_reset = [&](double s0) {
        mu_da = std::log(10.0 * s0);
        log_step_bar = std::log(s0);
        h_bar = 0.0;
        da_count = 0;
        step = s0;
    };
    auto da_update = [&](double accept_prob) {
        ++da_count;
        const double t0 = 10.0, gamma_da = 0.05, kappa = 0.75;
        h_bar = (1.0 - 1.0 / (da_count + t0)) * h_bar +
                (cfg_.target_accept - accept_prob) / (da_count + t0);
        double log_step = mu_da - std::sqrt(static_cast<double>(da_count)) / gamma_da * h_bar;
        double eta = std::pow(static_cast<double>(da_count), -kappa);
        log_step_bar = eta * log_step + (1.0 - eta) * log_step_bar;
        step = std::exp(log_step);
    };

    Eigen::VectorXd p(n_param_), x_new(n_param_), g_new(n_param_);
    std::vector<Eigen::VectorXd> warm_draws;
    std::vector<Eigen::VectorXd> draws;
    long accepted = 0, total = 0;

    auto hmc_step = [&](double eps, double& accept_prob) {
        for (int k = 0; k < n_param_; ++k) p[k] = rnorm(rng) / std::sqrt(metric[k]);
        const double kin0 = 0.5 * (p.array().square() * metric.array()).sum();
        x_new = x;
        g_new = g;
        const int L = std::uniform_int_distribution<int>(std::max(1, cfg_.leapfrog / 2),
                                                         cfg_.leapfrog)(rng);
        double lp_new = lp;
        bool bad = false;
        p.noalias() += 0.5 * eps * g_new;
        for (int l = 0; l < L; ++l) {
            x_new.array() += eps * metric.array() * p.array();
            lp_new = log_posterior_grad(x_new, g_new);
            if (!std::isfinite(lp_new) || !g_new.allFinite()) {
                bad = true;
                break;
            }
            p.noalias() += (l + 1 == L ? 0.5 : 1.0) * eps * g_new;
        }
        if (bad) {
            accept_prob = 0.0;
            return;
        }
        const double kin1 = 0.5 * (p.array().square() * metric.array()).sum();
        const double dh = (lp_new - kin1) - (lp - kin0);
        accept_prob = std::isfinite(dh) ? std::min(1.0, std::exp(dh)) : 0.0;
        if (runif(rng) < accept_prob) {
            x.swap(x_new);
            g.swap(g_new);
            lp = lp_new;
        }
    };

    for (int it = 0; it < warmup; ++it) {
        double ap = 0.0;
        hmc_step(step, ap);
        da_update(ap);
        if (it >= phase1 / 2 && it < phase1) warm_draws.push_back(x);
        if (it + 1 == phase1) {
            // diagonal metric from the first-phase draws
            if (warm_draws.size() >= 10) {
                for (int k = 0; k < n_param_; ++k) {
                    double m = 0.0, ss = 0.0;
                    for (const auto& d : warm_draws) m += d[k];
                    m /= static_cast<double>(warm_draws.size());
                    for (const auto& d : warm_draws) ss += (d[k] - m) * (d[k] - m);
                    double v = ss / static_cast<double>(warm_draws.size() - 1);
                    // regularized toward unity, Stan-style
                    v = (static_cast<double>(warm_draws.size()) /
                         (warm_draws.size() + 5.0)) * v +
                        1e-3 * (5.0 / (warm_draws.size() + 5.0));
                    metric[k] = std::max(v, 1e-8);
                }
            }
            warm_draws.clear();
            da_reset(std::exp(log_step_bar));
        }
    }
    step = std::exp(log_step_bar);

    for (int it = 0; it < cfg_.n_iter; ++it) {
        double ap = 0.0;
        hmc_step(step, ap);
        accepted += (ap > 0.5) ? 1 : 0;
        ++total;
        draws.push_back(report(x));
    }

    JointFitResult res;
    res.names = report_names_;
    res.draws = std::move(draws);
    res.accept_rate = total > 0 ? static_cast<double>(accepted) / static_cast<double>(total) : 0.0;
    res.step_size = step;
    for (std::size_t k = 0; k < report_names_.size(); ++k) {
        std::vector<double> chain;
        chain.reserve(res.draws.size());
        for (const auto& d : res.draws) chain.push_back(d[static_cast<Eigen::Index>(k)]);
        ParamSummary ps;
        ps.name = report_names_[k];
        ps.mean = mean(chain);
        ps.sd = sample_sd(chain);
        ps.q025 = quantile(chain, 0.025);
        ps.q975 = quantile(chain, 0.975);
        ps.ess = effective_sample_size(chain);
        ps.rhat = split_rhat(chain);
        res.summaries.push_back(ps);
    }
    return res;
}

const ParamSummary& JointFitResult::summary(const std::string& name) const {
    for (const auto& s : summaries)
        if (s.name == name) return s;
    throw std::out_of_range("JointFitResult: no parameter named '" + name + "'");
}

JointFitResult fit_joint_model(const Cohort& cohort, const JointConfig& cfg,
                               const std::map<std::string, int>* event_override) {
    JointData data = make_joint_data(cohort, event_override);
    bool any_event = false;
    for (const auto& s : data.subjects) any_event |= (s.event != 0);
    if (!any_event) throw std::runtime_error("fit_joint_model: no events");
    JointModel model(std::move(data), cfg);
    return model.fit();
}

void write_posterior_summary(const JointFitResult& fit, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "parameter,mean,sd,q025,q975,ess,rhat\n";
    char buf[256];
    for (const auto& s : fit.summaries) {
        std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", s.name.c_str(),
                      s.mean, s.sd, s.q025, s.q975, s.ess, s.rhat);
        out << buf;
    }
}

}  // namespace adjud
