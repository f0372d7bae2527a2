#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "popgrid/mcmc.hpp"
#include "popgrid/stats.hpp"
#include "popgrid/survey.hpp"

namespace popgrid {

enum class EffectMode { random_by_type, fixed };

inline const char* effect_mode_name(EffectMode m) {
    return m == EffectMode::random_by_type ? "random" : "fixed";
}

/// Model definition: which covariates enter the linear predictor, whether
/// each slope is shared across settlement types or estimated per type, and
/// the flat-prior constants.
struct ModelSpec {
    std::vector<std::string> covariate_names;
    std::vector<EffectMode> modes;
    double prior_location_sd = 1000.0; // Normal(0, sd) on top-level locations
    double prior_scale_upper = 1000.0; // Uniform(0, upper) on top-level scales

    std::size_t n_covariates() const { return covariate_names.size(); }
};

/// Nesting structure of the intercept hierarchy. Regions are globally
/// numbered and each maps to exactly one province.
struct Hierarchy {
    int n_provinces = 0;             // P
    int n_regions = 0;               // L
    std::vector<int> region_province; // [L], 0-based; -1 when never observed
};

/// Per-cluster standard deviation of log density: the stratum-level scale
/// parameter deflated by the cluster's model weight. Larger weights mean a
/// tighter likelihood contribution.
inline double cluster_sd(double v, double tau_tp) {
    if (!(v > 0.0) || !(tau_tp > 0.0))
        throw Error("cluster_sd: weight and scale must both be positive");
    return std::sqrt(1.0 / (v * tau_tp * tau_tp));
}

/// Stratum-level prediction scale: sqrt(weight)-weighted mean of the
/// per-cluster scales. Used wherever no per-cluster weight exists (grid
/// cells, held-out clusters).
inline double pooled_sd(std::span<const double> taus, std::span<const double> weights) {
    if (taus.empty() || taus.size() != weights.size())
        throw Error("pooled_sd: need equal-length nonempty inputs");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const double sw = std::sqrt(weights[i]);
        num += taus[i] * sw;
        den += sw;
    }
    return num / den;
}

/// Columnar view of the retained clusters, precomputed for the sampler.
struct ClusterData {
    int n = 0;
    std::vector<long long> pop;
    std::vector<double> area, log_area, lgamma_pop1;
    std::vector<double> weight, sqrt_weight; // v_i and sqrt(v_i)
    std::vector<int> type, province, region; // 0-based
    Matrix covariates;                       // n x K
    std::vector<std::string> ids;
    std::vector<double> x, y;
};

namespace detail {

enum class ParamKind : int {
    xi_t,
    nu_t,
    mu_t,
    sigma_t,
    xi_tp,
    nu_tp,
    tau_tp,
    mu_tp,
    sigma_tp,
    beta_random,
    beta_fixed,
    rho,
    omega,
    alpha,
    log_density,
};

struct ParamInfo {
    ParamKind kind;
    int t = -1, p = -1, l = -1, k = -1, i = -1;
};

} // namespace detail

/// The population density model over survey clusters: Poisson counts with a
/// log-normal density layer, nested intercept hierarchy by settlement type,
/// province and sub-provincial region, per-type or shared covariate slopes,
/// and a weighted-precision scale so population-weighted survey designs
/// yield design-unbiased estimates.
///
/// The sampler state is the flat vector [xi_t | nu_t | mu_t | sigma_t |
/// xi_tp | nu_tp | tau_tp | mu_tp | sigma_tp | covariate blocks | alpha for
/// observed (type, region) strata | log density per cluster]. Conventions,
/// applied consistently here, in the synthetic generator and in the test
/// oracles: the second argument of every Normal/LogNormal is a standard
/// deviation; Half-Normal(loc, scale) is a Normal truncated to [0, inf)
/// including its normalizing constant; Uniform(0, u) carries density 1/u.
class PopulationModel : public TargetModel {
  public:
    static constexpr int T = N_SETTLEMENT_TYPES;

    PopulationModel(std::vector<ClusterRecord> records, ModelSpec spec, Hierarchy hier = {})
        : spec_(std::move(spec)) {
        if (records.empty())
            throw Error("PopulationModel: no clusters");
        if (spec_.modes.size() != spec_.covariate_names.size())
            throw Error("PopulationModel: one effect mode required per covariate");
        build_hierarchy(records, hier);
        build_data(records);
        build_layout();
    }

    // --- structure access -------------------------------------------------

    const ModelSpec& spec() const { return spec_; }
    const Hierarchy& hierarchy() const { return hier_; }
    const ClusterData& data() const { return data_; }
    int n_params() const { return static_cast<int>(infos_.size()); }

    int idx_xi_t(int t) const { return t; }
    int idx_nu_t(int t) const { return T + t; }
    int idx_mu_t(int t) const { return 2 * T + t; }
    int idx_sigma_t(int t) const { return 3 * T + t; }
    int idx_xi_tp(int t, int p) const { return base_tp_ + 0 * TP_ + t * P() + p; }
    int idx_nu_tp(int t, int p) const { return base_tp_ + 1 * TP_ + t * P() + p; }
    int idx_tau_tp(int t, int p) const { return base_tp_ + 2 * TP_ + t * P() + p; }
    int idx_mu_tp(int t, int p) const { return base_tp_ + 3 * TP_ + t * P() + p; }
    int idx_sigma_tp(int t, int p) const { return base_tp_ + 4 * TP_ + t * P() + p; }
    int idx_beta(int k, int t) const {
        return spec_.modes[k] == EffectMode::fixed ? idx_beta_fixed_[k] : idx_beta_random_[k * T + t];
    }
    int idx_rho(int k) const { return idx_rho_[k]; }
    int idx_omega(int k) const { return idx_omega_[k]; }
    /// -1 when the (type, region) stratum has no surveyed cluster.
    int idx_alpha(int t, int l) const { return idx_alpha_[static_cast<std::size_t>(t) * L() + l]; }
    int idx_log_density(int i) const { return base_logd_ + i; }

    int P() const { return hier_.n_provinces; }
    int L() const { return hier_.n_regions; }
    int K() const { return static_cast<int>(spec_.n_covariates()); }

    bool alpha_active(int t, int l) const { return idx_alpha(t, l) >= 0; }
    const std::vector<int>& clusters_in_tp(int t, int p) const { return by_tp_[t * P() + p]; }
    const std::vector<int>& clusters_in_type(int t) const { return by_t_[t]; }

    // --- spec'd quantities -------------------------------------------------

    /// Expected log density of cluster i: local intercept plus covariate
    /// effects, per-type or shared according to the effect mode.
    double linear_predictor(std::span<const double> s, int i) const {
        const int t = data_.type[i];
        double acc = s[idx_alpha(t, data_.region[i])];
        for (int k = 0; k < K(); ++k)
            acc += s[idx_beta(k, t)] * data_.covariates.at(i, k);
        return acc;
    }

    double cluster_sd_of(std::span<const double> s, int i) const {
        return cluster_sd(data_.weight[i], s[idx_tau_tp(data_.type[i], data_.province[i])]);
    }

    /// Data terms: Poisson(count | density * area) plus the log-normal
    /// density layer, evaluated on the density scale.
    double log_likelihood(std::span<const double> s) const {
        double acc = 0.0;
        for (int i = 0; i < data_.n; ++i) {
            const double d = s[idx_log_density(i)];
            const double sd = cluster_sd_of(s, i);
            if (!(sd > 0.0))
                return NEG_INF;
            acc += poisson_term(i, d);
            // log-normal density of D = exp(d): normal in d minus log D.
            acc += log_normal_pdf(d, linear_predictor(s, i), sd) - d;
        }
        return acc;
    }

    /// All prior terms. Any support violation returns -inf.
    double log_prior(std::span<const double> s) const {
        const double S = spec_.prior_location_sd;
        const double U = spec_.prior_scale_upper;
        double acc = 0.0;
        for (int t = 0; t < T; ++t) {
            acc += log_normal_pdf(s[idx_xi_t(t)], 0.0, S);
            acc += log_uniform_pdf(s[idx_nu_t(t)], 0.0, U);
            acc += log_normal_pdf(s[idx_mu_t(t)], 0.0, S);
            acc += log_uniform_pdf(s[idx_sigma_t(t)], 0.0, U);
            if (!std::isfinite(acc))
                return NEG_INF;
            for (int p = 0; p < P(); ++p) {
                acc += log_normal_pdf(s[idx_xi_tp(t, p)], s[idx_xi_t(t)], s[idx_nu_t(t)]);
                acc += log_uniform_pdf(s[idx_nu_tp(t, p)], 0.0, s[idx_nu_t(t)]);
                acc += log_half_normal_pdf(s[idx_mu_tp(t, p)], s[idx_mu_t(t)], s[idx_sigma_t(t)]);
                acc += log_uniform_pdf(s[idx_sigma_tp(t, p)], 0.0, s[idx_sigma_t(t)]);
                acc += log_half_normal_pdf(s[idx_tau_tp(t, p)], s[idx_mu_tp(t, p)],
                                           s[idx_sigma_tp(t, p)]);
                if (!std::isfinite(acc))
                    return NEG_INF;
            }
            for (int l = 0; l < L(); ++l) {
                const int ia = idx_alpha(t, l);
                if (ia < 0)
                    continue;
                const int p = hier_.region_province[l];
                acc += log_normal_pdf(s[ia], s[idx_xi_tp(t, p)], s[idx_nu_tp(t, p)]);
            }
        }
        for (int k = 0; k < K(); ++k) {
            if (spec_.modes[k] == EffectMode::fixed) {
                acc += log_normal_pdf(s[idx_beta(k, 0)], 0.0, S);
            } else {
                acc += log_normal_pdf(s[idx_rho(k)], 0.0, S);
                acc += log_uniform_pdf(s[idx_omega(k)], 0.0, U);
                for (int t = 0; t < T; ++t)
                    acc += log_normal_pdf(s[idx_beta(k, t)], s[idx_rho(k)], s[idx_omega(k)]);
            }
            if (!std::isfinite(acc))
                return NEG_INF;
        }
        return acc;
    }

    /// Prediction scale for stratum (t, p): pooled over the stratum's
    /// clusters; empty strata borrow the type-level pool across provinces,
    /// and in the extreme the global pool.
    double tau_hat(std::span<const double> s, int t, int p) const {
        const std::vector<int>* members = &clusters_in_tp(t, p);
        if (members->empty())
            members = &clusters_in_type(t);
        std::vector<int> all;
        if (members->empty()) {
            all.resize(data_.n);
            for (int i = 0; i < data_.n; ++i)
                all[i] = i;
            members = &all;
        }
        std::vector<double> taus, ws;
        taus.reserve(members->size());
        ws.reserve(members->size());
        for (int i : *members) {
            taus.push_back(cluster_sd(data_.weight[i], s[idx_tau_tp(data_.type[i], data_.province[i])]));
            ws.push_back(data_.weight[i]);
        }
        return pooled_sd(taus, ws);
    }

    // --- TargetModel ------------------------------------------------------

    int dimension() const override { return n_params(); }

    std::vector<std::string> parameter_names() const override { return names_; }

    /// Full log posterior over the sampler state. The latent coordinates are
    /// log densities, so the log-normal layer contributes plain normal terms
    /// (the density-scale Jacobian cancels against the change of variables).
    double log_posterior(std::span<const double> s) const override {
        const double prior = log_prior(s);
        if (!std::isfinite(prior))
            return NEG_INF;
        double acc = prior;
        for (int i = 0; i < data_.n; ++i) {
            const double d = s[idx_log_density(i)];
            acc += poisson_term(i, d);
            acc += log_normal_pdf(d, linear_predictor(s, i), cluster_sd_of(s, i));
        }
        return acc;
    }

    double conditional_log_posterior(std::span<const double> s, int j) const override;

    /// Overdispersed chain start: data-driven centers with hyper-locations
    /// jittered at prior_sd/100, intercepts at stratum mean log density.
    void initialize_state(std::vector<double>& state, RngStream& rng) const override;

    // --- helpers used by fit/predict ---------------------------------------

    std::string settlement_token(int t) const { return t == 0 ? "urban" : "rural"; }

  private:
    double poisson_term(int i, double log_density) const {
        const double lambda_log = log_density + data_.log_area[i];
        return static_cast<double>(data_.pop[i]) * lambda_log - std::exp(lambda_log) -
               data_.lgamma_pop1[i];
    }

    double density_terms_for(std::span<const double> s, const std::vector<int>& members) const {
        double acc = 0.0;
        for (int i : members)
            acc += log_normal_pdf(s[idx_log_density(i)], linear_predictor(s, i),
                                  cluster_sd_of(s, i));
        return acc;
    }

    void build_hierarchy(const std::vector<ClusterRecord>& records, const Hierarchy& given) {
        int max_p = given.n_provinces, max_l = given.n_regions;
        for (const auto& r : records) {
            max_p = std::max(max_p, r.province_id);
            max_l = std::max(max_l, r.region_id);
        }
        hier_.n_provinces = max_p;
        hier_.n_regions = max_l;
        hier_.region_province.assign(max_l, -1);
        for (std::size_t l = 0; l < given.region_province.size(); ++l)
            hier_.region_province[l] = given.region_province[l];
        for (const auto& r : records) {
            int& slot = hier_.region_province[r.region_id - 1];
            if (slot >= 0 && slot != r.province_id - 1)
                throw Error("PopulationModel: region " + std::to_string(r.region_id) +
                            " mapped to two provinces");
            slot = r.province_id - 1;
        }
    }

    void build_data(const std::vector<ClusterRecord>& records) {
        data_.n = static_cast<int>(records.size());
        data_.covariates = Matrix(records.size(), spec_.n_covariates());
        double v_sum = 0.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            if (!(r.footprint_area > 0.0))
                throw Error("PopulationModel: cluster '" + r.cluster_id +
                            "' has nonpositive footprint area; filter before fitting");
            if (!(r.model_weight > 0.0))
                throw Error("PopulationModel: cluster '" + r.cluster_id +
                            "' has no model weight; run compute_model_weights first");
            if (r.covariates.size() != spec_.n_covariates())
                throw Error("PopulationModel: cluster '" + r.cluster_id + "' carries " +
                            std::to_string(r.covariates.size()) + " covariates, model expects " +
                            std::to_string(spec_.n_covariates()));
            data_.pop.push_back(r.population);
            data_.area.push_back(r.footprint_area);
            data_.log_area.push_back(std::log(r.footprint_area));
            data_.lgamma_pop1.push_back(log_factorial(r.population));
            data_.weight.push_back(r.model_weight);
            data_.sqrt_weight.push_back(std::sqrt(r.model_weight));
            data_.type.push_back(static_cast<int>(r.settlement));
            data_.province.push_back(r.province_id - 1);
            data_.region.push_back(r.region_id - 1);
            data_.ids.push_back(r.cluster_id);
            data_.x.push_back(r.x);
            data_.y.push_back(r.y);
            for (std::size_t k = 0; k < r.covariates.size(); ++k)
                data_.covariates.at(i, k) = r.covariates[k];
            v_sum += r.model_weight;
        }
        if (std::abs(v_sum - 1.0) > 1e-9)
            throw Error("PopulationModel: model weights sum to " + fmt_double(v_sum) +
                        ", expected 1");
        by_tl_.assign(static_cast<std::size_t>(T) * L(), {});
        by_tp_.assign(static_cast<std::size_t>(T) * P(), {});
        by_t_.assign(T, {});
        for (int i = 0; i < data_.n; ++i) {
            by_tl_[data_.type[i] * L() + data_.region[i]].push_back(i);
            by_tp_[data_.type[i] * P() + data_.province[i]].push_back(i);
            by_t_[data_.type[i]].push_back(i);
        }
    }

    void build_layout() {
        TP_ = T * P();
        base_tp_ = 4 * T;
        int next = base_tp_ + 5 * TP_;

        auto push = [&](detail::ParamKind kind, const std::string& name, int t = -1, int p = -1,
                        int l = -1, int k = -1, int i = -1) {
            detail::ParamInfo info;
            info.kind = kind;
            info.t = t;
            info.p = p;
            info.l = l;
            info.k = k;
            info.i = i;
            infos_.push_back(info);
            names_.push_back(name);
        };

        using detail::ParamKind;
        for (int t = 0; t < T; ++t)
            push(ParamKind::xi_t, "xi[" + settlement_token(t) + "]", t);
        for (int t = 0; t < T; ++t)
            push(ParamKind::nu_t, "nu[" + settlement_token(t) + "]", t);
        for (int t = 0; t < T; ++t)
            push(ParamKind::mu_t, "mu[" + settlement_token(t) + "]", t);
        for (int t = 0; t < T; ++t)
            push(ParamKind::sigma_t, "sigma[" + settlement_token(t) + "]", t);
        auto tp_name = [&](const char* base, int t, int p) {
            return std::string(base) + "[" + settlement_token(t) + ",p" + std::to_string(p + 1) +
                   "]";
        };
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P(); ++p)
                push(ParamKind::xi_tp, tp_name("xi", t, p), t, p);
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P(); ++p)
                push(ParamKind::nu_tp, tp_name("nu", t, p), t, p);
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P(); ++p)
                push(ParamKind::tau_tp, tp_name("tau", t, p), t, p);
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P(); ++p)
                push(ParamKind::mu_tp, tp_name("mu", t, p), t, p);
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P(); ++p)
                push(ParamKind::sigma_tp, tp_name("sigma", t, p), t, p);

        idx_beta_random_.assign(static_cast<std::size_t>(K()) * T, -1);
        idx_beta_fixed_.assign(K(), -1);
        idx_rho_.assign(K(), -1);
        idx_omega_.assign(K(), -1);
        for (int k = 0; k < K(); ++k) {
            const std::string& cov = spec_.covariate_names[k];
            if (spec_.modes[k] == EffectMode::fixed) {
                idx_beta_fixed_[k] = next++;
                push(ParamKind::beta_fixed, "beta[" + cov + "]", -1, -1, -1, k);
            } else {
                for (int t = 0; t < T; ++t) {
                    idx_beta_random_[k * T + t] = next++;
                    push(ParamKind::beta_random, "beta[" + cov + "," + settlement_token(t) + "]",
                         t, -1, -1, k);
                }
                idx_rho_[k] = next++;
                push(ParamKind::rho, "rho[" + cov + "]", -1, -1, -1, k);
                idx_omega_[k] = next++;
                push(ParamKind::omega, "omega[" + cov + "]", -1, -1, -1, k);
            }
        }

        idx_alpha_.assign(static_cast<std::size_t>(T) * L(), -1);
        active_regions_tp_.assign(TP_, {});
        for (int t = 0; t < T; ++t) {
            for (int l = 0; l < L(); ++l) {
                if (by_tl_[t * L() + l].empty())
                    continue;
                const int p = hier_.region_province[l];
                idx_alpha_[static_cast<std::size_t>(t) * L() + l] = next++;
                active_regions_tp_[t * P() + p].push_back(l);
                push(ParamKind::alpha,
                     "alpha[" + settlement_token(t) + ",p" + std::to_string(p + 1) + ",r" +
                         std::to_string(l + 1) + "]",
                     t, p, l);
            }
        }

        base_logd_ = next;
        for (int i = 0; i < data_.n; ++i) {
            push(ParamKind::log_density, "logD[" + data_.ids[i] + "]", -1, -1, -1, -1, i);
            ++next;
        }

        // The tp blocks were named before covariate/alpha blocks but share a
        // contiguous prefix; verify the bookkeeping lines up.
        if (static_cast<int>(infos_.size()) != next)
            throw Error("PopulationModel: parameter layout mismatch");
    }

    ModelSpec spec_;
    Hierarchy hier_;
    ClusterData data_;
    int TP_ = 0, base_tp_ = 0, base_logd_ = 0;
    std::vector<int> idx_beta_random_, idx_beta_fixed_, idx_rho_, idx_omega_, idx_alpha_;
    std::vector<std::vector<int>> by_tl_, by_tp_, by_t_;
    std::vector<std::vector<int>> active_regions_tp_; // regions with an active alpha per (t,p)
    std::vector<detail::ParamInfo> infos_;
    std::vector<std::string> names_;
};

inline double PopulationModel::conditional_log_posterior(std::span<const double> s, int j) const {
    using detail::ParamKind;
    const detail::ParamInfo& info = infos_[j];
    const double S = spec_.prior_location_sd;
    const double U = spec_.prior_scale_upper;
    double acc = 0.0;
    switch (info.kind) {
    case ParamKind::log_density: {
        const int i = info.i;
        const double d = s[idx_log_density(i)];
        return poisson_term(i, d) + log_normal_pdf(d, linear_predictor(s, i), cluster_sd_of(s, i));
    }
    case ParamKind::alpha: {
        const int p = hier_.region_province[info.l];
        acc = log_normal_pdf(s[j], s[idx_xi_tp(info.t, p)], s[idx_nu_tp(info.t, p)]);
        return acc + density_terms_for(s, by_tl_[info.t * L() + info.l]);
    }
    case ParamKind::beta_random:
        acc = log_normal_pdf(s[j], s[idx_rho(info.k)], s[idx_omega(info.k)]);
        return acc + density_terms_for(s, by_t_[info.t]);
    case ParamKind::beta_fixed: {
        acc = log_normal_pdf(s[j], 0.0, S);
        double dens = 0.0;
        for (int i = 0; i < data_.n; ++i)
            dens += log_normal_pdf(s[idx_log_density(i)], linear_predictor(s, i),
                                   cluster_sd_of(s, i));
        return acc + dens;
    }
    case ParamKind::rho:
        acc = log_normal_pdf(s[j], 0.0, S);
        for (int t = 0; t < T; ++t)
            acc += log_normal_pdf(s[idx_beta(info.k, t)], s[j], s[idx_omega(info.k)]);
        return acc;
    case ParamKind::omega:
        acc = log_uniform_pdf(s[j], 0.0, U);
        if (!std::isfinite(acc))
            return NEG_INF;
        for (int t = 0; t < T; ++t)
            acc += log_normal_pdf(s[idx_beta(info.k, t)], s[idx_rho(info.k)], s[j]);
        return acc;
    case ParamKind::xi_tp: {
        acc = log_normal_pdf(s[j], s[idx_xi_t(info.t)], s[idx_nu_t(info.t)]);
        for (int l : active_regions_tp_[info.t * P() + info.p])
            acc += log_normal_pdf(s[idx_alpha(info.t, l)], s[j], s[idx_nu_tp(info.t, info.p)]);
        return acc;
    }
    case ParamKind::nu_tp: {
        acc = log_uniform_pdf(s[j], 0.0, s[idx_nu_t(info.t)]);
        if (!std::isfinite(acc))
            return NEG_INF;
        for (int l : active_regions_tp_[info.t * P() + info.p])
            acc += log_normal_pdf(s[idx_alpha(info.t, l)], s[idx_xi_tp(info.t, info.p)], s[j]);
        return acc;
    }
    case ParamKind::xi_t:
        acc = log_normal_pdf(s[j], 0.0, S);
        for (int p = 0; p < P(); ++p)
            acc += log_normal_pdf(s[idx_xi_tp(info.t, p)], s[j], s[idx_nu_t(info.t)]);
        return acc;
    case ParamKind::nu_t:
        acc = log_uniform_pdf(s[j], 0.0, U);
        if (!std::isfinite(acc))
            return NEG_INF;
        for (int p = 0; p < P(); ++p) {
            acc += log_normal_pdf(s[idx_xi_tp(info.t, p)], s[idx_xi_t(info.t)], s[j]);
            acc += log_uniform_pdf(s[idx_nu_tp(info.t, p)], 0.0, s[j]);
            if (!std::isfinite(acc))
                return NEG_INF;
        }
        return acc;
    case ParamKind::tau_tp: {
        acc = log_half_normal_pdf(s[j], s[idx_mu_tp(info.t, info.p)],
                                  s[idx_sigma_tp(info.t, info.p)]);
        if (!std::isfinite(acc))
            return NEG_INF;
        return acc + density_terms_for(s, by_tp_[info.t * P() + info.p]);
    }
    case ParamKind::mu_tp:
        acc = log_half_normal_pdf(s[j], s[idx_mu_t(info.t)], s[idx_sigma_t(info.t)]);
        if (!std::isfinite(acc))
            return NEG_INF;
        return acc + log_half_normal_pdf(s[idx_tau_tp(info.t, info.p)], s[j],
                                         s[idx_sigma_tp(info.t, info.p)]);
    case ParamKind::sigma_tp:
        acc = log_uniform_pdf(s[j], 0.0, s[idx_sigma_t(info.t)]);
        if (!std::isfinite(acc))
            return NEG_INF;
        return acc +
               log_half_normal_pdf(s[idx_tau_tp(info.t, info.p)], s[idx_mu_tp(info.t, info.p)],
                                   s[j]);
    case ParamKind::mu_t:
        acc = log_normal_pdf(s[j], 0.0, S);
        for (int p = 0; p < P(); ++p)
            acc += log_half_normal_pdf(s[idx_mu_tp(info.t, p)], s[j], s[idx_sigma_t(info.t)]);
        return acc;
    case ParamKind::sigma_t:
        acc = log_uniform_pdf(s[j], 0.0, U);
        if (!std::isfinite(acc))
            return NEG_INF;
        for (int p = 0; p < P(); ++p) {
            acc += log_half_normal_pdf(s[idx_mu_tp(info.t, p)], s[idx_mu_t(info.t)], s[j]);
            acc += log_uniform_pdf(s[idx_sigma_tp(info.t, p)], 0.0, s[j]);
            if (!std::isfinite(acc))
                return NEG_INF;
        }
        return acc;
    }
    throw Error("conditional_log_posterior: unknown parameter kind");
}

inline void PopulationModel::initialize_state(std::vector<double>& state, RngStream& rng) const {
    state.assign(n_params(), 0.0);
    const double jitter_loc = spec_.prior_location_sd / 100.0;

    // Observed log densities, floored so empty clusters stay finite.
    std::vector<double> ld(data_.n);
    for (int i = 0; i < data_.n; ++i)
        ld[i] = std::log(std::max(static_cast<double>(data_.pop[i]), 0.3) / data_.area[i]);
    const double global_mean = mean_of(ld);

    auto stratum_mean = [&](const std::vector<int>& members, double fallback) {
        if (members.empty())
            return fallback;
        double m = 0.0;
        for (int i : members)
            m += ld[i];
        return m / static_cast<double>(members.size());
    };

    std::vector<double> type_mean(T);
    for (int t = 0; t < T; ++t)
        type_mean[t] = stratum_mean(by_t_[t], global_mean);

    // Residual spread and weight scale drive the precision-block centers.
    double resid_sd = 0.3;
    {
        std::vector<double> res;
        for (int t = 0; t < T; ++t)
            for (int i : by_t_[t])
                res.push_back(ld[i] - type_mean[t]);
        if (res.size() > 2)
            resid_sd = std::max(0.1, sd_sample(res));
    }
    const double mean_v = 1.0 / static_cast<double>(data_.n);
    const double tau_center = 1.0 / (resid_sd * std::sqrt(mean_v));

    for (int t = 0; t < T; ++t) {
        state[idx_xi_t(t)] = rng.next_normal(type_mean[t], jitter_loc);
        const double nu_t = std::exp(rng.next_normal(0.0, 0.5));
        state[idx_nu_t(t)] = std::min(nu_t, 0.9 * spec_.prior_scale_upper);
        state[idx_mu_t(t)] = rng.next_normal(tau_center, jitter_loc);
        state[idx_sigma_t(t)] =
            std::min(std::abs(tau_center) * std::exp(rng.next_normal(0.0, 0.5)) * 0.5 + 1.0,
                     0.9 * spec_.prior_scale_upper);
        for (int p = 0; p < P(); ++p) {
            const double tp_mean = stratum_mean(by_tp_[t * P() + p], type_mean[t]);
            state[idx_xi_tp(t, p)] = rng.next_normal(tp_mean, jitter_loc);
            state[idx_nu_tp(t, p)] = state[idx_nu_t(t)] * rng.next_uniform(0.3, 0.9);
            state[idx_mu_tp(t, p)] = std::abs(rng.next_normal(tau_center, jitter_loc));
            state[idx_sigma_tp(t, p)] = state[idx_sigma_t(t)] * rng.next_uniform(0.3, 0.9);
            state[idx_tau_tp(t, p)] = tau_center * std::exp(rng.next_normal(0.0, 0.3));
        }
        for (int l = 0; l < L(); ++l) {
            const int ia = idx_alpha(t, l);
            if (ia < 0)
                continue;
            state[ia] = stratum_mean(by_tl_[t * L() + l], type_mean[t]) + rng.next_normal(0.0, 0.3);
        }
    }
    for (int k = 0; k < K(); ++k) {
        if (spec_.modes[k] == EffectMode::fixed) {
            state[idx_beta(k, 0)] = rng.next_normal(0.0, 0.3);
        } else {
            state[idx_rho(k)] = rng.next_normal(0.0, jitter_loc);
            state[idx_omega(k)] = std::min(std::exp(rng.next_normal(0.0, 0.5)),
                                           0.9 * spec_.prior_scale_upper);
            for (int t = 0; t < T; ++t)
                state[idx_beta(k, t)] = rng.next_normal(0.0, 0.3);
        }
    }
    for (int i = 0; i < data_.n; ++i)
        state[idx_log_density(i)] = ld[i] + rng.next_normal(0.0, 0.1);
}

/// Collapses per-type slopes to a shared one when the pilot posterior of
/// the urban-rural difference has an equal-tailed 95% interval containing
/// zero. Requires at least 100 pooled retained draws.
inline std::vector<EffectMode> resolve_effect_modes(const PosteriorDraws& pilot,
                                                    const std::vector<std::string>& covariates) {
    if (pilot.n_retained() * pilot.n_chains() < 100)
        throw Error("resolve_effect_modes: fewer than 100 retained pilot draws");
    const Matrix pooled = pilot.pooled();
    std::vector<EffectMode> modes;
    for (const auto& cov : covariates) {
        const int cu = pilot.column("beta[" + cov + ",urban]");
        const int cr = pilot.column("beta[" + cov + ",rural]");
        if (cu < 0 || cr < 0)
            throw Error("resolve_effect_modes: pilot draws lack per-type slopes for '" + cov +
                        "' (pilot must run with every covariate in random mode)");
        std::vector<double> diff(pooled.rows);
        for (std::size_t r = 0; r < pooled.rows; ++r)
            diff[r] = pooled.at(r, cu) - pooled.at(r, cr);
        std::sort(diff.begin(), diff.end());
        const double lo = percentile_sorted(diff, 0.025);
        const double hi = percentile_sorted(diff, 0.975);
        modes.push_back(lo <= 0.0 && hi >= 0.0 ? EffectMode::fixed : EffectMode::random_by_type);
    }
    return modes;
}

} // namespace popgrid
