#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "popgrid/csv.hpp"
#include "popgrid/stats.hpp"

namespace popgrid {

enum class Settlement : int { urban = 0, rural = 1 };
inline constexpr int N_SETTLEMENT_TYPES = 2;

inline const char* settlement_name(Settlement t) {
    return t == Settlement::urban ? "urban" : "rural";
}

inline Settlement parse_settlement(const std::string& s, const std::string& context) {
    if (s == "urban")
        return Settlement::urban;
    if (s == "rural")
        return Settlement::rural;
    throw Error(context + ": settlement_type must be 'urban' or 'rural', got '" + s + "'");
}

/// One microcensus cluster: a fully enumerated survey area with its
/// observed people count, building footprint exposure and covariates.
struct ClusterRecord {
    std::string cluster_id;
    int province_id = 0; // 1-based
    int region_id = 0;   // 1-based, nested in province
    Settlement settlement = Settlement::urban;
    long long population = 0;
    double footprint_area = 0.0; // hectares
    std::vector<double> covariates;
    std::optional<double> sampling_weight;
    double model_weight = 0.0; // v_i, set by compute_model_weights
    bool reduced_coverage = false;
    double x = 0.0, y = 0.0; // planar centroid, meters
};

struct ClusterFile {
    std::vector<ClusterRecord> records;
    std::vector<std::string> covariate_names;
};

inline const std::vector<std::string> CLUSTER_FIXED_COLUMNS = {
    "cluster_id", "province_id",     "region_id",       "settlement_type", "population",
    "footprint_area_ha", "sampling_weight", "reduced_coverage", "x", "y"};

/// Loads the cluster CSV. Covariate columns are everything after the fixed
/// schema prefix; an empty sampling_weight field means "not observed".
/// Region-to-province nesting is validated across the whole file.
inline ClusterFile load_clusters(const std::string& path) {
    const CsvTable t = read_csv(path);
    if (t.header.size() < CLUSTER_FIXED_COLUMNS.size())
        throw Error(path + ": header too short for cluster schema");
    for (std::size_t i = 0; i < CLUSTER_FIXED_COLUMNS.size(); ++i)
        if (t.header[i] != CLUSTER_FIXED_COLUMNS[i])
            throw Error(path + ": header column " + std::to_string(i + 1) + " must be '" +
                        CLUSTER_FIXED_COLUMNS[i] + "', got '" + t.header[i] + "'");

    ClusterFile f;
    for (std::size_t i = CLUSTER_FIXED_COLUMNS.size(); i < t.header.size(); ++i)
        f.covariate_names.push_back(t.header[i]);

    std::map<int, int> region_province;
    std::set<std::string> seen_ids;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string ctx = path + ": row " + std::to_string(r + 2);
        ClusterRecord rec;
        rec.cluster_id = row[0];
        if (rec.cluster_id.empty())
            throw Error(ctx + ": empty cluster_id");
        if (!seen_ids.insert(rec.cluster_id).second)
            throw Error(ctx + ": duplicate cluster_id '" + rec.cluster_id + "'");
        rec.province_id = static_cast<int>(parse_int(row[1], ctx + " column province_id"));
        rec.region_id = static_cast<int>(parse_int(row[2], ctx + " column region_id"));
        if (rec.province_id < 1)
            throw Error(ctx + ": province_id must be >= 1");
        if (rec.region_id < 1)
            throw Error(ctx + ": region_id must be >= 1");
        rec.settlement = parse_settlement(row[3], ctx);
        const long long pop = parse_int(row[4], ctx + " column population");
        if (pop < 0)
            throw Error(ctx + ": population must be nonnegative");
        rec.population = pop;
        rec.footprint_area = parse_double(row[5], ctx + " column footprint_area_ha");
        if (rec.footprint_area < 0.0 || !std::isfinite(rec.footprint_area))
            throw Error(ctx + ": footprint_area_ha must be finite and nonnegative");
        if (!row[6].empty()) {
            const double w = parse_double(row[6], ctx + " column sampling_weight");
            if (!(w > 0.0))
                throw Error(ctx + ": sampling_weight must be positive when present");
            rec.sampling_weight = w;
        }
        const long long rc = parse_int(row[7], ctx + " column reduced_coverage");
        if (rc != 0 && rc != 1)
            throw Error(ctx + ": reduced_coverage must be 0 or 1");
        rec.reduced_coverage = rc == 1;
        rec.x = parse_double(row[8], ctx + " column x");
        rec.y = parse_double(row[9], ctx + " column y");
        rec.covariates.reserve(f.covariate_names.size());
        for (std::size_t k = 0; k < f.covariate_names.size(); ++k)
            rec.covariates.push_back(
                parse_double(row[CLUSTER_FIXED_COLUMNS.size() + k],
                             ctx + " column " + f.covariate_names[k]));

        auto [it, inserted] = region_province.emplace(rec.region_id, rec.province_id);
        if (!inserted && it->second != rec.province_id)
            throw Error(path + ": region " + std::to_string(rec.region_id) +
                        " appears under provinces " + std::to_string(it->second) + " and " +
                        std::to_string(rec.province_id) + " (nesting must be a function)");
        f.records.push_back(std::move(rec));
    }
    return f;
}

inline void write_clusters(const std::string& path, const ClusterFile& f) {
    auto out = open_output(path);
    std::vector<std::string> header = CLUSTER_FIXED_COLUMNS;
    header.insert(header.end(), f.covariate_names.begin(), f.covariate_names.end());
    out << join_csv(header) << "\n";
    for (const auto& r : f.records) {
        std::vector<std::string> row = {
            r.cluster_id,
            std::to_string(r.province_id),
            std::to_string(r.region_id),
            settlement_name(r.settlement),
            std::to_string(r.population),
            fmt_double(r.footprint_area),
            r.sampling_weight ? fmt_double(*r.sampling_weight) : std::string(),
            r.reduced_coverage ? "1" : "0",
            fmt_double(r.x),
            fmt_double(r.y)};
        for (double c : r.covariates)
            row.push_back(fmt_double(c));
        out << join_csv(row) << "\n";
    }
}

/// Caps weights at the given percentile of their own distribution.
/// Values at or below the cutoff pass through unchanged; order preserved.
inline std::vector<double> truncate_weights(const std::vector<double>& weights,
                                            double pct = 0.90) {
    if (weights.empty())
        throw Error("truncate_weights: empty weight vector");
    if (!(pct > 0.0 && pct < 1.0))
        throw Error("truncate_weights: percentile must lie in (0,1)");
    const double q = percentile(weights, pct);
    std::vector<double> out = weights;
    for (double& w : out)
        w = std::min(w, q);
    return out;
}

/// Cluster total with household nonresponse imputed at the mean head count
/// of the responding households; result rounded half up.
inline long long impute_cluster_population(const std::vector<std::optional<long long>>& households) {
    long long observed_sum = 0;
    std::size_t observed = 0, missing = 0;
    for (const auto& h : households) {
        if (h) {
            if (*h < 0)
                throw Error("impute_cluster_population: negative household count");
            observed_sum += *h;
            ++observed;
        } else {
            ++missing;
        }
    }
    if (observed == 0)
        throw Error("impute_cluster_population: no responding household in cluster");
    const double mean = static_cast<double>(observed_sum) / static_cast<double>(observed);
    const double total = static_cast<double>(observed_sum) + static_cast<double>(missing) * mean;
    return static_cast<long long>(std::floor(total + 0.5));
}

/// Fills model weights v_i = w_i^{-1} / sum(w^{-1}). Clusters without an
/// observed sampling weight (random-design round) get the mean observed
/// weight imputed first. With no observed weights anywhere the design is
/// treated as pure random: v_i = 1/I, with a notice.
inline void compute_model_weights(std::vector<ClusterRecord>& clusters, Notices* notes = nullptr) {
    if (clusters.empty())
        throw Error("compute_model_weights: no clusters");
    double observed_sum = 0.0;
    std::size_t observed = 0;
    for (const auto& c : clusters)
        if (c.sampling_weight) {
            observed_sum += *c.sampling_weight;
            ++observed;
        }
    std::vector<double> w(clusters.size());
    if (observed == 0) {
        if (notes)
            notes->push_back("compute_model_weights: no sampling weights observed; "
                             "using equal model weights 1/I");
        for (auto& c : clusters)
            c.model_weight = 1.0 / static_cast<double>(clusters.size());
        return;
    }
    const double mean_w = observed_sum / static_cast<double>(observed);
    for (std::size_t i = 0; i < clusters.size(); ++i)
        w[i] = clusters[i].sampling_weight ? *clusters[i].sampling_weight : mean_w;
    double inv_sum = 0.0;
    for (double wi : w)
        inv_sum += 1.0 / wi;
    for (std::size_t i = 0; i < clusters.size(); ++i)
        clusters[i].model_weight = (1.0 / w[i]) / inv_sum;
}

struct Discard {
    std::string cluster_id;
    std::string reason; // "no_footprints" or "reduced_coverage"
};

struct DiscardReport {
    std::vector<Discard> discards;
    bool empty_retained = false;
};

/// Drops clusters with no footprint exposure or a reduced-coverage flag.
/// Retained records pass through untouched.
inline std::pair<std::vector<ClusterRecord>, DiscardReport>
filter_spurious(const std::vector<ClusterRecord>& clusters) {
    std::vector<ClusterRecord> retained;
    DiscardReport report;
    for (const auto& c : clusters) {
        if (c.footprint_area <= 0.0)
            report.discards.push_back({c.cluster_id, "no_footprints"});
        else if (c.reduced_coverage)
            report.discards.push_back({c.cluster_id, "reduced_coverage"});
        else
            retained.push_back(c);
    }
    report.empty_retained = retained.empty();
    return {std::move(retained), std::move(report)};
}

inline void write_discard_report(const std::string& path, const DiscardReport& report) {
    auto out = open_output(path);
    out << "cluster_id,reason\n";
    for (const auto& d : report.discards)
        out << d.cluster_id << ',' << d.reason << "\n";
}

/// Standard ingestion pass: spurious-cluster filter, weight truncation at
/// the given percentile, then model weight computation. Truncation is
/// idempotent, so feeding an already-processed file through again is safe.
inline std::pair<std::vector<ClusterRecord>, DiscardReport>
prepare_clusters(const std::vector<ClusterRecord>& raw, double truncate_pct = 0.90,
                 Notices* notes = nullptr) {
    auto [retained, report] = filter_spurious(raw);
    if (retained.empty()) {
        if (notes)
            notes->push_back("prepare_clusters: no clusters retained after filtering");
        return {std::move(retained), std::move(report)};
    }
    std::vector<double> observed;
    for (const auto& c : retained)
        if (c.sampling_weight)
            observed.push_back(*c.sampling_weight);
    if (!observed.empty()) {
        const std::vector<double> truncated = truncate_weights(observed, truncate_pct);
        std::size_t j = 0;
        for (auto& c : retained)
            if (c.sampling_weight)
                c.sampling_weight = truncated[j++];
    }
    compute_model_weights(retained, notes);
    return {std::move(retained), std::move(report)};
}

} // namespace popgrid
