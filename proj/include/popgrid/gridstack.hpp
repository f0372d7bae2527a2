#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "popgrid/raster.hpp"
#include "popgrid/survey.hpp"

namespace popgrid {

// Settlement codes as stored in settlement_type rasters.
inline constexpr double SETTLEMENT_CODE_URBAN = 1.0;
inline constexpr double SETTLEMENT_CODE_RURAL = 2.0;

/// Co-registered raster layers covering the study area: footprint exposure,
/// scaled covariates, settlement type and administrative ids. The settled
/// mask is derived, never stored: a cell is settled iff it has footprint
/// area > 0 and a valid settlement type.
struct GridStack {
    GridHeader header;
    Grid footprint_area;
    std::vector<std::string> covariate_names;
    std::vector<Grid> covariates;
    Grid settlement;
    Grid province;
    Grid region;
    std::vector<char> settled; // derived mask, 1 byte per cell

    int n_provinces = 0;
    int n_regions = 0;

    std::size_t size() const { return header.size(); }

    bool is_settled(std::size_t cell) const { return settled[cell] != 0; }

    Settlement settlement_at(std::size_t cell) const {
        return settlement.values[cell] == SETTLEMENT_CODE_URBAN ? Settlement::urban
                                                                : Settlement::rural;
    }
    int province_at(std::size_t cell) const { return static_cast<int>(province.values[cell]); }
    int region_at(std::size_t cell) const { return static_cast<int>(region.values[cell]); }

    void rebuild_mask() {
        settled.assign(size(), 0);
        for (std::size_t i = 0; i < size(); ++i) {
            const double a = footprint_area.values[i];
            const double s = settlement.values[i];
            const bool type_ok = s == SETTLEMENT_CODE_URBAN || s == SETTLEMENT_CODE_RURAL;
            const bool admin_ok = province.values[i] != province.header.nodata &&
                                  region.values[i] != region.header.nodata;
            settled[i] = (a != footprint_area.header.nodata && a > 0.0 && type_ok && admin_ok) ? 1 : 0;
        }
        n_provinces = 0;
        n_regions = 0;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!settled[i])
                continue;
            n_provinces = std::max(n_provinces, province_at(i));
            n_regions = std::max(n_regions, region_at(i));
        }
    }

    void check_coregistered() const {
        auto demand = [&](const Grid& g, const std::string& name) {
            if (!header.compatible(g.header))
                throw Error("grid layer '" + name + "' is not co-registered with the stack header");
        };
        demand(footprint_area, "footprint_area");
        demand(settlement, "settlement_type");
        demand(province, "province_id");
        demand(region, "region_id");
        for (std::size_t k = 0; k < covariates.size(); ++k)
            demand(covariates[k], covariate_names[k]);
    }
};

/// Loads a grid directory: footprint_area.asc, settlement_type.asc,
/// province_id.asc, region_id.asc plus one <name>.asc per covariate.
inline GridStack load_grid_stack(const std::string& dir,
                                 const std::vector<std::string>& covariate_names) {
    namespace fs = std::filesystem;
    auto layer = [&](const std::string& name) {
        const fs::path p = fs::path(dir) / (name + ".asc");
        return read_esri_ascii(p.string());
    };
    GridStack s;
    s.footprint_area = layer("footprint_area");
    s.header = s.footprint_area.header;
    s.settlement = layer("settlement_type");
    s.province = layer("province_id");
    s.region = layer("region_id");
    s.covariate_names = covariate_names;
    for (const auto& name : covariate_names)
        s.covariates.push_back(layer(name));
    s.check_coregistered();
    s.rebuild_mask();
    return s;
}

inline void write_grid_stack(const std::string& dir, const GridStack& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto put = [&](const std::string& name, const Grid& g) {
        write_esri_ascii((fs::path(dir) / (name + ".asc")).string(), g);
    };
    put("footprint_area", s.footprint_area);
    put("settlement_type", s.settlement);
    put("province_id", s.province);
    put("region_id", s.region);
    for (std::size_t k = 0; k < s.covariates.size(); ++k)
        put(s.covariate_names[k], s.covariates[k]);
}

/// Per-covariate mean and standard deviation over settled grid cells.
struct ScalingStats {
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> sd;
};

inline void write_scaling_stats(const std::string& path, const ScalingStats& st) {
    auto out = open_output(path);
    out << "covariate,mean,sd\n";
    for (std::size_t k = 0; k < st.names.size(); ++k)
        out << st.names[k] << ',' << fmt_double(st.mean[k]) << ',' << fmt_double(st.sd[k]) << "\n";
}

inline ScalingStats read_scaling_stats(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int c_name = t.require_column("covariate");
    const int c_mean = t.require_column("mean");
    const int c_sd = t.require_column("sd");
    ScalingStats st;
    for (const auto& row : t.rows) {
        st.names.push_back(row[c_name]);
        st.mean.push_back(parse_double(row[c_mean], path));
        st.sd.push_back(parse_double(row[c_sd], path));
    }
    return st;
}

/// Z-scales covariates in place, on both the grid layers and the cluster
/// records, using moments computed over settled grid cells only. The same
/// stats must be applied to model training and prediction inputs.
inline ScalingStats scale_covariates(std::vector<ClusterRecord>& clusters, GridStack& grid) {
    if (grid.covariates.size() != grid.covariate_names.size())
        throw Error("scale_covariates: covariate layer/name mismatch");
    std::size_t settled_count = 0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid.is_settled(i))
            ++settled_count;
    if (settled_count < 2)
        throw Error("scale_covariates: need at least 2 settled cells");

    ScalingStats st;
    st.names = grid.covariate_names;
    for (std::size_t k = 0; k < grid.covariates.size(); ++k) {
        std::vector<double> vals;
        vals.reserve(settled_count);
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (grid.is_settled(i))
                vals.push_back(grid.covariates[k].values[i]);
        const double m = mean_of(vals);
        const double s = sd_sample(vals);
        if (!(s > 0.0))
            throw Error("scale_covariates: covariate '" + grid.covariate_names[k] +
                        "' has zero variance over settled cells");
        st.mean.push_back(m);
        st.sd.push_back(s);
        Grid& layer = grid.covariates[k];
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (layer.values[i] == layer.header.nodata)
                continue;
            layer.values[i] = (layer.values[i] - m) / s;
        }
    }
    for (auto& c : clusters) {
        if (c.covariates.size() != st.names.size())
            throw Error("scale_covariates: cluster '" + c.cluster_id + "' has " +
                        std::to_string(c.covariates.size()) + " covariates, grid has " +
                        std::to_string(st.names.size()));
        for (std::size_t k = 0; k < c.covariates.size(); ++k)
            c.covariates[k] = (c.covariates[k] - st.mean[k]) / st.sd[k];
    }
    return st;
}

inline double unscale_value(const ScalingStats& st, std::size_t k, double z) {
    return z * st.sd[k] + st.mean[k];
}

} // namespace popgrid
