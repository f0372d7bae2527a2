#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <cctype>

#include "popgrid/csv.hpp"
#include "popgrid/gridstack.hpp"
#include "popgrid/raster.hpp"
#include "popgrid/stats.hpp"

namespace popgrid {

struct Point {
    double x = 0.0, y = 0.0;
};

inline double dist(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// A single building outline (one closed ring, planar meters) with the
/// morphology attributes derived from it.
struct Footprint {
    std::string id;
    std::vector<Point> ring; // closing vertex not repeated
    double area = 0.0;       // hectares
    double perimeter = 0.0;  // meters
    int node_count = 0;
    Point centroid;
};

struct PolygonMetrics {
    double area = 0.0; // hectares
    double perimeter = 0.0;
    int node_count = 0;
    Point centroid;
};

namespace detail {

inline bool segments_properly_intersect(const Point& a, const Point& b, const Point& c,
                                        const Point& d) {
    auto cross = [](const Point& o, const Point& p, const Point& q) {
        return (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x);
    };
    const double d1 = cross(c, d, a);
    const double d2 = cross(c, d, b);
    const double d3 = cross(a, b, c);
    const double d4 = cross(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

} // namespace detail

/// Shoelace area (to ha), ring perimeter and vertex count for a simple
/// polygon. The closing duplicate vertex, if present, is dropped first.
inline PolygonMetrics footprint_metrics(std::vector<Point> ring) {
    if (ring.size() >= 2 && ring.front().x == ring.back().x && ring.front().y == ring.back().y)
        ring.pop_back();
    if (ring.size() < 3)
        throw Error("footprint_metrics: ring needs at least 3 distinct vertices");

    double twice_area = 0.0, perim = 0.0, cx = 0.0, cy = 0.0;
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = ring[i];
        const Point& q = ring[(i + 1) % n];
        const double w = p.x * q.y - q.x * p.y;
        twice_area += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
        perim += dist(p, q);
    }
    if (twice_area == 0.0)
        throw Error("footprint_metrics: degenerate (zero-area) ring");
    // Non-adjacent edge pairs must not cross.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1 || (i == 0 && j == n - 1))
                continue;
            if (detail::segments_properly_intersect(ring[i], ring[(i + 1) % n], ring[j],
                                                    ring[(j + 1) % n]))
                throw Error("footprint_metrics: self-intersecting ring");
        }
    }
    PolygonMetrics m;
    m.area = std::abs(twice_area) * 0.5 / 10000.0; // m^2 -> ha
    m.perimeter = perim;
    m.node_count = static_cast<int>(n);
    m.centroid = {cx / (3.0 * twice_area), cy / (3.0 * twice_area)};
    return m;
}

/// Parses 'POLYGON((x y, x y, ...))'. Only single-ring polygons are
/// accepted; interior rings are an input error.
inline std::vector<Point> parse_wkt_polygon(const std::string& wkt, const std::string& context) {
    std::string s;
    for (char c : wkt)
        s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    const auto tag = s.find("POLYGON");
    if (tag == std::string::npos)
        throw Error(context + ": expected WKT POLYGON, got '" + wkt + "'");
    const auto open = wkt.find("((", tag);
    const auto close = wkt.find("))", tag);
    if (open == std::string::npos || close == std::string::npos || close <= open)
        throw Error(context + ": malformed WKT POLYGON");
    const std::string body = wkt.substr(open + 2, close - open - 2);
    if (body.find('(') != std::string::npos)
        throw Error(context + ": interior rings are not supported");
    std::vector<Point> ring;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto next = body.find(',', pos);
        if (next == std::string::npos)
            next = body.size();
        const std::string pair = trim(body.substr(pos, next - pos));
        const auto sp = pair.find_first_of(" \t");
        if (sp == std::string::npos)
            throw Error(context + ": malformed coordinate pair '" + pair + "'");
        ring.push_back({parse_double(trim(pair.substr(0, sp)), context),
                        parse_double(trim(pair.substr(sp + 1)), context)});
        pos = next + 1;
    }
    return ring;
}

/// Reads a footprint CSV of id,wkt_polygon and derives per-feature metrics.
inline std::vector<Footprint> load_footprints(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int c_id = t.require_column("id");
    const int c_wkt = t.require_column("wkt_polygon");
    std::vector<Footprint> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string ctx = path + ": row " + std::to_string(r + 2);
        Footprint f;
        f.id = t.rows[r][c_id];
        f.ring = parse_wkt_polygon(t.rows[r][c_wkt], ctx);
        const PolygonMetrics m = footprint_metrics(f.ring);
        f.area = m.area;
        f.perimeter = m.perimeter;
        f.node_count = m.node_count;
        f.centroid = m.centroid;
        out.push_back(std::move(f));
    }
    return out;
}

inline constexpr double PROXIMITY_MIN_DISTANCE = 0.1; // meters; clamp for duplicates

/// Inverse distance to the nearest other footprint, by centroid, clamped at
/// 1/PROXIMITY_MIN_DISTANCE. A lone footprint has no defined proximity.
/// Neighbor search uses a uniform bucket grid over centroids.
inline std::vector<std::optional<double>> nearest_proximity(const std::vector<Footprint>& fps,
                                                            Notices* notes = nullptr) {
    const std::size_t n = fps.size();
    std::vector<std::optional<double>> out(n);
    if (n < 2) {
        if (notes && n == 1)
            notes->push_back("nearest_proximity: single footprint, proximity undefined");
        return out;
    }
    double min_x = std::numeric_limits<double>::max(), min_y = min_x;
    double max_x = -min_x, max_y = -min_x;
    for (const auto& f : fps) {
        min_x = std::min(min_x, f.centroid.x);
        max_x = std::max(max_x, f.centroid.x);
        min_y = std::min(min_y, f.centroid.y);
        max_y = std::max(max_y, f.centroid.y);
    }
    const double extent = std::max({max_x - min_x, max_y - min_y, 1.0});
    const double cell = extent / std::max(1.0, std::sqrt(static_cast<double>(n)));
    const int ncx = static_cast<int>((max_x - min_x) / cell) + 1;
    const int ncy = static_cast<int>((max_y - min_y) / cell) + 1;
    std::unordered_map<long long, std::vector<int>> buckets;
    auto key = [&](int bx, int by) { return static_cast<long long>(bx) * (ncy + 1) + by; };
    auto bucket_of = [&](const Point& p) {
        int bx = static_cast<int>((p.x - min_x) / cell);
        int by = static_cast<int>((p.y - min_y) / cell);
        bx = std::clamp(bx, 0, ncx);
        by = std::clamp(by, 0, ncy);
        return std::pair(bx, by);
    };
    for (std::size_t i = 0; i < n; ++i) {
        auto [bx, by] = bucket_of(fps[i].centroid);
        buckets[key(bx, by)].push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto [bx, by] = bucket_of(fps[i].centroid);
        double best = std::numeric_limits<double>::max();
        // Expand rings of buckets until the closest hit cannot be beaten.
        for (int ring = 0;; ++ring) {
            bool any_bucket = false;
            for (int dx = -ring; dx <= ring; ++dx) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    if (std::max(std::abs(dx), std::abs(dy)) != ring)
                        continue;
                    const int qx = bx + dx, qy = by + dy;
                    if (qx < 0 || qy < 0 || qx > ncx || qy > ncy)
                        continue;
                    any_bucket = true;
                    auto it = buckets.find(key(qx, qy));
                    if (it == buckets.end())
                        continue;
                    for (int j : it->second) {
                        if (static_cast<std::size_t>(j) == i)
                            continue;
                        best = std::min(best, dist(fps[i].centroid, fps[j].centroid));
                    }
                }
            }
            const double ring_floor = static_cast<double>(ring) * cell;
            if (best < std::numeric_limits<double>::max() && best <= ring_floor)
                break;
            if (!any_bucket && ring > std::max(ncx, ncy))
                break;
        }
        out[i] = 1.0 / std::max(best, PROXIMITY_MIN_DISTANCE);
    }
    return out;
}

/// Mean per-cell count over a square focal window of the given cell radius.
/// Edge windows shrink to the in-bounds part; nodata cells drop out of both
/// numerator and denominator. Runs on summed-area tables.
inline Grid focal_count(const Grid& counts, int radius_cells) {
    if (radius_cells < 1)
        throw Error("focal_count: radius must be >= 1");
    const int nr = counts.header.nrows, nc = counts.header.ncols;
    // Prefix sums over values and over validity counts, padded by one.
    std::vector<double> sum(static_cast<std::size_t>(nr + 1) * (nc + 1), 0.0);
    std::vector<double> cnt(static_cast<std::size_t>(nr + 1) * (nc + 1), 0.0);
    auto idx = [&](int r, int c) { return static_cast<std::size_t>(r) * (nc + 1) + c; };
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            const double v = counts.at(r, c);
            const bool ok = v != counts.header.nodata;
            sum[idx(r + 1, c + 1)] =
                sum[idx(r, c + 1)] + sum[idx(r + 1, c)] - sum[idx(r, c)] + (ok ? v : 0.0);
            cnt[idx(r + 1, c + 1)] =
                cnt[idx(r, c + 1)] + cnt[idx(r + 1, c)] - cnt[idx(r, c)] + (ok ? 1.0 : 0.0);
        }
    }
    Grid out(counts.header, counts.header.nodata);
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            const int r0 = std::max(0, r - radius_cells), r1 = std::min(nr - 1, r + radius_cells);
            const int c0 = std::max(0, c - radius_cells), c1 = std::min(nc - 1, c + radius_cells);
            const double s = sum[idx(r1 + 1, c1 + 1)] - sum[idx(r0, c1 + 1)] -
                             sum[idx(r1 + 1, c0)] + sum[idx(r0, c0)];
            const double m = cnt[idx(r1 + 1, c1 + 1)] - cnt[idx(r0, c1 + 1)] -
                             cnt[idx(r1 + 1, c0)] + cnt[idx(r0, c0)];
            out.at(r, c) = m > 0.0 ? s / m : counts.header.nodata;
        }
    }
    return out;
}

// Morphological settlement classification codes as they arrive on disk.
inline constexpr double CLASS_CODE_BUILT_UP = 1.0;
inline constexpr double CLASS_CODE_SMALL_SETTLEMENT = 2.0;
inline constexpr double CLASS_CODE_HAMLET = 3.0;

/// Collapses the morphological classes onto the two model strata:
/// built-up becomes urban; small settlement and hamlet become rural.
inline Grid classify_settlement(const Grid& classes) {
    Grid out(classes.header, classes.header.nodata);
    for (std::size_t i = 0; i < classes.values.size(); ++i) {
        const double v = classes.values[i];
        if (v == classes.header.nodata)
            continue;
        if (v == CLASS_CODE_BUILT_UP)
            out.values[i] = SETTLEMENT_CODE_URBAN;
        else if (v == CLASS_CODE_SMALL_SETTLEMENT || v == CLASS_CODE_HAMLET)
            out.values[i] = SETTLEMENT_CODE_RURAL;
        else
            throw Error("classify_settlement: unknown class code " + fmt_double(v));
    }
    return out;
}

/// Summary statistics over the footprints whose centroid falls in a zone.
struct ZoneSummary {
    std::string zone_id;
    std::size_t building_count = 0;
    double total_area = 0.0;
    std::optional<double> mean_area;
    std::optional<double> mean_perimeter;
    std::optional<double> mean_proximity;
    std::optional<double> mean_focal_count;
    std::optional<double> cv_area; // population sd / mean
    std::optional<double> cv_perimeter;
};

/// Optional per-footprint attribute columns that zone summaries average.
struct FootprintAttributes {
    std::vector<double> proximity;   // 1/m, may be empty
    std::vector<double> focal_count; // may be empty
};

inline ZoneSummary summarize_zone(const std::vector<Footprint>& fps,
                                  const std::vector<int>& member_indices,
                                  const FootprintAttributes& attrs = {},
                                  const std::string& zone_id = "") {
    ZoneSummary z;
    z.zone_id = zone_id;
    z.building_count = member_indices.size();
    if (member_indices.empty())
        return z;
    std::vector<double> areas, perims;
    double prox_sum = 0.0, focal_sum = 0.0;
    for (int i : member_indices) {
        areas.push_back(fps[i].area);
        perims.push_back(fps[i].perimeter);
        z.total_area += fps[i].area;
        if (!attrs.proximity.empty())
            prox_sum += attrs.proximity[i];
        if (!attrs.focal_count.empty())
            focal_sum += attrs.focal_count[i];
    }
    const double n = static_cast<double>(member_indices.size());
    z.mean_area = z.total_area / n;
    z.mean_perimeter = mean_of(perims);
    if (!attrs.proximity.empty())
        z.mean_proximity = prox_sum / n;
    if (!attrs.focal_count.empty())
        z.mean_focal_count = focal_sum / n;
    if (*z.mean_area > 0.0)
        z.cv_area = sd_population(areas) / *z.mean_area;
    if (*z.mean_perimeter > 0.0)
        z.cv_perimeter = sd_population(perims) / *z.mean_perimeter;
    return z;
}

/// Members of a rectangular cell zone by centroid containment
/// (west/south edge inclusive, east/north exclusive).
inline std::vector<int> members_in_cell(const std::vector<Footprint>& fps, double x0, double y0,
                                        double cell) {
    std::vector<int> out;
    for (std::size_t i = 0; i < fps.size(); ++i) {
        const Point& c = fps[i].centroid;
        if (c.x >= x0 && c.x < x0 + cell && c.y >= y0 && c.y < y0 + cell)
            out.push_back(static_cast<int>(i));
    }
    return out;
}

/// Keeps footprints whose centroid lies within the radius of any surveyed
/// household point (boundary inclusive).
inline std::vector<int> constrain_cluster_extent(const std::vector<Point>& households,
                                                 const std::vector<Footprint>& fps,
                                                 double radius_m = 50.0) {
    if (households.empty())
        throw Error("constrain_cluster_extent: no household points");
    std::vector<int> kept;
    for (std::size_t i = 0; i < fps.size(); ++i) {
        for (const auto& h : households) {
            if (dist(h, fps[i].centroid) <= radius_m) {
                kept.push_back(static_cast<int>(i));
                break;
            }
        }
    }
    return kept;
}

struct ScreenRow {
    std::string covariate;
    std::optional<double> r; // missing for zero-variance covariates
    std::size_t n = 0;
};

/// Pearson correlation of each covariate against log observed density,
/// sorted by |r| descending (missing r sorts last). Used to shortlist
/// covariates before fitting.
inline std::vector<ScreenRow> covariate_screen(const std::vector<ClusterRecord>& clusters,
                                               const std::vector<std::string>& names) {
    if (clusters.size() < 3)
        throw Error("covariate_screen: need at least 3 clusters");
    std::vector<double> logd;
    for (const auto& c : clusters) {
        if (c.population <= 0 || c.footprint_area <= 0.0)
            throw Error("covariate_screen: cluster '" + c.cluster_id +
                        "' has nonpositive density; screen requires positive densities");
        logd.push_back(std::log(static_cast<double>(c.population) / c.footprint_area));
    }
    std::vector<ScreenRow> rows;
    for (std::size_t k = 0; k < names.size(); ++k) {
        std::vector<double> xk;
        for (const auto& c : clusters)
            xk.push_back(c.covariates.at(k));
        ScreenRow row;
        row.covariate = names[k];
        row.n = clusters.size();
        row.r = pearson(xk, logd);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ScreenRow& a, const ScreenRow& b) {
        const double va = a.r ? std::abs(*a.r) : -1.0;
        const double vb = b.r ? std::abs(*b.r) : -1.0;
        return va > vb;
    });
    return rows;
}

} // namespace popgrid
