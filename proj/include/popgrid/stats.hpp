#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace popgrid {

inline constexpr double LOG_SQRT_2PI = 0.91893853320467274178032973640562;
inline constexpr double NEG_INF = -std::numeric_limits<double>::infinity();

inline double mean_of(std::span<const double> v) {
    if (v.empty())
        throw std::invalid_argument("mean_of: empty input");
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

inline double variance_sample(std::span<const double> v) {
    if (v.size() < 2)
        throw std::invalid_argument("variance_sample: need at least 2 values");
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double sd_sample(std::span<const double> v) { return std::sqrt(variance_sample(v)); }

inline double sd_population(std::span<const double> v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

/// Percentile by linear interpolation between closest order statistics,
/// rank h = 1 + (n-1)p on the sorted sample. Single shared definition:
/// weight truncation, draw summaries and coverage checks all route here.
inline double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty())
        throw std::invalid_argument("percentile_sorted: empty input");
    if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("percentile_sorted: p outside [0,1]");
    const std::size_t n = sorted.size();
    const double h = 1.0 + static_cast<double>(n - 1) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h)) - 1;
    if (lo + 1 >= n)
        return sorted[n - 1];
    const double frac = h - std::floor(h);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

/// Pearson correlation; nullopt when either series has zero variance.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson: need two equal-length series of size >= 2");
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0)
        return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

/// log(n!) with a cached table for small n and a Stirling series above it.
inline double log_factorial(long long n) {
    if (n < 0)
        throw std::invalid_argument("log_factorial: negative argument");
    static const std::vector<double> table = [] {
        std::vector<double> t(1024);
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = std::lgamma(static_cast<double>(i) + 1.0);
        return t;
    }();
    if (static_cast<std::size_t>(n) < table.size())
        return table[static_cast<std::size_t>(n)];
    const double x = static_cast<double>(n) + 1.0;
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    return (x - 0.5) * std::log(x) - x + LOG_SQRT_2PI +
           inv * (1.0 / 12.0 + inv2 * (-1.0 / 360.0 + inv2 * (1.0 / 1260.0)));
}

/// log pmf of Poisson(n; mean). mean == 0 is a point mass at n == 0.
inline double log_poisson_pmf(long long n, double mean) {
    if (n < 0)
        return NEG_INF;
    if (mean <= 0.0)
        return n == 0 ? 0.0 : NEG_INF;
    return static_cast<double>(n) * std::log(mean) - mean - log_factorial(n);
}

inline double log_normal_pdf(double x, double mean, double sd) {
    if (!(sd > 0.0))
        return NEG_INF;
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - LOG_SQRT_2PI;
}

/// Density of a log-normal variate x > 0 whose log has the given mean and sd.
inline double log_lognormal_pdf(double x, double meanlog, double sdlog) {
    if (!(x > 0.0) || !(sdlog > 0.0))
        return NEG_INF;
    const double lx = std::log(x);
    const double z = (lx - meanlog) / sdlog;
    return -0.5 * z * z - lx - std::log(sdlog) - LOG_SQRT_2PI;
}

/// log Phi(z), stable far into the left tail (asymptotic Mills ratio).
inline double log_normal_cdf(double z) {
    if (z > -8.0)
        return std::log(0.5 * std::erfc(-z * 0.70710678118654752440));
    const double z2 = z * z;
    return -0.5 * z2 - LOG_SQRT_2PI - std::log(-z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

/// Normal(loc, scale) truncated to [0, inf), normalizing constant included.
inline double log_half_normal_pdf(double x, double loc, double scale) {
    if (!(scale > 0.0) || x < 0.0)
        return NEG_INF;
    return log_normal_pdf(x, loc, scale) - log_normal_cdf(loc / scale);
}

inline double log_uniform_pdf(double x, double lo, double hi) {
    if (!(hi > lo))
        return NEG_INF;
    if (x < lo || x > hi)
        return NEG_INF;
    return -std::log(hi - lo);
}

/// Minimal dense row-major matrix; enough for draw storage and covariates.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r)
            out[r] = at(r, c);
        return out;
    }
};

} // namespace popgrid
