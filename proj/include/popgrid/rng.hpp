#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>

#include "popgrid/stats.hpp"

namespace popgrid {

namespace detail {

// Finalizer from the SplitMix64 generator (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

constexpr std::uint64_t GOLDEN_GAMMA = 0x9e3779b97f4a7c15ULL;

} // namespace detail

/// Keyed counter-based random stream. A stream is identified by a master
/// seed plus a short list of integer keys (chain index, cell index, draw
/// index, ...), so any unit of work can own an independent substream
/// without coordination between threads. Two streams with different keys
/// use different increments, so sequences do not overlap in phase.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = detail::mix64(seed + detail::GOLDEN_GAMMA);
        for (std::uint64_t k : keys)
            h = detail::mix64(h ^ (k + detail::GOLDEN_GAMMA));
        state_ = h;
        gamma_ = detail::mix64(h ^ 0xd6e8feb86659fd93ULL) | 1ULL;
    }

    explicit RngStream(std::uint64_t seed) : RngStream(seed, {}) {}

    std::uint64_t next_u64() {
        state_ += gamma_;
        return detail::mix64(state_);
    }

    /// Uniform on (0,1); never returns exactly 0 or 1.
    double next_double() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_index(std::uint64_t n) {
        // Rejection to avoid modulo bias.
        const std::uint64_t limit = n * ((~0ULL) / n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (cosine branch only, no cached spare,
    /// so the draw count per call is fixed and streams stay reproducible).
    double next_normal() {
        const double u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double next_normal(double mean, double sd) { return mean + sd * next_normal(); }

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 boosted through
    /// Gamma(shape+1) * U^(1/shape).
    double next_gamma(double shape) {
        if (!(shape > 0.0))
            throw std::invalid_argument("next_gamma: shape must be positive");
        if (shape < 1.0) {
            const double u = next_double();
            return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / (3.0 * std::sqrt(d));
        for (;;) {
            double x, v;
            do {
                x = next_normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x)
                return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
                return d * v;
        }
    }

    /// Poisson draw. Inversion by sequential search for small means, PTRD
    /// (Hoermann's transformed rejection) for large ones.
    long long next_poisson(double mean) {
        if (!(mean >= 0.0) || !std::isfinite(mean))
            throw std::invalid_argument("next_poisson: mean must be finite and >= 0");
        if (mean == 0.0)
            return 0;
        if (mean < 10.0)
            return poisson_inversion(mean);
        return poisson_ptrd(mean);
    }

    /// Dirichlet via normalized gammas. Components are clamped away from
    /// exact zero so downstream simplex values stay inside (0,1).
    void next_dirichlet(std::span<const double> alpha, std::span<double> out) {
        double total = 0.0;
        for (std::size_t g = 0; g < alpha.size(); ++g) {
            double x = next_gamma(alpha[g]);
            if (x < 1e-300)
                x = 1e-300;
            out[g] = x;
            total += x;
        }
        for (std::size_t g = 0; g < alpha.size(); ++g)
            out[g] /= total;
    }

  private:
    long long poisson_inversion(double mean) {
        const double p0 = std::exp(-mean);
        double p = p0;
        double cdf = p;
        const double u = next_double();
        long long k = 0;
        while (u > cdf) {
            ++k;
            p *= mean / static_cast<double>(k);
            cdf += p;
            if (k > 2000) // cumulative round-off guard; mean < 10 here
                break;
        }
        return k;
    }

    // Hoermann (1993) transformed rejection with decomposition.
    long long poisson_ptrd(double mean) {
        const double smu = std::sqrt(mean);
        const double b = 0.931 + 2.53 * smu;
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = next_double() - 0.5;
            double v = next_double();
            const double us = 0.5 - std::abs(u);
            const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= vr)
                return static_cast<long long>(kf);
            if (kf < 0.0 || (us < 0.013 && v > us))
                continue;
            const long long k = static_cast<long long>(kf);
            const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
            const double rhs = kf * std::log(mean) - mean - log_factorial(k);
            if (lhs <= rhs)
                return k;
        }
    }

    std::uint64_t state_;
    std::uint64_t gamma_;
};

} // namespace popgrid
