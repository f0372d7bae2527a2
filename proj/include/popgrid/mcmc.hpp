#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "popgrid/csv.hpp"
#include "popgrid/rng.hpp"
#include "popgrid/stats.hpp"

namespace popgrid {

struct ChainConfig {
    int n_chains = 3;
    int n_iterations = 10000;
    int burn_in = 5000; // first half by default
    int thin = 1;
    std::uint64_t seed = 1;
    std::uint64_t stream_key = 0; // extra key separating pilot/final/fold runs
    int adapt_window = 50;
    double target_accept = 0.44; // optimal-scaling target for scalar updates
    int threads = 0;             // 0 = one thread per chain up to hardware
    bool audit = false;

    void validate() const {
        if (n_chains < 1)
            throw Error("ChainConfig: n_chains must be >= 1");
        if (burn_in < 0 || burn_in >= n_iterations)
            throw Error("ChainConfig: burn_in must lie in [0, n_iterations)");
        if (thin < 1)
            throw Error("ChainConfig: thin must be >= 1");
        if (adapt_window < 1)
            throw Error("ChainConfig: adapt_window must be >= 1");
        if (!(target_accept > 0.0 && target_accept < 1.0))
            throw Error("ChainConfig: target_accept must lie in (0,1)");
    }

    int retained_per_chain() const { return (n_iterations - burn_in + thin - 1) / thin; }
};

/// A target distribution the sampler can walk over. conditional_log_posterior
/// must return, up to a constant in the other coordinates, every term of the
/// full log posterior that involves coordinate j; the Metropolis ratio for a
/// scalar update is then the difference of two conditional evaluations.
class TargetModel {
  public:
    virtual ~TargetModel() = default;
    virtual int dimension() const = 0;
    virtual std::vector<std::string> parameter_names() const = 0;
    virtual void initialize_state(std::vector<double>& state, RngStream& rng) const = 0;
    virtual double log_posterior(std::span<const double> state) const = 0;
    virtual double conditional_log_posterior(std::span<const double> state, int j) const {
        return log_posterior(state);
    }
};

struct AcceptanceAudit {
    long long accepted = 0;
    long long proposed = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
};

struct PosteriorDraws {
    std::vector<std::string> names;
    std::vector<Matrix> chains;                   // one retained-draw matrix per chain
    std::vector<std::vector<double>> accept_rate; // per chain, per parameter (post burn-in)
    AcceptanceAudit audit;

    std::size_t n_chains() const { return chains.size(); }
    std::size_t n_retained() const { return chains.empty() ? 0 : chains.front().rows; }
    std::size_t dimension() const { return names.size(); }

    /// Retained draws pooled across chains, one matrix.
    Matrix pooled() const {
        Matrix out(n_retained() * n_chains(), dimension());
        std::size_t r = 0;
        for (const auto& ch : chains)
            for (std::size_t i = 0; i < ch.rows; ++i, ++r)
                std::copy(ch.row(i).begin(), ch.row(i).end(), out.row(r).begin());
        return out;
    }

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name)
                return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline void run_one_chain(const TargetModel& target, const ChainConfig& cfg, int chain_index,
                          Matrix& out, std::vector<double>& accept_rate, AcceptanceAudit& audit) {
    const int dim = target.dimension();
    RngStream rng(cfg.seed, {cfg.stream_key, 0x0c4a1211u, static_cast<std::uint64_t>(chain_index)});

    std::vector<double> state(dim, 0.0);
    double lp = NEG_INF;
    int attempts = 0;
    while (!std::isfinite(lp)) {
        if (++attempts > 1000)
            throw Error("run_chains: no finite starting state after 1000 initialization draws");
        target.initialize_state(state, rng);
        lp = target.log_posterior(state);
    }

    std::vector<double> log_step(dim, std::log(0.5));
    std::vector<int> window_accepts(dim, 0);
    std::vector<long long> kept_accepts(dim, 0);
    int windows_done = 0;

    const int retained = cfg.retained_per_chain();
    out = Matrix(static_cast<std::size_t>(retained), static_cast<std::size_t>(dim));
    std::size_t out_row = 0;

    for (int iter = 0; iter < cfg.n_iterations; ++iter) {
        const bool adapting = iter < cfg.burn_in;
        for (int j = 0; j < dim; ++j) {
            const double cur = target.conditional_log_posterior(state, j);
            const double old = state[j];
            state[j] = old + std::exp(log_step[j]) * rng.next_normal();
            const double prop = target.conditional_log_posterior(state, j);
            const double log_u = std::log(rng.next_double());
            const double delta = prop - cur;
            if (delta > log_u) {
                if (adapting)
                    ++window_accepts[j];
                else
                    ++kept_accepts[j];
                if (cfg.audit) {
                    ++audit.accepted;
                    audit.worst_margin = std::min(audit.worst_margin, delta - log_u);
                }
            } else {
                state[j] = old;
            }
            if (cfg.audit)
                ++audit.proposed;
        }
        // Robbins-Monro on log step size toward the target acceptance rate,
        // burn-in only; the kernel is frozen afterwards.
        if (adapting && (iter + 1) % cfg.adapt_window == 0) {
            ++windows_done;
            const double gain = 1.0 / std::sqrt(static_cast<double>(windows_done));
            for (int j = 0; j < dim; ++j) {
                const double rate =
                    static_cast<double>(window_accepts[j]) / static_cast<double>(cfg.adapt_window);
                log_step[j] += gain * (rate - cfg.target_accept);
                log_step[j] = std::clamp(log_step[j], -14.0, 7.0);
                window_accepts[j] = 0;
            }
        }
        if (iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0) {
            const double check = target.log_posterior(state);
            if (!std::isfinite(check))
                throw Error("run_chains: non-finite log posterior at a retained state");
            std::copy(state.begin(), state.end(), out.row(out_row).begin());
            ++out_row;
        }
    }

    const long long post_iters = cfg.n_iterations - cfg.burn_in;
    accept_rate.resize(dim);
    for (int j = 0; j < dim; ++j)
        accept_rate[j] = post_iters > 0
                             ? static_cast<double>(kept_accepts[j]) / static_cast<double>(post_iters)
                             : 0.0;
}

} // namespace detail

/// Runs the configured number of independent adaptive random-walk chains.
/// Chains differ only by RNG substream and overdispersed initialization and
/// may execute concurrently; output is a pure function of (seed, config,
/// target), independent of scheduling.
inline PosteriorDraws run_chains(const TargetModel& target, const ChainConfig& cfg) {
    cfg.validate();
    PosteriorDraws draws;
    draws.names = target.parameter_names();
    draws.chains.resize(cfg.n_chains);
    draws.accept_rate.resize(cfg.n_chains);
    std::vector<AcceptanceAudit> audits(cfg.n_chains);

    int workers = cfg.threads > 0 ? cfg.threads
                                  : static_cast<int>(std::min<unsigned>(
                                        cfg.n_chains, std::thread::hardware_concurrency()));
    workers = std::max(1, std::min(workers, cfg.n_chains));

    std::exception_ptr failure = nullptr;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int c = next.fetch_add(1);
            if (c >= cfg.n_chains)
                return;
            try {
                detail::run_one_chain(target, cfg, c, draws.chains[c], draws.accept_rate[c],
                                      audits[c]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(work);
        for (auto& t : pool)
            t.join();
    }
    if (failure)
        std::rethrow_exception(failure);

    for (const auto& a : audits) {
        draws.audit.accepted += a.accepted;
        draws.audit.proposed += a.proposed;
        draws.audit.worst_margin = std::min(draws.audit.worst_margin, a.worst_margin);
    }
    return draws;
}

struct RhatTable {
    std::vector<std::string> names;
    std::vector<double> rhat;
    std::vector<bool> constant; // W == 0, reported as converged with a notice

    double max_rhat() const {
        double m = 0.0;
        for (double r : rhat)
            m = std::max(m, r);
        return m;
    }
    bool all_below(double threshold) const { return max_rhat() < threshold; }
};

/// Potential scale reduction factor per parameter: with per-chain length n,
/// within-chain variance W and between-chain variance B,
/// rhat = sqrt(((n-1)/n * W + B/n) / W).
inline RhatTable gelman_rubin(const PosteriorDraws& draws) {
    const std::size_t m = draws.n_chains();
    const std::size_t n = draws.n_retained();
    if (m < 2)
        throw Error("gelman_rubin: need at least 2 chains");
    if (n < 10)
        throw Error("gelman_rubin: need at least 10 retained draws per chain");
    RhatTable table;
    table.names = draws.names;
    for (std::size_t j = 0; j < draws.dimension(); ++j) {
        std::vector<double> chain_means(m), chain_vars(m);
        for (std::size_t c = 0; c < m; ++c) {
            const auto col = draws.chains[c].column(j);
            chain_means[c] = mean_of(col);
            chain_vars[c] = variance_sample(col);
        }
        const double w = mean_of(chain_vars);
        if (w <= 0.0) {
            table.rhat.push_back(1.0);
            table.constant.push_back(true);
            continue;
        }
        const double b_over_n = variance_sample(chain_means);
        const double nn = static_cast<double>(n);
        table.rhat.push_back(std::sqrt(((nn - 1.0) / nn * w + b_over_n) / w));
        table.constant.push_back(false);
    }
    return table;
}

inline void write_rhat_csv(const std::string& path, const RhatTable& t) {
    auto out = open_output(path);
    out << "parameter,rhat,notice\n";
    for (std::size_t i = 0; i < t.names.size(); ++i)
        out << t.names[i] << ',' << fmt_double(t.rhat[i]) << ','
            << (t.constant[i] ? "constant" : "") << "\n";
}

struct SummaryRow {
    std::string name;
    double mean = 0.0, sd = 0.0, q025 = 0.0, q50 = 0.0, q975 = 0.0;
    double accept_rate = 0.0;
};

/// Pooled posterior summaries per parameter (chains already burn-in-free).
inline std::vector<SummaryRow> summarize_draws(const PosteriorDraws& draws) {
    if (draws.n_retained() == 0)
        throw Error("summarize_draws: no retained draws");
    const Matrix pooled = draws.pooled();
    std::vector<SummaryRow> rows;
    for (std::size_t j = 0; j < draws.dimension(); ++j) {
        SummaryRow r;
        r.name = draws.names[j];
        std::vector<double> col = pooled.column(j);
        r.mean = mean_of(col);
        r.sd = col.size() > 1 ? sd_sample(col) : 0.0;
        std::sort(col.begin(), col.end());
        r.q025 = percentile_sorted(col, 0.025);
        r.q50 = percentile_sorted(col, 0.50);
        r.q975 = percentile_sorted(col, 0.975);
        double acc = 0.0;
        for (const auto& chain_rates : draws.accept_rate)
            acc += chain_rates.empty() ? 0.0 : chain_rates[j];
        r.accept_rate = draws.accept_rate.empty() ? 0.0 : acc / draws.accept_rate.size();
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    auto out = open_output(path);
    out << "parameter,mean,sd,q2.5,q50,q97.5,accept_rate\n";
    for (const auto& r : rows)
        out << r.name << ',' << fmt_double(r.mean) << ',' << fmt_double(r.sd) << ','
            << fmt_double(r.q025) << ',' << fmt_double(r.q50) << ',' << fmt_double(r.q975) << ','
            << fmt_double(r.accept_rate) << "\n";
}

/// Appends a derived column (one value per retained draw, per chain).
inline void append_derived_column(PosteriorDraws& draws, const std::string& name,
                                  const std::vector<std::vector<double>>& per_chain) {
    draws.names.push_back(name);
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
        Matrix& m = draws.chains[c];
        Matrix grown(m.rows, m.cols + 1);
        for (std::size_t r = 0; r < m.rows; ++r) {
            std::copy(m.row(r).begin(), m.row(r).end(), grown.row(r).begin());
            grown.at(r, m.cols) = per_chain[c][r];
        }
        m = std::move(grown);
        if (!draws.accept_rate[c].empty())
            draws.accept_rate[c].push_back(0.0);
    }
}

/// Keeps only the named columns (used to drop latent coordinates on export).
inline PosteriorDraws select_columns(const PosteriorDraws& draws,
                                     const std::vector<std::size_t>& keep) {
    PosteriorDraws out;
    out.audit = draws.audit;
    for (std::size_t j : keep)
        out.names.push_back(draws.names[j]);
    out.chains.resize(draws.chains.size());
    out.accept_rate.resize(draws.chains.size());
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
        const Matrix& m = draws.chains[c];
        Matrix sel(m.rows, keep.size());
        for (std::size_t r = 0; r < m.rows; ++r)
            for (std::size_t k = 0; k < keep.size(); ++k)
                sel.at(r, k) = m.at(r, keep[k]);
        out.chains[c] = std::move(sel);
        for (std::size_t k = 0; k < keep.size(); ++k)
            out.accept_rate[c].push_back(draws.accept_rate[c].empty() ? 0.0
                                                                      : draws.accept_rate[c][keep[k]]);
    }
    return out;
}

inline void write_draws_csv(const std::string& dir, const PosteriorDraws& draws) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
        auto out = open_output(
            (fs::path(dir) / ("draws_chain" + std::to_string(c + 1) + ".csv")).string());
        out << join_csv(draws.names) << "\n";
        const Matrix& m = draws.chains[c];
        for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t j = 0; j < m.cols; ++j) {
                if (j)
                    out << ',';
                out << fmt_double(m.at(r, j));
            }
            out << "\n";
        }
    }
}

/// Loads every draws_chain*.csv in a directory (sorted by chain number).
inline PosteriorDraws read_draws_csv(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("draws_chain", 0) == 0 && e.path().extension() == ".csv")
            files.push_back(e.path());
    }
    if (files.empty())
        throw Error("read_draws_csv: no draws_chain*.csv files in " + dir);
    std::sort(files.begin(), files.end());
    PosteriorDraws draws;
    for (const auto& f : files) {
        const CsvTable t = read_csv(f.string());
        if (draws.names.empty())
            draws.names = t.header;
        else if (draws.names != t.header)
            throw Error("read_draws_csv: chain files disagree on parameter names");
        Matrix m(t.rows.size(), t.header.size());
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            for (std::size_t j = 0; j < t.header.size(); ++j)
                m.at(r, j) = parse_double(t.rows[r][j], f.string());
        draws.chains.push_back(std::move(m));
        draws.accept_rate.emplace_back();
    }
    return draws;
}

} // namespace popgrid
