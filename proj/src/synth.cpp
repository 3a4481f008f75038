#include "fairstg/synth.hpp"

#include "fairstg/csv.hpp"
#include "fairstg/errors.hpp"
#include "fairstg/params.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace fairstg {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr std::int64_t kStartEpoch = 1704067200; // 2024-01-01 00:00:00 UTC
constexpr std::int64_t kIntervalSeconds = 300;

// Box-Muller on raw generator bits so output is bytewise reproducible across
// standard libraries.
double normal_draw(std::mt19937& rng) {
    double u1 = 1.0 - uniform53(rng); // (0,1]
    double u2 = uniform53(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// Run lengths with mean ~96 steps, via inversion.
int regime_duration(std::mt19937& rng) {
    const double p = 1.0 / 96.0;
    double u = uniform53(rng);
    return 1 + static_cast<int>(std::log(1.0 - u) / std::log(1.0 - p));
}

} // namespace

RawDataset generate_synthetic(const SynthConfig& cfg) {
    if (cfg.n < 1 || cfg.t < 1) throw ConfigError("synth.n and synth.t must be >= 1");
    if (!(cfg.group_split >= 0 && cfg.group_split <= 1)) {
        throw ConfigError("synth.group_split must be in [0,1]");
    }
    if (cfg.period < 1) throw ConfigError("synth.period must be >= 1");
    if (cfg.sigma_a < 0 || cfg.sigma_b < 0) throw ConfigError("synth noise must be >= 0");

    int n_smooth = static_cast<int>(std::lround(cfg.n * cfg.group_split));

    RawDataset ds;
    ds.values.resize(cfg.n, cfg.t);
    ds.timestamps.resize(static_cast<std::size_t>(cfg.t));
    for (int t = 0; t < cfg.t; ++t) {
        ds.timestamps[static_cast<std::size_t>(t)] = kStartEpoch + t * kIntervalSeconds;
    }
    ds.interval_seconds = kIntervalSeconds;
    ds.node_ids.resize(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) {
        ds.node_ids[static_cast<std::size_t>(i)] = "n" + std::to_string(i);
    }

    std::mt19937 rng(cfg.seed);
    for (int i = 0; i < cfg.n; ++i) {
        bool smooth = i < n_smooth;
        double sigma = smooth ? cfg.sigma_a : cfg.sigma_b;
        double phase = static_cast<double>(i) / static_cast<double>(cfg.n);
        if (smooth || !cfg.regime) {
            for (int t = 0; t < cfg.t; ++t) {
                double base =
                    50.0 + 10.0 * std::sin(kTwoPi * (static_cast<double>(t) / cfg.period + phase));
                ds.values(i, t) = base + sigma * normal_draw(rng);
            }
        } else {
            bool high = uniform53(rng) < 0.5;
            int remaining = regime_duration(rng);
            for (int t = 0; t < cfg.t; ++t) {
                if (remaining == 0) {
                    high = !high;
                    remaining = regime_duration(rng);
                }
                --remaining;
                ds.values(i, t) = (high ? 65.0 : 35.0) + sigma * normal_draw(rng);
            }
        }
    }
    return ds;
}

void write_wide_csv(const RawDataset& ds, const std::string& path) {
    std::vector<std::string> header;
    header.reserve(ds.node_ids.size() + 1);
    header.push_back("timestamp");
    for (const auto& id : ds.node_ids) header.push_back(id);

    std::vector<std::vector<std::string>> rows;
    rows.reserve(ds.timestamps.size());
    char buf[64];
    for (int t = 0; t < ds.num_steps(); ++t) {
        std::vector<std::string> row;
        row.reserve(ds.node_ids.size() + 1);
        row.push_back(format_timestamp(ds.timestamps[static_cast<std::size_t>(t)]));
        for (int i = 0; i < ds.num_nodes(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6f", ds.values(i, t));
            row.emplace_back(buf);
        }
        rows.push_back(std::move(row));
    }
    csv::write_rows(path, header, rows);
}

} // namespace fairstg
