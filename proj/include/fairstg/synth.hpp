#pragma once

#include "fairstg/dataset.hpp"

namespace fairstg {

struct SynthConfig {
    int n = 20;
    int t = 2000;
    double group_split = 0.5; // fraction of nodes in the smooth group
    double sigma_a = 0.1;     // noise level, smooth group
    double sigma_b = 0.8;     // noise level, volatile group
    bool regime = true;       // regime-switching means for the volatile group
    int period = 288;         // sinusoid period in steps
    unsigned seed = 1;
};

// Two node populations over a shared clock: phase-shifted sinusoids with
// light noise, and (optionally) regime-switching series with heavy noise.
// With regime off both groups share the sinusoid generator and differ only
// in noise scale. Timestamps advance in 5 minute steps from
// 2024-01-01 00:00:00.
RawDataset generate_synthetic(const SynthConfig& cfg);

void write_wide_csv(const RawDataset& ds, const std::string& path);

} // namespace fairstg
