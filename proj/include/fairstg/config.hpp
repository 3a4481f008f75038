#pragma once

#include "fairstg/dataset.hpp"

#include <map>
#include <string>
#include <vector>

namespace fairstg {

// Typed view over the key-value config document. `resolved` holds every key
// after defaults, file, FAIRSTG_SEED, and --set overrides; writing it back
// out reproduces the run.
struct AppConfig {
    std::string data_path;
    LoadSchema::Format data_format = LoadSchema::Format::wide;
    int w = 12;
    int h = 12;
    double ratio_train = 0.7, ratio_val = 0.2, ratio_test = 0.1;
    MissingPolicy missing = MissingPolicy::forward_fill;
    double mape_epsilon = 1e-3;

    std::string adjacency_kind = "adaptive"; // adaptive | gaussian | topk
    double adjacency_sigma = 1.0;
    double adjacency_threshold = 0.1;
    double adjacency_k_fraction = 0.2;
    std::string distances_path;

    int d = 64;
    int channels = 16;
    int d_emb = 10;
    int d_k = 32;
    int gate_hidden = 16;
    int ext_embed = 4;
    std::string rec_arch = "gcn3";
    int rec_h1 = 64;
    int rec_h2 = 32;

    double lr = 0.001;
    double grad_clip = 5.0;
    int batch_size = 64;
    int warmup_epochs = 30;
    int total_epochs = 100;
    unsigned seed = 1;
    double mu_r = 1.0;
    double mu_f = 0.5;
    double mu_s = 0.1;
    int k_c = 5;
    double k_easy = 0.2;
    double omega = 4.0;
    std::string ablation = "full";
    int patience = 15;

    int synth_n = 20;
    int synth_t = 2000;
    double synth_group_split = 0.5;
    double synth_sigma_a = 0.1;
    double synth_sigma_b = 0.8;
    bool synth_regime = true;
    int synth_period = 288;
    unsigned synth_seed = 1;

    std::string eval_baseline_report;

    std::map<std::string, std::string> resolved;
};

// path may be empty (defaults only). overrides are "key=value" entries from
// --set. FAIRSTG_SEED, when present, overrides train.seed and synth.seed
// before --set is applied.
AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

void write_snapshot(const AppConfig& cfg, const std::string& path);

} // namespace fairstg
