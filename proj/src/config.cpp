#include "fairstg/config.hpp"

#include "fairstg/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

namespace fairstg {

namespace {

const std::map<std::string, std::string> kDefaults = {
    {"data.path", ""},
    {"data.format", "wide"},
    {"data.w", "12"},
    {"data.h", "12"},
    {"data.ratios", "0.7,0.2,0.1"},
    {"data.missing_policy", "forward_fill"},
    {"data.mape_epsilon", "0.001"},
    {"adjacency.kind", "adaptive"},
    {"adjacency.sigma", "1.0"},
    {"adjacency.threshold", "0.1"},
    {"adjacency.k_fraction", "0.2"},
    {"adjacency.distances_path", ""},
    {"model.d", "64"},
    {"model.channels", "16"},
    {"model.d_emb", "10"},
    {"model.d_k", "32"},
    {"model.gate_hidden", "16"},
    {"model.ext_embed", "4"},
    {"model.recognizer.arch", "gcn3"},
    {"model.recognizer.h1", "64"},
    {"model.recognizer.h2", "32"},
    {"train.lr", "0.001"},
    {"train.grad_clip", "5.0"},
    {"train.batch_size", "64"},
    {"train.warmup_epochs", "30"},
    {"train.total_epochs", "100"},
    {"train.seed", "1"},
    {"train.mu_r", "1.0"},
    {"train.mu_f", "0.5"},
    {"train.mu_s", "0.1"},
    {"train.k_c", "5"},
    {"train.k_easy", "0.2"},
    {"train.omega", "4.0"},
    {"train.ablation", "full"},
    {"train.patience", "15"},
    {"synth.n", "20"},
    {"synth.t", "2000"},
    {"synth.group_split", "0.5"},
    {"synth.sigma_a", "0.1"},
    {"synth.sigma_b", "0.8"},
    {"synth.regime", "true"},
    {"synth.period", "288"},
    {"synth.seed", "1"},
    {"eval.baseline_report", ""},
};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

void set_key(std::map<std::string, std::string>& resolved, const std::string& key,
             const std::string& value, const std::string& origin) {
    if (kDefaults.find(key) == kDefaults.end()) {
        throw ConfigError("unknown config key '" + key + "' (" + origin + ")");
    }
    resolved[key] = value;
}

double as_double(const std::map<std::string, std::string>& r, const std::string& key) {
    const std::string& s = r.at(key);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("config key '" + key + "' needs a number, got '" + s + "'");
    }
    return v;
}

int as_int(const std::map<std::string, std::string>& r, const std::string& key) {
    double v = as_double(r, key);
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) {
        throw ConfigError("config key '" + key + "' needs an integer, got '" + r.at(key) + "'");
    }
    return i;
}

bool as_bool(const std::map<std::string, std::string>& r, const std::string& key) {
    const std::string& s = r.at(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "' needs true/false, got '" + s + "'");
}

std::string as_choice(const std::map<std::string, std::string>& r, const std::string& key,
                      const std::set<std::string>& allowed) {
    const std::string& s = r.at(key);
    if (allowed.find(s) == allowed.end()) {
        std::string opts;
        for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
        throw ConfigError("config key '" + key + "' must be one of {" + opts + "}, got '" + s +
                          "'");
    }
    return s;
}

} // namespace

AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::map<std::string, std::string> resolved = kDefaults;

    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            // trailing comments start at a '#' preceded by whitespace, so
            // values may still contain '#' without a surrounding space
            for (std::size_t p = 1; p < t.size(); ++p) {
                if (t[p] == '#' && (t[p - 1] == ' ' || t[p - 1] == '\t')) {
                    t = trim(t.substr(0, p));
                    break;
                }
            }
            std::size_t eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  " is not key = value: '" + t + "'");
            }
            set_key(resolved, trim(t.substr(0, eq)), trim(t.substr(eq + 1)),
                    path + ":" + std::to_string(lineno));
        }
    }

    if (const char* env_seed = std::getenv("FAIRSTG_SEED")) {
        set_key(resolved, "train.seed", env_seed, "FAIRSTG_SEED");
        set_key(resolved, "synth.seed", env_seed, "FAIRSTG_SEED");
    }

    for (const auto& o : overrides) {
        std::size_t eq = o.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set needs key=value, got '" + o + "'");
        }
        set_key(resolved, trim(o.substr(0, eq)), trim(o.substr(eq + 1)), "--set");
    }

    AppConfig cfg;
    cfg.resolved = resolved;
    cfg.data_path = resolved.at("data.path");
    cfg.data_format = as_choice(resolved, "data.format", {"wide", "long"}) == "wide"
                          ? LoadSchema::Format::wide
                          : LoadSchema::Format::long_form;
    cfg.w = as_int(resolved, "data.w");
    cfg.h = as_int(resolved, "data.h");
    {
        const std::string& s = resolved.at("data.ratios");
        double a, b, c;
        if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3) {
            throw ConfigError("data.ratios needs three comma-separated numbers, got '" + s +
                              "'");
        }
        if (a < 0.0 || b < 0.0 || c < 0.0 || std::abs(a + b + c - 1.0) > 1e-9) {
            throw ConfigError("data.ratios must be nonnegative and sum to 1, got '" + s + "'");
        }
        cfg.ratio_train = a;
        cfg.ratio_val = b;
        cfg.ratio_test = c;
    }
    cfg.missing = as_choice(resolved, "data.missing_policy", {"forward_fill", "error"}) ==
                          "forward_fill"
                      ? MissingPolicy::forward_fill
                      : MissingPolicy::error;
    cfg.mape_epsilon = as_double(resolved, "data.mape_epsilon");

    cfg.adjacency_kind = as_choice(resolved, "adjacency.kind", {"adaptive", "gaussian", "topk"});
    cfg.adjacency_sigma = as_double(resolved, "adjacency.sigma");
    cfg.adjacency_threshold = as_double(resolved, "adjacency.threshold");
    cfg.adjacency_k_fraction = as_double(resolved, "adjacency.k_fraction");
    cfg.distances_path = resolved.at("adjacency.distances_path");

    cfg.d = as_int(resolved, "model.d");
    cfg.channels = as_int(resolved, "model.channels");
    cfg.d_emb = as_int(resolved, "model.d_emb");
    cfg.d_k = as_int(resolved, "model.d_k");
    cfg.gate_hidden = as_int(resolved, "model.gate_hidden");
    cfg.ext_embed = as_int(resolved, "model.ext_embed");
    cfg.rec_arch = as_choice(resolved, "model.recognizer.arch", {"gcn3", "linear3"});
    cfg.rec_h1 = as_int(resolved, "model.recognizer.h1");
    cfg.rec_h2 = as_int(resolved, "model.recognizer.h2");

    cfg.lr = as_double(resolved, "train.lr");
    cfg.grad_clip = as_double(resolved, "train.grad_clip");
    cfg.batch_size = as_int(resolved, "train.batch_size");
    cfg.warmup_epochs = as_int(resolved, "train.warmup_epochs");
    cfg.total_epochs = as_int(resolved, "train.total_epochs");
    cfg.seed = static_cast<unsigned>(as_int(resolved, "train.seed"));
    cfg.mu_r = as_double(resolved, "train.mu_r");
    cfg.mu_f = as_double(resolved, "train.mu_f");
    cfg.mu_s = as_double(resolved, "train.mu_s");
    cfg.k_c = as_int(resolved, "train.k_c");
    cfg.k_easy = as_double(resolved, "train.k_easy");
    cfg.omega = as_double(resolved, "train.omega");
    cfg.ablation = as_choice(resolved, "train.ablation", {"full", "no_fe", "no_fo"});
    cfg.patience = as_int(resolved, "train.patience");

    cfg.synth_n = as_int(resolved, "synth.n");
    cfg.synth_t = as_int(resolved, "synth.t");
    cfg.synth_group_split = as_double(resolved, "synth.group_split");
    cfg.synth_sigma_a = as_double(resolved, "synth.sigma_a");
    cfg.synth_sigma_b = as_double(resolved, "synth.sigma_b");
    cfg.synth_regime = as_bool(resolved, "synth.regime");
    cfg.synth_period = as_int(resolved, "synth.period");
    cfg.synth_seed = static_cast<unsigned>(as_int(resolved, "synth.seed"));

    cfg.eval_baseline_report = resolved.at("eval.baseline_report");

    if (cfg.lr <= 0) throw ConfigError("train.lr must be > 0");
    if (cfg.w < 1 || cfg.h < 1) throw ConfigError("data.w and data.h must be >= 1");
    if (cfg.total_epochs < 1) throw ConfigError("train.total_epochs must be >= 1");
    if (cfg.warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
    if (!(cfg.k_easy > 0 && cfg.k_easy <= 1)) throw ConfigError("train.k_easy must be in (0,1]");
    if (cfg.k_c < 1) throw ConfigError("train.k_c must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    return cfg;
}

void write_snapshot(const AppConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config snapshot: " + path);
    for (const auto& [key, value] : cfg.resolved) {
        out << key << " = " << value << '\n';
    }
    if (!out) throw ConfigError("config snapshot write failed: " + path);
}

} // namespace fairstg
