#include <CLI11.hpp>
#include <json.hpp>

#include "fairstg/checkpoint.hpp"
#include "fairstg/config.hpp"
#include "fairstg/csv.hpp"
#include "fairstg/dataset.hpp"
#include "fairstg/errors.hpp"
#include "fairstg/evaluation.hpp"
#include "fairstg/model.hpp"
#include "fairstg/synth.hpp"
#include "fairstg/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace fairstg;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t kFnvBasis = 1469598103934665603ull;

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read back " + p.string());
    std::uint64_t h = kFnvBasis;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
    }
    return hex64(h);
}

std::string hash_dataset(const RawDataset& ds) {
    std::uint64_t h = kFnvBasis;
    for (const auto& id : ds.node_ids) h = fnv1a(h, id.data(), id.size() + 1);
    for (std::int64_t t : ds.timestamps) h = fnv1a(h, &t, sizeof(t));
    for (int i = 0; i < ds.num_nodes(); ++i) {
        for (int t = 0; t < ds.num_steps(); ++t) {
            double v = ds.values(i, t);
            h = fnv1a(h, &v, sizeof(v));
        }
    }
    return hex64(h);
}

struct PreparedData {
    RawDataset ds;
    std::vector<int> starts;
    SplitStarts splits;
    NormalizationState norm;
    AdjacencyKind kind = AdjacencyKind::adaptive;
    Matrix fixed_adjacency;
};

// Accepts the triplet layout (node_a,node_b,distance; optional header) or a
// bare N x N numeric matrix. Triplet pairs are mirrored; unlisted pairs get
// infinite distance, which the Gaussian kernel maps to weight 0.
Matrix read_distances_csv(const std::string& path, const std::vector<std::string>& node_ids) {
    auto rows = csv::read_rows(path);
    if (rows.empty()) throw DataError("empty distances file: " + path);

    if (rows[0].size() == 3) {
        int n = static_cast<int>(node_ids.size());
        Matrix d = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
        d.diagonal().setZero();
        auto find_node = [&node_ids, &path](const std::string& id, std::size_t row) {
            for (std::size_t i = 0; i < node_ids.size(); ++i) {
                if (node_ids[i] == id) return static_cast<int>(i);
            }
            throw DataError(path + " row " + std::to_string(row + 1) + ": unknown node '" + id +
                            "'");
        };
        std::size_t first = rows[0][0] == "node_a" ? 1 : 0;
        for (std::size_t r = first; r < rows.size(); ++r) {
            if (rows[r].size() != 3) {
                throw DataError(path + ": ragged row " + std::to_string(r + 1));
            }
            int a = find_node(rows[r][0], r);
            int b = find_node(rows[r][1], r);
            double dist = csv::parse_double(rows[r][2], static_cast<int>(r + 1), 3);
            d(a, b) = dist;
            d(b, a) = dist;
        }
        return d;
    }

    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) {
            throw DataError(path + ": ragged row " + std::to_string(r + 1));
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                csv::parse_double(rows[r][c], static_cast<int>(r + 1), static_cast<int>(c + 1));
        }
    }
    return m;
}

PreparedData prepare_data(const AppConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("data.path is required");
    LoadSchema schema;
    schema.format = cfg.data_format;
    schema.missing = cfg.missing;

    PreparedData prep;
    prep.ds = load_dataset(cfg.data_path, schema);
    prep.starts = window_starts(prep.ds, cfg.w, cfg.h);
    prep.splits = split_starts(prep.starts, cfg.ratio_train, cfg.ratio_val, cfg.ratio_test);
    prep.norm = fit_normalization(prep.ds, prep.splits.train, cfg.w);

    if (cfg.adjacency_kind == "gaussian") {
        if (cfg.distances_path.empty() || !fs::exists(cfg.distances_path)) {
            throw ConfigError("adjacency.kind=gaussian needs an existing adjacency.distances_path"
                              " (got '" +
                              cfg.distances_path + "')");
        }
        prep.kind = AdjacencyKind::fixed;
        prep.fixed_adjacency =
            build_gaussian_adjacency(read_distances_csv(cfg.distances_path, prep.ds.node_ids),
                                     cfg.adjacency_sigma, cfg.adjacency_threshold);
    } else if (cfg.adjacency_kind == "topk") {
        int last_train = prep.splits.train.back();
        prep.kind = AdjacencyKind::fixed;
        prep.fixed_adjacency =
            build_topk_adjacency(prep.ds.values.leftCols(last_train + cfg.w),
                                 cfg.adjacency_k_fraction);
    }
    return prep;
}

ModelConfig model_config(const AppConfig& cfg, const PreparedData& prep) {
    ModelConfig mc;
    mc.w = cfg.w;
    mc.h = cfg.h;
    mc.num_nodes = prep.ds.num_nodes();
    mc.d = cfg.d;
    mc.channels = cfg.channels;
    mc.d_emb = cfg.d_emb;
    mc.d_k = cfg.d_k;
    mc.gate_hidden = cfg.gate_hidden;
    mc.ext_embed = cfg.ext_embed;
    mc.rec_arch = cfg.rec_arch == "gcn3" ? RecognizerArch::gcn3 : RecognizerArch::linear3;
    mc.rec_h1 = cfg.rec_h1;
    mc.rec_h2 = cfg.rec_h2;
    mc.adjacency = prep.kind;
    mc.fixed_adjacency = prep.fixed_adjacency;
    mc.seed = cfg.seed;
    return mc;
}

HyperParams hyper_params(const AppConfig& cfg) {
    HyperParams hp;
    hp.mu = LossWeights{cfg.mu_r, cfg.mu_f, cfg.mu_s};
    hp.omega = cfg.omega;
    hp.k_c = cfg.k_c;
    hp.k_easy = cfg.k_easy;
    return hp;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

int cmd_prepare(const AppConfig& cfg, const fs::path& out_dir) {
    PreparedData prep = prepare_data(cfg);

    {
        std::vector<std::vector<std::string>> rows;
        auto emit = [&rows](const std::vector<int>& starts, const char* name) {
            for (int s : starts) rows.push_back({std::to_string(s), name});
        };
        emit(prep.splits.train, "train");
        emit(prep.splits.val, "val");
        emit(prep.splits.test, "test");
        csv::write_rows((out_dir / "splits.csv").string(), {"window_start", "split"}, rows);
    }
    {
        json j;
        j["mean"] = prep.norm.mean;
        j["std"] = prep.norm.std;
        write_text(out_dir / "normalization.json", j.dump(2) + "\n");
    }
    if (prep.kind == AdjacencyKind::fixed) {
        std::vector<std::vector<std::string>> rows;
        char buf[64];
        for (int i = 0; i < prep.fixed_adjacency.rows(); ++i) {
            std::vector<std::string> row;
            for (int j = 0; j < prep.fixed_adjacency.cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", prep.fixed_adjacency(i, j));
                row.emplace_back(buf);
            }
            rows.push_back(std::move(row));
        }
        std::vector<std::string> header;
        for (const auto& id : prep.ds.node_ids) header.push_back(id);
        csv::write_rows((out_dir / "adjacency.csv").string(), header, rows);
    }

    json manifest;
    manifest["dataset_hash"] = hash_dataset(prep.ds);
    manifest["num_nodes"] = prep.ds.num_nodes();
    manifest["num_steps"] = prep.ds.num_steps();
    manifest["windows"] = static_cast<int>(prep.starts.size());
    manifest["splits"] = {{"train", prep.splits.train.size()},
                          {"val", prep.splits.val.size()},
                          {"test", prep.splits.test.size()}};
    json files;
    files["splits.csv"] = hash_file(out_dir / "splits.csv");
    files["normalization.json"] = hash_file(out_dir / "normalization.json");
    if (prep.kind == AdjacencyKind::fixed) {
        files["adjacency.csv"] = hash_file(out_dir / "adjacency.csv");
    }
    manifest["files"] = files;
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::printf("prepared %d nodes, %d steps, %zu windows (train=%zu val=%zu test=%zu)\n",
                prep.ds.num_nodes(), prep.ds.num_steps(), prep.starts.size(),
                prep.splits.train.size(), prep.splits.val.size(), prep.splits.test.size());
    return 0;
}

int cmd_synth(const AppConfig& cfg, const fs::path& out_dir) {
    SynthConfig sc;
    sc.n = cfg.synth_n;
    sc.t = cfg.synth_t;
    sc.group_split = cfg.synth_group_split;
    sc.sigma_a = cfg.synth_sigma_a;
    sc.sigma_b = cfg.synth_sigma_b;
    sc.regime = cfg.synth_regime;
    sc.period = cfg.synth_period;
    sc.seed = cfg.synth_seed;
    RawDataset ds = generate_synthetic(sc);
    fs::path csv_path = out_dir / "synth.csv";
    write_wide_csv(ds, csv_path.string());

    json manifest;
    manifest["synth.csv"] = hash_file(csv_path);
    manifest["nodes"] = ds.num_nodes();
    manifest["steps"] = ds.num_steps();
    write_text(out_dir / "synth_manifest.json", manifest.dump(2) + "\n");
    std::printf("wrote %s (%d nodes x %d steps)\n", csv_path.string().c_str(), ds.num_nodes(),
                ds.num_steps());
    return 0;
}

int cmd_train(const AppConfig& cfg, const fs::path& out_dir) {
    PreparedData prep = prepare_data(cfg);
    Model model(model_config(cfg, prep), prep.norm);

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.grad_clip = cfg.grad_clip;
    tc.batch_size = cfg.batch_size;
    tc.warmup_epochs = cfg.warmup_epochs;
    tc.total_epochs = cfg.total_epochs;
    tc.seed = cfg.seed;
    tc.hp = hyper_params(cfg);
    tc.ablation = ablation_from_name(cfg.ablation);
    tc.patience = cfg.patience;
    tc.checkpoint_path = (out_dir / "checkpoint.bin").string();
    tc.log_path = (out_dir / "train_log.csv").string();

    TrainResult result = run_training(model, prep.ds, prep.splits, tc);
    std::printf("done: best_epoch=%d best_val_mae=%.6f mode=%s transition_epoch=%d%s\n",
                result.best_epoch, result.best_val_mae, result.mode.c_str(),
                result.transition_epoch, result.stopped_early ? " (early stop)" : "");
    return 0;
}

struct EvalOutputs {
    Matrix pred;
    Matrix plain_pred;
    Matrix truth;
    std::vector<int> node_index;
    std::vector<int> window_start;
    Vector z_hat;
    Vector alpha;
    std::vector<std::string> neighbors; // '|'-joined global row ids, "" on easy rows
    bool has_z = false;
};

EvalOutputs run_eval(const Model& model, const RawDataset& ds, const std::vector<int>& starts,
                     Stage stage, Ablation ablation, const HyperParams& hp) {
    const ModelConfig& mc = model.config();
    int per_chunk = 256 / mc.num_nodes;
    if (per_chunk < 1) per_chunk = 1;

    int total = static_cast<int>(starts.size()) * mc.num_nodes;
    EvalOutputs out;
    out.pred.resize(total, mc.h);
    out.plain_pred.resize(total, mc.h);
    out.truth.resize(total, mc.h);
    out.node_index.reserve(static_cast<std::size_t>(total));
    out.window_start.reserve(static_cast<std::size_t>(total));
    out.z_hat = Vector::Zero(total);
    out.alpha = Vector::Zero(total);
    out.neighbors.assign(static_cast<std::size_t>(total), "");

    int row0 = 0;
    for (std::size_t i = 0; i < starts.size(); i += static_cast<std::size_t>(per_chunk)) {
        std::size_t end = std::min(starts.size(), i + static_cast<std::size_t>(per_chunk));
        std::vector<int> chunk(starts.begin() + static_cast<std::ptrdiff_t>(i),
                               starts.begin() + static_cast<std::ptrdiff_t>(end));
        SampleBatch batch = make_batch(ds, model.norm(), chunk, mc.w, mc.h);
        ad::Tape tape;
        ForwardOptions opt;
        opt.stage = stage;
        opt.ablation = ablation;
        opt.training = false;
        opt.compute_loss = false;
        opt.hp = hp;
        ForwardResult res = model.forward(tape, batch, opt);

        int m = batch.size();
        out.pred.middleRows(row0, m) = tape.value(res.predictions);
        out.plain_pred.middleRows(row0, m) = tape.value(res.plain_predictions);
        out.truth.middleRows(row0, m) = batch.targets;
        for (int r = 0; r < m; ++r) {
            out.node_index.push_back(batch.node_index[static_cast<std::size_t>(r)]);
            out.window_start.push_back(batch.window_start[static_cast<std::size_t>(r)]);
        }
        if (res.z_hat.valid()) {
            out.has_z = true;
            out.z_hat.segment(row0, m) = tape.value(res.z_hat).col(0);
            out.alpha.segment(row0, m) = res.alpha;
            const auto& comp = res.plan.comp;
            for (std::size_t c = 0; c < comp.challenging.size(); ++c) {
                std::string joined;
                for (int nb : comp.neighbors[c]) {
                    if (!joined.empty()) joined += '|';
                    joined += std::to_string(row0 + nb);
                }
                out.neighbors[static_cast<std::size_t>(row0 + comp.challenging[c])] = joined;
            }
        }
        row0 += m;
    }
    return out;
}

int cmd_evaluate(const AppConfig& cfg, const fs::path& out_dir, const std::string& ckpt_path,
                 bool emit_map, bool dump_comp) {
    if (ckpt_path.empty()) throw ConfigError("evaluate needs --checkpoint");
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    const ModelConfig& mc = ck.model->config();

    if (cfg.data_path.empty()) throw ConfigError("data.path is required");
    LoadSchema schema;
    schema.format = cfg.data_format;
    schema.missing = cfg.missing;
    RawDataset ds = load_dataset(cfg.data_path, schema);
    if (ds.num_nodes() != mc.num_nodes) {
        throw DataError("dataset has " + std::to_string(ds.num_nodes()) +
                        " nodes but the checkpoint expects " + std::to_string(mc.num_nodes));
    }
    auto starts = window_starts(ds, mc.w, mc.h);
    auto splits = split_starts(starts, cfg.ratio_train, cfg.ratio_val, cfg.ratio_test);

    HyperParams hp = hyper_params(cfg);
    Stage stage = ck.mode == "fairstg" ? Stage::fairness : Stage::warmup;
    Ablation ablation = ablation_from_name(ck.ablation);
    EvalOutputs ev = run_eval(*ck.model, ds, splits.test, stage, ablation, hp);

    FairnessReport report =
        build_report(ev.pred, ev.truth, ev.node_index, ds.node_ids, cfg.mape_epsilon);
    report.mode = ck.mode;
    report.ablation = ck.ablation;
    if (ev.has_z) {
        Vector e_plain = per_sample_mae(ev.plain_pred, ev.truth);
        std::vector<char> z_true = partition_easy_challenging(e_plain, hp.k_easy);
        report.recognizer_accuracy = recognizer_accuracy(ev.z_hat, z_true);
    }

    FairnessReport baseline;
    bool have_baseline = !cfg.eval_baseline_report.empty();
    if (have_baseline) {
        baseline = load_report(cfg.eval_baseline_report);
        report.delta = delta_ratio(report.overall.mae, baseline.overall.mae);
    }

    save_report(report, (out_dir / "report.json").string());
    if (emit_map) {
        emit_error_map((out_dir / "error_map.csv").string(), report,
                       have_baseline ? &baseline : nullptr,
                       ds.has_coordinates ? &ds.coordinates : nullptr);
    }
    if (dump_comp) {
        if (!ev.has_z) {
            throw ConfigError("--dump-compensatory needs a checkpoint trained with enhancement");
        }
        std::vector<std::vector<std::string>> rows;
        char buf[64];
        for (std::size_t r = 0; r < ev.neighbors.size(); ++r) {
            std::vector<std::string> row;
            row.push_back(std::to_string(ev.window_start[r]));
            row.push_back(ds.node_ids[static_cast<std::size_t>(ev.node_index[r])]);
            std::snprintf(buf, sizeof(buf), "%.6f", ev.z_hat(static_cast<Eigen::Index>(r)));
            row.emplace_back(buf);
            row.push_back(ev.neighbors[r].empty() ? "0" : "1");
            std::snprintf(buf, sizeof(buf), "%.6f", ev.alpha(static_cast<Eigen::Index>(r)));
            row.emplace_back(buf);
            row.push_back(ev.neighbors[r]);
            rows.push_back(std::move(row));
        }
        csv::write_rows((out_dir / "compensatory.csv").string(),
                        {"window_start", "node_id", "z_hat", "enhanced", "alpha", "neighbors"},
                        rows);
    }

    std::printf("test mae=%.6f rmse=%.6f mae_var=%.6f", report.overall.mae, report.overall.rmse,
                report.overall.mae_var);
    if (report.recognizer_accuracy) {
        std::printf(" recognizer_accuracy=%.4f", *report.recognizer_accuracy);
    }
    if (report.delta) std::printf(" delta=%.4f", *report.delta);
    std::printf("\n");
    return 0;
}

int cmd_compare(const std::string& path_a, const std::string& path_b, const fs::path& out_dir) {
    FairnessReport a = load_report(path_a);
    FairnessReport b = load_report(path_b);

    json j;
    j["delta"] = delta_ratio(a.overall.mae, b.overall.mae);
    j["mae_a"] = a.overall.mae;
    j["mae_b"] = b.overall.mae;
    j["mae_var_a"] = a.overall.mae_var;
    j["mae_var_b"] = b.overall.mae_var;
    j["mae_var_reduction"] =
        b.overall.mae_var > 0 ? (b.overall.mae_var - a.overall.mae_var) / b.overall.mae_var : 0.0;
    json horizons;
    for (const auto& [k, ma] : a.horizons) {
        auto it = b.horizons.find(k);
        if (it == b.horizons.end()) continue;
        json h;
        h["delta"] = delta_ratio(ma.mae, it->second.mae);
        h["mae_var_reduction"] = it->second.mae_var > 0
                                     ? (it->second.mae_var - ma.mae_var) / it->second.mae_var
                                     : 0.0;
        horizons[std::to_string(k)] = h;
    }
    j["horizons"] = horizons;
    write_text(out_dir / "comparison.json", j.dump(2) + "\n");

    std::printf("delta=%.6f mae %.6f vs %.6f, mae_var %.6f vs %.6f (reduction %.2f%%)\n",
                j["delta"].get<double>(), a.overall.mae, b.overall.mae, a.overall.mae_var,
                b.overall.mae_var, j["mae_var_reduction"].get<double>() * 100.0);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness-aware spatiotemporal graph forecasting toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::string checkpoint;
    std::string ablation;
    std::string report_a, report_b;
    std::vector<std::string> sets;
    bool emit_map = false, dump_comp = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value config file");
        sub->add_option("--set", sets, "override, key=value (repeatable)");
        sub->add_option("--out", out_dir, "output directory (default .)");
    };

    CLI::App* prepare = app.add_subcommand("prepare", "validate data, write splits and adjacency");
    add_common(prepare);
    CLI::App* train = app.add_subcommand("train", "two-stage training run");
    add_common(train);
    train->add_option("--ablation", ablation, "full, no_fe or no_fo")
        ->check(CLI::IsMember({"full", "no_fe", "no_fo"}));
    CLI::App* evaluate = app.add_subcommand("evaluate", "test-set fairness report");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint to evaluate")->required();
    evaluate->add_flag("--emit-error-map", emit_map, "write per-node error CSV");
    evaluate->add_flag("--dump-compensatory", dump_comp, "write enhancement diagnostics CSV");
    CLI::App* compare = app.add_subcommand("compare", "delta summary of two reports");
    compare->add_option("report_a", report_a, "report under test")->required();
    compare->add_option("report_b", report_b, "baseline report")->required();
    compare->add_option("--out", out_dir, "output directory (default .)");
    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic benchmark CSV");
    add_common(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        std::vector<std::string> overrides = sets;
        if (!ablation.empty()) overrides.push_back("train.ablation=" + ablation);
        AppConfig cfg = load_config(config_path, overrides);

        fs::create_directories(out_dir);
        write_snapshot(cfg, (fs::path(out_dir) / "resolved_config.txt").string());

        if (prepare->parsed()) return cmd_prepare(cfg, out_dir);
        if (train->parsed()) return cmd_train(cfg, out_dir);
        if (evaluate->parsed()) return cmd_evaluate(cfg, out_dir, checkpoint, emit_map, dump_comp);
        if (compare->parsed()) return cmd_compare(report_a, report_b, out_dir);
        if (synth->parsed()) return cmd_synth(cfg, out_dir);
        throw ConfigError("no command given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const TrainError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
