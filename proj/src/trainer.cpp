#include "fairstg/trainer.hpp"

#include "fairstg/checkpoint.hpp"
#include "fairstg/errors.hpp"
#include "fairstg/params.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace fairstg {

namespace {

// Raw-bits uniform and Fisher-Yates keep shuffles identical across standard
// libraries.
int bounded(std::mt19937& rng, int n) {
    int v = static_cast<int>(uniform53(rng) * n);
    return v >= n ? n - 1 : v;
}

void shuffle_ints(std::vector<int>& v, std::mt19937& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(bounded(rng, i + 1))]);
    }
}

const char* stage_name(Stage s) { return s == Stage::warmup ? "warmup" : "fairness"; }

} // namespace

Adam::Adam(ParamStore& store, double lr, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(static_cast<std::size_t>(store.size()));
    v_.resize(static_cast<std::size_t>(store.size()));
    steps_.assign(static_cast<std::size_t>(store.size()), 0);
    for (int i = 0; i < store.size(); ++i) {
        const ad::Matrix& p = store.value(i);
        m_[static_cast<std::size_t>(i)] = ad::Matrix::Zero(p.rows(), p.cols());
        v_[static_cast<std::size_t>(i)] = ad::Matrix::Zero(p.rows(), p.cols());
    }
}

void Adam::step(const std::vector<int>& ids, const std::vector<ad::Matrix>& grads) {
    if (ids.size() != grads.size()) throw TrainError("optimizer ids/grads length mismatch");
    for (std::size_t j = 0; j < ids.size(); ++j) {
        std::size_t i = static_cast<std::size_t>(ids[j]);
        const ad::Matrix& g = grads[j];
        ad::Matrix& m = m_[i];
        ad::Matrix& v = v_[i];
        long t = ++steps_[i];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        double mc = 1.0 - std::pow(beta1_, static_cast<double>(t));
        double vc = 1.0 - std::pow(beta2_, static_cast<double>(t));
        ad::Matrix update =
            (m / mc).array() / ((v / vc).array().sqrt() + eps_);
        store_.value(ids[j]) -= lr_ * update.matrix();
    }
}

double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (auto& g : grads) g *= scale;
    }
    return norm;
}

std::vector<std::vector<int>> make_group_batches(std::vector<int> starts, int num_nodes,
                                                 int batch_size, std::mt19937& rng) {
    if (num_nodes < 1) throw DataError("make_group_batches needs num_nodes >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    shuffle_ints(starts, rng);
    int per_batch = batch_size / num_nodes;
    if (per_batch < 1) per_batch = 1;
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < starts.size(); i += static_cast<std::size_t>(per_batch)) {
        std::size_t end = std::min(starts.size(), i + static_cast<std::size_t>(per_batch));
        batches.emplace_back(starts.begin() + static_cast<std::ptrdiff_t>(i),
                             starts.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

EvalSummary evaluate_split(const Model& model, const RawDataset& ds,
                           const std::vector<int>& starts, Stage stage, Ablation ablation,
                           const HyperParams& hp) {
    if (starts.empty()) throw DataError("evaluate_split got an empty split");
    const ModelConfig& mc = model.config();
    int per_chunk = 256 / mc.num_nodes;
    if (per_chunk < 1) per_chunk = 1;

    std::vector<double> sample_mae;
    sample_mae.reserve(starts.size() * static_cast<std::size_t>(mc.num_nodes));
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
        Vector e = per_sample_mae(tape.value(res.predictions), batch.targets);
        for (int r = 0; r < e.size(); ++r) sample_mae.push_back(e(r));
    }

    EvalSummary out;
    double n = static_cast<double>(sample_mae.size());
    double mean = 0.0;
    for (double e : sample_mae) mean += e;
    mean /= n;
    double var = 0.0;
    for (double e : sample_mae) var += (e - mean) * (e - mean);
    var /= n;
    out.mae = mean;
    out.mae_var = var;
    return out;
}

TrainResult run_training(Model& model, const RawDataset& ds, const SplitStarts& splits,
                         const TrainConfig& cfg) {
    if (cfg.lr <= 0) throw ConfigError("lr must be > 0");
    if (cfg.grad_clip <= 0) throw ConfigError("grad_clip must be > 0");
    if (cfg.total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
    if (cfg.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
    // warmup_epochs >= total_epochs is allowed and means the run never leaves
    // warm-up, which is how the plain baseline is trained

    const ModelConfig& mc = model.config();
    Adam optimizer(model.params(), cfg.lr);
    std::mt19937 rng(cfg.seed);

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw TrainError("cannot write training log: " + cfg.log_path);
        log << "epoch,stage,l_r,l_f,l_s,total\n";
    }

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    Stage prev_stage = Stage::warmup;

    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        Stage stage = epoch < cfg.warmup_epochs ? Stage::warmup : Stage::fairness;
        if (stage == Stage::fairness && (epoch == 0 || prev_stage == Stage::warmup)) {
            if (result.transition_epoch < 0) {
                result.transition_epoch = epoch + 1;
                // the fairness stage restarts best-model tracking so the
                // saved checkpoint reflects fairness-aware parameters
                best_val = std::numeric_limits<double>::infinity();
                bad_epochs = 0;
            }
        }
        prev_stage = stage;

        std::vector<int> ids = model.trainable_ids(stage);
        auto batches = make_group_batches(splits.train, mc.num_nodes, cfg.batch_size, rng);

        double w_lr = 0, w_lf = 0, w_ls = 0, w_total = 0, weight = 0;
        double abs_sum = 0, abs_count = 0;
        for (const auto& chunk : batches) {
            SampleBatch batch = make_batch(ds, model.norm(), chunk, mc.w, mc.h);
            ad::Tape tape;
            ForwardOptions opt;
            opt.stage = stage;
            opt.ablation = cfg.ablation;
            opt.training = true;
            opt.compute_loss = true;
            opt.hp = cfg.hp;
            ForwardResult res = model.forward(tape, batch, opt);

            double loss = tape.value(res.loss)(0, 0);
            if (!std::isfinite(loss)) {
                char msg[256];
                std::snprintf(msg, sizeof(msg),
                              "non-finite loss %.17g at epoch %d stage %s (first window %d, "
                              "l_r=%.6g l_f=%.6g l_s=%.6g)",
                              loss, epoch + 1, stage_name(stage), batch.window_start.front(),
                              res.breakdown.l_r, res.breakdown.l_f, res.breakdown.l_s);
                throw TrainError(msg);
            }
            tape.backward(res.loss);

            std::vector<ad::Matrix> grads;
            grads.reserve(ids.size());
            for (int id : ids) grads.push_back(tape.grad(res.bound[static_cast<std::size_t>(id)]));
            clip_global_norm(grads, cfg.grad_clip);
            optimizer.step(ids, grads);

            double m = static_cast<double>(batch.size());
            w_lr += res.breakdown.l_r * m;
            w_lf += res.breakdown.l_f * m;
            w_ls += res.breakdown.l_s * m;
            w_total += res.breakdown.total * m;
            weight += m;
            abs_sum += (tape.value(res.predictions) - batch.targets).cwiseAbs().sum();
            abs_count += m * static_cast<double>(batch.targets.cols());
        }

        EpochStats es;
        es.epoch = epoch + 1;
        es.stage = stage;
        es.loss.l_r = w_lr / weight;
        es.loss.l_f = w_lf / weight;
        es.loss.l_s = w_ls / weight;
        es.loss.total = w_total / weight;
        es.train_mae = abs_sum / abs_count;

        EvalSummary val = evaluate_split(model, ds, splits.val, stage, cfg.ablation, cfg.hp);
        es.val_mae = val.mae;
        es.val_mae_var = val.mae_var;
        result.history.push_back(es);

        if (log) {
            char row[160];
            std::snprintf(row, sizeof(row), "%d,%s,%.9f,%.9f,%.9f,%.9f\n", es.epoch,
                          stage_name(stage), es.loss.l_r, es.loss.l_f, es.loss.l_s,
                          es.loss.total);
            log << row;
            log.flush();
        }
        if (cfg.verbose) {
            std::printf("epoch=%d stage=%s train_mae=%.6f val_mae=%.6f mae_var=%.6f\n", es.epoch,
                        stage_name(stage), es.train_mae, es.val_mae, es.val_mae_var);
            std::fflush(stdout);
        }

        if (val.mae < best_val) {
            best_val = val.mae;
            bad_epochs = 0;
            result.best_val_mae = val.mae;
            result.best_epoch = epoch + 1;
            result.mode = (stage == Stage::fairness && cfg.ablation != Ablation::no_fe)
                              ? "fairstg"
                              : "plain";
            if (!cfg.checkpoint_path.empty()) {
                save_checkpoint(cfg.checkpoint_path, model, result.mode,
                                ablation_name(cfg.ablation));
            }
        } else if (stage == Stage::fairness) {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) {
                result.stopped_early = true;
                break;
            }
        }
    }
    return result;
}

} // namespace fairstg
