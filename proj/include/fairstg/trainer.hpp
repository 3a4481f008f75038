#pragma once

#include "fairstg/dataset.hpp"
#include "fairstg/model.hpp"

#include <random>
#include <string>
#include <vector>

namespace fairstg {

struct TrainConfig {
    double lr = 0.001;
    double grad_clip = 5.0;
    int batch_size = 64; // rounded up to whole window-start groups
    int warmup_epochs = 30;
    int total_epochs = 100;
    unsigned seed = 1; // batch shuffling
    HyperParams hp;
    Ablation ablation = Ablation::full;
    int patience = 15; // fairness-stage early stop on validation MAE
    std::string checkpoint_path; // best validation MAE; empty skips saving
    std::string log_path;        // per-epoch loss CSV; empty skips logging
    bool verbose = true;         // progress lines on stdout
};

struct EpochStats {
    int epoch = 0; // 1-based
    Stage stage = Stage::warmup;
    LossBreakdown loss; // batch-size weighted means over the epoch
    double train_mae = 0.0;
    double val_mae = 0.0;
    double val_mae_var = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_mae = 0.0;
    int best_epoch = 0;         // 1-based
    int transition_epoch = -1;  // -1 when the run never left warm-up
    bool stopped_early = false;
    std::string mode; // "fairstg" when the saved model enhances at inference
};

// Adam with bias correction. Moments live per parameter; ids absent from a
// step keep their state untouched, and each parameter's step count starts at
// its own first update.
class Adam {
public:
    Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    // grads[j] pairs with ids[j]
    void step(const std::vector<int>& ids, const std::vector<ad::Matrix>& grads);

private:
    ParamStore& store_;
    double lr_, beta1_, beta2_, eps_;
    std::vector<ad::Matrix> m_, v_;
    std::vector<long> steps_;
};

// Scales grads in place when their joint norm exceeds max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm);

// Shuffled whole window-start groups, max(1, batch_size / num_nodes) groups
// per batch, so every batch carries all nodes of its windows.
std::vector<std::vector<int>> make_group_batches(std::vector<int> starts, int num_nodes,
                                                 int batch_size, std::mt19937& rng);

// Entrywise MAE and population variance of per-sample MAE over a whole
// split, evaluated in chunks; the forward mode matches the stage.
struct EvalSummary {
    double mae = 0.0;
    double mae_var = 0.0;
};
EvalSummary evaluate_split(const Model& model, const RawDataset& ds,
                           const std::vector<int>& starts, Stage stage, Ablation ablation,
                           const HyperParams& hp);

TrainResult run_training(Model& model, const RawDataset& ds, const SplitStarts& splits,
                         const TrainConfig& cfg);

} // namespace fairstg
