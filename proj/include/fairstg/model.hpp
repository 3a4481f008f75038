#pragma once

#include "fairstg/backbone.hpp"
#include "fairstg/dataset.hpp"
#include "fairstg/enhancement.hpp"
#include "fairstg/objectives.hpp"
#include "fairstg/recognizer.hpp"

#include <memory>
#include <string>
#include <vector>

namespace fairstg {

enum class Ablation { full, no_fe, no_fo };
enum class Stage { warmup, fairness };

std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& s);

struct ModelConfig {
    int w = 12;
    int h = 12;
    int num_nodes = 0;
    int d = 64;
    int channels = 16;
    int d_emb = 10;
    int d_k = 32;
    int gate_hidden = 16;
    int ext_embed = 4;
    RecognizerArch rec_arch = RecognizerArch::gcn3;
    int rec_h1 = 64;
    int rec_h2 = 32;
    AdjacencyKind adjacency = AdjacencyKind::adaptive;
    Matrix fixed_adjacency; // used when adjacency == fixed
    unsigned seed = 1;      // parameter initialization
};

struct HyperParams {
    LossWeights mu;
    double omega = 4.0;
    int k_c = 5;
    double k_easy = 0.2;
};

// Discrete per-step decisions, detached from the gradient graph. Capturing
// one and replaying it through forward() keeps the loss a smooth function of
// the parameters, which is what finite-difference checks need.
struct ForwardPlan {
    std::vector<char> z;    // training difficulty labels (empty at inference)
    std::vector<char> easy; // easy set driving enhancement
    Vector lambda;          // cost-sensitive weights (size 0 means all-ones)
    CompensatoryPlan comp;
    bool has_z = false;
};

struct ForwardOptions {
    Stage stage = Stage::fairness;
    Ablation ablation = Ablation::full;
    bool training = true; // labels from truth; false derives the easy set from z_hat
    bool compute_loss = true;
    const ForwardPlan* frozen = nullptr;
    HyperParams hp;
};

struct ForwardResult {
    ad::Var loss;
    LossBreakdown breakdown;
    ad::Var predictions;       // raw scale, after enhancement when active
    ad::Var plain_predictions; // raw scale, pre-enhancement
    ad::Var x_st;
    ad::Var z_hat; // invalid() when the recognizer was not run
    Vector alpha;  // detached gate per row, 0 where not enhanced
    ForwardPlan plan;
    std::vector<ad::Var> bound; // bound[i] is parameter i on this tape
};

// Continuous context per sample: time-of-day scalar plus learned embeddings
// for day-of-week and node identity.
class ExternalEncoder {
public:
    ExternalEncoder(ParamStore& store, int num_nodes, int embed_dim, std::mt19937& rng,
                    const std::string& prefix = "ext.");

    int dim() const { return 1 + 2 * embed_dim_; }
    ad::Var forward(ad::Tape& t, const std::vector<ad::Var>& bound,
                    const SampleBatch& batch) const;

private:
    int num_nodes_;
    int embed_dim_;
    int dow_table_, node_table_;
};

class Model {
public:
    Model(const ModelConfig& cfg, const NormalizationState& norm);

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }
    const NormalizationState& norm() const { return norm_; }
    int recognizer_input_dim() const;

    ForwardResult forward(ad::Tape& t, const SampleBatch& batch,
                          const ForwardOptions& opt) const;

    // Warm-up trains only the extractor and head; the fairness stage trains
    // every parameter.
    std::vector<int> trainable_ids(Stage stage) const;

private:
    ModelConfig cfg_;
    NormalizationState norm_;
    ParamStore store_;
    std::unique_ptr<ReferenceExtractor> extractor_;
    std::unique_ptr<OutputHead> head_;
    std::unique_ptr<ExternalEncoder> ext_;
    std::unique_ptr<Recognizer> recognizer_;
    std::unique_ptr<MixupGate> gate_;
};

} // namespace fairstg
