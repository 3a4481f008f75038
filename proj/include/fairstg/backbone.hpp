#pragma once

#include "fairstg/autodiff.hpp"
#include "fairstg/dataset.hpp"
#include "fairstg/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace fairstg {

// A = ReLU(tanh(E1 E2^T - E2 E1^T)). Skew-symmetry of the pre-activation
// makes the result uni-directional; tanh bounds entries to [0,1).
ad::Var adaptive_adjacency(ad::Tape& t, ad::Var e1, ad::Var e2);
Matrix adaptive_adjacency_value(const Matrix& e1, const Matrix& e2);

// H = ReLU((I + A(E1,E2)) H_prev W) over a single node graph.
ad::Var gcn_layer(ad::Tape& t, ad::Var h_prev, ad::Var e1, ad::Var e2, ad::Var w);

// Feature extractor contract: normalized windows in, M x d representation out.
class Extractor {
public:
    virtual ~Extractor() = default;
    virtual int dim() const = 0;
    virtual ad::Var forward(ad::Tape& t, const std::vector<ad::Var>& bound,
                            const SampleBatch& batch) const = 0;
};

struct ExtractorConfig {
    int w = 12;
    int num_nodes = 0;
    int channels = 16;
    int d = 64;
    int d_emb = 10;
    AdjacencyKind adjacency = AdjacencyKind::adaptive;
    Matrix fixed_adjacency; // row-normalized at construction when fixed
};

// Compact reference extractor: two dilated temporal convolution blocks
// (kernel 3, dilations 1 and 2) interleaved with two graph mixing blocks,
// residual connections, final linear map from the last time step to d dims.
class ReferenceExtractor : public Extractor {
public:
    ReferenceExtractor(ParamStore& store, const ExtractorConfig& cfg, std::mt19937& rng,
                       const std::string& prefix = "backbone.");

    int dim() const override { return cfg_.d; }
    ad::Var forward(ad::Tape& t, const std::vector<ad::Var>& bound,
                    const SampleBatch& batch) const override;

    // Mixing matrix I + A used by the spatial blocks (adaptive or fixed).
    ad::Var mixing_matrix(ad::Tape& t, const std::vector<ad::Var>& bound) const;

    const ExtractorConfig& config() const { return cfg_; }

private:
    ExtractorConfig cfg_;
    int e1_ = -1, e2_ = -1;
    int wt1_, bt1_, wg1_, bg1_, wt2_, bt2_, wg2_, bg2_, wout_, bout_;
};

struct HeadConfig {
    int d = 64;
    int hidden = 64;
    int horizon = 12;
};

// Two pointwise transforms mapping representations to the h-step forecast,
// de-normalized so downstream losses and metrics work in raw units.
class OutputHead {
public:
    OutputHead(ParamStore& store, const HeadConfig& cfg, std::mt19937& rng,
               const std::string& prefix = "head.");

    ad::Var forward(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var x,
                    const NormalizationState& norm) const;

private:
    HeadConfig cfg_;
    int w1_, b1_, w2_, b2_;
};

// Sorts batch rows into window-start groups with nodes in order, validating
// that every group holds each node exactly once. perm[k] = original row of
// sorted row k; inverse[r] = sorted position of original row r.
struct GroupOrder {
    std::vector<int> perm;
    std::vector<int> inverse;
    int groups = 0;
};
GroupOrder group_order(const SampleBatch& batch);

} // namespace fairstg
