#pragma once

#include "fairstg/autodiff.hpp"
#include "fairstg/backbone.hpp"
#include "fairstg/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace fairstg {

// Labels the ceil(k_easy * M) smallest errors as easy (1), the rest
// challenging (0). Ties break by ascending sample index.
std::vector<char> partition_easy_challenging(const Vector& errors, double k_easy);

std::vector<char> classify(const Vector& z_hat, double threshold = 0.5);

double recognizer_accuracy(const Vector& z_hat, const std::vector<char>& z,
                           double threshold = 0.5);

enum class RecognizerArch { gcn3, linear3 };

struct RecognizerConfig {
    int d_in = 0;
    int num_nodes = 0;
    RecognizerArch arch = RecognizerArch::gcn3;
    int d_emb = 10;
    int h1 = 64;
    int h2 = 32;
};

// Three stacked layers ending in a sigmoid difficulty score per sample. The
// gcn3 variant mixes over the node graph of each window-start group with its
// own adaptive adjacency; linear3 drops the mixing.
class Recognizer {
public:
    Recognizer(ParamStore& store, const RecognizerConfig& cfg, std::mt19937& rng,
               const std::string& prefix = "recognizer.");

    // c: M x d_in rows in batch order; order describes the grouping.
    ad::Var forward(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var c,
                    const GroupOrder& order) const;

    const RecognizerConfig& config() const { return cfg_; }

private:
    RecognizerConfig cfg_;
    int e1_ = -1, e2_ = -1;
    int w1_, b1_, w2_, b2_, w3_, b3_;
};

} // namespace fairstg
