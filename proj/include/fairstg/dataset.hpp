#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fairstg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct RawDataset {
    Matrix values;                       // N x T, node-major rows
    std::vector<std::int64_t> timestamps; // epoch seconds, strictly increasing
    std::vector<std::string> node_ids;   // length N
    Matrix coordinates;                  // N x 2 when has_coordinates
    bool has_coordinates = false;
    std::int64_t interval_seconds = 0;

    int num_nodes() const { return static_cast<int>(values.rows()); }
    int num_steps() const { return static_cast<int>(values.cols()); }
};

// One node-level sample per row: a w-step input window (normalized) paired
// with an h-step target window (raw scale). Rows are grouped per
// window_start with all nodes present, in node order, so graph mixing over
// co-occurring samples is well defined.
struct SampleBatch {
    Matrix inputs;   // M x w
    Matrix targets;  // M x h
    std::vector<int> node_index;   // length M
    std::vector<int> window_start; // length M
    Vector stats_mean; // M, mean of the raw input window
    Vector stats_var;  // M, population variance of the raw input window
    Vector time_of_day; // M, fraction of day in [0,1)
    std::vector<int> day_of_week; // M, 0 = Monday
    int num_nodes = 0;

    int size() const { return static_cast<int>(inputs.rows()); }
};

struct NormalizationState {
    double mean = 0.0;
    double std = 1.0;

    double apply(double x) const { return (x - mean) / std; }
    double invert(double z) const { return z * std + mean; }
};

enum class AdjacencyKind { fixed, adaptive };

struct AdjacencySpec {
    AdjacencyKind kind = AdjacencyKind::adaptive;
    Matrix fixed_weights; // N x N when kind == fixed
    int embed_dim = 10;   // when kind == adaptive
};

enum class MissingPolicy { forward_fill, error };

struct LoadSchema {
    enum class Format { wide, long_form };
    Format format = Format::wide;
    MissingPolicy missing = MissingPolicy::forward_fill;
};

struct SplitStarts {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

RawDataset load_dataset(const std::string& path, const LoadSchema& schema);

// Valid window starts for w-step inputs followed by h-step targets.
std::vector<int> window_starts(const RawDataset& ds, int w, int h);

SplitStarts split_starts(const std::vector<int>& starts, double train_ratio,
                         double val_ratio, double test_ratio);

NormalizationState fit_normalization(const RawDataset& ds, const std::vector<int>& train_starts,
                                     int w);

// Builds the batch covering every (node, start) pair for the given starts,
// ordered start-major then node. Inputs normalized, targets raw.
SampleBatch make_batch(const RawDataset& ds, const NormalizationState& norm,
                       const std::vector<int>& starts, int w, int h);

Matrix build_gaussian_adjacency(const Matrix& distances, double sigma, double threshold);

Matrix build_topk_adjacency(const Matrix& history, double k_fraction);

// Pairwise Euclidean distances from N x 2 coordinates.
Matrix pairwise_distances(const Matrix& coords);

int day_of_week_from_epoch(std::int64_t epoch_seconds); // 0 = Monday
double time_of_day_from_epoch(std::int64_t epoch_seconds);

std::int64_t parse_timestamp(const std::string& text); // ISO-8601, UTC
std::string format_timestamp(std::int64_t epoch_seconds);

} // namespace fairstg
