#include "fairstg/backbone.hpp"

#include "fairstg/errors.hpp"

#include <algorithm>
#include <numeric>

namespace fairstg {

ad::Var adaptive_adjacency(ad::Tape& t, ad::Var e1, ad::Var e2) {
    const auto& a = t.value(e1);
    const auto& b = t.value(e2);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ConfigError("adaptive adjacency embeddings must share a shape");
    }
    ad::Var skew = t.sub(t.matmul(e1, t.transpose(e2)), t.matmul(e2, t.transpose(e1)));
    return t.relu(t.tanh_(skew));
}

Matrix adaptive_adjacency_value(const Matrix& e1, const Matrix& e2) {
    if (e1.rows() != e2.rows() || e1.cols() != e2.cols()) {
        throw ConfigError("adaptive adjacency embeddings must share a shape");
    }
    Matrix skew = e1 * e2.transpose() - e2 * e1.transpose();
    return skew.array().tanh().max(0.0).matrix();
}

ad::Var gcn_layer(ad::Tape& t, ad::Var h_prev, ad::Var e1, ad::Var e2, ad::Var w) {
    ad::Var a = adaptive_adjacency(t, e1, e2);
    const Eigen::Index n = t.value(a).rows();
    ad::Var mix = t.add(a, t.constant(Matrix::Identity(n, n)));
    return t.relu(t.matmul(t.matmul(mix, h_prev), w));
}

GroupOrder group_order(const SampleBatch& batch) {
    const int m = batch.size();
    const int n = batch.num_nodes;
    if (n < 1) throw DataError("batch has no node count");
    if (m % n != 0) {
        throw DataError("batch rows (" + std::to_string(m) +
                        ") are not whole window-start groups of " + std::to_string(n));
    }
    GroupOrder order;
    order.groups = m / n;
    order.perm.resize(static_cast<std::size_t>(m));
    std::iota(order.perm.begin(), order.perm.end(), 0);
    std::sort(order.perm.begin(), order.perm.end(), [&](int a, int b) {
        if (batch.window_start[static_cast<std::size_t>(a)] !=
            batch.window_start[static_cast<std::size_t>(b)]) {
            return batch.window_start[static_cast<std::size_t>(a)] <
                   batch.window_start[static_cast<std::size_t>(b)];
        }
        return batch.node_index[static_cast<std::size_t>(a)] <
               batch.node_index[static_cast<std::size_t>(b)];
    });
    for (int g = 0; g < order.groups; ++g) {
        int start = batch.window_start[static_cast<std::size_t>(order.perm[g * n])];
        for (int i = 0; i < n; ++i) {
            int row = order.perm[static_cast<std::size_t>(g * n + i)];
            if (batch.node_index[static_cast<std::size_t>(row)] != i ||
                batch.window_start[static_cast<std::size_t>(row)] != start) {
                throw DataError("window-start group at start " + std::to_string(start) +
                                " does not hold each node exactly once");
            }
        }
    }
    order.inverse.resize(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
        order.inverse[static_cast<std::size_t>(order.perm[k])] = k;
    }
    return order;
}

ReferenceExtractor::ReferenceExtractor(ParamStore& store, const ExtractorConfig& cfg,
                                       std::mt19937& rng, const std::string& prefix)
    : cfg_(cfg) {
    if (cfg_.num_nodes < 1) throw ConfigError("extractor needs num_nodes >= 1");
    const int c = cfg_.channels;
    if (cfg_.adjacency == AdjacencyKind::adaptive) {
        e1_ = store.add(prefix + "e1",
                        uniform_matrix(cfg_.num_nodes, cfg_.d_emb, -0.5, 0.5, rng));
        e2_ = store.add(prefix + "e2",
                        uniform_matrix(cfg_.num_nodes, cfg_.d_emb, -0.5, 0.5, rng));
    } else {
        if (cfg_.fixed_adjacency.rows() != cfg_.num_nodes ||
            cfg_.fixed_adjacency.cols() != cfg_.num_nodes) {
            throw ConfigError("fixed adjacency shape does not match num_nodes");
        }
        // row-normalize so fixed mixing has the same (I + row-stochastic A) scale
        Matrix a = cfg_.fixed_adjacency;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            double s = a.row(i).sum();
            if (s > 0) a.row(i) /= s;
        }
        cfg_.fixed_adjacency = a;
    }
    wt1_ = store.add(prefix + "tconv1.w", glorot_uniform(3 * 1, c, rng));
    bt1_ = store.add(prefix + "tconv1.b", Matrix::Zero(1, c));
    wg1_ = store.add(prefix + "gcn1.w", glorot_uniform(c, c, rng));
    bg1_ = store.add(prefix + "gcn1.b", Matrix::Zero(1, c));
    wt2_ = store.add(prefix + "tconv2.w", glorot_uniform(3 * c, c, rng));
    bt2_ = store.add(prefix + "tconv2.b", Matrix::Zero(1, c));
    wg2_ = store.add(prefix + "gcn2.w", glorot_uniform(c, c, rng));
    bg2_ = store.add(prefix + "gcn2.b", Matrix::Zero(1, c));
    wout_ = store.add(prefix + "out.w", glorot_uniform(c, cfg_.d, rng));
    bout_ = store.add(prefix + "out.b", Matrix::Zero(1, cfg_.d));
}

ad::Var ReferenceExtractor::mixing_matrix(ad::Tape& t, const std::vector<ad::Var>& bound) const {
    const int n = cfg_.num_nodes;
    if (cfg_.adjacency == AdjacencyKind::adaptive) {
        ad::Var a = adaptive_adjacency(t, bound[static_cast<std::size_t>(e1_)],
                                       bound[static_cast<std::size_t>(e2_)]);
        return t.add(a, t.constant(Matrix::Identity(n, n)));
    }
    return t.constant(Matrix::Identity(n, n) + cfg_.fixed_adjacency);
}

ad::Var ReferenceExtractor::forward(ad::Tape& t, const std::vector<ad::Var>& bound,
                                    const SampleBatch& batch) const {
    if (batch.size() < 1) throw DataError("empty batch");
    if (batch.inputs.cols() != cfg_.w) {
        throw DataError("batch window length " + std::to_string(batch.inputs.cols()) +
                        " does not match extractor w=" + std::to_string(cfg_.w));
    }
    const GroupOrder order = group_order(batch);
    const int n = cfg_.num_nodes;
    const int c = cfg_.channels;
    const int w = cfg_.w;

    Matrix sorted(batch.size(), w);
    for (int k = 0; k < batch.size(); ++k) {
        sorted.row(k) = batch.inputs.row(order.perm[static_cast<std::size_t>(k)]);
    }
    ad::Var x = t.constant(std::move(sorted));
    ad::Var mix = mixing_matrix(t, bound);
    auto b = [&](int id) { return bound[static_cast<std::size_t>(id)]; };

    ad::Var h1 = t.relu(t.temporal_conv(x, b(wt1_), b(bt1_), w, 1, c, 3, 1));
    ad::Var g1 = t.add(
        t.relu(t.temporal_conv(t.spatial_mix(mix, h1, n), b(wg1_), b(bg1_), w, c, c, 1, 1)), h1);
    ad::Var h2 = t.add(t.relu(t.temporal_conv(g1, b(wt2_), b(bt2_), w, c, c, 3, 2)), g1);
    ad::Var g2 = t.add(
        t.relu(t.temporal_conv(t.spatial_mix(mix, h2, n), b(wg2_), b(bg2_), w, c, c, 1, 1)), h2);

    ad::Var last = t.cols(g2, (w - 1) * c, c);
    ad::Var rep = t.relu(t.add_rowvec(t.matmul(last, b(wout_)), b(bout_)));
    return t.rows(rep, order.inverse);
}

OutputHead::OutputHead(ParamStore& store, const HeadConfig& cfg, std::mt19937& rng,
                       const std::string& prefix)
    : cfg_(cfg) {
    w1_ = store.add(prefix + "w1", glorot_uniform(cfg_.d, cfg_.hidden, rng));
    b1_ = store.add(prefix + "b1", Matrix::Zero(1, cfg_.hidden));
    w2_ = store.add(prefix + "w2", glorot_uniform(cfg_.hidden, cfg_.horizon, rng));
    b2_ = store.add(prefix + "b2", Matrix::Zero(1, cfg_.horizon));
}

ad::Var OutputHead::forward(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var x,
                            const NormalizationState& norm) const {
    auto b = [&](int id) { return bound[static_cast<std::size_t>(id)]; };
    ad::Var hidden = t.relu(t.add_rowvec(t.matmul(x, b(w1_)), b(b1_)));
    ad::Var out = t.add_rowvec(t.matmul(hidden, b(w2_)), b(b2_));
    return t.affine(out, norm.std, norm.mean);
}

} // namespace fairstg
