#include "fairstg/recognizer.hpp"

#include "fairstg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairstg {

std::vector<char> partition_easy_challenging(const Vector& errors, double k_easy) {
    const int m = static_cast<int>(errors.size());
    if (m < 1) throw DataError("cannot partition an empty error vector");
    if (!(k_easy > 0.0 && k_easy <= 1.0)) throw ConfigError("k_easy must be in (0,1]");
    for (int i = 0; i < m; ++i) {
        if (!std::isfinite(errors(i)) || errors(i) < 0.0) {
            throw DataError("errors must be finite and nonnegative");
        }
    }
    const int easy_count = static_cast<int>(std::ceil(k_easy * m));
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return errors(a) < errors(b); });
    std::vector<char> z(static_cast<std::size_t>(m), 0);
    for (int r = 0; r < easy_count; ++r) z[static_cast<std::size_t>(order[r])] = 1;
    return z;
}

std::vector<char> classify(const Vector& z_hat, double threshold) {
    std::vector<char> easy(static_cast<std::size_t>(z_hat.size()));
    for (Eigen::Index i = 0; i < z_hat.size(); ++i) {
        easy[static_cast<std::size_t>(i)] = z_hat(i) >= threshold ? 1 : 0;
    }
    return easy;
}

double recognizer_accuracy(const Vector& z_hat, const std::vector<char>& z, double threshold) {
    if (static_cast<std::size_t>(z_hat.size()) != z.size()) {
        throw DataError("label/prediction length mismatch");
    }
    if (z.empty()) throw DataError("empty label vector");
    auto predicted = classify(z_hat, threshold);
    int correct = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (predicted[i] == z[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(z.size());
}

Recognizer::Recognizer(ParamStore& store, const RecognizerConfig& cfg, std::mt19937& rng,
                       const std::string& prefix)
    : cfg_(cfg) {
    if (cfg_.d_in < 1) throw ConfigError("recognizer d_in must be >= 1");
    if (cfg_.arch == RecognizerArch::gcn3) {
        if (cfg_.num_nodes < 1) throw ConfigError("gcn3 recognizer needs num_nodes >= 1");
        e1_ = store.add(prefix + "e1",
                        uniform_matrix(cfg_.num_nodes, cfg_.d_emb, -0.5, 0.5, rng));
        e2_ = store.add(prefix + "e2",
                        uniform_matrix(cfg_.num_nodes, cfg_.d_emb, -0.5, 0.5, rng));
    }
    w1_ = store.add(prefix + "w1", glorot_uniform(cfg_.d_in, cfg_.h1, rng));
    b1_ = store.add(prefix + "b1", Matrix::Zero(1, cfg_.h1));
    w2_ = store.add(prefix + "w2", glorot_uniform(cfg_.h1, cfg_.h2, rng));
    b2_ = store.add(prefix + "b2", Matrix::Zero(1, cfg_.h2));
    w3_ = store.add(prefix + "w3", glorot_uniform(cfg_.h2, 1, rng));
    b3_ = store.add(prefix + "b3", Matrix::Zero(1, 1));
}

ad::Var Recognizer::forward(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var c,
                            const GroupOrder& order) const {
    auto b = [&](int id) { return bound[static_cast<std::size_t>(id)]; };
    const bool graph = cfg_.arch == RecognizerArch::gcn3;

    ad::Var h = c;
    ad::Var mix;
    if (graph) {
        h = t.rows(c, order.perm); // group-major node order for spatial mixing
        ad::Var a = adaptive_adjacency(t, b(e1_), b(e2_));
        mix = t.add(a, t.constant(Matrix::Identity(cfg_.num_nodes, cfg_.num_nodes)));
    }
    auto layer = [&](ad::Var in, int w_id, int b_id, bool relu) {
        ad::Var mixed = graph ? t.spatial_mix(mix, in, cfg_.num_nodes) : in;
        ad::Var lin = t.add_rowvec(t.matmul(mixed, b(w_id)), b(b_id));
        return relu ? t.relu(lin) : lin;
    };
    ad::Var h1 = layer(h, w1_, b1_, true);
    ad::Var h2 = layer(h1, w2_, b2_, true);
    ad::Var logits = layer(h2, w3_, b3_, false);
    ad::Var z_hat = t.sigmoid(logits);
    return graph ? t.rows(z_hat, order.inverse) : z_hat;
}

} // namespace fairstg
