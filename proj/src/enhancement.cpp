#include "fairstg/enhancement.hpp"

#include "fairstg/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fairstg {

Matrix similarity_matrix(const Matrix& x_st, const std::vector<char>& easy) {
    const Eigen::Index m = x_st.rows();
    if (static_cast<std::size_t>(m) != easy.size()) {
        throw DataError("easy mask length does not match batch size");
    }
    Vector norms(m);
    for (Eigen::Index i = 0; i < m; ++i) norms(i) = x_st.row(i).norm();
    Matrix s = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j || !easy[static_cast<std::size_t>(j)]) continue;
            if (norms(i) == 0.0 || norms(j) == 0.0) continue;
            s(i, j) = x_st.row(i).dot(x_st.row(j)) / (norms(i) * norms(j));
        }
    }
    return s;
}

std::vector<int> retrieve_compensatory(const Matrix& s, int i, int k_c,
                                       const std::vector<char>& easy) {
    if (k_c < 1) throw ConfigError("k_c must be >= 1");
    std::vector<int> candidates;
    for (std::size_t j = 0; j < easy.size(); ++j) {
        if (easy[j] && static_cast<int>(j) != i) candidates.push_back(static_cast<int>(j));
    }
    if (static_cast<int>(candidates.size()) <= k_c) return candidates;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return s(i, a) > s(i, b); });
    candidates.resize(static_cast<std::size_t>(k_c));
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

Vector aggregate_compensatory(const Matrix& x_st, const std::vector<int>& neighbors) {
    if (neighbors.empty()) throw DataError("compensatory aggregation needs >= 1 neighbor");
    Vector u = Vector::Zero(x_st.cols());
    for (int j : neighbors) u += x_st.row(j).transpose();
    return u / static_cast<double>(neighbors.size());
}

CompensatoryPlan build_compensatory_plan(const Matrix& x_st_values,
                                         const std::vector<char>& easy, int k_c) {
    const Eigen::Index m = x_st_values.rows();
    CompensatoryPlan plan;
    plan.gather = Matrix::Zero(m, m);
    plan.mask = Vector::Zero(m);

    bool any_easy = std::any_of(easy.begin(), easy.end(), [](char e) { return e != 0; });
    bool any_challenging =
        std::any_of(easy.begin(), easy.end(), [](char e) { return e == 0; });
    if (!any_easy || !any_challenging) return plan; // pass-through batch

    Matrix s = similarity_matrix(x_st_values, easy);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (easy[static_cast<std::size_t>(i)]) continue;
        auto neighbors = retrieve_compensatory(s, static_cast<int>(i), k_c, easy);
        if (neighbors.empty()) continue;
        const double w = 1.0 / static_cast<double>(neighbors.size());
        for (int j : neighbors) plan.gather(i, j) = w;
        plan.mask(i) = 1.0;
        plan.challenging.push_back(static_cast<int>(i));
        plan.neighbors.push_back(std::move(neighbors));
        plan.active = true;
    }
    return plan;
}

MixupGate::MixupGate(ParamStore& store, int d, int d_k, int hidden, std::mt19937& rng,
                     const std::string& prefix)
    : d_k_(d_k) {
    if (d < 1 || d_k < 1 || hidden < 1) throw ConfigError("gate dimensions must be >= 1");
    wq_ = store.add(prefix + "wq", glorot_uniform(d, d_k, rng));
    wk_ = store.add(prefix + "wk", glorot_uniform(d, d_k, rng));
    w1_ = store.add(prefix + "mlp.w1", glorot_uniform(d_k, hidden, rng));
    b1_ = store.add(prefix + "mlp.b1", Matrix::Zero(1, hidden));
    w2_ = store.add(prefix + "mlp.w2", glorot_uniform(hidden, 1, rng));
    b2_ = store.add(prefix + "mlp.b2", Matrix::Zero(1, 1));
}

ad::Var MixupGate::alpha(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var x_st,
                         ad::Var u_st) const {
    auto b = [&](int id) { return bound[static_cast<std::size_t>(id)]; };
    ad::Var q = t.matmul(x_st, b(wq_));
    ad::Var k = t.matmul(u_st, b(wk_));
    ad::Var scores = t.scale(t.cmul(q, k), 1.0 / std::sqrt(static_cast<double>(d_k_)));
    ad::Var attn = t.softmax_rows(scores);
    ad::Var gate_in = t.cmul(attn, k);
    ad::Var hidden = t.relu(t.add_rowvec(t.matmul(gate_in, b(w1_)), b(b1_)));
    ad::Var logit = t.add_rowvec(t.matmul(hidden, b(w2_)), b(b2_));
    return t.scale(t.sigmoid(logit), 0.5);
}

ad::Var mix_representations(ad::Tape& t, ad::Var x_st, ad::Var u_st, ad::Var alpha_masked) {
    return t.add(x_st, t.row_scale(t.sub(u_st, x_st), alpha_masked));
}

} // namespace fairstg
