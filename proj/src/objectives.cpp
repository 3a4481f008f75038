#include "fairstg/objectives.hpp"

#include "fairstg/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fairstg {

Vector per_sample_mae(const Matrix& pred, const Matrix& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw DataError("prediction/truth shape mismatch");
    }
    return (pred - truth).cwiseAbs().rowwise().mean();
}

Vector cost_sensitive_weights(const Vector& errors) {
    if (errors.size() < 1) throw DataError("empty error vector");
    const double total = errors.sum();
    if (total <= 0.0) return Vector::Ones(errors.size());
    return (errors.array() / total + 1.0).matrix();
}

double reweighted_loss(const Vector& errors, const Vector& lambda) {
    if (errors.size() != lambda.size()) throw DataError("weight/error length mismatch");
    return errors.dot(lambda) / static_cast<double>(errors.size());
}

double fairness_loss(const Vector& errors) {
    if (errors.size() < 1) throw DataError("empty error vector");
    const double mean = errors.mean();
    return (errors.array() - mean).square().mean();
}

double weighted_bce(const Vector& z_hat, const std::vector<char>& z, double omega) {
    if (static_cast<std::size_t>(z_hat.size()) != z.size() || z.empty()) {
        throw DataError("label/prediction length mismatch");
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z_hat.size(); ++i) {
        double p = std::clamp(z_hat(i), kBceClamp, 1.0 - kBceClamp);
        if (z[static_cast<std::size_t>(i)]) {
            acc += omega * std::log(p);
        } else {
            acc += std::log(1.0 - p);
        }
    }
    return -acc / static_cast<double>(z_hat.size());
}

LossBreakdown combine(double l_r, double l_f, double l_s, const LossWeights& w) {
    if (w.mu_r < 0 || w.mu_f < 0 || w.mu_s < 0) throw ConfigError("loss weights must be >= 0");
    LossBreakdown out;
    out.l_r = l_r;
    out.l_f = l_f;
    out.l_s = l_s;
    out.weights = w;
    out.total = w.mu_r * l_r + w.mu_f * l_f + w.mu_s * l_s;
    return out;
}

ad::Var per_sample_mae_t(ad::Tape& t, ad::Var pred, const Matrix& truth) {
    return t.row_mean(t.abs_(t.sub(pred, t.constant(truth))));
}

ad::Var reweighted_loss_t(ad::Tape& t, ad::Var errors, const Vector& lambda) {
    return t.mean_all(t.cmul(errors, t.constant(lambda)));
}

ad::Var fairness_loss_t(ad::Tape& t, ad::Var errors) {
    return t.mean_all(t.square(t.sub_scalar(errors, t.mean_all(errors))));
}

ad::Var weighted_bce_t(ad::Tape& t, ad::Var z_hat, const std::vector<char>& z, double omega) {
    const Eigen::Index m = t.value(z_hat).rows();
    if (static_cast<std::size_t>(m) != z.size()) throw DataError("label length mismatch");
    Matrix pos(m, 1), neg(m, 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        pos(i, 0) = z[static_cast<std::size_t>(i)] ? omega : 0.0;
        neg(i, 0) = z[static_cast<std::size_t>(i)] ? 0.0 : 1.0;
    }
    ad::Var p = t.clamp(z_hat, kBceClamp, 1.0 - kBceClamp);
    ad::Var pos_term = t.cmul(t.constant(pos), t.log_(p));
    ad::Var neg_term = t.cmul(t.constant(neg), t.log_(t.affine(p, -1.0, 1.0)));
    return t.scale(t.mean_all(t.add(pos_term, neg_term)), -1.0);
}

} // namespace fairstg
