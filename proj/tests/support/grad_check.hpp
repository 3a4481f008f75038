#pragma once

#include "fairstg/autodiff.hpp"

#include <doctest.h>

#include <functional>
#include <random>
#include <vector>

namespace fairstg::testsupport {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// Builds a scalar graph from leaves created for `params`, in order.
using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-10);
}

inline double eval_scalar(const GraphBuilder& build, const std::vector<Matrix>& params) {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(t.leaf(p, false));
    return t.value(build(t, leaves))(0, 0);
}

// Central-difference check of every entry of every parameter.
inline void check_grads(const GraphBuilder& build, std::vector<Matrix> params,
                        double tol = 1e-6, double h = 1e-5) {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(t.leaf(p, true));
    Var out = build(t, leaves);
    t.backward(out);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Var v : leaves) analytic.push_back(t.grad(v));

    for (std::size_t p = 0; p < params.size(); ++p) {
        for (Eigen::Index i = 0; i < params[p].rows(); ++i) {
            for (Eigen::Index j = 0; j < params[p].cols(); ++j) {
                std::vector<Matrix> plus = params;
                std::vector<Matrix> minus = params;
                plus[p](i, j) += h;
                minus[p](i, j) -= h;
                double fd = (eval_scalar(build, plus) - eval_scalar(build, minus)) / (2.0 * h);
                double an = analytic[p](i, j);
                INFO("param ", p, " entry (", i, ",", j, ") analytic=", an, " fd=", fd);
                CHECK(rel_err(an, fd) < tol);
            }
        }
    }
}

inline Matrix random_matrix(int rows, int cols, std::mt19937& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    return m;
}

// Shifts entries away from zero so relu/abs kinks stay clear of the
// finite-difference stencil.
inline Matrix away_from_zero(Matrix m, double margin = 0.05) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double& v = m(i, j);
            if (std::abs(v) < margin) v = (v >= 0.0) ? margin : -margin;
        }
    return m;
}

} // namespace fairstg::testsupport
