#pragma once

#include "fairstg/autodiff.hpp"
#include "fairstg/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace fairstg {

using Matrix = ad::Matrix;
using Vector = Eigen::VectorXd;

// S_ij = cosine(x_i, x_j) when j is easy and i != j, else 0. Zero-norm rows
// yield similarity 0.
Matrix similarity_matrix(const Matrix& x_st, const std::vector<char>& easy);

// Indices of the k_c largest similarities of row i restricted to the easy
// set, ties by ascending index; all easy indices when fewer than k_c exist.
std::vector<int> retrieve_compensatory(const Matrix& s, int i, int k_c,
                                       const std::vector<char>& easy);

Vector aggregate_compensatory(const Matrix& x_st, const std::vector<int>& neighbors);

// Discrete retrieval plan for a batch, computed on detached representation
// values. gather is M x M and row-stochastic on challenging rows (1/k at
// neighbor columns), zero on easy rows; mask is the challenging indicator.
struct CompensatoryPlan {
    std::vector<int> challenging;
    std::vector<std::vector<int>> neighbors; // aligned with challenging
    Matrix gather;
    Vector mask; // M x 1, 1 for challenging rows with neighbors
    bool active = false;
};

CompensatoryPlan build_compensatory_plan(const Matrix& x_st_values,
                                         const std::vector<char>& easy, int k_c);

// Attention mix-up gate alpha' in (0,0.5): q = x W_q, k = u W_k,
// a = softmax(q*k/sqrt(d_k)) over the d_k axis, then an MLP on a*k squashed
// through 0.5*sigmoid.
class MixupGate {
public:
    MixupGate(ParamStore& store, int d, int d_k, int hidden, std::mt19937& rng,
              const std::string& prefix = "gate.");

    ad::Var alpha(ad::Tape& t, const std::vector<ad::Var>& bound, ad::Var x_st,
                  ad::Var u_st) const; // M x 1

private:
    int d_k_;
    int wq_, wk_, w1_, b1_, w2_, b2_;
};

// x_com = x_st + alpha_masked * (u_st - x_st) row-wise; easy rows must carry
// alpha 0 so they pass through unchanged.
ad::Var mix_representations(ad::Tape& t, ad::Var x_st, ad::Var u_st, ad::Var alpha_masked);

} // namespace fairstg
