#pragma once

#include "fairstg/autodiff.hpp"

#include <vector>

namespace fairstg {

using Matrix = ad::Matrix;
using Vector = Eigen::VectorXd;

struct LossWeights {
    double mu_r = 1.0;
    double mu_f = 0.5;
    double mu_s = 0.1;
};

struct LossBreakdown {
    double l_r = 0.0;
    double l_f = 0.0;
    double l_s = 0.0;
    double total = 0.0;
    LossWeights weights;
};

// Plain-value forms, used directly for metrics and as the reference
// implementations the training-graph versions are tested against.
Vector per_sample_mae(const Matrix& pred, const Matrix& truth);
Vector cost_sensitive_weights(const Vector& errors); // lambda_i = 1 + e_i / sum(e)
double reweighted_loss(const Vector& errors, const Vector& lambda);
double fairness_loss(const Vector& errors); // population variance
double weighted_bce(const Vector& z_hat, const std::vector<char>& z, double omega = 4.0);
LossBreakdown combine(double l_r, double l_f, double l_s, const LossWeights& w);

// Tape forms for training. lambda and z are step constants (no gradient).
ad::Var per_sample_mae_t(ad::Tape& t, ad::Var pred, const Matrix& truth);
ad::Var reweighted_loss_t(ad::Tape& t, ad::Var errors, const Vector& lambda);
ad::Var fairness_loss_t(ad::Tape& t, ad::Var errors);
ad::Var weighted_bce_t(ad::Tape& t, ad::Var z_hat, const std::vector<char>& z, double omega);

constexpr double kBceClamp = 1e-7;

} // namespace fairstg
