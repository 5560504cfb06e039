#pragma once

#include <string>
#include <vector>

#include "shiftadapt/dataset.hpp"

namespace shiftadapt {

// k(x,y) = exp(-gamma*||x-y||^2) or plain dot product.
struct KernelSpec {
    enum class Kind { rbf, linear };
    Kind kind = Kind::rbf;
    double gamma = 1.0;
};

void validate_kernel(const KernelSpec& spec);

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

// Gram matrix k(X_i, X_j); symmetric, and for rbf the diagonal is exactly 1.
Matrix gram(const Matrix& X, const KernelSpec& spec);

// Rectangular kernel matrix k(A_i, B_j).
Matrix cross_gram(const Matrix& A, const Matrix& B, const KernelSpec& spec);

// f(x) = sum_i coef[i] * k(support_i, x).
struct KernelModel {
    Matrix support;
    std::vector<double> coef;
    KernelSpec spec;
};

double kernel_predict(const KernelModel& m, std::span<const double> x);

// sqrt(theta' K theta) on the model's own support, clamped at zero before
// the square root.
double rkhs_norm(const KernelModel& m);

// RKHS norm of a - b via the union-of-supports expansion [coef_a; -coef_b];
// invariant to the order of support points.
double rkhs_distance(const KernelModel& a, const KernelModel& b);

// Regularized kernel logistic regression by full-batch gradient descent
// from theta = 0: mean log(1+exp(-y f(x))) + (lambda/2) theta' K theta.
// The primary column must be binary, either {-1,+1} or {0,1} (0 is read as
// the negative class); anything else is rejected. The step size is 1/L with
// L from the standard smoothness bound, so descent is monotone.
KernelModel fit_kernel(const Dataset& d, const KernelSpec& spec, double lambda, int iters);

// Doubly-robust subgroup refit: support is the union of fhat's support and
// the subgroup points (exact duplicates collapse, fhat's coefficients are
// zero-extended, and that extension is also the starting point). Objective:
// mean subgroup logistic loss
// + (alpha_rkhs/2) * (theta - theta_hat)' K_union (theta - theta_hat).
// spec must match fhat.spec.
KernelModel fit_dr(const KernelModel& fhat, const Dataset& subgroup, const KernelSpec& spec,
                   double alpha_rkhs, int iters);

// Fraction of rows with sign(f(x)) matching the binary primary label
// (f > 0 predicts the positive class).
double kernel_accuracy(const KernelModel& m, const Dataset& d);

// Mean logistic loss log(1+exp(-y f(x))) over the dataset.
double logistic_risk(const KernelModel& m, const Dataset& d);

// Constants of the naive multi-group bound and its doubly-robust
// counterpart, with c = c' = 1:
//   nu_prime   = nu_dr + sqrt((nu^2 * trace_K - log delta) / N)
//   term_naive = sqrt(m * (nu^2 * trace_K - log delta) / N)
//   term_dr    = sqrt((nu_prime^2 * trace_K - log delta) / N) + norm_fhat / N
struct BoundReport {
    double trace_K = 0;
    double norm_fhat = 0;
    double nu = 0;
    double nu_dr = 0;
    double nu_prime = 0;
    int m = 0;
    int N = 0;
    double delta = 0;
    double term_naive = 0;
    double term_dr = 0;
};

BoundReport bound_report(const KernelModel& fhat, const Matrix& train_K, int m, int N,
                         double delta, double nu, double nu_dr);

// JSON object with exactly the field names above.
std::string to_json_string(const BoundReport& r);

} // namespace shiftadapt
