#include "shiftadapt/kernel.hpp"

#include <cmath>
#include <utility>

#include "json.hpp"
#include "shiftadapt/common.hpp"

namespace shiftadapt {

namespace {

double sq_dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^t) without overflow for large |t|
double log1p_exp(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

void matvec(const Matrix& M, const std::vector<double>& v, std::vector<double>& out) {
    out.assign(std::size_t(M.rows), 0.0);
    for (int i = 0; i < M.rows; ++i) {
        const double* r = M.data.data() + std::size_t(i) * M.cols;
        double s = 0.0;
        for (int j = 0; j < M.cols; ++j) s += r[j] * v[std::size_t(j)];
        out[std::size_t(i)] = s;
    }
}

void matvec_t(const Matrix& M, const std::vector<double>& v, std::vector<double>& out) {
    out.assign(std::size_t(M.cols), 0.0);
    for (int i = 0; i < M.rows; ++i) {
        const double* r = M.data.data() + std::size_t(i) * M.cols;
        double vi = v[std::size_t(i)];
        if (vi == 0.0) continue;
        for (int j = 0; j < M.cols; ++j) out[std::size_t(j)] += r[j] * vi;
    }
}

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double lambda_max_sym(const Matrix& K) {
    int n = K.rows;
    if (n == 0) return 0.0;
    std::vector<double> v(std::size_t(n), 1.0 / std::sqrt(double(n)));
    std::vector<double> w;
    for (int it = 0; it < 100; ++it) {
        matvec(K, v, w);
        double nw = vec_norm(w);
        if (nw < 1e-300) return 0.0;
        for (double& x : w) x /= nw;
        v.swap(w);
    }
    matvec(K, v, w);
    return dot(v, w);
}

// Largest eigenvalue of Kc' Kc, applied as two matvecs so the product is
// never formed.
double lambda_max_gram_sq(const Matrix& Kc) {
    int m = Kc.cols;
    if (m == 0 || Kc.rows == 0) return 0.0;
    std::vector<double> v(std::size_t(m), 1.0 / std::sqrt(double(m)));
    std::vector<double> mid, w;
    for (int it = 0; it < 100; ++it) {
        matvec(Kc, v, mid);
        matvec_t(Kc, mid, w);
        double nw = vec_norm(w);
        if (nw < 1e-300) return 0.0;
        for (double& x : w) x /= nw;
        v.swap(w);
    }
    matvec(Kc, v, mid);
    matvec_t(Kc, mid, w);
    return dot(v, w);
}

// Primary column as {-1,+1}. Accepts labels already in {-1,+1} or in {0,1}
// with 0 meaning the negative class.
std::vector<double> binary_labels(const Dataset& d, const char* who) {
    if (!d.has_primary()) throw DataError(std::string(who) + ": dataset has no primary labels");
    bool zero_one = true;
    bool pm_one = true;
    for (int v : d.primary) {
        if (v != 0 && v != 1) zero_one = false;
        if (v != -1 && v != 1) pm_one = false;
    }
    if (!zero_one && !pm_one)
        throw DataError(std::string(who) + ": labels must be binary ({0,1} or {-1,+1})");
    std::vector<double> y(d.primary.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = d.primary[i] == 1 ? 1.0 : -1.0;
    return y;
}

// Full-batch gradient descent on
//   (1/n) sum_i log(1+exp(-y_i [Kc theta]_i)) + (reg/2) (theta-anchor)' Ku (theta-anchor)
// with step 1/L from the smoothness bound
//   L = lambda_max(Kc'Kc)/(4n) + reg * lambda_max(Ku).
KernelModel solve_penalized(Matrix support, const Matrix& Kc, const Matrix& Ku,
                            const std::vector<double>& y, std::vector<double> theta,
                            const std::vector<double>& anchor, double reg, int iters,
                            const KernelSpec& spec) {
    int n = Kc.rows;
    int m = Kc.cols;
    double l_data = lambda_max_gram_sq(Kc) / (4.0 * double(n));
    double l_reg = reg > 0.0 ? reg * lambda_max_sym(Ku) : 0.0;
    double lip = l_data + l_reg;
    double step = lip > 1e-12 ? 1.0 / lip : 1.0;

    std::vector<double> s, u(static_cast<std::size_t>(n)), g, diff(static_cast<std::size_t>(m)), kd;
    for (int it = 0; it < iters; ++it) {
        matvec(Kc, theta, s);
        for (int i = 0; i < n; ++i) {
            double yi = y[std::size_t(i)];
            u[std::size_t(i)] = -yi * sigmoid(-yi * s[std::size_t(i)]);
        }
        matvec_t(Kc, u, g);
        for (double& x : g) x /= double(n);
        if (reg > 0.0) {
            for (int j = 0; j < m; ++j) diff[std::size_t(j)] = theta[std::size_t(j)] - anchor[std::size_t(j)];
            matvec(Ku, diff, kd);
            for (int j = 0; j < m; ++j) g[std::size_t(j)] += reg * kd[std::size_t(j)];
        }
        for (int j = 0; j < m; ++j) theta[std::size_t(j)] -= step * g[std::size_t(j)];
    }
    for (double t : theta)
        if (!std::isfinite(t)) throw NumericError("kernel fit diverged to a non-finite coefficient");
    return KernelModel{std::move(support), std::move(theta), spec};
}

bool same_spec(const KernelSpec& a, const KernelSpec& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == KernelSpec::Kind::rbf && a.gamma != b.gamma) return false;
    return true;
}

} // namespace

void validate_kernel(const KernelSpec& spec) {
    if (spec.kind == KernelSpec::Kind::rbf && !(spec.gamma > 0.0))
        throw ConfigError("kernel: gamma must be > 0");
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("kernel_eval: dimension mismatch");
    if (spec.kind == KernelSpec::Kind::linear) return dot(x, y);
    return std::exp(-spec.gamma * sq_dist(x, y));
}

Matrix gram(const Matrix& X, const KernelSpec& spec) {
    validate_kernel(spec);
    if (X.rows < 1) throw DataError("gram: empty matrix");
    Matrix K(X.rows, X.rows);
    for (int i = 0; i < X.rows; ++i) {
        // exact symmetry and, for rbf, an exact unit diagonal
        K.at(i, i) = spec.kind == KernelSpec::Kind::rbf ? 1.0 : dot(X.row(i), X.row(i));
        for (int j = i + 1; j < X.rows; ++j) {
            double v = kernel_eval(spec, X.row(i), X.row(j));
            K.at(i, j) = v;
            K.at(j, i) = v;
        }
    }
    return K;
}

Matrix cross_gram(const Matrix& A, const Matrix& B, const KernelSpec& spec) {
    validate_kernel(spec);
    if (A.cols != B.cols) throw DataError("cross_gram: dimension mismatch");
    Matrix K(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.rows; ++j) K.at(i, j) = kernel_eval(spec, A.row(i), B.row(j));
    return K;
}

double kernel_predict(const KernelModel& m, std::span<const double> x) {
    if (int(x.size()) != m.support.cols) throw DataError("kernel_predict: dimension mismatch");
    double s = 0.0;
    for (int i = 0; i < m.support.rows; ++i)
        s += m.coef[std::size_t(i)] * kernel_eval(m.spec, m.support.row(i), x);
    return s;
}

double rkhs_norm(const KernelModel& m) {
    if (m.support.rows == 0) return 0.0;
    if (int(m.coef.size()) != m.support.rows) throw DataError("rkhs_norm: malformed model");
    Matrix K = gram(m.support, m.spec);
    std::vector<double> kv;
    matvec(K, m.coef, kv);
    double q = dot(m.coef, kv);
    return std::sqrt(std::max(0.0, q));
}

double rkhs_distance(const KernelModel& a, const KernelModel& b) {
    if (!same_spec(a.spec, b.spec)) throw ConfigError("rkhs_distance: kernel specs differ");
    if (a.support.rows > 0 && b.support.rows > 0 && a.support.cols != b.support.cols)
        throw DataError("rkhs_distance: support dimension mismatch");
    KernelModel diff;
    diff.spec = a.spec;
    int d = a.support.rows > 0 ? a.support.cols : b.support.cols;
    diff.support = Matrix(a.support.rows + b.support.rows, d);
    for (int i = 0; i < a.support.rows; ++i) {
        auto r = a.support.row(i);
        for (int j = 0; j < d; ++j) diff.support.at(i, j) = r[std::size_t(j)];
        diff.coef.push_back(a.coef[std::size_t(i)]);
    }
    for (int i = 0; i < b.support.rows; ++i) {
        auto r = b.support.row(i);
        for (int j = 0; j < d; ++j) diff.support.at(a.support.rows + i, j) = r[std::size_t(j)];
        diff.coef.push_back(-b.coef[std::size_t(i)]);
    }
    return rkhs_norm(diff);
}

KernelModel fit_kernel(const Dataset& d, const KernelSpec& spec, double lambda, int iters) {
    validate_kernel(spec);
    if (!(lambda > 0.0)) throw ConfigError("fit_kernel: lambda must be > 0");
    if (iters < 1) throw ConfigError("fit_kernel: iters must be >= 1");
    if (d.size() < 1) throw DataError("fit_kernel: empty dataset");
    std::vector<double> y = binary_labels(d, "fit_kernel");
    Matrix K = gram(d.features, spec);
    std::vector<double> theta0(std::size_t(d.size()), 0.0);
    std::vector<double> anchor(std::size_t(d.size()), 0.0);
    return solve_penalized(d.features, K, K, y, std::move(theta0), anchor, lambda, iters, spec);
}

KernelModel fit_dr(const KernelModel& fhat, const Dataset& subgroup, const KernelSpec& spec,
                   double alpha_rkhs, int iters) {
    validate_kernel(spec);
    if (!same_spec(spec, fhat.spec)) throw ConfigError("fit_dr: spec does not match fhat.spec");
    if (alpha_rkhs < 0.0) throw ConfigError("fit_dr: alpha_rkhs must be >= 0");
    if (iters < 1) throw ConfigError("fit_dr: iters must be >= 1");
    if (subgroup.size() < 1) throw DataError("fit_dr: empty subgroup");
    if (int(fhat.coef.size()) != fhat.support.rows) throw DataError("fit_dr: malformed model");
    if (fhat.support.rows > 0 && subgroup.dim() != fhat.support.cols)
        throw DataError("fit_dr: feature dimension mismatch");
    std::vector<double> y = binary_labels(subgroup, "fit_dr");

    // union support: fhat's points keep their coefficients, subgroup points
    // not already present join with coefficient 0
    std::vector<std::span<const double>> rows;
    std::vector<double> theta0 = fhat.coef;
    for (int i = 0; i < fhat.support.rows; ++i) rows.push_back(fhat.support.row(i));
    for (int i = 0; i < subgroup.size(); ++i) {
        auto r = subgroup.features.row(i);
        bool dup = false;
        for (const auto& s : rows) {
            if (s.size() != r.size()) continue;
            bool eq = true;
            for (std::size_t j = 0; j < r.size(); ++j)
                if (s[j] != r[j]) { eq = false; break; }
            if (eq) { dup = true; break; }
        }
        if (!dup) {
            rows.push_back(r);
            theta0.push_back(0.0);
        }
    }
    Matrix sup(int(rows.size()), subgroup.dim());
    for (int i = 0; i < sup.rows; ++i)
        for (int j = 0; j < sup.cols; ++j) sup.at(i, j) = rows[std::size_t(i)][std::size_t(j)];

    Matrix Kc = cross_gram(subgroup.features, sup, spec);
    Matrix Ku = gram(sup, spec);
    std::vector<double> anchor = theta0;
    return solve_penalized(std::move(sup), Kc, Ku, y, std::move(theta0), anchor, alpha_rkhs,
                           iters, spec);
}

double kernel_accuracy(const KernelModel& m, const Dataset& d) {
    if (d.size() < 1) throw DataError("kernel_accuracy: empty dataset");
    std::vector<double> y = binary_labels(d, "kernel_accuracy");
    int correct = 0;
    for (int i = 0; i < d.size(); ++i) {
        double f = kernel_predict(m, d.features.row(i));
        double pred = f > 0.0 ? 1.0 : -1.0;
        if (pred == y[std::size_t(i)]) ++correct;
    }
    return double(correct) / double(d.size());
}

double logistic_risk(const KernelModel& m, const Dataset& d) {
    if (d.size() < 1) throw DataError("logistic_risk: empty dataset");
    std::vector<double> y = binary_labels(d, "logistic_risk");
    double s = 0.0;
    for (int i = 0; i < d.size(); ++i) {
        double f = kernel_predict(m, d.features.row(i));
        s += log1p_exp(-y[std::size_t(i)] * f);
    }
    return s / double(d.size());
}

BoundReport bound_report(const KernelModel& fhat, const Matrix& train_K, int m, int N,
                         double delta, double nu, double nu_dr) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("bound_report: delta must be in (0,1)");
    if (m < 1) throw ConfigError("bound_report: m must be >= 1");
    if (N < 1) throw ConfigError("bound_report: N must be >= 1");
    if (nu < 0.0 || nu_dr < 0.0) throw ConfigError("bound_report: nu and nu_dr must be >= 0");
    if (train_K.rows != train_K.cols || train_K.rows < 1)
        throw DataError("bound_report: train_K must be a nonempty square matrix");

    BoundReport r;
    r.m = m;
    r.N = N;
    r.delta = delta;
    r.nu = nu;
    r.nu_dr = nu_dr;
    for (int i = 0; i < train_K.rows; ++i) r.trace_K += train_K.at(i, i);
    r.norm_fhat = rkhs_norm(fhat);

    double inner = nu * nu * r.trace_K - std::log(delta);
    if (inner < 0.0) throw NumericError("bound_report: negative operand under the square root");
    r.nu_prime = nu_dr + std::sqrt(inner / double(N));
    r.term_naive = std::sqrt(double(m) * inner / double(N));
    double inner_dr = r.nu_prime * r.nu_prime * r.trace_K - std::log(delta);
    if (inner_dr < 0.0) throw NumericError("bound_report: negative operand under the square root");
    r.term_dr = std::sqrt(inner_dr / double(N)) + r.norm_fhat / double(N);
    return r;
}

std::string to_json_string(const BoundReport& r) {
    nlohmann::ordered_json j;
    j["trace_K"] = r.trace_K;
    j["norm_fhat"] = r.norm_fhat;
    j["nu"] = r.nu;
    j["nu_dr"] = r.nu_dr;
    j["nu_prime"] = r.nu_prime;
    j["m"] = r.m;
    j["N"] = r.N;
    j["delta"] = r.delta;
    j["term_naive"] = r.term_naive;
    j["term_dr"] = r.term_dr;
    return j.dump();
}

} // namespace shiftadapt
