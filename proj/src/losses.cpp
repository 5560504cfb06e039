#include "shiftadapt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "shiftadapt/common.hpp"

namespace shiftadapt {

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw DataError("softmax: empty logits");
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

double cross_entropy(std::span<const double> logits, int label) {
    if (label < 0 || label >= int(logits.size()))
        throw DataError("cross_entropy: label out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return std::log(sum) + mx - logits[std::size_t(label)];
}

double huber(double pred, double target, double delta) {
    if (!(delta > 0.0)) throw ConfigError("huber: delta must be positive");
    double r = pred - target;
    double a = std::abs(r);
    if (a <= delta) return 0.5 * r * r;
    return delta * (a - 0.5 * delta);
}

double proximal_penalty(std::span<const double> theta, std::span<const double> anchor,
                        double alpha) {
    if (theta.size() != anchor.size()) throw DataError("proximal_penalty: size mismatch");
    if (!(alpha >= 0.0)) throw ConfigError("proximal_penalty: alpha must be >= 0");
    double s = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double d = theta[i] - anchor[i];
        s += d * d;
    }
    return 0.5 * alpha * s;
}

double weight_decay(std::span<const double> theta, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("weight_decay: lambda must be >= 0");
    double s = 0.0;
    for (double v : theta) s += v * v;
    return 0.5 * lambda * s;
}

} // namespace shiftadapt
