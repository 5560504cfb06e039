#pragma once

#include <span>
#include <vector>

#include "shiftadapt/model.hpp"

namespace shiftadapt {

// Numerically stable softmax (shift by the max before exponentiating).
std::vector<double> softmax(std::span<const double> logits);

// -log softmax(logits)[label], evaluated through log-sum-exp so large
// logits cannot overflow. label must be in [0, logits.size()).
double cross_entropy(std::span<const double> logits, int label);

// Huber loss of the residual pred - target: quadratic inside |r| <= delta,
// linear outside. delta must be positive.
double huber(double pred, double target, double delta);

// (alpha/2) * ||theta - anchor||^2. Sizes must match, alpha >= 0.
double proximal_penalty(std::span<const double> theta, std::span<const double> anchor,
                        double alpha);

// (lambda/2) * ||theta||^2, the explicit-loss-term form of weight decay.
double weight_decay(std::span<const double> theta, double lambda);

} // namespace shiftadapt
