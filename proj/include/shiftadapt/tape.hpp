#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shiftadapt/model.hpp"

namespace shiftadapt {

// Names of the parameter segments an objective is allowed to update.
using SegmentSet = std::vector<std::string>;

bool contains(const SegmentSet& s, const std::string& name);

// Reverse-mode tape over vector-valued ops. An objective is built by
// composing the ops below into a scalar node; grad() then walks the tape
// backwards. Parameter adjoints are only ever accumulated for trainable
// segments, so gradient entries outside them are exact zeros, not
// rounded-to-zero sums.
//
// A Tape borrows the ParamSet for its lifetime and is single-use:
// build one objective, read its value, optionally call grad() once.
class Tape {
  public:
    using NodeId = int;

    Tape(const ParamSet& params, const SegmentSet& trainable);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId input(std::span<const double> x);
    NodeId input(std::vector<double> x);

    // y = W x + b with layer l of the named segment.
    NodeId affine(const std::string& segment, int layer, NodeId x);
    NodeId relu(NodeId x);
    // Inverted dropout: kept entries are scaled by 1/(1-rate). The mask is
    // a pure function of the seed.
    NodeId dropout(NodeId x, double rate, std::uint64_t seed);

    NodeId cross_entropy_loss(NodeId logits, int label);
    NodeId huber_loss(NodeId pred, double target, double delta);
    // (alpha/2) * sum over `segments` of ||theta_seg - anchor_seg||^2.
    NodeId proximal(const SegmentSet& segments, const ParamSet& anchor, double alpha);
    // (lambda/2) * sum over `segments` of ||theta_seg||^2.
    NodeId weight_decay_term(const SegmentSet& segments, double lambda);

    // Weighted sum of scalar nodes: sum_i coeffs[i] * terms[i].
    NodeId weighted_sum(const std::vector<NodeId>& terms, const std::vector<double>& coeffs);

    double value(NodeId id) const;                 // scalar nodes
    std::span<const double> values(NodeId id) const;

    // Extractor + head chain for one sample; mirrors forward() exactly
    // (same dropout mask derivation) so eval and training agree.
    NodeId model_output(const ModelConfig& cfg, NodeId x, const std::string& head_segment,
                        const ForwardMode& mode);

    // Reverse pass from the scalar `loss`. Throws NumericError if the loss
    // value is not finite. Returns a vector the length of params.values;
    // entries outside the trainable segments are exactly zero.
    std::vector<double> grad(NodeId loss);

  private:
    struct Node {
        std::vector<double> val;
        std::vector<double> adj;
    };

    NodeId fresh(std::size_t n);
    bool trainable(const std::string& segment) const;

    const ParamSet& params_;
    SegmentSet trainable_;
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> back_;
    std::vector<double> pgrad_;
    bool spent_ = false;
};

// Deterministic inverted-dropout mask: entry i is 0 with probability rate,
// otherwise 1/(1-rate).
std::vector<double> dropout_mask(int n, double rate, std::uint64_t seed);

} // namespace shiftadapt
