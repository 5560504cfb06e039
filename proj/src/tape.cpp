#include "shiftadapt/tape.hpp"

#include <algorithm>
#include <cmath>

#include "shiftadapt/losses.hpp"
#include "shiftadapt/rng.hpp"

namespace shiftadapt {

bool contains(const SegmentSet& s, const std::string& name) {
    return std::find(s.begin(), s.end(), name) != s.end();
}

std::vector<double> dropout_mask(int n, double rate, std::uint64_t seed) {
    std::vector<double> mask(std::size_t(n), 1.0);
    if (rate <= 0.0) return mask;
    Rng rng(seed_of(seed, "dropout"));
    double keep = 1.0 / (1.0 - rate);
    for (int i = 0; i < n; ++i)
        mask[std::size_t(i)] = (rng.uniform() >= rate) ? keep : 0.0;
    return mask;
}

Tape::Tape(const ParamSet& params, const SegmentSet& trainable)
    : params_(params), trainable_(trainable) {
    for (const auto& name : trainable_)
        if (!params_.has_segment(name))
            throw ConfigError("tape: unknown segment '" + name + "'");
    pgrad_.assign(params_.values.size(), 0.0);
}

Tape::NodeId Tape::fresh(std::size_t n) {
    nodes_.push_back(Node{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    return NodeId(nodes_.size() - 1);
}

bool Tape::trainable(const std::string& segment) const { return contains(trainable_, segment); }

Tape::NodeId Tape::input(std::span<const double> x) {
    NodeId id = fresh(x.size());
    std::copy(x.begin(), x.end(), nodes_[std::size_t(id)].val.begin());
    return id;
}

Tape::NodeId Tape::input(std::vector<double> x) {
    NodeId id = fresh(x.size());
    nodes_[std::size_t(id)].val = std::move(x);
    return id;
}

Tape::NodeId Tape::affine(const std::string& segment, int layer, NodeId x) {
    const Segment& seg = params_.segment(segment);
    if (layer < 0 || layer >= int(seg.layers.size()))
        throw ConfigError("tape: layer index out of range in '" + segment + "'");
    const LayerShape shape = seg.layers[std::size_t(layer)];
    if (int(nodes_[std::size_t(x)].val.size()) != shape.in)
        throw DataError("tape: affine input size mismatch");
    std::size_t w = seg.layer_offset(layer);
    std::size_t b = w + std::size_t(shape.out) * shape.in;

    NodeId y = fresh(std::size_t(shape.out));
    {
        const auto& xv = nodes_[std::size_t(x)].val;
        auto& yv = nodes_[std::size_t(y)].val;
        for (int o = 0; o < shape.out; ++o) {
            double acc = params_.values[b + std::size_t(o)];
            const double* wr = params_.values.data() + w + std::size_t(o) * shape.in;
            for (int i = 0; i < shape.in; ++i) acc += wr[i] * xv[std::size_t(i)];
            yv[std::size_t(o)] = acc;
        }
    }
    bool train = trainable(segment);
    back_.push_back([this, shape, w, b, x, y, train] {
        const auto& ya = nodes_[std::size_t(y)].adj;
        const auto& xv = nodes_[std::size_t(x)].val;
        auto& xa = nodes_[std::size_t(x)].adj;
        for (int o = 0; o < shape.out; ++o) {
            double g = ya[std::size_t(o)];
            if (g == 0.0) continue;
            const double* wr = params_.values.data() + w + std::size_t(o) * shape.in;
            for (int i = 0; i < shape.in; ++i) xa[std::size_t(i)] += wr[i] * g;
            if (train) {
                double* gw = pgrad_.data() + w + std::size_t(o) * shape.in;
                for (int i = 0; i < shape.in; ++i) gw[i] += g * xv[std::size_t(i)];
                pgrad_[b + std::size_t(o)] += g;
            }
        }
    });
    return y;
}

Tape::NodeId Tape::relu(NodeId x) {
    // fresh() can reallocate nodes_, so never hold a node reference across it
    std::vector<double> out = nodes_[std::size_t(x)].val;
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    NodeId y = fresh(out.size());
    nodes_[std::size_t(y)].val = std::move(out);
    back_.push_back([this, x, y] {
        const auto& ya = nodes_[std::size_t(y)].adj;
        const auto& xv = nodes_[std::size_t(x)].val;
        auto& xa = nodes_[std::size_t(x)].adj;
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0.0) xa[i] += ya[i];
    });
    return y;
}

Tape::NodeId Tape::dropout(NodeId x, double rate, std::uint64_t seed) {
    std::vector<double> out = nodes_[std::size_t(x)].val;
    std::vector<double> mask = dropout_mask(int(out.size()), rate, seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    NodeId y = fresh(out.size());
    nodes_[std::size_t(y)].val = std::move(out);
    back_.push_back([this, x, y, mask = std::move(mask)] {
        const auto& ya = nodes_[std::size_t(y)].adj;
        auto& xa = nodes_[std::size_t(x)].adj;
        for (std::size_t i = 0; i < mask.size(); ++i) xa[i] += ya[i] * mask[i];
    });
    return y;
}

Tape::NodeId Tape::cross_entropy_loss(NodeId logits, int label) {
    const auto& lv = nodes_[std::size_t(logits)].val;
    double loss = cross_entropy(lv, label);
    std::vector<double> probs = softmax(lv);
    NodeId y = fresh(1);
    nodes_[std::size_t(y)].val[0] = loss;
    back_.push_back([this, logits, y, label, probs = std::move(probs)] {
        double g = nodes_[std::size_t(y)].adj[0];
        if (g == 0.0) return;
        auto& la = nodes_[std::size_t(logits)].adj;
        for (std::size_t i = 0; i < probs.size(); ++i)
            la[i] += g * (probs[i] - (int(i) == label ? 1.0 : 0.0));
    });
    return y;
}

Tape::NodeId Tape::huber_loss(NodeId pred, double target, double delta) {
    if (nodes_[std::size_t(pred)].val.size() != 1)
        throw DataError("tape: huber expects a scalar prediction");
    double p = nodes_[std::size_t(pred)].val[0];
    NodeId y = fresh(1);
    nodes_[std::size_t(y)].val[0] = huber(p, target, delta);
    back_.push_back([this, pred, y, target, delta] {
        double g = nodes_[std::size_t(y)].adj[0];
        if (g == 0.0) return;
        double r = nodes_[std::size_t(pred)].val[0] - target;
        double dr = std::clamp(r, -delta, delta);
        nodes_[std::size_t(pred)].adj[0] += g * dr;
    });
    return y;
}

Tape::NodeId Tape::proximal(const SegmentSet& segments, const ParamSet& anchor, double alpha) {
    double s = 0.0;
    for (const auto& name : segments) {
        auto th = params_.segment_values(name);
        auto an = anchor.segment_values(name);
        if (th.size() != an.size()) throw DataError("tape: proximal anchor size mismatch");
        for (std::size_t i = 0; i < th.size(); ++i) {
            double d = th[i] - an[i];
            s += d * d;
        }
    }
    if (!(alpha >= 0.0)) throw ConfigError("tape: proximal alpha must be >= 0");
    NodeId y = fresh(1);
    nodes_[std::size_t(y)].val[0] = 0.5 * alpha * s;
    back_.push_back([this, segments, &anchor, alpha, y] {
        double g = nodes_[std::size_t(y)].adj[0];
        if (g == 0.0) return;
        for (const auto& name : segments) {
            if (!trainable(name)) continue;
            const Segment& seg = params_.segment(name);
            const Segment& aseg = anchor.segment(name);
            for (std::size_t i = 0; i < seg.size; ++i)
                pgrad_[seg.offset + i] +=
                    g * alpha * (params_.values[seg.offset + i] - anchor.values[aseg.offset + i]);
        }
    });
    return y;
}

Tape::NodeId Tape::weight_decay_term(const SegmentSet& segments, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("tape: weight decay lambda must be >= 0");
    double s = 0.0;
    for (const auto& name : segments) {
        auto th = params_.segment_values(name);
        for (double v : th) s += v * v;
    }
    NodeId y = fresh(1);
    nodes_[std::size_t(y)].val[0] = 0.5 * lambda * s;
    back_.push_back([this, segments, lambda, y] {
        double g = nodes_[std::size_t(y)].adj[0];
        if (g == 0.0) return;
        for (const auto& name : segments) {
            if (!trainable(name)) continue;
            const Segment& seg = params_.segment(name);
            for (std::size_t i = 0; i < seg.size; ++i)
                pgrad_[seg.offset + i] += g * lambda * params_.values[seg.offset + i];
        }
    });
    return y;
}

Tape::NodeId Tape::weighted_sum(const std::vector<NodeId>& terms,
                                const std::vector<double>& coeffs) {
    if (terms.size() != coeffs.size()) throw DataError("tape: weighted_sum size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (nodes_[std::size_t(terms[i])].val.size() != 1)
            throw DataError("tape: weighted_sum expects scalar terms");
        s += coeffs[i] * nodes_[std::size_t(terms[i])].val[0];
    }
    NodeId y = fresh(1);
    nodes_[std::size_t(y)].val[0] = s;
    back_.push_back([this, terms, coeffs, y] {
        double g = nodes_[std::size_t(y)].adj[0];
        if (g == 0.0) return;
        for (std::size_t i = 0; i < terms.size(); ++i)
            nodes_[std::size_t(terms[i])].adj[0] += g * coeffs[i];
    });
    return y;
}

double Tape::value(NodeId id) const {
    const auto& v = nodes_[std::size_t(id)].val;
    if (v.size() != 1) throw DataError("tape: value() on a non-scalar node");
    return v[0];
}

std::span<const double> Tape::values(NodeId id) const { return nodes_[std::size_t(id)].val; }

Tape::NodeId Tape::model_output(const ModelConfig& cfg, NodeId x, const std::string& head_segment,
                                const ForwardMode& mode) {
    const Segment& base = params_.segment("theta_base");
    NodeId cur = x;
    for (std::size_t l = 0; l < base.layers.size(); ++l)
        cur = relu(affine("theta_base", int(l), cur));
    if (mode.train && cfg.dropout_rate > 0.0)
        cur = dropout(cur, cfg.dropout_rate, mode.dropout_seed);
    const Segment& head = params_.segment(head_segment);
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        cur = affine(head_segment, int(l), cur);
        if (l + 1 < head.layers.size()) cur = relu(cur);
    }
    return cur;
}

std::vector<double> Tape::grad(NodeId loss) {
    if (spent_) throw std::logic_error("tape: grad() called twice");
    double v = value(loss);
    if (!std::isfinite(v)) throw NumericError("tape: non-finite loss");
    nodes_[std::size_t(loss)].adj[0] = 1.0;
    for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
    spent_ = true;
    return std::move(pgrad_);
}

} // namespace shiftadapt
