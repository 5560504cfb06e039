#include "shiftadapt/model.hpp"

#include <algorithm>
#include <cmath>

#include "shiftadapt/rng.hpp"
#include "shiftadapt/tape.hpp"

namespace shiftadapt {

void validate_model(const ModelConfig& cfg) {
    if (cfg.input_dim <= 0) throw ConfigError("model: input_dim must be positive");
    for (int w : cfg.extractor_widths)
        if (w <= 0) throw ConfigError("model: extractor widths must be positive");
    for (int w : cfg.head_widths)
        if (w <= 0) throw ConfigError("model: head widths must be positive");
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
        throw ConfigError("model: dropout_rate must be in [0, 1)");
    if (cfg.num_primary_classes < 2) throw ConfigError("model: need at least 2 primary classes");
}

void validate_aux(const AuxTaskSpec& spec) {
    if (spec.task_id.empty()) throw ConfigError("aux task: empty task_id");
    if (spec.kind == AuxKind::classification) {
        if (spec.classes < 2) throw ConfigError("aux task '" + spec.task_id + "': need >= 2 classes");
        if (spec.loss != AuxLoss::cross_entropy)
            throw ConfigError("aux task '" + spec.task_id + "': classification uses cross_entropy");
    } else {
        if (spec.loss != AuxLoss::huber)
            throw ConfigError("aux task '" + spec.task_id + "': regression uses huber");
        if (spec.huber_delta <= 0.0)
            throw ConfigError("aux task '" + spec.task_id + "': huber_delta must be positive");
    }
    if (!(spec.beta >= 0.0) || !std::isfinite(spec.beta))
        throw ConfigError("aux task '" + spec.task_id + "': beta must be finite and >= 0");
}

std::size_t Segment::layer_offset(int l) const {
    std::size_t off = offset;
    for (int i = 0; i < l; ++i) off += layers[i].size();
    return off;
}

const Segment& ParamSet::segment(const std::string& name) const {
    for (const auto& s : layout)
        if (s.name == name) return s;
    throw ConfigError("no parameter segment named '" + name + "'");
}

bool ParamSet::has_segment(const std::string& name) const {
    for (const auto& s : layout)
        if (s.name == name) return true;
    return false;
}

std::span<const double> ParamSet::segment_values(const std::string& name) const {
    const Segment& s = segment(name);
    return {values.data() + s.offset, s.size};
}

namespace {

std::vector<LayerShape> chain(int in, const std::vector<int>& widths, int out) {
    std::vector<LayerShape> layers;
    int cur = in;
    for (int w : widths) {
        layers.push_back({w, cur});
        cur = w;
    }
    layers.push_back({out, cur});
    return layers;
}

} // namespace

std::vector<Segment> build_layout(const ModelConfig& cfg, const std::vector<AuxTaskSpec>& aux) {
    validate_model(cfg);
    for (const auto& a : aux) validate_aux(a);
    for (std::size_t i = 0; i < aux.size(); ++i)
        for (std::size_t j = i + 1; j < aux.size(); ++j)
            if (aux[i].task_id == aux[j].task_id)
                throw ConfigError("duplicate aux task id '" + aux[i].task_id + "'");

    std::vector<Segment> layout;
    Segment base;
    base.name = "theta_base";
    {
        int cur = cfg.input_dim;
        for (int w : cfg.extractor_widths) {
            base.layers.push_back({w, cur});
            cur = w;
        }
    }
    layout.push_back(base);

    Segment main;
    main.name = "phi_main";
    main.layers = chain(cfg.feature_dim(), cfg.head_widths, cfg.num_primary_classes);
    layout.push_back(main);

    for (const auto& a : aux) {
        Segment s;
        s.name = aux_segment_name(a.task_id);
        s.layers = chain(cfg.feature_dim(), cfg.head_widths, a.output_dim());
        layout.push_back(s);
    }

    std::size_t off = 0;
    for (auto& s : layout) {
        s.offset = off;
        s.size = 0;
        for (const auto& l : s.layers) s.size += l.size();
        off += s.size;
    }
    return layout;
}

ParamSet init_params(const ModelConfig& cfg, const std::vector<AuxTaskSpec>& aux,
                     std::uint64_t seed) {
    ParamSet p;
    p.layout = build_layout(cfg, aux);
    p.seed = seed;
    std::size_t total = 0;
    for (const auto& s : p.layout) total += s.size;
    p.values.assign(total, 0.0);
    for (const auto& s : p.layout) {
        for (std::size_t l = 0; l < s.layers.size(); ++l) {
            const LayerShape& shape = s.layers[l];
            Rng rng(seed_of(seed, "init", s.name, std::uint64_t(l)));
            double bound = std::sqrt(6.0 / double(shape.in));
            std::size_t w = s.layer_offset(int(l));
            for (int i = 0; i < shape.out * shape.in; ++i)
                p.values[w + std::size_t(i)] = (2.0 * rng.uniform() - 1.0) * bound;
            // biases stay zero
        }
    }
    return p;
}

std::vector<double> forward(const ParamSet& params, const ModelConfig& cfg,
                            std::span<const double> x, const HeadSel& head,
                            const ForwardMode& mode) {
    if (int(x.size()) != cfg.input_dim) throw DataError("forward: input size mismatch");
    if (!params.has_segment(head.segment_name))
        throw ConfigError("forward: unknown head '" + head.segment_name + "'");

    auto run_layer = [&](const Segment& seg, int l, const std::vector<double>& in,
                         std::vector<double>& out) {
        const LayerShape& shape = seg.layers[l];
        std::size_t w = seg.layer_offset(l);
        std::size_t b = w + std::size_t(shape.out) * shape.in;
        out.assign(std::size_t(shape.out), 0.0);
        for (int o = 0; o < shape.out; ++o) {
            double acc = params.values[b + std::size_t(o)];
            const double* wr = params.values.data() + w + std::size_t(o) * shape.in;
            for (int i = 0; i < shape.in; ++i) acc += wr[i] * in[std::size_t(i)];
            out[std::size_t(o)] = acc;
        }
    };

    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    const Segment& base = params.segment("theta_base");
    for (std::size_t l = 0; l < base.layers.size(); ++l) {
        run_layer(base, int(l), cur, next);
        for (double& v : next) v = std::max(0.0, v);
        cur.swap(next);
    }

    if (mode.train && cfg.dropout_rate > 0.0) {
        std::vector<double> mask = dropout_mask(int(cur.size()), cfg.dropout_rate, mode.dropout_seed);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] *= mask[i];
    }

    const Segment& h = params.segment(head.segment_name);
    for (std::size_t l = 0; l < h.layers.size(); ++l) {
        run_layer(h, int(l), cur, next);
        if (l + 1 < h.layers.size())
            for (double& v : next) v = std::max(0.0, v);
        cur.swap(next);
    }
    return cur;
}

} // namespace shiftadapt
