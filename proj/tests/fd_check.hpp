#pragma once

// Finite-difference gradient checking shared by the tape unit tests and
// the acceptance run. Each check builds a randomized little model plus a
// composite objective (cross entropy, aux heads, proximal pull, weight
// decay, dropout) and compares the tape gradient against central
// differences entry by entry.
//
// ReLU and Huber introduce kinks; a draw can land a pre-activation within
// h of one, where the central difference straddles two linear pieces. A
// failing entry is therefore retried with smaller h, which shrinks the
// straddle interval; a genuinely wrong gradient keeps failing at every h.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shiftadapt/model.hpp"
#include "shiftadapt/rng.hpp"
#include "shiftadapt/tape.hpp"

namespace fdcheck {

struct CheckSetup {
    shiftadapt::ModelConfig model;
    std::vector<shiftadapt::AuxTaskSpec> aux;
    shiftadapt::ParamSet params;
    shiftadapt::ParamSet anchor;
    shiftadapt::SegmentSet trainable;
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;
    std::vector<double> aux_targets;
    double alpha = 0.0;
    double lambda = 0.0;
    std::uint64_t drop_seed = 0;
};

inline CheckSetup random_setup(std::uint64_t seed) {
    using namespace shiftadapt;
    Rng r(seed_of(seed, "fdcheck"));

    CheckSetup s;
    s.model.input_dim = 2 + int(r.below(4));
    int depth = int(r.below(3));
    for (int l = 0; l < depth; ++l) s.model.extractor_widths.push_back(2 + int(r.below(3)));
    s.model.head_widths.clear();
    int hdepth = int(r.below(3));
    for (int l = 0; l < hdepth; ++l) s.model.head_widths.push_back(2 + int(r.below(2)));
    s.model.num_primary_classes = 2 + int(r.below(2));
    s.model.dropout_rate = (r.below(2) == 0) ? 0.0 : 0.3;

    int n_aux = int(r.below(3));
    for (int a = 0; a < n_aux; ++a) {
        AuxTaskSpec t;
        t.task_id = "t" + std::to_string(a);
        if (r.below(2) == 0) {
            t.kind = AuxKind::classification;
            t.classes = 2;
            t.loss = AuxLoss::cross_entropy;
        } else {
            t.kind = AuxKind::regression;
            t.loss = AuxLoss::huber;
            t.huber_delta = 0.5 + r.uniform();
        }
        s.aux.push_back(t);
    }

    s.params = init_params(s.model, s.aux, seed_of(seed, "w"));
    for (double& v : s.params.values) v += 0.5 * r.normal();
    s.anchor = s.params;
    for (double& v : s.anchor.values) v += 0.3 * r.normal();

    // random subset of segments trains; fall back to phi_main, which always
    // has at least its final affine (theta_base can be an empty extractor)
    for (const auto& seg : s.params.layout)
        if (r.below(2) == 0 && seg.size > 0) s.trainable.push_back(seg.name);
    if (s.trainable.empty()) s.trainable.push_back("phi_main");

    int rows = 2 + int(r.below(2));
    for (int i = 0; i < rows; ++i) {
        std::vector<double> x(std::size_t(s.model.input_dim));
        for (double& v : x) v = r.normal();
        s.inputs.push_back(x);
        s.labels.push_back(int(r.below(std::uint64_t(s.model.num_primary_classes))));
        s.aux_targets.push_back(r.normal());
    }
    s.alpha = (r.below(2) == 0) ? 0.0 : 0.7;
    s.lambda = 0.3;
    s.drop_seed = seed_of(seed, "mask");
    return s;
}

inline shiftadapt::Tape::NodeId build_objective(shiftadapt::Tape& tape, const CheckSetup& s) {
    using namespace shiftadapt;
    std::vector<Tape::NodeId> terms;
    std::vector<double> coeffs;
    for (std::size_t i = 0; i < s.inputs.size(); ++i) {
        Tape::NodeId x = tape.input(s.inputs[i]);
        Tape::NodeId cur = x;
        const Segment& base = s.params.segment("theta_base");
        for (std::size_t l = 0; l < base.layers.size(); ++l)
            cur = tape.relu(tape.affine("theta_base", int(l), cur));
        Tape::NodeId feat = cur;

        auto head = [&](const std::string& seg_name, std::uint64_t dseed) {
            Tape::NodeId h = feat;
            if (s.model.dropout_rate > 0.0) h = tape.dropout(h, s.model.dropout_rate, dseed);
            const Segment& seg = s.params.segment(seg_name);
            for (std::size_t l = 0; l < seg.layers.size(); ++l) {
                h = tape.affine(seg_name, int(l), h);
                if (l + 1 < seg.layers.size()) h = tape.relu(h);
            }
            return h;
        };

        terms.push_back(tape.cross_entropy_loss(
            head("phi_main", seed_of(s.drop_seed, "m", std::uint64_t(i))), s.labels[i]));
        coeffs.push_back(1.0 / double(s.inputs.size()));

        for (const auto& t : s.aux) {
            Tape::NodeId out =
                head(aux_segment_name(t.task_id), seed_of(s.drop_seed, t.task_id, std::uint64_t(i)));
            if (t.kind == AuxKind::classification)
                terms.push_back(tape.cross_entropy_loss(out, s.labels[i] % t.classes));
            else
                terms.push_back(tape.huber_loss(out, s.aux_targets[i], t.huber_delta));
            coeffs.push_back(t.beta / double(s.inputs.size()));
        }
    }
    terms.push_back(tape.proximal(s.trainable, s.anchor, s.alpha));
    coeffs.push_back(1.0);
    terms.push_back(tape.weight_decay_term(s.trainable, s.lambda));
    coeffs.push_back(1.0);
    return tape.weighted_sum(terms, coeffs);
}

inline double objective_value(CheckSetup& s) {
    shiftadapt::Tape tape(s.params, s.trainable);
    return tape.value(build_objective(tape, s));
}

// Returns the number of gradient entries that disagree with central
// differences beyond (rel_tol with abs_floor) after retries, and reports
// via *checked how many entries were compared.
inline int check_gradients(std::uint64_t seed, double rel_tol, double abs_floor,
                           int* checked = nullptr) {
    using namespace shiftadapt;
    CheckSetup s = random_setup(seed);

    std::vector<double> grad;
    {
        Tape tape(s.params, s.trainable);
        grad = tape.grad(build_objective(tape, s));
    }

    int bad = 0;
    int count = 0;
    for (const auto& seg : s.params.layout) {
        bool train = false;
        for (const auto& name : s.trainable) train = train || name == seg.name;
        for (std::size_t k = seg.offset; k < seg.offset + seg.size; ++k) {
            if (!train) {
                if (grad[k] != 0.0) ++bad;
                continue;
            }
            ++count;
            bool ok = false;
            for (double h : {1e-5, 1e-6, 3e-7}) {
                double keep = s.params.values[k];
                s.params.values[k] = keep + h;
                double fp = objective_value(s);
                s.params.values[k] = keep - h;
                double fm = objective_value(s);
                s.params.values[k] = keep;
                double fd = (fp - fm) / (2.0 * h);
                double denom = std::max({std::abs(grad[k]), std::abs(fd), abs_floor});
                if (std::abs(grad[k] - fd) / denom <= rel_tol) {
                    ok = true;
                    break;
                }
            }
            if (!ok) ++bad;
        }
    }
    if (checked) *checked = count;
    return bad;
}

} // namespace fdcheck
