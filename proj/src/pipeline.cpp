#include "shiftadapt/pipeline.hpp"

#include <cmath>

#include "shiftadapt/losses.hpp"
#include "shiftadapt/rng.hpp"

namespace shiftadapt {

void validate_adapt(const AdaptConfig& cfg) {
    if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha))
        throw ConfigError("adapt: alpha must be finite and >= 0");
    if (!(cfg.lambda_wd >= 0.0) || !std::isfinite(cfg.lambda_wd))
        throw ConfigError("adapt: lambda_wd must be finite and >= 0");
    for (const auto& p : cfg.penalized_segments)
        if (contains(cfg.frozen_segments, p))
            throw ConfigError("adapt: segment '" + p + "' both penalized and frozen");
}

namespace {

SegmentSet all_segments(const ParamSet& p) {
    SegmentSet s;
    for (const auto& seg : p.layout) s.push_back(seg.name);
    return s;
}

// Row features as a fresh vector, with train-time additive noise when
// configured.
std::vector<double> sample_input(const Dataset& data, int row, const TrainConfig& cfg,
                                 int epoch) {
    auto r = data.features.row(row);
    std::vector<double> x(r.begin(), r.end());
    if (cfg.aug_noise_sd > 0.0) {
        Rng rng(seed_of(cfg.seed, "aug", std::uint64_t(epoch), std::uint64_t(row)));
        for (double& v : x) v += cfg.aug_noise_sd * rng.normal();
    }
    return x;
}

// Keyed on the segment name (not its position) so the primary head draws
// the same masks whether or not aux heads exist in the layout.
std::uint64_t drop_seed(const TrainConfig& cfg, int epoch, int row, const std::string& segment) {
    return seed_of(cfg.seed, "drop", std::uint64_t(epoch), std::uint64_t(row), segment);
}

Tape::NodeId extractor_out(Tape& tape, const ParamSet& params, Tape::NodeId x) {
    const Segment& base = params.segment("theta_base");
    Tape::NodeId cur = x;
    for (std::size_t l = 0; l < base.layers.size(); ++l)
        cur = tape.relu(tape.affine("theta_base", int(l), cur));
    return cur;
}

Tape::NodeId head_out(Tape& tape, const ParamSet& params, const ModelConfig& model,
                      Tape::NodeId feat, const std::string& head_segment, std::uint64_t dseed) {
    Tape::NodeId cur = feat;
    if (model.dropout_rate > 0.0) cur = tape.dropout(cur, model.dropout_rate, dseed);
    const Segment& head = params.segment(head_segment);
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        cur = tape.affine(head_segment, int(l), cur);
        if (l + 1 < head.layers.size()) cur = tape.relu(cur);
    }
    return cur;
}

int aux_class_label(const AuxTaskSpec& task, double v) {
    int label = int(std::lround(v));
    if (std::abs(v - double(label)) > 1e-9 || label < 0 || label >= task.classes)
        throw DataError("aux task '" + task.task_id + "': label " + std::to_string(v) +
                        " is not a class index");
    return label;
}

void require_aux_columns(const Dataset& d, const std::vector<AuxTaskSpec>& aux) {
    for (const auto& task : aux) {
        auto it = d.aux.find(task.task_id);
        if (it == d.aux.end())
            throw DataError("dataset '" + d.site_id + "': missing aux column '" + task.task_id +
                            "'");
        if (task.kind == AuxKind::classification)
            for (double v : it->second) aux_class_label(task, v);
    }
}

Tape::NodeId aux_term(Tape& tape, const ParamSet& params, const ModelConfig& model,
                      const AuxTaskSpec& task, const Dataset& data, int row, Tape::NodeId feat,
                      const TrainConfig& cfg, int epoch) {
    const std::string seg = aux_segment_name(task.task_id);
    Tape::NodeId out = head_out(tape, params, model, feat, seg, drop_seed(cfg, epoch, row, seg));
    double v = data.aux.at(task.task_id)[std::size_t(row)];
    if (task.kind == AuxKind::classification)
        return tape.cross_entropy_loss(out, aux_class_label(task, v));
    return tape.huber_loss(out, v, task.huber_delta);
}

} // namespace

ParamSet erm_train(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                   double wd, const ParamSet* init_from) {
    validate_model(model);
    validate_train(train);
    validate_dataset(data, model.num_primary_classes);
    if (!data.has_primary()) throw DataError("erm_train: dataset has no primary labels");
    if (!(wd >= 0.0)) throw ConfigError("erm_train: wd must be >= 0");

    ParamSet params =
        init_from ? *init_from : init_params(model, {}, seed_of(train.seed, "init"));
    const SegmentSet segments = all_segments(params);

    ObjectiveBuilder objective = [&](Tape& tape, std::span<const int> batch,
                                     int epoch) -> Tape::NodeId {
        std::vector<Tape::NodeId> terms;
        std::vector<double> coeffs;
        const double inv = 1.0 / double(batch.size());
        for (int row : batch) {
            Tape::NodeId x = tape.input(sample_input(data, row, train, epoch));
            Tape::NodeId feat = extractor_out(tape, params, x);
            Tape::NodeId logits = head_out(tape, params, model, feat, "phi_main",
                                           drop_seed(train, epoch, row, "phi_main"));
            terms.push_back(tape.cross_entropy_loss(logits, data.primary[std::size_t(row)]));
            coeffs.push_back(inv);
        }
        terms.push_back(tape.weight_decay_term(segments, wd));
        coeffs.push_back(1.0);
        return tape.weighted_sum(terms, coeffs);
    };
    train_run(params, data, objective, segments, train);
    return params;
}

ParamSet pretrain(const Dataset& source, const ModelConfig& model,
                  const std::vector<AuxTaskSpec>& aux, const TrainConfig& train) {
    validate_model(model);
    validate_train(train);
    if (aux.empty()) throw ConfigError("pretrain: aux task list must not be empty");
    validate_dataset(source, model.num_primary_classes);
    if (!source.has_primary()) throw DataError("pretrain: source has no primary labels");
    require_aux_columns(source, aux);

    ParamSet params = init_params(model, aux, seed_of(train.seed, "init"));
    const SegmentSet segments = all_segments(params);
    const double inv_tasks = 1.0 / double(aux.size());

    ObjectiveBuilder objective = [&](Tape& tape, std::span<const int> batch,
                                     int epoch) -> Tape::NodeId {
        std::vector<Tape::NodeId> terms;
        std::vector<double> coeffs;
        const double inv = 1.0 / double(batch.size());
        for (int row : batch) {
            Tape::NodeId x = tape.input(sample_input(source, row, train, epoch));
            Tape::NodeId feat = extractor_out(tape, params, x);
            Tape::NodeId logits = head_out(tape, params, model, feat, "phi_main",
                                           drop_seed(train, epoch, row, "phi_main"));
            terms.push_back(tape.cross_entropy_loss(logits, source.primary[std::size_t(row)]));
            coeffs.push_back(inv);
            for (const auto& task : aux) {
                terms.push_back(aux_term(tape, params, model, task, source, row, feat, train, epoch));
                coeffs.push_back(task.beta * inv_tasks * inv);
            }
        }
        terms.push_back(tape.weight_decay_term(segments, train.weight_decay));
        coeffs.push_back(1.0);
        return tape.weighted_sum(terms, coeffs);
    };
    train_run(params, source, objective, segments, train);
    return params;
}

ParamSet finetune_subgroup(const ParamSet& anchor, const Dataset& subgroup,
                           const ModelConfig& model, const AdaptConfig& adapt,
                           const TrainConfig& train) {
    validate_model(model);
    validate_train(train);
    validate_adapt(adapt);
    validate_dataset(subgroup, model.num_primary_classes);
    if (!subgroup.has_primary()) throw DataError("finetune_subgroup: no primary labels");

    ParamSet params = anchor;
    const SegmentSet segments = all_segments(params);

    ObjectiveBuilder objective = [&](Tape& tape, std::span<const int> batch,
                                     int epoch) -> Tape::NodeId {
        std::vector<Tape::NodeId> terms;
        std::vector<double> coeffs;
        const double inv = 1.0 / double(batch.size());
        for (int row : batch) {
            Tape::NodeId x = tape.input(sample_input(subgroup, row, train, epoch));
            Tape::NodeId feat = extractor_out(tape, params, x);
            Tape::NodeId logits = head_out(tape, params, model, feat, "phi_main",
                                           drop_seed(train, epoch, row, "phi_main"));
            terms.push_back(tape.cross_entropy_loss(logits, subgroup.primary[std::size_t(row)]));
            coeffs.push_back(inv);
        }
        terms.push_back(tape.proximal(segments, anchor, adapt.alpha));
        coeffs.push_back(1.0);
        terms.push_back(tape.weight_decay_term(segments, adapt.lambda_wd));
        coeffs.push_back(1.0);
        return tape.weighted_sum(terms, coeffs);
    };
    train_run(params, subgroup, objective, segments, train);
    return params;
}

ParamSet adapt_features(const ParamSet& anchor, const Dataset& target,
                        const ModelConfig& model, const std::vector<AuxTaskSpec>& aux,
                        const AdaptConfig& adapt, const TrainConfig& train) {
    validate_model(model);
    validate_train(train);
    validate_adapt(adapt);
    if (aux.empty()) throw ConfigError("adapt_features: aux task list must not be empty");
    require_aux_columns(target, aux);
    if (target.size() <= 0) throw DataError("adapt_features: empty target");

    ParamSet params = anchor;
    SegmentSet segments{"theta_base"};
    for (const auto& task : aux) {
        const std::string seg = aux_segment_name(task.task_id);
        if (!params.has_segment(seg))
            throw ConfigError("adapt_features: anchor has no segment '" + seg + "'");
        segments.push_back(seg);
    }
    const SegmentSet penalized{"theta_base"};
    const double inv_tasks = 1.0 / double(aux.size());

    ObjectiveBuilder objective = [&](Tape& tape, std::span<const int> batch,
                                     int epoch) -> Tape::NodeId {
        std::vector<Tape::NodeId> terms;
        std::vector<double> coeffs;
        const double inv = 1.0 / double(batch.size());
        for (int row : batch) {
            Tape::NodeId x = tape.input(sample_input(target, row, train, epoch));
            Tape::NodeId feat = extractor_out(tape, params, x);
            for (const auto& task : aux) {
                terms.push_back(aux_term(tape, params, model, task, target, row, feat, train, epoch));
                coeffs.push_back(inv_tasks * inv);
            }
        }
        terms.push_back(tape.proximal(penalized, anchor, adapt.alpha));
        coeffs.push_back(1.0);
        return tape.weighted_sum(terms, coeffs);
    };
    train_run(params, target, objective, segments, train);
    return params;
}

ParamSet adapt_primary(const ParamSet& adapted, const Dataset& source,
                       const ModelConfig& model, const AdaptConfig& adapt,
                       const TrainConfig& train) {
    validate_model(model);
    validate_train(train);
    validate_adapt(adapt);
    validate_dataset(source, model.num_primary_classes);
    if (!source.has_primary()) throw DataError("adapt_primary: source has no primary labels");

    ParamSet params = adapted;
    const SegmentSet segments{"phi_main"};

    ObjectiveBuilder objective = [&](Tape& tape, std::span<const int> batch,
                                     int epoch) -> Tape::NodeId {
        std::vector<Tape::NodeId> terms;
        std::vector<double> coeffs;
        const double inv = 1.0 / double(batch.size());
        for (int row : batch) {
            Tape::NodeId x = tape.input(sample_input(source, row, train, epoch));
            Tape::NodeId feat = extractor_out(tape, params, x);
            Tape::NodeId logits = head_out(tape, params, model, feat, "phi_main",
                                           drop_seed(train, epoch, row, "phi_main"));
            terms.push_back(tape.cross_entropy_loss(logits, source.primary[std::size_t(row)]));
            coeffs.push_back(inv);
        }
        terms.push_back(tape.proximal(segments, adapted, adapt.alpha));
        coeffs.push_back(1.0);
        return tape.weighted_sum(terms, coeffs);
    };
    train_run(params, source, objective, segments, train);
    return params;
}

std::pair<int, std::vector<double>> infer(const ParamSet& params, const ModelConfig& model,
                                          std::span<const double> x) {
    std::vector<double> logits = forward(params, model, x, HeadSel::primary(), ForwardMode::eval());
    std::vector<double> probs = softmax(logits);
    int best = 0;
    for (int i = 1; i < int(logits.size()); ++i)
        if (logits[std::size_t(i)] > logits[std::size_t(best)]) best = i;
    return {best, probs};
}

double evaluate(const ParamSet& params, const ModelConfig& model, const Dataset& data) {
    if (!data.has_primary()) throw DataError("evaluate: dataset has no primary labels");
    if (data.size() <= 0) throw DataError("evaluate: empty dataset");
    int correct = 0;
    for (int i = 0; i < data.size(); ++i) {
        auto [cls, probs] = infer(params, model, data.features.row(i));
        if (cls == data.primary[std::size_t(i)]) ++correct;
    }
    return double(correct) / double(data.size());
}

double aux_loss_mean(const ParamSet& params, const ModelConfig& model,
                     const AuxTaskSpec& task, const Dataset& data) {
    require_aux_columns(data, {task});
    if (data.size() <= 0) throw DataError("aux_loss_mean: empty dataset");
    const auto& col = data.aux.at(task.task_id);
    double total = 0.0;
    for (int i = 0; i < data.size(); ++i) {
        std::vector<double> out = forward(params, model, data.features.row(i),
                                          HeadSel::aux(task.task_id), ForwardMode::eval());
        if (task.kind == AuxKind::classification)
            total += cross_entropy(out, aux_class_label(task, col[std::size_t(i)]));
        else
            total += huber(out[0], col[std::size_t(i)], task.huber_delta);
    }
    return total / double(data.size());
}

} // namespace shiftadapt
