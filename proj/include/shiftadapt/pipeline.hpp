#pragma once

#include <map>
#include <utility>

#include "shiftadapt/optimize.hpp"

namespace shiftadapt {

// Proximal fine-tuning knobs. alpha weights the pull toward the anchor
// weights, lambda_wd the plain weight decay term (used by subgroup
// fine-tuning only; the feature/head adaptation phases have no decay term).
struct AdaptConfig {
    double alpha = 0.5;        // 0.01 is the usual within-study value
    double lambda_wd = 0.1;
    SegmentSet penalized_segments;
    SegmentSet frozen_segments;
};

// alpha/lambda_wd >= 0 and penalized/frozen sets disjoint.
void validate_adapt(const AdaptConfig& cfg);

using Provenance = std::map<std::string, std::string>;

// Everything produced along one source->target adaptation: the multi-task
// pretrained weights, the feature-adapted weights (head untouched), and the
// weights after the head refit.
struct PipelineArtifacts {
    ParamSet pretrained;
    ParamSet adapted;
    ParamSet refit;
    ModelConfig model;
    std::vector<AuxTaskSpec> aux;
    Provenance provenance;
};

// Plain supervised training of the primary task: mean batch cross entropy
// plus (wd/2)*||theta||^2 over every segment in the layout. When init_from
// is null a fresh aux-free ParamSet is initialized from the train seed;
// otherwise training continues from the given weights (whatever segments
// they carry).
ParamSet erm_train(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                   double wd, const ParamSet* init_from = nullptr);

// Multi-task pretraining over extractor, primary head and every aux head:
// mean CE + (1/|A|) * sum_a beta_a * mean aux-loss_a + weight decay, the
// aux-task-count normalization applied exactly as stated. aux must be
// non-empty and every task column present in `source`.
ParamSet pretrain(const Dataset& source, const ModelConfig& model,
                  const std::vector<AuxTaskSpec>& aux, const TrainConfig& train);

// Proximal subgroup fine-tuning: subgroup CE
// + (alpha/2)*||theta - anchor||^2 + (lambda_wd/2)*||theta||^2, all
// segments trainable and penalized. alpha = 0 reduces to erm_train
// continued from the anchor with wd = lambda_wd, bitwise.
ParamSet finetune_subgroup(const ParamSet& anchor, const Dataset& subgroup,
                           const ModelConfig& model, const AdaptConfig& adapt,
                           const TrainConfig& train);

// Feature adaptation on the target's aux columns only:
// (1/|A|) * sum_a mean aux-loss_a + (alpha/2)*||theta_base - anchor||^2.
// Trains theta_base (penalized) and the aux heads (unpenalized); phi_main
// is untouched bitwise and the target primary column is never read (it may
// be absent).
ParamSet adapt_features(const ParamSet& anchor, const Dataset& target,
                        const ModelConfig& model, const std::vector<AuxTaskSpec>& aux,
                        const AdaptConfig& adapt, const TrainConfig& train);

// Head refit on source data over the adapted features: mean CE
// + (alpha/2)*||phi_main - anchor phi_main||^2. Only phi_main trains;
// theta_base and the aux heads stay bitwise frozen.
ParamSet adapt_primary(const ParamSet& adapted, const Dataset& source,
                       const ModelConfig& model, const AdaptConfig& adapt,
                       const TrainConfig& train);

// Argmax of the softmax over primary logits; ties resolve to the lowest
// class index. Returns (class, probabilities).
std::pair<int, std::vector<double>> infer(const ParamSet& params, const ModelConfig& model,
                                          std::span<const double> x);

// Fraction of rows whose inferred class equals the primary label.
double evaluate(const ParamSet& params, const ModelConfig& model, const Dataset& data);

// Mean aux-task loss in eval mode; diagnostic for the adaptation phases.
double aux_loss_mean(const ParamSet& params, const ModelConfig& model,
                     const AuxTaskSpec& task, const Dataset& data);

} // namespace shiftadapt
