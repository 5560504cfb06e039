#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "shiftadapt/dataset.hpp"
#include "shiftadapt/tape.hpp"

namespace shiftadapt {

// Adam first/second moment buffers. beta1/beta2/eps are part of the state
// so a run's dynamics are fully captured by (state, config).
struct OptimState {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimState make_optim_state(std::size_t n_params);

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    int batch_size = 6;
    int epochs = 60;
    int cycles = 3;          // cosine annealing warm restarts
    double lr_min = 1e-6;
    std::uint64_t seed = 0;
    double aug_noise_sd = 0.0; // additive feature noise at train time; 0 = off
};

void validate_train(const TrainConfig& cfg);

// Cosine annealing with warm restarts. Cycle length L = ceil(epochs/cycles);
// within a cycle, lr(e) = lr_min + 0.5*(lr - lr_min)*(1 + cos(pi * p)) with
// p = (e mod L)/L. Restarts at every cycle boundary; the last cycle may be
// truncated when epochs is not divisible by cycles.
double cyclic_cosine_lr(const TrainConfig& cfg, int epoch);

// One bias-corrected Adam update in place. Entries with zero gradient and
// zero prior moments are bitwise unchanged. Throws NumericError on
// non-finite gradient entries.
void adam_step(ParamSet& params, std::span<const double> grad, OptimState& state, double lr);

// Maps a mini-batch (row indices into the training set) to the scalar loss
// node on the given tape. The builder captures the dataset and any anchors.
using ObjectiveBuilder = std::function<Tape::NodeId(Tape&, std::span<const int> batch, int epoch)>;

// One epoch of mini-batch training: a Fisher-Yates shuffle keyed on
// (config.seed, epoch) fixes the batch order, every batch is one tape
// build + backward + adam_step at this epoch's annealed lr. Returns the
// mean per-batch loss. Only `segments` entries of params can change.
double train_epoch(ParamSet& params, const Dataset& data, const ObjectiveBuilder& objective,
                   const SegmentSet& segments, const TrainConfig& cfg, OptimState& state,
                   int epoch);

// Full run: fresh OptimState, epochs * train_epoch. Returns the final
// epoch's mean loss.
double train_run(ParamSet& params, const Dataset& data, const ObjectiveBuilder& objective,
                 const SegmentSet& segments, const TrainConfig& cfg);

} // namespace shiftadapt
