#include "shiftadapt/optimize.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "shiftadapt/rng.hpp"

namespace shiftadapt {

OptimState make_optim_state(std::size_t n_params) {
    OptimState st;
    st.m.assign(n_params, 0.0);
    st.v.assign(n_params, 0.0);
    return st;
}

void validate_train(const TrainConfig& cfg) {
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("train: bad lr");
    if (!(cfg.lr_min >= 0.0) || cfg.lr_min > cfg.lr)
        throw ConfigError("train: lr_min must be in [0, lr]");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (cfg.batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (cfg.epochs <= 0) throw ConfigError("train: epochs must be positive");
    if (cfg.cycles <= 0) throw ConfigError("train: cycles must be positive");
    if (!(cfg.aug_noise_sd >= 0.0)) throw ConfigError("train: aug_noise_sd must be >= 0");
}

double cyclic_cosine_lr(const TrainConfig& cfg, int epoch) {
    validate_train(cfg);
    if (epoch < 0 || epoch >= cfg.epochs) throw ConfigError("cyclic_cosine_lr: epoch out of range");
    int len = (cfg.epochs + cfg.cycles - 1) / cfg.cycles;
    double p = double(epoch % len) / double(len);
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * p));
}

void adam_step(ParamSet& params, std::span<const double> grad, OptimState& state, double lr) {
    if (grad.size() != params.values.size() || grad.size() != state.m.size())
        throw DataError("adam_step: size mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient entry");
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        double g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params.values[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

double train_epoch(ParamSet& params, const Dataset& data, const ObjectiveBuilder& objective,
                   const SegmentSet& segments, const TrainConfig& cfg, OptimState& state,
                   int epoch) {
    validate_train(cfg);
    if (data.size() <= 0) throw DataError("train_epoch: empty dataset");

    std::vector<int> order(std::size_t(data.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_of(cfg.seed, "shuffle", std::uint64_t(epoch)));
    shuffle(order, rng);

    double lr = cyclic_cosine_lr(cfg, epoch);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
        std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
        std::span<const int> batch(order.data() + start, end - start);
        Tape tape(params, segments);
        Tape::NodeId loss = objective(tape, batch, epoch);
        double lv = tape.value(loss);
        if (!std::isfinite(lv))
            throw NumericError("train_epoch: non-finite loss in batch " + std::to_string(batches) +
                               " of epoch " + std::to_string(epoch));
        std::vector<double> g = tape.grad(loss);
        adam_step(params, g, state, lr);
        total += lv;
        ++batches;
    }
    return total / double(batches);
}

double train_run(ParamSet& params, const Dataset& data, const ObjectiveBuilder& objective,
                 const SegmentSet& segments, const TrainConfig& cfg) {
    OptimState state = make_optim_state(params.values.size());
    double last = 0.0;
    for (int e = 0; e < cfg.epochs; ++e)
        last = train_epoch(params, data, objective, segments, cfg, state, e);
    return last;
}

} // namespace shiftadapt
