#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftadapt/common.hpp"

namespace shiftadapt {

enum class Activation { relu };

// Architecture of the shared extractor and of every prediction head.
// Heads are: seeded dropout on the head input, then one affine+ReLU layer
// per entry of head_widths, then a final affine layer to the output size.
// Empty width lists are allowed (identity extractor / single-layer head).
struct ModelConfig {
    int input_dim = 0;
    std::vector<int> extractor_widths;
    std::vector<int> head_widths{64, 16};
    double dropout_rate = 0.5;
    int num_primary_classes = 2;
    Activation activation = Activation::relu;

    int feature_dim() const {
        return extractor_widths.empty() ? input_dim : extractor_widths.back();
    }
};

enum class AuxKind { classification, regression };
enum class AuxLoss { cross_entropy, huber };

struct AuxTaskSpec {
    std::string task_id;
    AuxKind kind = AuxKind::classification;
    int classes = 2;               // classification only
    AuxLoss loss = AuxLoss::cross_entropy;
    double huber_delta = 1.0;      // regression only
    double beta = 1.0;             // pretraining weight

    int output_dim() const { return kind == AuxKind::classification ? classes : 1; }
};

// Throws ConfigError on non-positive widths/dims, dropout outside [0,1),
// fewer than 2 classes, or an aux spec whose loss does not match its kind.
void validate_model(const ModelConfig& cfg);
void validate_aux(const AuxTaskSpec& spec);

struct LayerShape {
    int out = 0;
    int in = 0;
    std::size_t size() const { return std::size_t(out) * in + out; }
};

// One named parameter segment: "theta_base", "phi_main" or "phi_aux:<id>".
struct Segment {
    std::string name;
    std::vector<LayerShape> layers;
    std::size_t offset = 0; // into ParamSet::values
    std::size_t size = 0;

    // Offset of layer l's weight block (bias follows the out*in weights).
    std::size_t layer_offset(int l) const;
};

// Flat parameter vector plus the segment layout that indexes into it.
struct ParamSet {
    std::vector<double> values;
    std::vector<Segment> layout;
    std::uint64_t seed = 0;

    const Segment& segment(const std::string& name) const;
    bool has_segment(const std::string& name) const;
    std::span<const double> segment_values(const std::string& name) const;
};

inline std::string aux_segment_name(const std::string& task_id) { return "phi_aux:" + task_id; }

// Builds the segment layout for (config, aux tasks): theta_base, phi_main,
// then one phi_aux:<id> per task in the given order.
std::vector<Segment> build_layout(const ModelConfig& cfg, const std::vector<AuxTaskSpec>& aux);

// Seeded init: weights ~ U(-b, b) with b = sqrt(6 / fan_in), biases zero.
// Each (segment, layer) uses its own derived stream, so adding aux heads
// never changes how theta_base or phi_main come up.
ParamSet init_params(const ModelConfig& cfg, const std::vector<AuxTaskSpec>& aux,
                     std::uint64_t seed);

// Selects which head forward() evaluates.
struct HeadSel {
    std::string segment_name; // "phi_main" or "phi_aux:<id>"
    static HeadSel primary() { return {"phi_main"}; }
    static HeadSel aux(const std::string& task_id) { return {aux_segment_name(task_id)}; }
};

// train mode applies dropout with the given per-call seed; eval mode is
// deterministic and dropout-free.
struct ForwardMode {
    bool train = false;
    std::uint64_t dropout_seed = 0;
    static ForwardMode eval() { return {false, 0}; }
    static ForwardMode train_with(std::uint64_t seed) { return {true, seed}; }
};

// Raw logits (or the scalar regression output); softmax lives in the loss.
std::vector<double> forward(const ParamSet& params, const ModelConfig& cfg,
                            std::span<const double> x, const HeadSel& head,
                            const ForwardMode& mode);

} // namespace shiftadapt
