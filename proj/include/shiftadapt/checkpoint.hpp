#pragma once

#include <map>
#include <string>

#include "shiftadapt/model.hpp"

namespace shiftadapt {

// Self-describing model snapshot: architecture, aux task specs, the segment
// layout table and the flat weights, plus free-form provenance strings
// (phase name, seeds, config hash). One file, little-endian float64
// weights, bitwise round-trip.
struct Checkpoint {
    ModelConfig model;
    std::vector<AuxTaskSpec> aux;
    ParamSet params;
    std::map<std::string, std::string> provenance;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace shiftadapt
