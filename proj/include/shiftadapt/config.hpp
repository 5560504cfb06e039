#pragma once

#include <string>
#include <vector>

#include "shiftadapt/harness.hpp"

namespace shiftadapt {

// Everything the CLI runs from. Serialized as strict-schema JSON: unknown
// keys anywhere are a ConfigError.
struct AppConfig {
    std::uint64_t master_seed = 20260816;
    int folds = 5;
    int threads = 1;
    std::string experiment_id = "default";
    ModelConfig model;
    TrainConfig train;
    AdaptConfig adapt_inter;  // alpha 0.5
    AdaptConfig adapt_intra;  // alpha 0.01, lambda_wd 0.1
    std::vector<AuxTaskSpec> aux_tasks;
    std::vector<SiteConfig> sites;
    std::string intra_site;   // site_id carrying subgroups
    std::vector<double> sweep_alpha_grid{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> sweep_beta_grid; // empty = pick by the aux task's loss
};

// The stock experiment: three sites with shift magnitudes {0, 2, 4}
// (n=600, d=20), a subgrouped cohort for the within-study runs, and the
// sex/age aux tasks.
AppConfig default_config();

void validate_config(const AppConfig& cfg);

AppConfig load_config(const std::string& path);
std::string config_json(const AppConfig& cfg);

// Grid defaults: {0.1, 0.5, 1.0} for a cross-entropy aux task,
// {0.01, 0.05, 0.1} for a Huber one.
std::vector<double> default_beta_grid(const AuxTaskSpec& aux);

HarnessConfig harness_config(const AppConfig& cfg);

} // namespace shiftadapt
