#pragma once

#include <optional>
#include <string>
#include <vector>

#include "shiftadapt/pipeline.hpp"
#include "shiftadapt/synthsites.hpp"

namespace shiftadapt {

struct Fold {
    std::vector<int> train;
    std::vector<int> val;
};

// Stratified k-fold: per-class index lists are shuffled with a seeded
// generator and dealt round-robin, so per-class counts across folds differ
// by at most one. Every class needs at least k members.
std::vector<Fold> kfold_split(const Dataset& d, int k, std::uint64_t seed);

// One accuracy measurement. beta/alpha are set on sweep rows, status is
// "skipped" (and accuracy empty) for subgroups too thin to cross-validate.
struct ReportRow {
    std::string method;
    std::string source;
    std::string target;
    std::string aux;
    int fold = 0;
    std::optional<double> accuracy;
    std::optional<double> beta;
    std::optional<double> alpha;
    std::string status = "ok";
};

struct Aggregate {
    std::string method;
    std::string source;
    std::string target;
    std::string aux;
    std::optional<double> beta;
    std::optional<double> alpha;
    int folds = 0;
    double mean = 0;
    double stddev = 0; // sample std, n-1
};

struct ExperimentReport {
    std::string experiment_id;
    std::vector<ReportRow> rows;
    std::vector<Aggregate> aggregates;
    std::string config_snapshot; // JSON text of the full config + seeds
};

// Mean and sample std per (method, source, target, aux, beta, alpha) over
// the ok rows, in first-appearance order. Deterministic and recomputable.
std::vector<Aggregate> compute_aggregates(const std::vector<ReportRow>& rows);

struct HarnessConfig {
    std::uint64_t master_seed = 1;
    int folds = 5;
    int threads = 1; // 0 = hardware concurrency
    ModelConfig model;
    TrainConfig train;
    AdaptConfig adapt_inter;
    AdaptConfig adapt_intra;
    std::string experiment_id = "experiment";
};

// Cross-study protocol for one source->target pair and one aux task.
// Methods: TarOnly (plain training on target folds), SrcOnly (plain
// training on source folds, tested on the full target), JointSup (the
// multi-task pretrain artifact tested directly on the target), TarAdapt
// (feature adaptation, original head), SrcReg (feature adaptation + head
// refit). Folds drive the source-side CV; every arm's training seed is
// hash(master_seed, arm, fold). Adaptation only ever sees a label-free
// view of the target: `adapt_view` defaults to strip_primary(target) and
// exists so tests can push a deliberately corrupted copy through the same
// path.
ExperimentReport run_inter(const Dataset& source, const Dataset& target,
                           const AuxTaskSpec& aux, const HarnessConfig& cfg,
                           const std::optional<Dataset>& adapt_view = std::nullopt);

// All shifted pairs (first site is the source) crossed with all aux tasks,
// sharing SrcOnly/pretrain artifacts across targets where the seeds agree.
ExperimentReport run_inter_experiment(const std::vector<Dataset>& sites,
                                      const std::vector<AuxTaskSpec>& aux_tasks,
                                      const HarnessConfig& cfg);

// Within-study protocol: per fold a whole-study model (Base), then per
// subgroup a proximal fine-tune of it (Transfer), both scored on the
// subgroup's validation rows. Subgroups with fewer than 2*k rows are
// reported as skipped.
ExperimentReport run_intra(const Dataset& study, const HarnessConfig& cfg);

// Grid study on one pair: per beta a fresh pretrain + feature adaptation
// at the default alpha (TarAdapt row per fold), then per (beta, alpha) the
// full adapt + refit (SrcReg row per fold).
ExperimentReport sweep(const Dataset& source, const Dataset& target, const AuxTaskSpec& aux,
                       const std::vector<double>& alpha_grid,
                       const std::vector<double>& beta_grid, const HarnessConfig& cfg);

enum class ReportFormat { csv, json };

// csv: exactly the columns experiment_id,method,source,target,aux,fold,
// accuracy (sweep rows render their grid point into the method name,
// skipped rows leave accuracy empty). json: the full report; load_report
// reconstructs it losslessly.
void emit(const ExperimentReport& report, ReportFormat format, const std::string& path);
std::string report_csv(const ExperimentReport& report);
std::string report_json(const ExperimentReport& report);
ExperimentReport load_report(const std::string& path);

} // namespace shiftadapt
