#include "shiftadapt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "shiftadapt/rng.hpp"

namespace shiftadapt {

namespace {

int resolve_threads(int threads) {
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (threads == 0) {
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : int(hw);
    }
    return threads;
}

// Runs every task exactly once. Each task writes only its own preassigned
// slots, and rows are assembled after the joins, so the report is identical
// for any thread count. The lowest-index failure is the one rethrown.
void run_tasks(const std::vector<std::function<void()>>& tasks, int threads) {
    if (threads <= 1 || tasks.size() <= 1) {
        for (const auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(tasks.size());
    std::size_t workers = std::min(std::size_t(threads), tasks.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                try {
                    tasks[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

TrainConfig with_seed(const TrainConfig& base, std::uint64_t seed) {
    TrainConfig tc = base;
    tc.seed = seed;
    return tc;
}

AdaptConfig with_alpha(const AdaptConfig& base, double alpha) {
    AdaptConfig ac = base;
    ac.alpha = alpha;
    return ac;
}

void require_aux_column(const Dataset& d, const AuxTaskSpec& task, const char* who) {
    if (!d.aux.count(task.task_id))
        throw DataError(std::string(who) + ": dataset " + d.site_id + " is missing aux column " +
                        task.task_id);
}

std::string fmt_g(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%g", v);
    return b;
}

std::string fmt17(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::string opt_key(const std::optional<double>& v) {
    if (!v) return "-";
    std::uint64_t bits;
    std::memcpy(&bits, &*v, 8);
    char b[20];
    std::snprintf(b, sizeof b, "%016llx", (unsigned long long)bits);
    return b;
}

// Grid points render into the method name so the csv needs no extra columns.
std::string method_cell(const ReportRow& row) {
    std::string m = row.method;
    if (row.beta && row.alpha)
        m += "(beta=" + fmt_g(*row.beta) + ",alpha=" + fmt_g(*row.alpha) + ")";
    else if (row.beta)
        m += "(beta=" + fmt_g(*row.beta) + ")";
    else if (row.alpha)
        m += "(alpha=" + fmt_g(*row.alpha) + ")";
    return m;
}

void check_csv_cell(const std::string& s, const char* what) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos ||
        s.find('\r') != std::string::npos)
        throw DataError(std::string(what) + " cannot be written to csv: " + s);
}

nlohmann::ordered_json snapshot_json(const HarnessConfig& cfg, const std::string& protocol) {
    nlohmann::ordered_json j;
    j["experiment_id"] = cfg.experiment_id;
    j["protocol"] = protocol;
    j["master_seed"] = cfg.master_seed;
    j["folds"] = cfg.folds;
    j["threads"] = cfg.threads;
    // SrcOnly/JointSup/TarAdapt/SrcReg are scored on the full target study;
    // only TarOnly uses target-side folds.
    j["target_eval"] = "full_target_study";
    j["model"] = {{"input_dim", cfg.model.input_dim},
                  {"extractor_widths", cfg.model.extractor_widths},
                  {"head_widths", cfg.model.head_widths},
                  {"dropout_rate", cfg.model.dropout_rate},
                  {"num_primary_classes", cfg.model.num_primary_classes},
                  {"activation", "relu"}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"cycles", cfg.train.cycles},
                  {"lr_min", cfg.train.lr_min},
                  {"seed", cfg.train.seed},
                  {"aug_noise_sd", cfg.train.aug_noise_sd}};
    j["adapt_inter"] = {{"alpha", cfg.adapt_inter.alpha}, {"lambda_wd", cfg.adapt_inter.lambda_wd}};
    j["adapt_intra"] = {{"alpha", cfg.adapt_intra.alpha}, {"lambda_wd", cfg.adapt_intra.lambda_wd}};
    return j;
}

void validate_harness(const HarnessConfig& cfg) {
    validate_model(cfg.model);
    validate_train(cfg.train);
    validate_adapt(cfg.adapt_inter);
    validate_adapt(cfg.adapt_intra);
    if (cfg.folds < 2) throw ConfigError("harness: folds must be >= 2");
    resolve_threads(cfg.threads);
}

std::vector<int> sorted_intersection(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

// Shared core of run_inter and run_inter_experiment: one source, any number
// of targets, any number of aux tasks, label-free adaptation views supplied
// per target.
ExperimentReport inter_impl(const Dataset& source, const std::vector<const Dataset*>& targets,
                            const std::vector<Dataset>& views,
                            const std::vector<AuxTaskSpec>& aux_tasks, const HarnessConfig& cfg,
                            const std::string& protocol) {
    validate_harness(cfg);
    if (targets.empty()) throw ConfigError("run_inter: no target studies");
    if (aux_tasks.empty()) throw ConfigError("run_inter: no aux tasks");
    if (!source.has_primary()) throw DataError("run_inter: source has no primary labels");
    for (const auto& a : aux_tasks) {
        validate_aux(a);
        require_aux_column(source, a, "run_inter");
        for (const auto& v : views) require_aux_column(v, a, "run_inter");
    }
    for (const Dataset* t : targets)
        if (!t->has_primary()) throw DataError("run_inter: target " + t->site_id + " has no primary labels");

    const int k = cfg.folds;
    const int nt = int(targets.size());
    const int na = int(aux_tasks.size());
    const int threads = resolve_threads(cfg.threads);
    const std::uint64_t ms = cfg.master_seed;

    auto src_folds = kfold_split(source, k, seed_of(ms, "folds", source.site_id));
    std::vector<Dataset> src_train(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) src_train[std::size_t(f)] = subset(source, src_folds[std::size_t(f)].train);

    std::vector<std::vector<Dataset>> tgt_train(static_cast<std::size_t>(nt)), tgt_val(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        auto folds = kfold_split(*targets[std::size_t(t)], k, seed_of(ms, "folds", targets[std::size_t(t)]->site_id));
        tgt_train[std::size_t(t)].resize(std::size_t(k));
        tgt_val[std::size_t(t)].resize(std::size_t(k));
        for (int f = 0; f < k; ++f) {
            tgt_train[std::size_t(t)][std::size_t(f)] = subset(*targets[std::size_t(t)], folds[std::size_t(f)].train);
            tgt_val[std::size_t(t)][std::size_t(f)] = subset(*targets[std::size_t(t)], folds[std::size_t(f)].val);
        }
    }

    auto idx3 = [k, na](int t, int a, int f) { return std::size_t((t * na + a) * k + f); };

    std::vector<double> acc_taronly(static_cast<std::size_t>(nt * k));
    std::vector<double> acc_srconly(static_cast<std::size_t>(nt * k));
    std::vector<ParamSet> pre(static_cast<std::size_t>(na * k));
    std::vector<double> acc_joint(static_cast<std::size_t>(nt * na * k));
    std::vector<ParamSet> adapted(static_cast<std::size_t>(nt * na * k));
    std::vector<double> acc_taradapt(static_cast<std::size_t>(nt * na * k));
    std::vector<double> acc_srcreg(static_cast<std::size_t>(nt * na * k));

    std::vector<std::function<void()>> stage1;
    for (int t = 0; t < nt; ++t)
        for (int f = 0; f < k; ++f)
            stage1.push_back([&, t, f] {
                ParamSet p = erm_train(tgt_train[std::size_t(t)][std::size_t(f)], cfg.model,
                                       with_seed(cfg.train, seed_of(ms, "TarOnly", std::uint64_t(f))),
                                       cfg.train.weight_decay);
                acc_taronly[std::size_t(t * k + f)] =
                    evaluate(p, cfg.model, tgt_val[std::size_t(t)][std::size_t(f)]);
            });
    for (int f = 0; f < k; ++f)
        stage1.push_back([&, f] {
            ParamSet p = erm_train(src_train[std::size_t(f)], cfg.model,
                                   with_seed(cfg.train, seed_of(ms, "SrcOnly", std::uint64_t(f))),
                                   cfg.train.weight_decay);
            for (int t = 0; t < nt; ++t)
                acc_srconly[std::size_t(t * k + f)] = evaluate(p, cfg.model, *targets[std::size_t(t)]);
        });
    for (int a = 0; a < na; ++a)
        for (int f = 0; f < k; ++f)
            stage1.push_back([&, a, f] {
                const AuxTaskSpec& task = aux_tasks[std::size_t(a)];
                ParamSet p = pretrain(src_train[std::size_t(f)], cfg.model, {task},
                                      with_seed(cfg.train, seed_of(ms, "pretrain:" + task.task_id,
                                                                   std::uint64_t(f))));
                for (int t = 0; t < nt; ++t)
                    acc_joint[idx3(t, a, f)] = evaluate(p, cfg.model, *targets[std::size_t(t)]);
                pre[std::size_t(a * k + f)] = std::move(p);
            });
    run_tasks(stage1, threads);

    std::vector<std::function<void()>> stage2;
    for (int t = 0; t < nt; ++t)
        for (int a = 0; a < na; ++a)
            for (int f = 0; f < k; ++f)
                stage2.push_back([&, t, a, f] {
                    const AuxTaskSpec& task = aux_tasks[std::size_t(a)];
                    ParamSet p = adapt_features(
                        pre[std::size_t(a * k + f)], views[std::size_t(t)], cfg.model, {task},
                        cfg.adapt_inter,
                        with_seed(cfg.train, seed_of(ms, "TarAdapt:" + task.task_id, std::uint64_t(f))));
                    acc_taradapt[idx3(t, a, f)] = evaluate(p, cfg.model, *targets[std::size_t(t)]);
                    adapted[idx3(t, a, f)] = std::move(p);
                });
    run_tasks(stage2, threads);

    std::vector<std::function<void()>> stage3;
    for (int t = 0; t < nt; ++t)
        for (int a = 0; a < na; ++a)
            for (int f = 0; f < k; ++f)
                stage3.push_back([&, t, a, f] {
                    const AuxTaskSpec& task = aux_tasks[std::size_t(a)];
                    ParamSet p = adapt_primary(
                        adapted[idx3(t, a, f)], src_train[std::size_t(f)], cfg.model, cfg.adapt_inter,
                        with_seed(cfg.train, seed_of(ms, "SrcReg:" + task.task_id, std::uint64_t(f))));
                    acc_srcreg[idx3(t, a, f)] = evaluate(p, cfg.model, *targets[std::size_t(t)]);
                });
    run_tasks(stage3, threads);

    ExperimentReport report;
    report.experiment_id = cfg.experiment_id;
    for (int t = 0; t < nt; ++t) {
        const std::string& tgt = targets[std::size_t(t)]->site_id;
        for (int a = 0; a < na; ++a) {
            const std::string& task = aux_tasks[std::size_t(a)].task_id;
            auto add = [&](const std::string& method, int f, double acc) {
                ReportRow r;
                r.method = method;
                r.source = source.site_id;
                r.target = tgt;
                r.aux = task;
                r.fold = f;
                r.accuracy = acc;
                report.rows.push_back(std::move(r));
            };
            for (int f = 0; f < k; ++f) add("TarOnly", f, acc_taronly[std::size_t(t * k + f)]);
            for (int f = 0; f < k; ++f) add("SrcOnly", f, acc_srconly[std::size_t(t * k + f)]);
            for (int f = 0; f < k; ++f) add("JointSup", f, acc_joint[idx3(t, a, f)]);
            for (int f = 0; f < k; ++f) add("TarAdapt", f, acc_taradapt[idx3(t, a, f)]);
            for (int f = 0; f < k; ++f) add("SrcReg", f, acc_srcreg[idx3(t, a, f)]);
        }
    }
    report.aggregates = compute_aggregates(report.rows);

    auto snap = snapshot_json(cfg, protocol);
    snap["source"] = source.site_id;
    auto tgt_ids = nlohmann::ordered_json::array();
    for (const Dataset* t : targets) tgt_ids.push_back(t->site_id);
    snap["targets"] = tgt_ids;
    auto aux_ids = nlohmann::ordered_json::array();
    for (const auto& a : aux_tasks) aux_ids.push_back(a.task_id);
    snap["aux_tasks"] = aux_ids;
    report.config_snapshot = snap.dump();
    return report;
}

} // namespace

std::vector<Fold> kfold_split(const Dataset& d, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
    if (!d.has_primary()) throw DataError("kfold_split: dataset has no primary labels");
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < d.size(); ++i) by_class[d.primary[std::size_t(i)]].push_back(i);
    std::vector<Fold> folds(static_cast<std::size_t>(k));
    for (auto& [cls, idx] : by_class) {
        if (int(idx.size()) < k)
            throw DataError("kfold_split: class " + std::to_string(cls) + " has fewer than k members");
        Rng rng(seed_of(seed, "fold", std::uint64_t(std::int64_t(cls))));
        shuffle(idx, rng);
        for (std::size_t i = 0; i < idx.size(); ++i)
            folds[i % std::size_t(k)].val.push_back(idx[i]);
    }
    for (auto& f : folds) {
        std::sort(f.val.begin(), f.val.end());
        std::set<int> vs(f.val.begin(), f.val.end());
        for (int i = 0; i < d.size(); ++i)
            if (!vs.count(i)) f.train.push_back(i);
    }
    return folds;
}

std::vector<Aggregate> compute_aggregates(const std::vector<ReportRow>& rows) {
    std::vector<Aggregate> out;
    std::vector<std::vector<double>> vals;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows) {
        if (!r.accuracy) continue;
        std::string key = r.method + '\x1f' + r.source + '\x1f' + r.target + '\x1f' + r.aux +
                          '\x1f' + opt_key(r.beta) + '\x1f' + opt_key(r.alpha);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.size()).first;
            Aggregate a;
            a.method = r.method;
            a.source = r.source;
            a.target = r.target;
            a.aux = r.aux;
            a.beta = r.beta;
            a.alpha = r.alpha;
            out.push_back(std::move(a));
            vals.emplace_back();
        }
        vals[it->second].push_back(*r.accuracy);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = vals[i];
        out[i].folds = int(v.size());
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= double(v.size());
        out[i].mean = mean;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out[i].stddev = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    }
    return out;
}

ExperimentReport run_inter(const Dataset& source, const Dataset& target, const AuxTaskSpec& aux,
                           const HarnessConfig& cfg, const std::optional<Dataset>& adapt_view) {
    // whatever view the caller supplies, the adaptation phases get it
    // label-free; the evaluations use the clean target held here
    std::vector<Dataset> views;
    views.push_back(strip_primary(adapt_view ? *adapt_view : target));
    return inter_impl(source, {&target}, views, {aux}, cfg, "inter");
}

ExperimentReport run_inter_experiment(const std::vector<Dataset>& sites,
                                      const std::vector<AuxTaskSpec>& aux_tasks,
                                      const HarnessConfig& cfg) {
    if (sites.size() < 2)
        throw ConfigError("run_inter_experiment: need a source and at least one target study");
    std::vector<const Dataset*> targets;
    std::vector<Dataset> views;
    for (std::size_t i = 1; i < sites.size(); ++i) {
        targets.push_back(&sites[i]);
        views.push_back(strip_primary(sites[i]));
    }
    return inter_impl(sites[0], targets, views, aux_tasks, cfg, "inter_experiment");
}

ExperimentReport run_intra(const Dataset& study, const HarnessConfig& cfg) {
    validate_harness(cfg);
    if (!study.has_subgroup()) throw DataError("run_intra: study has no subgroup tags");
    if (!study.has_primary()) throw DataError("run_intra: study has no primary labels");
    const int k = cfg.folds;
    const int threads = resolve_threads(cfg.threads);
    const std::uint64_t ms = cfg.master_seed;

    auto folds = kfold_split(study, k, seed_of(ms, "folds", study.site_id));
    std::vector<Dataset> train_set(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) train_set[std::size_t(f)] = subset(study, folds[std::size_t(f)].train);

    std::vector<std::string> tags;
    for (const auto& t : study.subgroup)
        if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);

    struct TagPlan {
        std::string tag;
        bool ok = false;
        std::vector<Dataset> train_rows; // per fold, subgroup rows only
        std::vector<Dataset> val_rows;
    };
    std::vector<TagPlan> plans;
    for (const auto& tag : tags) {
        TagPlan p;
        p.tag = tag;
        auto idx = subgroup_indices(study, tag);
        p.ok = int(idx.size()) >= 2 * k;
        if (p.ok) {
            p.train_rows.resize(std::size_t(k));
            p.val_rows.resize(std::size_t(k));
            for (int f = 0; f < k; ++f) {
                auto tr = sorted_intersection(folds[std::size_t(f)].train, idx);
                auto va = sorted_intersection(folds[std::size_t(f)].val, idx);
                if (tr.empty() || va.empty()) {
                    p.ok = false; // cannot cross-validate this subgroup
                    break;
                }
                p.train_rows[std::size_t(f)] = subset(study, tr);
                p.val_rows[std::size_t(f)] = subset(study, va);
            }
        }
        plans.push_back(std::move(p));
    }

    std::vector<ParamSet> base(static_cast<std::size_t>(k));
    std::vector<std::function<void()>> stage1;
    for (int f = 0; f < k; ++f)
        stage1.push_back([&, f] {
            base[std::size_t(f)] = erm_train(train_set[std::size_t(f)], cfg.model,
                                             with_seed(cfg.train, seed_of(ms, "Base", std::uint64_t(f))),
                                             cfg.train.weight_decay);
        });
    run_tasks(stage1, threads);

    const int np = int(plans.size());
    std::vector<double> acc_base(static_cast<std::size_t>(np * k));
    std::vector<double> acc_transfer(static_cast<std::size_t>(np * k));
    std::vector<std::function<void()>> stage2;
    for (int p = 0; p < np; ++p) {
        if (!plans[std::size_t(p)].ok) continue;
        for (int f = 0; f < k; ++f)
            stage2.push_back([&, p, f] {
                const TagPlan& plan = plans[std::size_t(p)];
                acc_base[std::size_t(p * k + f)] =
                    evaluate(base[std::size_t(f)], cfg.model, plan.val_rows[std::size_t(f)]);
                ParamSet tuned = finetune_subgroup(
                    base[std::size_t(f)], plan.train_rows[std::size_t(f)], cfg.model, cfg.adapt_intra,
                    with_seed(cfg.train, seed_of(ms, "Transfer:" + plan.tag, std::uint64_t(f))));
                acc_transfer[std::size_t(p * k + f)] =
                    evaluate(tuned, cfg.model, plan.val_rows[std::size_t(f)]);
            });
    }
    run_tasks(stage2, threads);

    ExperimentReport report;
    report.experiment_id = cfg.experiment_id;
    for (int p = 0; p < np; ++p) {
        const TagPlan& plan = plans[std::size_t(p)];
        if (!plan.ok) {
            ReportRow r;
            r.method = "Transfer";
            r.source = study.site_id;
            r.target = plan.tag;
            r.fold = -1;
            r.status = "skipped";
            report.rows.push_back(std::move(r));
            continue;
        }
        auto add = [&](const std::string& method, int f, double acc) {
            ReportRow r;
            r.method = method;
            r.source = study.site_id;
            r.target = plan.tag;
            r.fold = f;
            r.accuracy = acc;
            report.rows.push_back(std::move(r));
        };
        for (int f = 0; f < k; ++f) add("Base", f, acc_base[std::size_t(p * k + f)]);
        for (int f = 0; f < k; ++f) add("Transfer", f, acc_transfer[std::size_t(p * k + f)]);
    }
    report.aggregates = compute_aggregates(report.rows);

    auto snap = snapshot_json(cfg, "intra");
    snap["study"] = study.site_id;
    auto tag_ids = nlohmann::ordered_json::array();
    for (const auto& t : tags) tag_ids.push_back(t);
    snap["subgroups"] = tag_ids;
    report.config_snapshot = snap.dump();
    return report;
}

ExperimentReport sweep(const Dataset& source, const Dataset& target, const AuxTaskSpec& aux,
                       const std::vector<double>& alpha_grid, const std::vector<double>& beta_grid,
                       const HarnessConfig& cfg) {
    validate_harness(cfg);
    if (alpha_grid.empty() || beta_grid.empty()) throw ConfigError("sweep: empty grid");
    for (double a : alpha_grid)
        if (!std::isfinite(a) || a < 0.0) throw ConfigError("sweep: alpha grid values must be >= 0");
    for (double b : beta_grid)
        if (!std::isfinite(b) || b < 0.0) throw ConfigError("sweep: beta grid values must be >= 0");
    validate_aux(aux);
    require_aux_column(source, aux, "sweep");
    require_aux_column(target, aux, "sweep");
    if (!source.has_primary()) throw DataError("sweep: source has no primary labels");
    if (!target.has_primary()) throw DataError("sweep: target has no primary labels");

    const int k = cfg.folds;
    const int nb = int(beta_grid.size());
    const int na = int(alpha_grid.size());
    const int threads = resolve_threads(cfg.threads);
    const std::uint64_t ms = cfg.master_seed;

    auto src_folds = kfold_split(source, k, seed_of(ms, "folds", source.site_id));
    std::vector<Dataset> src_train(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) src_train[std::size_t(f)] = subset(source, src_folds[std::size_t(f)].train);
    const Dataset view = strip_primary(target);

    // seeds are keyed by arm and fold alone, so a 1x1 grid at the default
    // alpha reproduces run_inter's TarAdapt/SrcReg rows exactly
    const std::uint64_t pre_seed_base = ms;
    auto pre_seed = [&](int f) { return seed_of(pre_seed_base, "pretrain:" + aux.task_id, std::uint64_t(f)); };
    auto tar_seed = [&](int f) { return seed_of(pre_seed_base, "TarAdapt:" + aux.task_id, std::uint64_t(f)); };
    auto reg_seed = [&](int f) { return seed_of(pre_seed_base, "SrcReg:" + aux.task_id, std::uint64_t(f)); };

    std::vector<ParamSet> pre(static_cast<std::size_t>(nb * k));
    std::vector<ParamSet> adapted_def(static_cast<std::size_t>(nb * k));
    std::vector<double> acc_tar(static_cast<std::size_t>(nb * k));
    std::vector<double> acc_reg(static_cast<std::size_t>(nb * na * k));

    std::vector<std::function<void()>> stage1;
    for (int b = 0; b < nb; ++b)
        for (int f = 0; f < k; ++f)
            stage1.push_back([&, b, f] {
                AuxTaskSpec task = aux;
                task.beta = beta_grid[std::size_t(b)];
                pre[std::size_t(b * k + f)] = pretrain(src_train[std::size_t(f)], cfg.model, {task},
                                                       with_seed(cfg.train, pre_seed(f)));
            });
    run_tasks(stage1, threads);

    std::vector<std::function<void()>> stage2;
    for (int b = 0; b < nb; ++b)
        for (int f = 0; f < k; ++f)
            stage2.push_back([&, b, f] {
                AuxTaskSpec task = aux;
                task.beta = beta_grid[std::size_t(b)];
                ParamSet p = adapt_features(pre[std::size_t(b * k + f)], view, cfg.model, {task},
                                            cfg.adapt_inter, with_seed(cfg.train, tar_seed(f)));
                acc_tar[std::size_t(b * k + f)] = evaluate(p, cfg.model, target);
                adapted_def[std::size_t(b * k + f)] = std::move(p);
            });
    run_tasks(stage2, threads);

    std::vector<std::function<void()>> stage3;
    for (int b = 0; b < nb; ++b)
        for (int ai = 0; ai < na; ++ai)
            for (int f = 0; f < k; ++f)
                stage3.push_back([&, b, ai, f] {
                    AuxTaskSpec task = aux;
                    task.beta = beta_grid[std::size_t(b)];
                    AdaptConfig ac = with_alpha(cfg.adapt_inter, alpha_grid[std::size_t(ai)]);
                    ParamSet refit;
                    if (alpha_grid[std::size_t(ai)] == cfg.adapt_inter.alpha) {
                        refit = adapt_primary(adapted_def[std::size_t(b * k + f)],
                                              src_train[std::size_t(f)], cfg.model, ac,
                                              with_seed(cfg.train, reg_seed(f)));
                    } else {
                        ParamSet ad = adapt_features(pre[std::size_t(b * k + f)], view, cfg.model,
                                                     {task}, ac, with_seed(cfg.train, tar_seed(f)));
                        refit = adapt_primary(ad, src_train[std::size_t(f)], cfg.model, ac,
                                              with_seed(cfg.train, reg_seed(f)));
                    }
                    acc_reg[std::size_t((b * na + ai) * k + f)] = evaluate(refit, cfg.model, target);
                });
    run_tasks(stage3, threads);

    ExperimentReport report;
    report.experiment_id = cfg.experiment_id;
    for (int b = 0; b < nb; ++b) {
        for (int f = 0; f < k; ++f) {
            ReportRow r;
            r.method = "TarAdapt";
            r.source = source.site_id;
            r.target = target.site_id;
            r.aux = aux.task_id;
            r.fold = f;
            r.accuracy = acc_tar[std::size_t(b * k + f)];
            r.beta = beta_grid[std::size_t(b)];
            report.rows.push_back(std::move(r));
        }
        for (int ai = 0; ai < na; ++ai)
            for (int f = 0; f < k; ++f) {
                ReportRow r;
                r.method = "SrcReg";
                r.source = source.site_id;
                r.target = target.site_id;
                r.aux = aux.task_id;
                r.fold = f;
                r.accuracy = acc_reg[std::size_t((b * na + ai) * k + f)];
                r.beta = beta_grid[std::size_t(b)];
                r.alpha = alpha_grid[std::size_t(ai)];
                report.rows.push_back(std::move(r));
            }
    }
    report.aggregates = compute_aggregates(report.rows);

    auto snap = snapshot_json(cfg, "sweep");
    snap["source"] = source.site_id;
    snap["target"] = target.site_id;
    snap["aux_task"] = aux.task_id;
    snap["alpha_grid"] = alpha_grid;
    snap["beta_grid"] = beta_grid;
    report.config_snapshot = snap.dump();
    return report;
}

std::string report_csv(const ExperimentReport& report) {
    check_csv_cell(report.experiment_id, "experiment_id");
    std::ostringstream o;
    o << "experiment_id,method,source,target,aux,fold,accuracy\n";
    for (const auto& r : report.rows) {
        std::string m = method_cell(r);
        check_csv_cell(m, "method");
        check_csv_cell(r.source, "source");
        check_csv_cell(r.target, "target");
        check_csv_cell(r.aux, "aux");
        o << report.experiment_id << ',' << m << ',' << r.source << ',' << r.target << ','
          << r.aux << ',' << r.fold << ',' << (r.accuracy ? fmt17(*r.accuracy) : "") << '\n';
    }
    return o.str();
}

std::string report_json(const ExperimentReport& report) {
    nlohmann::ordered_json j;
    j["experiment_id"] = report.experiment_id;
    j["config_snapshot"] = report.config_snapshot;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        nlohmann::ordered_json o;
        o["method"] = r.method;
        o["source"] = r.source;
        o["target"] = r.target;
        o["aux"] = r.aux;
        o["fold"] = r.fold;
        o["status"] = r.status;
        if (r.accuracy) o["accuracy"] = *r.accuracy;
        if (r.beta) o["beta"] = *r.beta;
        if (r.alpha) o["alpha"] = *r.alpha;
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    auto aggs = nlohmann::ordered_json::array();
    for (const auto& a : report.aggregates) {
        nlohmann::ordered_json o;
        o["method"] = a.method;
        o["source"] = a.source;
        o["target"] = a.target;
        o["aux"] = a.aux;
        if (a.beta) o["beta"] = *a.beta;
        if (a.alpha) o["alpha"] = *a.alpha;
        o["folds"] = a.folds;
        o["mean"] = a.mean;
        o["stddev"] = a.stddev;
        aggs.push_back(std::move(o));
    }
    j["aggregates"] = std::move(aggs);
    return j.dump(2);
}

void emit(const ExperimentReport& report, ReportFormat format, const std::string& path) {
    std::string body = format == ReportFormat::csv ? report_csv(report) : report_json(report);
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot open report file for writing: " + path);
    out.write(body.data(), std::streamsize(body.size()));
    if (!out) throw DataError("short write: " + path);
}

ExperimentReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open report file for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed report json in " + path + ": " + e.what());
    }
    try {
        ExperimentReport report;
        report.experiment_id = j.at("experiment_id").get<std::string>();
        report.config_snapshot = j.at("config_snapshot").get<std::string>();
        for (const auto& o : j.at("rows")) {
            ReportRow r;
            r.method = o.at("method").get<std::string>();
            r.source = o.at("source").get<std::string>();
            r.target = o.at("target").get<std::string>();
            r.aux = o.at("aux").get<std::string>();
            r.fold = o.at("fold").get<int>();
            r.status = o.at("status").get<std::string>();
            if (o.contains("accuracy")) r.accuracy = o.at("accuracy").get<double>();
            if (o.contains("beta")) r.beta = o.at("beta").get<double>();
            if (o.contains("alpha")) r.alpha = o.at("alpha").get<double>();
            report.rows.push_back(std::move(r));
        }
        for (const auto& o : j.at("aggregates")) {
            Aggregate a;
            a.method = o.at("method").get<std::string>();
            a.source = o.at("source").get<std::string>();
            a.target = o.at("target").get<std::string>();
            a.aux = o.at("aux").get<std::string>();
            if (o.contains("beta")) a.beta = o.at("beta").get<double>();
            if (o.contains("alpha")) a.alpha = o.at("alpha").get<double>();
            a.folds = o.at("folds").get<int>();
            a.mean = o.at("mean").get<double>();
            a.stddev = o.at("stddev").get<double>();
            report.aggregates.push_back(std::move(a));
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("report json missing fields in " + path + ": " + e.what());
    }
}

} // namespace shiftadapt
