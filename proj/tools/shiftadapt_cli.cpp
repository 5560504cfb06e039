#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shiftadapt/checkpoint.hpp"
#include "shiftadapt/config.hpp"
#include "shiftadapt/harness.hpp"
#include "shiftadapt/kernel.hpp"
#include "shiftadapt/pipeline.hpp"
#include "shiftadapt/rng.hpp"
#include "shiftadapt/synthsites.hpp"

namespace {

using namespace shiftadapt;

AppConfig load_or_default(const std::string& path) {
    return path.empty() ? default_config() : load_config(path);
}

const SiteConfig& find_site(const AppConfig& cfg, const std::string& id) {
    for (const auto& s : cfg.sites)
        if (s.site_id == id) return s;
    throw ConfigError("no site named \"" + id + "\" in the config");
}

std::string config_fingerprint(const AppConfig& cfg) {
    std::string text = config_json(cfg);
    std::uint64_t h = hash_mix(0x5ad5ad, std::string_view(text));
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
    TrainConfig t = base;
    t.seed = seed;
    return t;
}

std::string decorated(const Aggregate& a) {
    std::string m = a.method;
    char buf[64];
    if (a.beta && a.alpha) {
        std::snprintf(buf, sizeof buf, "(beta=%g,alpha=%g)", *a.beta, *a.alpha);
        m += buf;
    } else if (a.beta) {
        std::snprintf(buf, sizeof buf, "(beta=%g)", *a.beta);
        m += buf;
    } else if (a.alpha) {
        std::snprintf(buf, sizeof buf, "(alpha=%g)", *a.alpha);
        m += buf;
    }
    return m;
}

void print_aggregates(const ExperimentReport& report) {
    std::printf("%-32s %-10s %-10s %-6s %5s %8s %8s\n", "method", "source", "target", "aux",
                "folds", "mean", "std");
    for (const auto& a : report.aggregates)
        std::printf("%-32s %-10s %-10s %-6s %5d %8.4f %8.4f\n", decorated(a).c_str(),
                    a.source.c_str(), a.target.c_str(), a.aux.c_str(), a.folds, a.mean, a.stddev);
}

void write_reports(const ExperimentReport& report, const std::string& csv_path,
                   const std::string& json_path) {
    if (!csv_path.empty()) {
        emit(report, ReportFormat::csv, csv_path);
        std::printf("wrote %s\n", csv_path.c_str());
    }
    if (!json_path.empty()) {
        emit(report, ReportFormat::json, json_path);
        std::printf("wrote %s\n", json_path.c_str());
    }
}

// Two 1-D subgroups for the kernel demo: group A classes at -1/+1, group B
// displaced by `shift`, so a pooled fit misplaces B's boundary.
Dataset kernel_demo_group(int n, double shift, double sd, std::uint64_t seed,
                          const std::string& tag) {
    Dataset d;
    d.site_id = "demo";
    d.features = Matrix(n, 1);
    d.primary.resize(std::size_t(n));
    d.subgroup.assign(std::size_t(n), tag);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        int cls = i % 2 == 0 ? -1 : 1;
        d.primary[std::size_t(i)] = cls;
        d.features.at(i, 0) = double(cls) + shift + sd * rng.normal();
    }
    return d;
}

Dataset concat_rows(const Dataset& a, const Dataset& b) {
    Dataset d;
    d.site_id = a.site_id;
    d.features = Matrix(a.size() + b.size(), a.dim());
    d.primary.reserve(std::size_t(a.size() + b.size()));
    for (int i = 0; i < a.size(); ++i) {
        for (int j = 0; j < a.dim(); ++j) d.features.at(i, j) = a.features.at(i, j);
        d.primary.push_back(a.primary[std::size_t(i)]);
        d.subgroup.push_back(a.subgroup[std::size_t(i)]);
    }
    for (int i = 0; i < b.size(); ++i) {
        for (int j = 0; j < b.dim(); ++j) d.features.at(a.size() + i, j) = b.features.at(i, j);
        d.primary.push_back(b.primary[std::size_t(i)]);
        d.subgroup.push_back(b.subgroup[std::size_t(i)]);
    }
    return d;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic multi-site study generator and domain-adaptation runner"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (defaults apply when omitted)");

    // gen
    auto* gen = app.add_subcommand("gen", "generate the synthetic consortium and write it out");
    std::string gen_out = ".";
    std::string gen_format = "csv";
    bool gen_mmd = false;
    std::string gen_emit_config;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--format", gen_format, "csv, binary or both")
        ->check(CLI::IsMember({"csv", "binary", "both"}));
    gen->add_flag("--mmd", gen_mmd, "print the pairwise feature MMD table");
    gen->add_option("--emit-config", gen_emit_config, "also write the resolved config here");
    gen->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        auto sites = make_consortium(cfg.sites, cfg.master_seed);
        for (const auto& d : sites) {
            if (gen_format == "csv" || gen_format == "both") {
                std::string p = gen_out + "/" + d.site_id + ".csv";
                save_csv(d, p);
                std::printf("wrote %s (%d rows)\n", p.c_str(), d.size());
            }
            if (gen_format == "binary" || gen_format == "both") {
                std::string p = gen_out + "/" + d.site_id + ".bin";
                save_binary(d, p);
                std::printf("wrote %s (%d rows)\n", p.c_str(), d.size());
            }
        }
        if (!gen_emit_config.empty()) {
            std::ofstream out(gen_emit_config, std::ios::trunc);
            if (!out) throw DataError("cannot open file for writing: " + gen_emit_config);
            out << config_json(cfg);
            std::printf("wrote %s\n", gen_emit_config.c_str());
        }
        if (gen_mmd) {
            KernelSpec spec;
            spec.gamma = 1.0 / double(cfg.model.input_dim);
            std::printf("%-10s", "mmd");
            for (const auto& b : sites) std::printf(" %10s", b.site_id.c_str());
            std::printf("\n");
            for (const auto& a : sites) {
                std::printf("%-10s", a.site_id.c_str());
                for (const auto& b : sites)
                    std::printf(" %10.4f", mmd(a.features, b.features, spec));
                std::printf("\n");
            }
        }
    });

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "multi-task pretraining on a source site");
    std::string pre_source;
    std::string pre_out;
    pre->add_option("--source", pre_source, "source site id (default: first site)");
    pre->add_option("--out", pre_out, "checkpoint path")->required();
    pre->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        const SiteConfig& sc = pre_source.empty() ? cfg.sites.front() : find_site(cfg, pre_source);
        Dataset source = make_site(sc, cfg.master_seed);
        std::uint64_t seed = seed_of(cfg.master_seed, "cli:pretrain");
        ParamSet params = pretrain(source, cfg.model, cfg.aux_tasks, seeded(cfg.train, seed));
        Checkpoint ckpt;
        ckpt.model = cfg.model;
        ckpt.aux = cfg.aux_tasks;
        ckpt.params = std::move(params);
        ckpt.provenance["phase"] = "pretrain";
        ckpt.provenance["source"] = sc.site_id;
        ckpt.provenance["master_seed"] = std::to_string(cfg.master_seed);
        ckpt.provenance["train_seed"] = std::to_string(seed);
        ckpt.provenance["config"] = config_fingerprint(cfg);
        save_checkpoint(ckpt, pre_out);
        std::printf("wrote %s\n", pre_out.c_str());
        std::printf("source accuracy: %.4f\n", evaluate(ckpt.params, cfg.model, source));
    });

    // adapt
    auto* ad = app.add_subcommand("adapt", "feature adaptation and head refit from a checkpoint");
    std::string ad_ckpt, ad_target, ad_source, ad_outdir = ".";
    ad->add_option("--pretrained", ad_ckpt, "pretrain checkpoint")->required();
    ad->add_option("--target", ad_target, "target site id")->required();
    ad->add_option("--source", ad_source, "source site id for the head refit (default: first site)");
    ad->add_option("--out-dir", ad_outdir, "directory for adapted/refit checkpoints");
    ad->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        Checkpoint ckpt = load_checkpoint(ad_ckpt);
        const SiteConfig& tc = find_site(cfg, ad_target);
        const SiteConfig& sc = ad_source.empty() ? cfg.sites.front() : find_site(cfg, ad_source);
        Dataset target = make_site(tc, cfg.master_seed);
        Dataset source = make_site(sc, cfg.master_seed);
        if (target.dim() != ckpt.model.input_dim)
            throw DataError("target dimension does not match the checkpoint model");

        Dataset view = strip_primary(target);
        std::uint64_t seed2 = seed_of(cfg.master_seed, "cli:adapt");
        ParamSet adapted = adapt_features(ckpt.params, view, ckpt.model, ckpt.aux, cfg.adapt_inter,
                                          seeded(cfg.train, seed2));
        std::uint64_t seed3 = seed_of(cfg.master_seed, "cli:refit");
        ParamSet refit = adapt_primary(adapted, source, ckpt.model, cfg.adapt_inter,
                                       seeded(cfg.train, seed3));

        Checkpoint out = ckpt;
        out.params = adapted;
        out.provenance["phase"] = "adapt_features";
        out.provenance["target"] = tc.site_id;
        out.provenance["train_seed"] = std::to_string(seed2);
        std::string p1 = ad_outdir + "/adapted.ckpt";
        save_checkpoint(out, p1);
        out.params = refit;
        out.provenance["phase"] = "adapt_primary";
        out.provenance["refit_source"] = sc.site_id;
        out.provenance["train_seed"] = std::to_string(seed3);
        std::string p2 = ad_outdir + "/refit.ckpt";
        save_checkpoint(out, p2);
        std::printf("wrote %s\nwrote %s\n", p1.c_str(), p2.c_str());
        std::printf("target accuracy  pretrained: %.4f\n", evaluate(ckpt.params, ckpt.model, target));
        std::printf("target accuracy  adapted:    %.4f\n", evaluate(adapted, ckpt.model, target));
        std::printf("target accuracy  refit:      %.4f\n", evaluate(refit, ckpt.model, target));
    });

    // inter
    auto* inter = app.add_subcommand("inter", "cross-study method grid on the configured consortium");
    std::string inter_csv, inter_json;
    int inter_threads = -1;
    inter->add_option("--csv", inter_csv, "write the report csv here");
    inter->add_option("--json", inter_json, "write the report json here");
    inter->add_option("--threads", inter_threads, "worker threads (0 = hardware)");
    inter->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        if (inter_threads >= 0) cfg.threads = inter_threads;
        std::vector<SiteConfig> plain;
        for (const auto& s : cfg.sites)
            if (s.subgroups.empty()) plain.push_back(s);
        if (plain.size() < 2)
            throw ConfigError("inter needs at least two sites without subgroups (source + targets)");
        auto sites = make_consortium(plain, cfg.master_seed);
        ExperimentReport report = run_inter_experiment(sites, cfg.aux_tasks, harness_config(cfg));
        print_aggregates(report);
        write_reports(report, inter_csv, inter_json);
    });

    // intra
    auto* intra = app.add_subcommand("intra", "within-study subgroup adaptation");
    std::string intra_site_id, intra_csv, intra_json;
    int intra_threads = -1;
    intra->add_option("--site", intra_site_id, "subgrouped site id (default: config intra_site)");
    intra->add_option("--csv", intra_csv, "write the report csv here");
    intra->add_option("--json", intra_json, "write the report json here");
    intra->add_option("--threads", intra_threads, "worker threads (0 = hardware)");
    intra->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        if (intra_threads >= 0) cfg.threads = intra_threads;
        std::string id = intra_site_id.empty() ? cfg.intra_site : intra_site_id;
        if (id.empty()) throw ConfigError("no intra site configured; pass --site");
        Dataset study = make_site(find_site(cfg, id), cfg.master_seed);
        ExperimentReport report = run_intra(study, harness_config(cfg));
        print_aggregates(report);
        write_reports(report, intra_csv, intra_json);
    });

    // sweep
    auto* sw = app.add_subcommand("sweep", "beta/alpha grid study on one source->target pair");
    std::string sw_source, sw_target, sw_aux, sw_csv, sw_json;
    int sw_threads = -1;
    sw->add_option("--source", sw_source, "source site id (default: first site)");
    sw->add_option("--target", sw_target, "target site id (default: last subgroup-free site)");
    sw->add_option("--aux", sw_aux, "aux task id (default: first configured task)");
    sw->add_option("--csv", sw_csv, "write the report csv here");
    sw->add_option("--json", sw_json, "write the report json here");
    sw->add_option("--threads", sw_threads, "worker threads (0 = hardware)");
    sw->callback([&] {
        AppConfig cfg = load_or_default(config_path);
        validate_config(cfg);
        if (sw_threads >= 0) cfg.threads = sw_threads;
        const SiteConfig& src = sw_source.empty() ? cfg.sites.front() : find_site(cfg, sw_source);
        const SiteConfig* tgt = nullptr;
        if (sw_target.empty()) {
            for (const auto& s : cfg.sites)
                if (s.subgroups.empty() && s.site_id != src.site_id) tgt = &s;
            if (!tgt) throw ConfigError("no target site available for the sweep");
        } else {
            tgt = &find_site(cfg, sw_target);
        }
        const AuxTaskSpec* task = &cfg.aux_tasks.front();
        if (!sw_aux.empty()) {
            task = nullptr;
            for (const auto& a : cfg.aux_tasks)
                if (a.task_id == sw_aux) task = &a;
            if (!task) throw ConfigError("no aux task named \"" + sw_aux + "\" in the config");
        }
        Dataset source = make_site(src, cfg.master_seed);
        Dataset target = make_site(*tgt, cfg.master_seed);
        std::vector<double> betas =
            cfg.sweep_beta_grid.empty() ? default_beta_grid(*task) : cfg.sweep_beta_grid;
        ExperimentReport report =
            sweep(source, target, *task, cfg.sweep_alpha_grid, betas, harness_config(cfg));
        print_aggregates(report);
        write_reports(report, sw_csv, sw_json);
    });

    // kernel-dr
    auto* kd = app.add_subcommand("kernel-dr", "RKHS classifier, doubly-robust refit and bound report");
    int kd_n = 200, kd_iters = 2000;
    double kd_lambda = 0.1, kd_alpha = 1.0, kd_gamma = 1.0, kd_shift = 2.0, kd_delta = 0.05;
    double kd_nu = 1.0, kd_nu_dr = 0.5, kd_sd = 0.5;
    std::uint64_t kd_seed = 20260816;
    std::string kd_json;
    kd->add_option("--n", kd_n, "rows per subgroup");
    kd->add_option("--iters", kd_iters, "gradient descent iterations");
    kd->add_option("--lambda", kd_lambda, "RKHS ridge weight for the pooled fit");
    kd->add_option("--alpha", kd_alpha, "proximal weight for the subgroup refit");
    kd->add_option("--gamma", kd_gamma, "rbf kernel bandwidth");
    kd->add_option("--shift", kd_shift, "displacement of the second subgroup");
    kd->add_option("--sd", kd_sd, "within-class noise");
    kd->add_option("--delta", kd_delta, "bound confidence parameter");
    kd->add_option("--nu", kd_nu, "norm bound of per-group minimizers");
    kd->add_option("--nu-dr", kd_nu_dr, "norm bound of the refit displacement");
    kd->add_option("--seed", kd_seed, "generator seed");
    kd->add_option("--json", kd_json, "write the bound report json here");
    kd->callback([&] {
        if (kd_n < 2) throw ConfigError("kernel-dr: --n must be >= 2");
        if (!(kd_sd > 0.0)) throw ConfigError("kernel-dr: --sd must be > 0");
        KernelSpec spec;
        spec.kind = KernelSpec::Kind::rbf;
        spec.gamma = kd_gamma;
        Dataset a = kernel_demo_group(kd_n, 0.0, kd_sd, seed_of(kd_seed, "group", 0), "A");
        Dataset b = kernel_demo_group(kd_n, kd_shift, kd_sd, seed_of(kd_seed, "group", 1), "B");
        Dataset pooled = concat_rows(a, b);
        KernelModel fhat = fit_kernel(pooled, spec, kd_lambda, kd_iters);
        KernelModel dr = fit_dr(fhat, b, spec, kd_alpha, kd_iters);
        std::printf("pooled fit accuracy on shifted subgroup: %.4f\n", kernel_accuracy(fhat, b));
        std::printf("DR refit accuracy on shifted subgroup:   %.4f\n", kernel_accuracy(dr, b));
        std::printf("RKHS distance ||f - fhat||:              %.6f\n", rkhs_distance(dr, fhat));
        BoundReport br =
            bound_report(fhat, gram(pooled.features, spec), 2, kd_n, kd_delta, kd_nu, kd_nu_dr);
        std::string js = to_json_string(br);
        std::printf("%s\n", js.c_str());
        if (!kd_json.empty()) {
            std::ofstream out(kd_json, std::ios::trunc);
            if (!out) throw DataError("cannot open file for writing: " + kd_json);
            out << js << "\n";
            std::printf("wrote %s\n", kd_json.c_str());
        }
    });

    // report
    auto* rep = app.add_subcommand("report", "inspect a stored report and check its aggregates");
    std::string rep_in, rep_csv;
    rep->add_option("--in", rep_in, "report json produced by inter/intra/sweep")->required();
    rep->add_option("--csv", rep_csv, "re-emit the rows as csv here");
    rep->callback([&] {
        ExperimentReport report = load_report(rep_in);
        auto fresh = compute_aggregates(report.rows);
        if (fresh.size() != report.aggregates.size())
            throw DataError("stored aggregates do not match the rows in " + rep_in);
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            const auto& x = fresh[i];
            const auto& y = report.aggregates[i];
            if (x.method != y.method || x.source != y.source || x.target != y.target ||
                x.aux != y.aux || x.folds != y.folds || x.beta != y.beta || x.alpha != y.alpha ||
                std::abs(x.mean - y.mean) > 1e-12 || std::abs(x.stddev - y.stddev) > 1e-12)
                throw DataError("stored aggregates do not match the rows in " + rep_in);
        }
        std::printf("%zu rows, aggregates verified\n", report.rows.size());
        print_aggregates(report);
        if (!rep_csv.empty()) {
            emit(report, ReportFormat::csv, rep_csv);
            std::printf("wrote %s\n", rep_csv.c_str());
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
