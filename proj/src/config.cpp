#include "shiftadapt/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace shiftadapt {

namespace {

using nlohmann::json;

// Strict schema: a key the loader does not know is an error, a key the file
// does not set keeps its default. A file written by config_json always
// round-trips.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + ctx);
    }
}

double num_at(const json& j, const char* key, double def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigError(ctx + "." + key + " must be a number");
    return v.get<double>();
}

int int_at(const json& j, const char* key, int def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(ctx + "." + key + " must be an integer");
    return v.get<int>();
}

std::uint64_t u64_at(const json& j, const char* key, std::uint64_t def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return std::uint64_t(v.get<std::int64_t>());
    throw ConfigError(ctx + "." + key + " must be a nonnegative integer");
}

std::string str_at(const json& j, const char* key, const std::string& def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_string()) throw ConfigError(ctx + "." + key + " must be a string");
    return v.get<std::string>();
}

std::vector<int> ivec_at(const json& j, const char* key, std::vector<int> def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_array()) throw ConfigError(ctx + "." + key + " must be an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(ctx + "." + key + " must be an array of integers");
        out.push_back(e.get<int>());
    }
    return out;
}

std::vector<double> dvec_at(const json& j, const char* key, std::vector<double> def,
                            const std::string& ctx) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_array()) throw ConfigError(ctx + "." + key + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError(ctx + "." + key + " must be an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

ModelConfig parse_model(const json& j, ModelConfig def) {
    const std::string ctx = "model";
    check_keys(j, {"input_dim", "extractor_widths", "head_widths", "dropout_rate",
                   "num_primary_classes", "activation"}, ctx);
    ModelConfig m = def;
    m.input_dim = int_at(j, "input_dim", def.input_dim, ctx);
    m.extractor_widths = ivec_at(j, "extractor_widths", def.extractor_widths, ctx);
    m.head_widths = ivec_at(j, "head_widths", def.head_widths, ctx);
    m.dropout_rate = num_at(j, "dropout_rate", def.dropout_rate, ctx);
    m.num_primary_classes = int_at(j, "num_primary_classes", def.num_primary_classes, ctx);
    std::string act = str_at(j, "activation", "relu", ctx);
    if (act != "relu") throw ConfigError("model.activation must be \"relu\"");
    m.activation = Activation::relu;
    return m;
}

TrainConfig parse_train(const json& j, TrainConfig def) {
    const std::string ctx = "train";
    check_keys(j, {"lr", "weight_decay", "batch_size", "epochs", "cycles", "lr_min", "seed",
                   "aug_noise_sd"}, ctx);
    TrainConfig t = def;
    t.lr = num_at(j, "lr", def.lr, ctx);
    t.weight_decay = num_at(j, "weight_decay", def.weight_decay, ctx);
    t.batch_size = int_at(j, "batch_size", def.batch_size, ctx);
    t.epochs = int_at(j, "epochs", def.epochs, ctx);
    t.cycles = int_at(j, "cycles", def.cycles, ctx);
    t.lr_min = num_at(j, "lr_min", def.lr_min, ctx);
    t.seed = u64_at(j, "seed", def.seed, ctx);
    t.aug_noise_sd = num_at(j, "aug_noise_sd", def.aug_noise_sd, ctx);
    return t;
}

AdaptConfig parse_adapt(const json& j, AdaptConfig def, const std::string& ctx) {
    check_keys(j, {"alpha", "lambda_wd"}, ctx);
    AdaptConfig a = def;
    a.alpha = num_at(j, "alpha", def.alpha, ctx);
    a.lambda_wd = num_at(j, "lambda_wd", def.lambda_wd, ctx);
    return a;
}

AuxTaskSpec parse_aux(const json& j, const std::string& ctx) {
    check_keys(j, {"task_id", "kind", "classes", "loss", "huber_delta", "beta"}, ctx);
    AuxTaskSpec a;
    a.task_id = str_at(j, "task_id", "", ctx);
    if (a.task_id.empty()) throw ConfigError(ctx + ".task_id must be a non-empty string");
    std::string kind = str_at(j, "kind", "classification", ctx);
    if (kind == "classification") a.kind = AuxKind::classification;
    else if (kind == "regression") a.kind = AuxKind::regression;
    else throw ConfigError(ctx + ".kind must be \"classification\" or \"regression\"");
    a.classes = int_at(j, "classes", 2, ctx);
    std::string loss = str_at(j, "loss",
                              a.kind == AuxKind::classification ? "cross_entropy" : "huber", ctx);
    if (loss == "cross_entropy") a.loss = AuxLoss::cross_entropy;
    else if (loss == "huber") a.loss = AuxLoss::huber;
    else throw ConfigError(ctx + ".loss must be \"cross_entropy\" or \"huber\"");
    a.huber_delta = num_at(j, "huber_delta", 1.0, ctx);
    a.beta = num_at(j, "beta", 1.0, ctx);
    return a;
}

SiteConfig parse_site(const json& j, const std::string& ctx) {
    check_keys(j, {"site_id", "n", "dim", "class_sep", "noise_sd", "shift", "shift_vec",
                   "rotation_seed", "age_slope", "age_noise_sd", "flip_prob", "subgroups"}, ctx);
    SiteConfig s;
    s.site_id = str_at(j, "site_id", "", ctx);
    if (s.site_id.empty()) throw ConfigError(ctx + ".site_id must be a non-empty string");
    s.n = int_at(j, "n", s.n, ctx);
    s.dim = int_at(j, "dim", s.dim, ctx);
    s.class_sep = num_at(j, "class_sep", s.class_sep, ctx);
    s.noise_sd = num_at(j, "noise_sd", s.noise_sd, ctx);
    s.shift = num_at(j, "shift", s.shift, ctx);
    s.shift_vec = dvec_at(j, "shift_vec", {}, ctx);
    s.rotation_seed = u64_at(j, "rotation_seed", s.rotation_seed, ctx);
    s.aux_age.slope = num_at(j, "age_slope", s.aux_age.slope, ctx);
    s.aux_age.noise_sd = num_at(j, "age_noise_sd", s.aux_age.noise_sd, ctx);
    s.flip_prob = num_at(j, "flip_prob", s.flip_prob, ctx);
    if (j.contains("subgroups")) {
        const json& gs = j.at("subgroups");
        if (!gs.is_array()) throw ConfigError(ctx + ".subgroups must be an array");
        for (std::size_t i = 0; i < gs.size(); ++i) {
            const std::string gctx = ctx + ".subgroups[" + std::to_string(i) + "]";
            check_keys(gs[i], {"tag", "fraction", "extra_shift"}, gctx);
            SubgroupSpec g;
            g.tag = str_at(gs[i], "tag", "", gctx);
            if (g.tag.empty()) throw ConfigError(gctx + ".tag must be a non-empty string");
            if (!gs[i].contains("fraction")) throw ConfigError(gctx + ".fraction is required");
            g.fraction = num_at(gs[i], "fraction", 0.0, gctx);
            g.extra_shift = num_at(gs[i], "extra_shift", 0.0, gctx);
            s.subgroups.push_back(std::move(g));
        }
    }
    return s;
}

nlohmann::ordered_json aux_json(const AuxTaskSpec& a) {
    nlohmann::ordered_json j;
    j["task_id"] = a.task_id;
    j["kind"] = a.kind == AuxKind::classification ? "classification" : "regression";
    j["classes"] = a.classes;
    j["loss"] = a.loss == AuxLoss::cross_entropy ? "cross_entropy" : "huber";
    j["huber_delta"] = a.huber_delta;
    j["beta"] = a.beta;
    return j;
}

nlohmann::ordered_json site_json(const SiteConfig& s) {
    nlohmann::ordered_json j;
    j["site_id"] = s.site_id;
    j["n"] = s.n;
    j["dim"] = s.dim;
    j["class_sep"] = s.class_sep;
    j["noise_sd"] = s.noise_sd;
    j["shift"] = s.shift;
    if (!s.shift_vec.empty()) j["shift_vec"] = s.shift_vec;
    j["rotation_seed"] = s.rotation_seed;
    j["age_slope"] = s.aux_age.slope;
    j["age_noise_sd"] = s.aux_age.noise_sd;
    j["flip_prob"] = s.flip_prob;
    if (!s.subgroups.empty()) {
        auto gs = nlohmann::ordered_json::array();
        for (const auto& g : s.subgroups) {
            nlohmann::ordered_json gj;
            gj["tag"] = g.tag;
            gj["fraction"] = g.fraction;
            gj["extra_shift"] = g.extra_shift;
            gs.push_back(std::move(gj));
        }
        j["subgroups"] = std::move(gs);
    }
    return j;
}

} // namespace

AppConfig default_config() {
    AppConfig cfg;
    cfg.model.input_dim = 20;
    // a narrow extractor forces the heads to share one low-dimensional code,
    // so a site shift that corrupts the code cannot be papered over inside a
    // head; adaptation has to fix the extractor itself
    cfg.model.extractor_widths = {3};
    cfg.adapt_inter.alpha = 0.5;
    cfg.adapt_inter.lambda_wd = 0.0;
    cfg.adapt_intra.alpha = 0.01;
    cfg.adapt_intra.lambda_wd = 0.1;

    AuxTaskSpec sex;
    sex.task_id = "sex";
    sex.kind = AuxKind::classification;
    sex.classes = 2;
    sex.loss = AuxLoss::cross_entropy;
    sex.beta = 1.0;
    AuxTaskSpec age;
    age.task_id = "age";
    age.kind = AuxKind::regression;
    age.loss = AuxLoss::huber;
    age.huber_delta = 1.0;
    age.beta = 0.1;
    cfg.aux_tasks = {sex, age};

    SiteConfig base;
    base.n = 600;
    base.dim = 20;
    base.class_sep = 2.0;
    base.noise_sd = 0.5;
    base.flip_prob = 0.05;
    base.rotation_seed = 7;
    base.aux_age.slope = 6.0;
    base.aux_age.noise_sd = 0.25;
    for (int i = 0; i < 3; ++i) {
        SiteConfig s = base;
        s.site_id = "site" + std::to_string(i);
        s.shift = double(2 * i); // 0, 2, 4
        cfg.sites.push_back(std::move(s));
    }
    SiteConfig cohort = base;
    cohort.site_id = "cohort";
    cohort.shift = 0.0;
    cohort.subgroups = {{"s0", 0.5, 0.0}, {"s1", 0.3, 2.0}, {"s2", 0.2, 3.0}};
    cfg.sites.push_back(std::move(cohort));
    cfg.intra_site = "cohort";
    return cfg;
}

void validate_config(const AppConfig& cfg) {
    if (cfg.experiment_id.empty()) throw ConfigError("experiment_id must be non-empty");
    if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
    if (cfg.threads < 0) throw ConfigError("threads must be >= 0");
    validate_model(cfg.model);
    validate_train(cfg.train);
    validate_adapt(cfg.adapt_inter);
    validate_adapt(cfg.adapt_intra);
    if (cfg.aux_tasks.empty()) throw ConfigError("aux_tasks must be non-empty");
    std::set<std::string> aux_ids;
    for (const auto& a : cfg.aux_tasks) {
        validate_aux(a);
        if (!aux_ids.insert(a.task_id).second)
            throw ConfigError("duplicate aux task_id: " + a.task_id);
    }
    if (cfg.sites.empty()) throw ConfigError("sites must be non-empty");
    std::set<std::string> site_ids;
    for (const auto& s : cfg.sites) {
        validate_site(s);
        if (!site_ids.insert(s.site_id).second)
            throw ConfigError("duplicate site_id: " + s.site_id);
        if (s.dim != cfg.model.input_dim)
            throw ConfigError("site " + s.site_id + ": dim must equal model.input_dim");
    }
    if (!cfg.intra_site.empty()) {
        const SiteConfig* found = nullptr;
        for (const auto& s : cfg.sites)
            if (s.site_id == cfg.intra_site) found = &s;
        if (!found) throw ConfigError("intra_site names an unknown site: " + cfg.intra_site);
        if (found->subgroups.empty())
            throw ConfigError("intra_site " + cfg.intra_site + " has no subgroups");
    }
    for (double a : cfg.sweep_alpha_grid)
        if (!std::isfinite(a) || a < 0.0) throw ConfigError("sweep_alpha_grid values must be >= 0");
    for (double b : cfg.sweep_beta_grid)
        if (!std::isfinite(b) || b < 0.0) throw ConfigError("sweep_beta_grid values must be >= 0");
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config json in " + path + ": " + e.what());
    }
    check_keys(j, {"master_seed", "folds", "threads", "experiment_id", "model", "train",
                   "adapt_inter", "adapt_intra", "aux_tasks", "sites", "intra_site",
                   "sweep_alpha_grid", "sweep_beta_grid"}, "config");

    AppConfig def = default_config();
    AppConfig cfg;
    cfg.master_seed = u64_at(j, "master_seed", def.master_seed, "config");
    cfg.folds = int_at(j, "folds", def.folds, "config");
    cfg.threads = int_at(j, "threads", def.threads, "config");
    cfg.experiment_id = str_at(j, "experiment_id", def.experiment_id, "config");
    cfg.model = j.contains("model") ? parse_model(j.at("model"), def.model) : def.model;
    cfg.train = j.contains("train") ? parse_train(j.at("train"), def.train) : def.train;
    cfg.adapt_inter = j.contains("adapt_inter")
                          ? parse_adapt(j.at("adapt_inter"), def.adapt_inter, "adapt_inter")
                          : def.adapt_inter;
    cfg.adapt_intra = j.contains("adapt_intra")
                          ? parse_adapt(j.at("adapt_intra"), def.adapt_intra, "adapt_intra")
                          : def.adapt_intra;
    if (j.contains("aux_tasks")) {
        const json& as = j.at("aux_tasks");
        if (!as.is_array()) throw ConfigError("aux_tasks must be an array");
        cfg.aux_tasks.clear();
        for (std::size_t i = 0; i < as.size(); ++i)
            cfg.aux_tasks.push_back(parse_aux(as[i], "aux_tasks[" + std::to_string(i) + "]"));
    } else {
        cfg.aux_tasks = def.aux_tasks;
    }
    if (j.contains("sites")) {
        const json& ss = j.at("sites");
        if (!ss.is_array()) throw ConfigError("sites must be an array");
        cfg.sites.clear();
        for (std::size_t i = 0; i < ss.size(); ++i)
            cfg.sites.push_back(parse_site(ss[i], "sites[" + std::to_string(i) + "]"));
    } else {
        cfg.sites = def.sites;
    }
    cfg.intra_site = str_at(j, "intra_site", def.intra_site, "config");
    cfg.sweep_alpha_grid = dvec_at(j, "sweep_alpha_grid", def.sweep_alpha_grid, "config");
    cfg.sweep_beta_grid = dvec_at(j, "sweep_beta_grid", def.sweep_beta_grid, "config");
    validate_config(cfg);
    return cfg;
}

std::string config_json(const AppConfig& cfg) {
    nlohmann::ordered_json j;
    j["master_seed"] = cfg.master_seed;
    j["folds"] = cfg.folds;
    j["threads"] = cfg.threads;
    j["experiment_id"] = cfg.experiment_id;
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
    auto as = nlohmann::ordered_json::array();
    for (const auto& a : cfg.aux_tasks) as.push_back(aux_json(a));
    j["aux_tasks"] = std::move(as);
    auto ss = nlohmann::ordered_json::array();
    for (const auto& s : cfg.sites) ss.push_back(site_json(s));
    j["sites"] = std::move(ss);
    j["intra_site"] = cfg.intra_site;
    j["sweep_alpha_grid"] = cfg.sweep_alpha_grid;
    j["sweep_beta_grid"] = cfg.sweep_beta_grid;
    return j.dump(2) + "\n";
}

std::vector<double> default_beta_grid(const AuxTaskSpec& aux) {
    if (aux.loss == AuxLoss::cross_entropy) return {0.1, 0.5, 1.0};
    return {0.01, 0.05, 0.1};
}

HarnessConfig harness_config(const AppConfig& cfg) {
    HarnessConfig h;
    h.master_seed = cfg.master_seed;
    h.folds = cfg.folds;
    h.threads = cfg.threads;
    h.model = cfg.model;
    h.train = cfg.train;
    h.adapt_inter = cfg.adapt_inter;
    h.adapt_intra = cfg.adapt_intra;
    h.experiment_id = cfg.experiment_id;
    return h;
}

} // namespace shiftadapt
