#include "shiftadapt/synthsites.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "shiftadapt/rng.hpp"

namespace shiftadapt {

namespace {

// Orthogonal matrix from modified Gram-Schmidt over a seeded Gaussian
// matrix. Depends only on (dim, rotation_seed) so two sites sharing a
// rotation_seed share the map.
Matrix orthogonal_map(int dim, std::uint64_t rotation_seed) {
    Rng rng(seed_of(rotation_seed, "rotation"));
    Matrix q(dim, dim);
    for (double& v : q.data) v = rng.normal();
    // columns become the orthonormal basis
    for (int j = 0; j < dim; ++j) {
        for (int k = 0; k < j; ++k) {
            double proj = 0.0;
            for (int i = 0; i < dim; ++i) proj += q.at(i, j) * q.at(i, k);
            for (int i = 0; i < dim; ++i) q.at(i, j) -= proj * q.at(i, k);
        }
        double norm = 0.0;
        for (int i = 0; i < dim; ++i) norm += q.at(i, j) * q.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw NumericError("degenerate random matrix during orthogonalization");
        // sign convention keeps the map canonical for a given seed
        double sign = q.at(j, j) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < dim; ++i) q.at(i, j) = q.at(i, j) / norm * sign;
    }
    return q;
}

// Largest-remainder rounding of fraction*n per subgroup; off by at most one
// sample from the exact product.
std::vector<int> subgroup_counts(const std::vector<SubgroupSpec>& groups, int n) {
    int k = int(groups.size());
    std::vector<int> counts(k);
    std::vector<std::pair<double, int>> rem(k);
    int assigned = 0;
    for (int i = 0; i < k; ++i) {
        double exact = groups[std::size_t(i)].fraction * n;
        counts[std::size_t(i)] = int(std::floor(exact));
        rem[std::size_t(i)] = {exact - std::floor(exact), i};
        assigned += counts[std::size_t(i)];
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < n - assigned; ++i) ++counts[std::size_t(rem[std::size_t(i) % rem.size()].second)];
    return counts;
}

std::string fmt12(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void check_csv_token(const std::string& s, const char* what) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos ||
        s.find('\r') != std::string::npos || s.find('"') != std::string::npos)
        throw DataError(std::string(what) + " contains a character the CSV format cannot carry: " + s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const char* what) {
    if (s.empty()) throw DataError(std::string("empty ") + what + " field in CSV");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw DataError(std::string("bad ") + what + " value in CSV: " + s);
    return v;
}

constexpr char kDatasetMagic[4] = {'S', 'A', 'D', 'B'};

// Share of the class separation carried by the site-effect axis. A model
// trained where that axis is clean will lean on it, and a site shift along
// the same axis then misleads the model, so adapting means learning to
// discount the axis rather than translating along it.
constexpr double kSiteAxisSignal = 0.85;

// Displacement of the site-effect axis per unit of site effect, and the
// extra noise that comes with it. A stronger site effect does not just
// displace the axis, it degrades it, so no fixed remapping of the corrupted
// readout can recover the lost signal.
constexpr double kSiteShiftGain = 1.0;
constexpr double kSiteNoiseRate = 1.25;

// Weight of the auxiliary-trait axis in the age label, so age correlates
// with the primary label without duplicating it.
constexpr double kAgeMix = 1.0;

// Age site offset per unit of site-effect magnitude.
constexpr double kAgeOffsetRate = 0.05;

} // namespace

void validate_site(const SiteConfig& cfg) {
    if (cfg.site_id.empty()) throw ConfigError("site: site_id must be non-empty");
    if (cfg.n < 1) throw ConfigError("site " + cfg.site_id + ": n must be >= 1");
    if (cfg.dim < 3) throw ConfigError("site " + cfg.site_id + ": dim must be >= 3 (the generator reserves a class axis, an auxiliary-trait axis and a site-effect axis)");
    if (!(cfg.class_sep > 0.0)) throw ConfigError("site " + cfg.site_id + ": class_sep must be > 0");
    if (!(cfg.noise_sd > 0.0)) throw ConfigError("site " + cfg.site_id + ": noise_sd must be > 0");
    if (!(cfg.aux_age.noise_sd > 0.0)) throw ConfigError("site " + cfg.site_id + ": age noise_sd must be > 0");
    if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob < 0.5))
        throw ConfigError("site " + cfg.site_id + ": flip_prob must be in [0, 0.5)");
    if (!cfg.shift_vec.empty() && int(cfg.shift_vec.size()) != cfg.dim)
        throw ConfigError("site " + cfg.site_id + ": shift_vec length must equal dim");
    for (double v : cfg.shift_vec)
        if (!std::isfinite(v)) throw ConfigError("site " + cfg.site_id + ": shift_vec must be finite");
    if (!std::isfinite(cfg.shift)) throw ConfigError("site " + cfg.site_id + ": shift must be finite");
    if (!cfg.subgroups.empty()) {
        double total = 0.0;
        std::set<std::string> tags;
        for (const auto& g : cfg.subgroups) {
            if (g.tag.empty()) throw ConfigError("site " + cfg.site_id + ": subgroup tag must be non-empty");
            if (!tags.insert(g.tag).second)
                throw ConfigError("site " + cfg.site_id + ": duplicate subgroup tag " + g.tag);
            if (!(g.fraction >= 0.0 && g.fraction <= 1.0))
                throw ConfigError("site " + cfg.site_id + ": subgroup fraction must be in [0,1]");
            total += g.fraction;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ConfigError("site " + cfg.site_id + ": subgroup fractions must sum to 1");
    }
}

Dataset make_site(const SiteConfig& cfg, std::uint64_t master_seed) {
    validate_site(cfg);
    const int n = cfg.n;
    const int d = cfg.dim;
    const std::uint64_t site_seed = seed_of(master_seed, "site", cfg.site_id);
    const Matrix q = orthogonal_map(d, cfg.rotation_seed);

    // class labels: balanced halves, then shuffled
    std::vector<int> labels(std::size_t(n), 0);
    for (int i = n - n / 2; i < n; ++i) labels[std::size_t(i)] = 1;
    {
        Rng lr(seed_of(site_seed, "labels"));
        shuffle(labels, lr);
    }

    // subgroup membership: counts by largest remainder, slots shuffled
    std::vector<int> group_of(std::size_t(n), -1);
    if (!cfg.subgroups.empty()) {
        std::vector<int> counts = subgroup_counts(cfg.subgroups, n);
        std::vector<int> slots;
        slots.reserve(std::size_t(n));
        for (std::size_t g = 0; g < counts.size(); ++g)
            slots.insert(slots.end(), std::size_t(counts[g]), int(g));
        Rng gr(seed_of(site_seed, "groups"));
        shuffle(slots, gr);
        group_of = std::move(slots);
    }

    // A mild site-level age offset proportional to the site effect. Kept
    // small so an adapted age head can absorb it within one training run.
    const double site_offset =
        kAgeOffsetRate *
        (std::abs(cfg.shift) +
         (cfg.shift_vec.empty()
              ? 0.0
              : std::sqrt(std::inner_product(cfg.shift_vec.begin(), cfg.shift_vec.end(),
                                             cfg.shift_vec.begin(), 0.0))));

    Dataset out;
    out.site_id = cfg.site_id;
    out.features = Matrix(n, d);
    out.primary = labels;
    out.aux["age"].resize(std::size_t(n));
    out.aux["sex"].resize(std::size_t(n));
    if (!cfg.subgroups.empty()) out.subgroup.resize(std::size_t(n));

    Rng zr(seed_of(site_seed, "latent"));
    Rng fr(seed_of(site_seed, "flip"));
    Rng ar(seed_of(site_seed, "age"));
    std::vector<double> z(static_cast<std::size_t>(d));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) z[std::size_t(j)] = cfg.noise_sd * zr.normal();

        const int label = labels[std::size_t(i)];
        z[0] += (label == 1 ? 0.5 : -0.5) * cfg.class_sep;
        z[2] += (label == 1 ? 0.5 : -0.5) * cfg.class_sep * kSiteAxisSignal;

        // sex is the class label with flip_prob label noise: a demographic
        // trait strongly but imperfectly associated with the condition, so a
        // sex head leans on the same class-bearing axes as the primary head;
        // the flip draw is consumed on every row
        int sex = label;
        if (fr.uniform() < cfg.flip_prob) sex = 1 - sex;

        double off = cfg.shift;
        if (group_of[std::size_t(i)] >= 0) {
            const auto& g = cfg.subgroups[std::size_t(group_of[std::size_t(i)])];
            off += g.extra_shift;
            out.subgroup[std::size_t(i)] = g.tag;
        }
        // site effects displace and degrade the axis that also carries part
        // of the class signal, like scanner artifacts that corrupt a subset
        // of informative image features; the noise draw is consumed on every
        // row so subgroup offsets do not desynchronize the stream
        z[2] += kSiteShiftGain * off + kSiteNoiseRate * std::abs(off) * zr.normal();

        auto x = out.features.row(i);
        for (int r = 0; r < d; ++r) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += q.at(r, c) * z[std::size_t(c)];
            x[std::size_t(r)] = s;
        }
        if (!cfg.shift_vec.empty())
            for (int r = 0; r < d; ++r) x[std::size_t(r)] += cfg.shift_vec[std::size_t(r)];

        out.aux["sex"][std::size_t(i)] = double(sex);
        out.aux["age"][std::size_t(i)] = cfg.aux_age.slope * label + kAgeMix * z[std::size_t(1)] +
                                         site_offset + cfg.aux_age.noise_sd * ar.normal();
    }
    return out;
}

std::vector<Dataset> make_consortium(const std::vector<SiteConfig>& sites,
                                     std::uint64_t master_seed) {
    std::set<std::string> ids;
    for (const auto& s : sites)
        if (!ids.insert(s.site_id).second) throw ConfigError("duplicate site_id: " + s.site_id);
    std::vector<Dataset> out;
    out.reserve(sites.size());
    for (const auto& s : sites) out.push_back(make_site(s, master_seed));
    return out;
}

double mmd(const Matrix& X, const Matrix& Y, const KernelSpec& spec) {
    validate_kernel(spec);
    if (X.rows < 2 || Y.rows < 2) throw DataError("mmd: need at least two rows per side");
    if (X.cols != Y.cols) throw DataError("mmd: dimension mismatch");
    const int n = X.rows;
    const int m = Y.rows;
    double xx = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) xx += kernel_eval(spec, X.row(i), X.row(j));
    double yy = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) yy += kernel_eval(spec, Y.row(i), Y.row(j));
    double xy = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) xy += kernel_eval(spec, X.row(i), Y.row(j));
    double u = 2.0 * xx / (double(n) * double(n - 1)) + 2.0 * yy / (double(m) * double(m - 1)) -
               2.0 * xy / (double(n) * double(m));
    return std::sqrt(std::max(0.0, u));
}

void save_csv(const Dataset& d, const std::string& path) {
    if (!d.has_primary()) throw DataError("save_csv: dataset has no primary labels");
    auto age_it = d.aux.find("age");
    auto sex_it = d.aux.find("sex");
    if (age_it == d.aux.end() || sex_it == d.aux.end())
        throw DataError("save_csv: dataset needs age and sex aux columns");
    check_csv_token(d.site_id, "site_id");
    for (const auto& t : d.subgroup) check_csv_token(t, "subgroup tag");

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    for (int j = 0; j < d.dim(); ++j) out << "feat_" << j << ",";
    out << "primary,age,sex,site,subgroup\n";
    for (int i = 0; i < d.size(); ++i) {
        auto row = d.features.row(i);
        for (int j = 0; j < d.dim(); ++j) out << fmt12(row[std::size_t(j)]) << ",";
        out << d.primary[std::size_t(i)] << "," << fmt12(age_it->second[std::size_t(i)]) << ","
            << fmt12(sex_it->second[std::size_t(i)]) << "," << d.site_id << ","
            << (d.has_subgroup() ? d.subgroup[std::size_t(i)] : std::string()) << "\n";
    }
    if (!out) throw DataError("short write: " + path);
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> head = split_csv_line(line);
    int dim = 0;
    while (dim < int(head.size()) && head[std::size_t(dim)] == "feat_" + std::to_string(dim)) ++dim;
    std::vector<std::string> tail(head.begin() + dim, head.end());
    const std::vector<std::string> want = {"primary", "age", "sex", "site", "subgroup"};
    if (dim == 0 || tail != want) throw DataError("unrecognized CSV header in " + path);

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (int(f.size()) != dim + 5)
            throw DataError("CSV row with wrong field count in " + path);
        rows.push_back(std::move(f));
    }

    Dataset d;
    int n = int(rows.size());
    d.features = Matrix(n, dim);
    d.primary.resize(std::size_t(n));
    d.aux["age"].resize(std::size_t(n));
    d.aux["sex"].resize(std::size_t(n));
    bool any_tag = false;
    std::vector<std::string> tags(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& f = rows[std::size_t(i)];
        for (int j = 0; j < dim; ++j) d.features.at(i, j) = parse_double(f[std::size_t(j)], "feature");
        double p = parse_double(f[std::size_t(dim)], "primary");
        d.primary[std::size_t(i)] = int(p);
        if (double(d.primary[std::size_t(i)]) != p) throw DataError("non-integer primary label in CSV");
        d.aux["age"][std::size_t(i)] = parse_double(f[std::size_t(dim) + 1], "age");
        d.aux["sex"][std::size_t(i)] = parse_double(f[std::size_t(dim) + 2], "sex");
        const std::string& site = f[std::size_t(dim) + 3];
        if (i == 0) d.site_id = site;
        else if (site != d.site_id) throw DataError("mixed site ids in one CSV: " + path);
        tags[std::size_t(i)] = f[std::size_t(dim) + 4];
        if (!tags[std::size_t(i)].empty()) any_tag = true;
    }
    if (any_tag) d.subgroup = std::move(tags);
    return d;
}

void save_binary(const Dataset& d, const std::string& path) {
    std::string buf;
    buf.append(kDatasetMagic, 4);
    binio::put_u32(buf, 1);
    binio::put_str(buf, d.site_id);
    binio::put_i32(buf, d.size());
    binio::put_i32(buf, d.dim());
    for (double v : d.features.data) binio::put_f64(buf, v);
    binio::put_u32(buf, d.has_primary() ? 1 : 0);
    if (d.has_primary())
        for (int v : d.primary) binio::put_i32(buf, v);
    binio::put_u32(buf, std::uint32_t(d.aux.size()));
    for (const auto& [name, col] : d.aux) {
        if (int(col.size()) != d.size()) throw DataError("save_binary: aux column length mismatch");
        binio::put_str(buf, name);
        for (double v : col) binio::put_f64(buf, v);
    }
    binio::put_u32(buf, d.has_subgroup() ? 1 : 0);
    if (d.has_subgroup())
        for (const auto& t : d.subgroup) binio::put_str(buf, t);
    binio::write_file(path, buf);
}

Dataset load_binary(const std::string& path) {
    std::string buf = binio::read_file(path);
    binio::Reader r{buf};
    r.need(4);
    if (std::memcmp(buf.data(), kDatasetMagic, 4) != 0)
        throw DataError("not a dataset file: " + path);
    r.pos = 4;
    if (r.u32() != 1) throw DataError("unsupported dataset file version: " + path);
    Dataset d;
    d.site_id = r.str();
    int n = r.i32();
    int dim = r.i32();
    if (n < 0 || dim < 0) throw DataError("corrupt dataset file: " + path);
    d.features = Matrix(n, dim);
    for (double& v : d.features.data) v = r.f64();
    if (r.u32() == 1) {
        d.primary.resize(std::size_t(n));
        for (int& v : d.primary) v = r.i32();
    }
    std::uint32_t naux = r.u32();
    for (std::uint32_t a = 0; a < naux; ++a) {
        std::string name = r.str();
        auto& col = d.aux[name];
        col.resize(std::size_t(n));
        for (double& v : col) v = r.f64();
    }
    if (r.u32() == 1) {
        d.subgroup.resize(std::size_t(n));
        for (auto& t : d.subgroup) t = r.str();
    }
    if (r.pos != buf.size()) throw DataError("trailing bytes in dataset file: " + path);
    return d;
}

} // namespace shiftadapt
