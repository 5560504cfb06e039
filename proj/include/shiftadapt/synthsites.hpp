#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shiftadapt/dataset.hpp"
#include "shiftadapt/kernel.hpp"

namespace shiftadapt {

struct SubgroupSpec {
    std::string tag;
    double fraction = 0;
    double extra_shift = 0;
};

// Age column generator: age = slope*class + site_offset + N(0, noise_sd^2),
// where site_offset is a small fixed fraction of the site's shift magnitude.
struct AuxAgeSpec {
    double slope = 2.0;
    double noise_sd = 0.5;
};

// One synthetic study. Latent space: axis 0 carries the two class means
// (+-class_sep/2); axis 1 feeds the age label only; axis 2 carries a
// weaker copy of the class signal plus all site effects; everything has
// isotropic N(0, noise_sd^2) noise. Rows are mapped through a seeded
// orthogonal matrix (QR of a rotation_seed-keyed Gaussian matrix), which
// re-expresses the same geometry without changing separability.
//
// A scalar `shift` displaces axis 2 before the map. A model trained where
// that axis is clean will use its class signal and be misled at shifted
// sites, the way scanner artifacts corrupt a subset of informative image
// features. A non-empty shift_vec is added in feature space instead.
struct SiteConfig {
    std::string site_id;
    int n = 600;
    int dim = 20;
    double class_sep = 4.0;
    double noise_sd = 1.0;
    double shift = 0.0;
    std::vector<double> shift_vec; // optional explicit feature-space offset
    std::uint64_t rotation_seed = 7;
    AuxAgeSpec aux_age;
    double flip_prob = 0.05; // sex label flip probability
    std::vector<SubgroupSpec> subgroups;
};

void validate_site(const SiteConfig& cfg);

// Deterministic in (config, master_seed); every random stream is derived
// from (master_seed, site_id), so sites never share draws. The sex column
// is the primary label flipped with flip_prob, a stand-in for a demographic
// trait strongly but imperfectly associated with the condition; the age
// column mixes the class label with the axis-1 latent. Subgroup members get
// an extra axis-2 offset extra_shift. Subgroup counts follow
// largest-remainder rounding of the fractions (within one sample).
Dataset make_site(const SiteConfig& cfg, std::uint64_t master_seed);

// make_site per config; duplicate site_ids are rejected. Adding a site
// never perturbs the others.
std::vector<Dataset> make_consortium(const std::vector<SiteConfig>& sites,
                                     std::uint64_t master_seed);

// Square root of the unbiased U-statistic estimate of squared MMD between
// the row sets, clamped at zero. Needs at least two rows per side.
double mmd(const Matrix& X, const Matrix& Y, const KernelSpec& spec);

// CSV with header feat_0..feat_{d-1},primary,age,sex,site,subgroup and
// 12 significant digits; round-trips to that precision. The binary format
// round-trips bitwise.
void save_csv(const Dataset& d, const std::string& path);
Dataset load_csv(const std::string& path);
void save_binary(const Dataset& d, const std::string& path);
Dataset load_binary(const std::string& path);

} // namespace shiftadapt
