#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "shiftadapt/config.hpp"
#include "shiftadapt/pipeline.hpp"
#include "shiftadapt/rng.hpp"
#include "shiftadapt/synthsites.hpp"

using namespace shiftadapt;

namespace {

// Small, fast problem shared by the phase tests: 3 latent dims, one
// 3-unit extractor layer, shallow heads.
ModelConfig small_model() {
    ModelConfig m;
    m.input_dim = 4;
    m.extractor_widths = {3};
    m.head_widths = {3};
    m.dropout_rate = 0.5;
    return m;
}

std::vector<AuxTaskSpec> small_aux() {
    AuxTaskSpec sex;
    sex.task_id = "sex";
    sex.kind = AuxKind::classification;
    sex.classes = 2;
    sex.loss = AuxLoss::cross_entropy;
    AuxTaskSpec age;
    age.task_id = "age";
    age.kind = AuxKind::regression;
    age.loss = AuxLoss::huber;
    age.beta = 0.1;
    return {sex, age};
}

Dataset small_site(double shift, std::uint64_t seed, const char* id = "s") {
    SiteConfig cfg;
    cfg.site_id = id;
    cfg.n = 60;
    cfg.dim = 4;
    cfg.class_sep = 3.0;
    cfg.noise_sd = 0.5;
    cfg.shift = shift;
    cfg.flip_prob = 0.0;
    return make_site(cfg, seed);
}

TrainConfig fast_train(std::uint64_t seed) {
    TrainConfig t;
    t.epochs = 4;
    t.batch_size = 6;
    t.seed = seed;
    return t;
}

double seg_dist(const ParamSet& a, const ParamSet& b, const std::string& seg) {
    auto va = a.segment_values(seg);
    auto vb = b.segment_values(seg);
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
    return std::sqrt(s);
}

bool seg_equal(const ParamSet& a, const ParamSet& b, const std::string& seg) {
    auto va = a.segment_values(seg);
    auto vb = b.segment_values(seg);
    if (va.size() != vb.size()) return false;
    for (std::size_t i = 0; i < va.size(); ++i)
        if (va[i] != vb[i]) return false;
    return true;
}

} // namespace

TEST_CASE("parameter layout matches the hand count") {
    ModelConfig m;
    m.input_dim = 3;
    m.extractor_widths = {4};
    m.head_widths = {2};
    m.num_primary_classes = 2;
    AuxTaskSpec t;
    t.task_id = "a";
    t.classes = 2;
    // (3*4+4) + [(4*2+2) + (2*2+2)] per head, two heads
    ParamSet p = init_params(m, {t}, 1);
    CHECK(p.values.size() == 16 + 16 + 16);

    // and the spec-style single-layer heads: widths [2] head on 4 features
    ModelConfig m2 = m;
    m2.head_widths = {};
    ParamSet p2 = init_params(m2, {t}, 1);
    CHECK(p2.values.size() == 16 + 10 + 10);
}

TEST_CASE("init is deterministic with zero biases") {
    ModelConfig m = small_model();
    ParamSet a = init_params(m, small_aux(), 7);
    ParamSet b = init_params(m, small_aux(), 7);
    CHECK(a.values == b.values);
    for (const auto& seg : a.layout) {
        for (std::size_t l = 0; l < seg.layers.size(); ++l) {
            const auto& shape = seg.layers[l];
            // layer_offset is absolute; the bias block follows the weights
            std::size_t bias_at =
                seg.layer_offset(int(l)) + std::size_t(shape.out) * std::size_t(shape.in);
            for (int i = 0; i < shape.out; ++i) CHECK(a.values[bias_at + std::size_t(i)] == 0.0);
        }
    }
}

TEST_CASE("adding an aux head never changes the shared segments' init") {
    ModelConfig m = small_model();
    auto aux = small_aux();
    ParamSet one = init_params(m, {aux[0]}, 9);
    ParamSet two = init_params(m, aux, 9);
    CHECK(seg_equal(one, two, "theta_base"));
    CHECK(seg_equal(one, two, "phi_main"));
    CHECK(seg_equal(one, two, aux_segment_name("sex")));
}

TEST_CASE("forward with zero weights is uniform and ties break to class 0") {
    ModelConfig m = small_model();
    m.dropout_rate = 0.0;
    ParamSet p = init_params(m, {}, 3);
    for (double& v : p.values) v = 0.0;
    std::vector<double> x{0.4, -1.0, 0.2, 0.9};
    auto [cls, probs] = infer(p, m, x);
    CHECK(cls == 0);
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("infer reproduces the logistic value for hand-set logits") {
    // single affine head on the raw 1-d input produces logits [5,0]
    ModelConfig m;
    m.input_dim = 1;
    m.extractor_widths = {};
    m.head_widths = {};
    ParamSet p = init_params(m, {}, 0);
    const Segment& head = p.segment("phi_main");
    for (std::size_t k = head.offset; k < head.offset + head.size; ++k) p.values[k] = 0.0;
    p.values[head.offset + 0] = 5.0; // W(0,0)
    std::vector<double> x{1.0};
    auto [cls, probs] = infer(p, m, x);
    CHECK(cls == 0);
    CHECK(probs[0] == doctest::Approx(0.9933071490757153).epsilon(1e-12));
    auto [cls2, probs2] = infer(p, m, std::vector<double>{-1.0});
    CHECK(cls2 == 1);
    CHECK(probs2[0] == doctest::Approx(1.0 - 0.9933071490757153).epsilon(1e-10));
}

TEST_CASE("infer probabilities sum to one for random weights") {
    ModelConfig m = small_model();
    ParamSet p = init_params(m, {}, 21);
    Rng r(5);
    for (double& v : p.values) v += 0.5 * r.normal();
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x{r.normal(), r.normal(), r.normal(), r.normal()};
        auto [cls, probs] = infer(p, m, x);
        double sum = 0.0;
        for (double q : probs) sum += q;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        CHECK(cls >= 0);
        CHECK(cls < 2);
    }
}

TEST_CASE("evaluate counts argmax agreement") {
    ModelConfig m;
    m.input_dim = 1;
    m.extractor_widths = {};
    m.head_widths = {};
    m.dropout_rate = 0.0;
    ParamSet p = init_params(m, {}, 0);
    const Segment& head = p.segment("phi_main");
    for (std::size_t k = head.offset; k < head.offset + head.size; ++k) p.values[k] = 0.0;
    p.values[head.offset + 0] = 1.0; // logit_0 = x, so x>0 predicts class 0

    Dataset d;
    d.site_id = "toy";
    d.features = Matrix(4, 1);
    d.features.at(0, 0) = 1.0;
    d.features.at(1, 0) = 2.0;
    d.features.at(2, 0) = -1.0;
    d.features.at(3, 0) = -2.0;
    d.primary = {0, 0, 1, 1};
    CHECK(evaluate(p, m, d) == 1.0);
    d.primary = {1, 1, 0, 0};
    CHECK(evaluate(p, m, d) == 0.0);
    d.primary = {0, 1, 1, 0};
    CHECK(evaluate(p, m, d) == 0.5);

    // zero weights predict class 0 everywhere, so accuracy is the class-0 rate
    for (std::size_t k = head.offset; k < head.offset + head.size; ++k) p.values[k] = 0.0;
    d.primary = {0, 1, 1, 1};
    CHECK(evaluate(p, m, d) == doctest::Approx(0.25));
}

TEST_CASE("pretrain with a zero-beta aux task walks the plain ERM trajectory") {
    Dataset d = small_site(0.0, 31);
    ModelConfig m = small_model();
    auto aux = small_aux();
    aux.resize(1);
    aux[0].beta = 0.0;
    TrainConfig tc = fast_train(13);
    ParamSet multi = pretrain(d, m, aux, tc);
    ParamSet plain = erm_train(d, m, tc, tc.weight_decay);
    CHECK(seg_equal(multi, plain, "theta_base"));
    CHECK(seg_equal(multi, plain, "phi_main"));
}

TEST_CASE("pretrain is deterministic and learns a separable problem") {
    SiteConfig cfg;
    cfg.site_id = "sep";
    cfg.n = 120;
    cfg.dim = 4;
    cfg.class_sep = 10.0;
    cfg.noise_sd = 0.1;
    cfg.flip_prob = 0.0;
    Dataset d = make_site(cfg, 3);

    ModelConfig m = small_model();
    TrainConfig tc = fast_train(17);
    tc.epochs = 30;
    // the widely separated clusters saturate the features, so the default lr
    // would leave the net within a hair of its random init; give Adam room
    tc.lr = 5e-3;
    auto aux = small_aux();
    ParamSet a = pretrain(d, m, aux, tc);
    ParamSet b = pretrain(d, m, aux, tc);
    CHECK(a.values == b.values);
    CHECK(evaluate(a, m, d) >= 0.99);
}

TEST_CASE("pretrain rejects an empty aux list and a missing aux column") {
    Dataset d = small_site(0.0, 5);
    ModelConfig m = small_model();
    TrainConfig tc = fast_train(1);
    CHECK_THROWS_AS(pretrain(d, m, {}, tc), ConfigError);
    auto aux = small_aux();
    aux[0].task_id = "absent";
    CHECK_THROWS_AS(pretrain(d, m, aux, tc), DataError);
}

TEST_CASE("feature adaptation leaves the primary head bitwise untouched") {
    Dataset src = small_site(0.0, 41, "src");
    Dataset tgt = small_site(3.0, 42, "tgt");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(23);
    ParamSet pre = pretrain(src, m, aux, tc);

    AdaptConfig ac;
    ac.alpha = 0.5;
    ac.lambda_wd = 0.0;
    ParamSet adapted = adapt_features(pre, strip_primary(tgt), m, aux, ac, tc);
    CHECK(seg_equal(adapted, pre, "phi_main"));
    CHECK(!seg_equal(adapted, pre, "theta_base"));
}

TEST_CASE("feature adaptation never reads the primary column") {
    Dataset src = small_site(0.0, 51, "src");
    Dataset tgt = small_site(3.0, 52, "tgt");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(29);
    ParamSet pre = pretrain(src, m, aux, tc);

    AdaptConfig ac;
    ac.alpha = 0.5;
    ac.lambda_wd = 0.0;

    // identical features and aux columns, wildly different primary labels
    Dataset stripped = strip_primary(tgt);
    Dataset poisoned = tgt;
    for (auto& y : poisoned.primary) y = 1 - y;

    ParamSet from_stripped = adapt_features(pre, stripped, m, aux, ac, tc);
    ParamSet from_poisoned = adapt_features(pre, poisoned, m, aux, ac, tc);
    ParamSet from_plain = adapt_features(pre, tgt, m, aux, ac, tc);
    CHECK(from_stripped.values == from_poisoned.values);
    CHECK(from_stripped.values == from_plain.values);
}

TEST_CASE("feature adaptation proximal limit pins theta_base") {
    Dataset src = small_site(0.0, 61, "src");
    Dataset tgt = small_site(3.0, 62, "tgt");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(31);
    ParamSet pre = pretrain(src, m, aux, tc);

    AdaptConfig ac;
    ac.lambda_wd = 0.0;
    Dataset view = strip_primary(tgt);

    ac.alpha = 1e6;
    ParamSet pinned = adapt_features(pre, view, m, aux, ac, tc);
    CHECK(seg_dist(pinned, pre, "theta_base") <= 1e-3);

    // distance to the anchor shrinks as alpha grows
    double prev = 1e300;
    for (double alpha : {1e3, 1e4, 1e5}) {
        ac.alpha = alpha;
        ParamSet p = adapt_features(pre, view, m, aux, ac, tc);
        double dist = seg_dist(p, pre, "theta_base");
        CHECK(dist <= prev + 1e-12);
        prev = dist;
    }
}

TEST_CASE("adapting to a target equal to the source does not move the needle") {
    Dataset src = small_site(0.0, 71, "src");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(37);
    tc.epochs = 10;
    tc.lr = 5e-3;
    ParamSet pre = pretrain(src, m, aux, tc);

    AdaptConfig ac;
    ac.alpha = 0.5;
    ac.lambda_wd = 0.0;
    ParamSet adapted = adapt_features(pre, strip_primary(src), m, {aux[0]}, ac, tc);

    CHECK(aux_loss_mean(adapted, m, aux[0], src) <= aux_loss_mean(pre, m, aux[0], src) + 1e-9);
    CHECK(std::abs(evaluate(adapted, m, src) - evaluate(pre, m, src)) < 0.02);
}

TEST_CASE("head refit trains only phi_main") {
    Dataset src = small_site(0.0, 81, "src");
    Dataset tgt = small_site(3.0, 82, "tgt");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(41);
    ParamSet pre = pretrain(src, m, aux, tc);
    AdaptConfig ac;
    ac.alpha = 0.5;
    ac.lambda_wd = 0.0;
    ParamSet adapted = adapt_features(pre, strip_primary(tgt), m, aux, ac, tc);
    ParamSet refit = adapt_primary(adapted, src, m, ac, tc);
    CHECK(seg_equal(refit, adapted, "theta_base"));
    CHECK(seg_equal(refit, adapted, aux_segment_name("sex")));
    CHECK(seg_equal(refit, adapted, aux_segment_name("age")));
    CHECK(!seg_equal(refit, adapted, "phi_main"));
}

TEST_CASE("head refit proximal limit returns the original head") {
    Dataset src = small_site(0.0, 91, "src");
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(43);
    ParamSet pre = pretrain(src, m, aux, tc);
    AdaptConfig ac;
    ac.alpha = 1e6;
    ac.lambda_wd = 0.0;
    // adapted base equals the pretrained base here, so the anchor head is
    // already optimal for the penalty and must survive nearly unchanged
    ParamSet refit = adapt_primary(pre, src, m, ac, tc);
    CHECK(seg_dist(refit, pre, "phi_main") <= 1e-3);
}

TEST_CASE("subgroup fine-tune with alpha 0 is ERM continued from the anchor") {
    Dataset d = small_site(1.0, 95);
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(47);
    ParamSet pre = pretrain(d, m, aux, tc);

    AdaptConfig ac;
    ac.alpha = 0.0;
    ac.lambda_wd = 0.02;
    ParamSet tuned = finetune_subgroup(pre, d, m, ac, tc);
    ParamSet cont = erm_train(d, m, tc, ac.lambda_wd, &pre);
    CHECK(tuned.values == cont.values);
}

TEST_CASE("subgroup fine-tune proximal limit stays at the anchor") {
    Dataset d = small_site(1.0, 97);
    ModelConfig m = small_model();
    auto aux = small_aux();
    TrainConfig tc = fast_train(53);
    ParamSet pre = pretrain(d, m, aux, tc);
    AdaptConfig ac;
    ac.alpha = 1e6;
    ac.lambda_wd = 0.0;
    ParamSet tuned = finetune_subgroup(pre, d, m, ac, tc);
    double total = 0.0;
    for (std::size_t i = 0; i < tuned.values.size(); ++i) {
        double dv = tuned.values[i] - pre.values[i];
        total += dv * dv;
    }
    CHECK(std::sqrt(total) <= 1e-3);
}

TEST_CASE("full pipeline ordering holds on a strongly shifted pair") {
    // one seed, moderate size: SrcReg >= TarAdapt >= SrcOnly as fold means
    // is the harness's job; here the pieces just have to point the same way
    // on an easy instance
    SiteConfig s;
    s.site_id = "src";
    s.n = 150;
    s.dim = 6;
    s.class_sep = 3.0;
    s.noise_sd = 0.4;
    s.flip_prob = 0.0;
    Dataset src = make_site(s, 111);
    s.site_id = "tgt";
    s.shift = 4.0;
    Dataset tgt = make_site(s, 111);

    ModelConfig m = small_model();
    m.input_dim = 6;
    auto aux = small_aux();
    TrainConfig tc = fast_train(59);
    tc.epochs = 20;
    ParamSet pre = pretrain(src, m, {aux[1]}, tc);
    AdaptConfig ac;
    ac.alpha = 0.5;
    ac.lambda_wd = 0.0;
    ParamSet adapted = adapt_features(pre, strip_primary(tgt), m, {aux[1]}, ac, tc);
    ParamSet refit = adapt_primary(adapted, src, m, ac, tc);

    double src_only = evaluate(pre, m, tgt);
    double tar_adapt = evaluate(adapted, m, tgt);
    double src_reg = evaluate(refit, m, tgt);
    CHECK(tar_adapt >= src_only - 0.02);
    CHECK(src_reg >= tar_adapt - 0.02);
    CHECK(src_reg > src_only);
}
