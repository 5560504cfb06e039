#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "shiftadapt/model.hpp"
#include "shiftadapt/rng.hpp"
#include "shiftadapt/tape.hpp"

using namespace shiftadapt;

namespace {

ModelConfig tiny_model() {
    ModelConfig m;
    m.input_dim = 3;
    m.extractor_widths = {4};
    m.head_widths = {2};
    m.dropout_rate = 0.0;
    return m;
}

} // namespace

TEST_CASE("gradient matches central differences on random nets") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        int checked = 0;
        int bad = fdcheck::check_gradients(seed, 1e-4, 1e-7, &checked);
        CAPTURE(seed);
        CHECK(bad == 0);
        CHECK(checked > 0);
    }
}

TEST_CASE("proximal gradient vanishes at the anchor") {
    ModelConfig m = tiny_model();
    ParamSet p = init_params(m, {}, 5);
    SegmentSet all{"theta_base", "phi_main"};
    Tape tape(p, all);
    auto g = tape.grad(tape.proximal(all, p, 3.0));
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("frozen segment gradient entries are exact zeros") {
    ModelConfig m = tiny_model();
    ParamSet p = init_params(m, {}, 6);
    Rng r(1);
    for (double& v : p.values) v += 0.1 * r.normal();
    SegmentSet trainable{"phi_main"};
    Tape tape(p, trainable);
    std::vector<double> x{0.3, -0.5, 1.2};
    Tape::NodeId in = tape.input(x);
    Tape::NodeId feat = tape.relu(tape.affine("theta_base", 0, in));
    Tape::NodeId h = tape.relu(tape.affine("phi_main", 0, feat));
    Tape::NodeId logits = tape.affine("phi_main", 1, h);
    auto g = tape.grad(tape.cross_entropy_loss(logits, 0));
    const Segment& base = p.segment("theta_base");
    for (std::size_t k = base.offset; k < base.offset + base.size; ++k) CHECK(g[k] == 0.0);
    const Segment& head = p.segment("phi_main");
    double head_mass = 0.0;
    for (std::size_t k = head.offset; k < head.offset + head.size; ++k)
        head_mass += std::abs(g[k]);
    CHECK(head_mass > 0.0);
}

TEST_CASE("dropout mask is a pure function of the seed") {
    auto a = dropout_mask(64, 0.5, 123);
    auto b = dropout_mask(64, 0.5, 123);
    CHECK(a == b);
    auto c = dropout_mask(64, 0.5, 124);
    CHECK(a != c);
}

TEST_CASE("dropout mask entries are 0 or the inverted-keep scale") {
    const double rate = 0.3;
    auto m = dropout_mask(1000, rate, 9);
    int kept = 0;
    for (double v : m) {
        bool valid = v == 0.0 || v == doctest::Approx(1.0 / (1.0 - rate)).epsilon(1e-12);
        CHECK(valid);
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 550);
    CHECK(kept < 850);
}

TEST_CASE("dropout at rate zero is the identity") {
    auto m = dropout_mask(16, 0.0, 3);
    for (double v : m) CHECK(v == 1.0);
}

TEST_CASE("weighted sum combines scalar terms") {
    ModelConfig mc = tiny_model();
    ParamSet p = init_params(mc, {}, 2);
    Tape tape(p, {"phi_main"});
    std::vector<double> a{2.0}, b{3.0};
    // single-entry inputs act as scalars through weighted_sum
    Tape::NodeId na = tape.input(a);
    Tape::NodeId nb = tape.input(b);
    Tape::NodeId s = tape.weighted_sum({na, nb}, {0.5, 2.0});
    CHECK(tape.value(s) == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("affine layer reproduces a hand computation") {
    ModelConfig m;
    m.input_dim = 2;
    m.extractor_widths = {};
    m.head_widths = {};
    ParamSet p = init_params(m, {}, 0);
    // phi_main is a single 2x2 affine layer: set W = I, b = 0
    const Segment& head = p.segment("phi_main");
    REQUIRE(head.layers.size() == 1);
    for (std::size_t k = head.offset; k < head.offset + head.size; ++k) p.values[k] = 0.0;
    p.values[head.offset + 0] = 1.0; // W(0,0)
    p.values[head.offset + 3] = 1.0; // W(1,1)
    Tape tape(p, {"phi_main"});
    std::vector<double> x{2.0, -3.0};
    Tape::NodeId out = tape.affine("phi_main", 0, tape.input(x));
    auto v = tape.values(out);
    CHECK(v[0] == doctest::Approx(2.0));
    CHECK(v[1] == doctest::Approx(-3.0));
}

TEST_CASE("relu clamps negatives and keeps positives") {
    ModelConfig mc = tiny_model();
    ParamSet p = init_params(mc, {}, 2);
    Tape tape(p, {"phi_main"});
    std::vector<double> x{-1.5, 0.0, 2.5};
    auto v = tape.values(tape.relu(tape.input(x)));
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
    CHECK(v[2] == 2.5);
}

TEST_CASE("model_output agrees with forward") {
    ModelConfig m = tiny_model();
    m.dropout_rate = 0.5;
    std::vector<AuxTaskSpec> aux;
    ParamSet p = init_params(m, aux, 11);
    Rng r(4);
    std::vector<double> x{0.7, -0.2, 0.4};
    for (auto mode : {ForwardMode::eval(), ForwardMode::train_with(99)}) {
        auto ref = forward(p, m, x, HeadSel::primary(), mode);
        Tape tape(p, {"theta_base"});
        auto got = tape.values(tape.model_output(m, tape.input(x), "phi_main", mode));
        REQUIRE(got.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == ref[i]);
    }
}

TEST_CASE("non-finite loss is rejected at grad time") {
    ModelConfig m = tiny_model();
    ParamSet p = init_params(m, {}, 3);
    Tape tape(p, {"phi_main"});
    std::vector<double> big{1e308};
    // 1e308 * 1e10 overflows to inf in the weighted sum
    Tape::NodeId s = tape.weighted_sum({tape.input(big)}, {1e10});
    bool threw = false;
    try {
        tape.grad(s);
    } catch (const NumericError&) {
        threw = true;
    }
    CHECK(threw);
}
