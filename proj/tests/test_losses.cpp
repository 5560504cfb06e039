#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "shiftadapt/losses.hpp"
#include "shiftadapt/rng.hpp"

using namespace shiftadapt;

TEST_CASE("softmax sums to one") {
    Rng r(1);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> logits(std::size_t(2 + rep % 5));
        for (double& v : logits) v = 20.0 * (r.uniform() - 0.5);
        auto p = softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax survives huge logits") {
    std::vector<double> logits{1000.0, 0.0};
    auto p = softmax(logits);
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(std::isfinite(p[1]));
}

TEST_CASE("cross entropy on uniform logits is ln 2") {
    std::vector<double> logits{0.0, 0.0};
    CHECK(cross_entropy(logits, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("cross entropy handles a 1000 logit without overflow") {
    std::vector<double> logits{1000.0, 0.0};
    double l = cross_entropy(logits, 0);
    CHECK(std::isfinite(l));
    CHECK(l < 1e-300);
}

TEST_CASE("cross entropy of a 2-gap wrong label is ln(1+e^2)") {
    // logits [1,-1], label 1: margin is -2
    std::vector<double> logits{1.0, -1.0};
    CHECK(cross_entropy(logits, 1) == doctest::Approx(2.1269280110429727).epsilon(1e-12));
}

TEST_CASE("cross entropy is invariant to constant logit shifts") {
    Rng r(2);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> logits{3.0 * r.normal(), 3.0 * r.normal(), 3.0 * r.normal()};
        double c = 50.0 * (r.uniform() - 0.5);
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += c;
        for (int label = 0; label < 3; ++label)
            CHECK(std::abs(cross_entropy(logits, label) - cross_entropy(shifted, label)) < 1e-9);
    }
}

TEST_CASE("huber zero residual is zero") {
    CHECK(huber(3.0, 3.0, 1.0) == 0.0);
}

TEST_CASE("huber quadratic branch") {
    CHECK(huber(0.5, 0.0, 1.0) == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("huber linear branch") {
    // delta*(|r| - delta/2) = 1*(2 - 0.5)
    CHECK(huber(2.0, 0.0, 1.0) == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("huber one-sided slopes agree at the branch point") {
    // the secant of the linear branch is exactly delta; the quadratic-side
    // secant is exactly delta - h/2, so both one-sided derivatives are delta
    const double delta = 1.0, h = 1e-3;
    double right = (huber(delta + h, 0.0, delta) - huber(delta, 0.0, delta)) / h;
    double left = (huber(delta, 0.0, delta) - huber(delta - h, 0.0, delta)) / h;
    CHECK(std::abs(right - delta) < 1e-9);
    CHECK(std::abs(left - (delta - h / 2.0)) < 1e-9);
    // mirrored at the negative branch point
    double nleft = (huber(-delta, 0.0, delta) - huber(-delta - h, 0.0, delta)) / h;
    double nright = (huber(-delta + h, 0.0, delta) - huber(-delta, 0.0, delta)) / h;
    CHECK(std::abs(nleft - (-delta)) < 1e-9);
    CHECK(std::abs(nright - (-delta + h / 2.0)) < 1e-9);
}

TEST_CASE("proximal penalty oracle values") {
    std::vector<double> theta{1.0, 1.0}, anchor{0.0, 0.0};
    CHECK(proximal_penalty(theta, theta, 5.0) == 0.0);
    CHECK(proximal_penalty(theta, anchor, 0.0) == 0.0);
    CHECK(proximal_penalty(theta, anchor, 2.0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("weight decay oracle values") {
    std::vector<double> zero{0.0, 0.0, 0.0};
    CHECK(weight_decay(zero, 1.0) == 0.0);
    std::vector<double> theta{3.0, 4.0};
    CHECK(weight_decay(theta, 1.0) == doctest::Approx(12.5).epsilon(1e-14));
    // lambda 1e-5 against a norm^2 of 2e5 lands exactly at 1
    std::vector<double> big(20000, 1.0);
    for (double& v : big) v = std::sqrt(10.0);
    CHECK(weight_decay(big, 1e-5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy falls as the true logit rises") {
    std::vector<double> logits{0.0, 0.0};
    double prev = cross_entropy(logits, 0);
    for (double v = 0.5; v < 5.0; v += 0.5) {
        logits[0] = v;
        double cur = cross_entropy(logits, 0);
        CHECK(cur < prev);
        prev = cur;
    }
}
