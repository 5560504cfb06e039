#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "shiftadapt/rng.hpp"

using namespace shiftadapt;

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next() == b.next()) ++same;
    CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1)") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("below stays in range and covers it") {
    Rng r(11);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 1000; ++i) {
        auto v = r.below(5);
        REQUIRE(v < 5);
        ++seen[std::size_t(v)];
    }
    for (int c : seen) CHECK(c > 100);
}

TEST_CASE("normal has roughly standard moments") {
    Rng r(3);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        sum += v;
        sq += v * v;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("seed_of separates tags and is order sensitive") {
    CHECK(seed_of(1, "a") != seed_of(1, "b"));
    CHECK(seed_of(1, "a", 2) != seed_of(1, 2, "a"));
    CHECK(seed_of(5, "x", 1) == seed_of(5, "x", 1));
    CHECK(seed_of(1, "ab") != seed_of(2, "ab"));
}

TEST_CASE("shuffle permutes without losing elements") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto orig = v;
    Rng r(9);
    shuffle(v, r);
    CHECK(v != orig);
    std::sort(v.begin(), v.end());
    CHECK(v == orig);
}

TEST_CASE("shuffle with the same seed is reproducible") {
    std::vector<int> a(20), b(20);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    Rng ra(4), rb(4);
    shuffle(a, ra);
    shuffle(b, rb);
    CHECK(a == b);
}
