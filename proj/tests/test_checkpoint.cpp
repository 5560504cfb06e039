#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>

#include "shiftadapt/checkpoint.hpp"

using namespace shiftadapt;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const char* name) : path(name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.model.input_dim = 6;
    c.model.extractor_widths = {4, 3};
    c.model.head_widths = {5};
    c.model.dropout_rate = 0.25;

    AuxTaskSpec sex;
    sex.task_id = "sex";
    sex.kind = AuxKind::classification;
    sex.classes = 2;
    AuxTaskSpec age;
    age.task_id = "age";
    age.kind = AuxKind::regression;
    age.loss = AuxLoss::huber;
    age.huber_delta = 0.8;
    age.beta = 0.1;
    c.aux = {sex, age};

    c.params = init_params(c.model, c.aux, 12345);
    // exercise awkward values explicitly
    c.params.values[0] = -0.0;
    c.params.values[1] = 1e-308;
    c.params.values[2] = 1.7976931348623157e308;

    c.provenance = {{"phase", "adapt_features"},
                    {"seed", "20260816"},
                    {"config_hash", "deadbeef"}};
    return c;
}

} // namespace

TEST_CASE("checkpoints round-trip every field bitwise") {
    Checkpoint c = sample_checkpoint();
    TempFile f("checkpoint_roundtrip.bin");
    save_checkpoint(c, f.path);
    Checkpoint back = load_checkpoint(f.path);

    CHECK(back.model.input_dim == c.model.input_dim);
    CHECK(back.model.extractor_widths == c.model.extractor_widths);
    CHECK(back.model.head_widths == c.model.head_widths);
    CHECK(back.model.dropout_rate == c.model.dropout_rate);
    CHECK(back.model.num_primary_classes == c.model.num_primary_classes);

    REQUIRE(back.aux.size() == 2);
    CHECK(back.aux[0].task_id == "sex");
    CHECK(back.aux[0].kind == AuxKind::classification);
    CHECK(back.aux[0].classes == 2);
    CHECK(back.aux[1].task_id == "age");
    CHECK(back.aux[1].kind == AuxKind::regression);
    CHECK(back.aux[1].loss == AuxLoss::huber);
    CHECK(back.aux[1].huber_delta == 0.8);
    CHECK(back.aux[1].beta == 0.1);

    CHECK(back.params.values == c.params.values);
    CHECK(back.params.seed == c.params.seed);
    REQUIRE(back.params.layout.size() == c.params.layout.size());
    for (std::size_t s = 0; s < c.params.layout.size(); ++s) {
        CHECK(back.params.layout[s].name == c.params.layout[s].name);
        CHECK(back.params.layout[s].offset == c.params.layout[s].offset);
        CHECK(back.params.layout[s].size == c.params.layout[s].size);
        REQUIRE(back.params.layout[s].layers.size() == c.params.layout[s].layers.size());
        for (std::size_t l = 0; l < c.params.layout[s].layers.size(); ++l) {
            CHECK(back.params.layout[s].layers[l].in == c.params.layout[s].layers[l].in);
            CHECK(back.params.layout[s].layers[l].out == c.params.layout[s].layers[l].out);
        }
    }
    CHECK(back.provenance == c.provenance);

    // negative zero must survive with its sign bit
    CHECK(std::signbit(back.params.values[0]));
}

TEST_CASE("a second save of the same checkpoint is byte-identical") {
    Checkpoint c = sample_checkpoint();
    TempFile f1("checkpoint_a.bin");
    TempFile f2("checkpoint_b.bin");
    save_checkpoint(c, f1.path);
    save_checkpoint(c, f2.path);
    std::ifstream a(f1.path, std::ios::binary), b(f2.path, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
}

TEST_CASE("loading rejects truncation, bad magic, and missing files") {
    Checkpoint c = sample_checkpoint();
    TempFile f("checkpoint_corrupt.bin");
    save_checkpoint(c, f.path);

    std::ifstream in(f.path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(buf.data(), long(buf.size()) - 7);
    }
    CHECK_THROWS_AS(load_checkpoint(f.path), DataError);

    std::string bad = buf;
    bad[0] = '?';
    {
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bad.data(), long(bad.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(f.path), DataError);

    CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint.bin"), DataError);
}

TEST_CASE("an empty provenance map and empty aux list round-trip") {
    Checkpoint c;
    c.model.input_dim = 3;
    c.model.extractor_widths = {};
    c.model.head_widths = {};
    c.params = init_params(c.model, {}, 1);
    TempFile f("checkpoint_minimal.bin");
    save_checkpoint(c, f.path);
    Checkpoint back = load_checkpoint(f.path);
    CHECK(back.aux.empty());
    CHECK(back.provenance.empty());
    CHECK(back.params.values == c.params.values);
    CHECK(back.model.extractor_widths.empty());
}
