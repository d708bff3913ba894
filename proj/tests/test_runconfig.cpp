#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "wid/common.hpp"
#include "wid/runconfig.hpp"

using namespace wid;

TEST_SUITE("runconfig") {

TEST_CASE("parses keys, comments and blank lines") {
    RunConfig cfg = RunConfig::from_string(
        "# full-line comment\n"
        "\n"
        "model.layers = 4\n"
        "  model.d_model=64   # trailing comment\n"
        "train.lr = 1e-3\n"
        "name = teacher run\n");
    CHECK(cfg.geti("model.layers", 0) == 4);
    CHECK(cfg.geti("model.d_model", 0) == 64);
    CHECK(cfg.getf("train.lr", 0.0f) == doctest::Approx(1e-3f));
    CHECK(cfg.gets("name", "") == "teacher run");
    CHECK_NOTHROW(cfg.assert_consumed());
}

TEST_CASE("malformed lines fail with the line number") {
    CHECK_THROWS_AS(RunConfig::from_string("just a token\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("= value\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("a = 1\na = 2\n"), ConfigError);
    try {
        RunConfig::from_string("ok = 1\nbroken line\n", "conf.cfg");
        FAIL("expected a parse error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("conf.cfg:2") != std::string::npos);
    }
}

TEST_CASE("unconsumed keys are reported as unknown") {
    RunConfig cfg = RunConfig::from_string("model.layers = 2\nmodel.typo = 7\n");
    CHECK(cfg.geti("model.layers", 0) == 2);
    CHECK_THROWS_AS(cfg.assert_consumed(), ConfigError);
    try {
        cfg.assert_consumed();
        FAIL("expected unknown-key error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.typo") != std::string::npos);
    }
}

TEST_CASE("typed getters validate their input") {
    RunConfig cfg = RunConfig::from_string(
        "i = 12x\nf = abc\nb = maybe\nbig = 99999999999999999999\n");
    CHECK_THROWS_AS(cfg.geti("i", 0), ConfigError);
    CHECK_THROWS_AS(cfg.getf("f", 0.0f), ConfigError);
    CHECK_THROWS_AS(cfg.getb("b", false), ConfigError);
    CHECK_THROWS_AS(cfg.geti64("big", 0), ConfigError);
}

TEST_CASE("bool accepts the usual spellings") {
    RunConfig cfg = RunConfig::from_string("a = true\nb = 0\nc = yes\nd = false\n");
    CHECK(cfg.getb("a", false));
    CHECK_FALSE(cfg.getb("b", true));
    CHECK(cfg.getb("c", false));
    CHECK_FALSE(cfg.getb("d", true));
}

TEST_CASE("defaults fill in and required keys do not") {
    RunConfig cfg = RunConfig::from_string("present = 5\n");
    CHECK(cfg.geti("present", 0) == 5);
    CHECK(cfg.geti("absent", 42) == 42);
    CHECK(cfg.geti64("absent64", 7) == 7);
    CHECK(cfg.getu64("absentu", 9) == 9);
    CHECK(cfg.gets("absent_s", "fallback") == "fallback");
    CHECK_THROWS_AS(cfg.req_s("missing"), ConfigError);
    CHECK_THROWS_AS(cfg.req_i("missing_i"), ConfigError);
    RunConfig cfg2 = RunConfig::from_string("n = 3\n");
    CHECK(cfg2.req_i("n") == 3);
}

TEST_CASE("cli overrides replace file values") {
    RunConfig cfg = RunConfig::from_string("k = 1\n");
    cfg.set("k", "2");
    cfg.set("extra", "3");
    CHECK(cfg.geti("k", 0) == 2);
    CHECK(cfg.geti("extra", 0) == 3);
    CHECK_NOTHROW(cfg.assert_consumed());
}

TEST_CASE("resolved text records read values including defaults") {
    RunConfig cfg = RunConfig::from_string("model.layers = 2\n");
    cfg.geti("model.layers", 0);
    cfg.geti("train.steps", 1000);
    cfg.gets("mode", "mlm");
    const std::string text = cfg.resolved_text();
    CHECK(text.find("model.layers = 2\n") != std::string::npos);
    CHECK(text.find("train.steps = 1000\n") != std::string::npos);
    CHECK(text.find("mode = mlm\n") != std::string::npos);
    // sorted by key
    CHECK(text.find("mode") < text.find("model.layers"));
    CHECK(text.find("model.layers") < text.find("train.steps"));
}

TEST_CASE("resolved config round-trips through a file") {
    RunConfig cfg = RunConfig::from_string("a = 1\n");
    cfg.geti("a", 0);
    cfg.getf("b", 2.5f);
    const std::string path = "/tmp/wid_runconfig_resolved.cfg";
    cfg.write_resolved(path);

    RunConfig back = RunConfig::from_file(path);
    CHECK(back.geti("a", 0) == 1);
    CHECK(back.getf("b", 0.0f) == doctest::Approx(2.5f));
    std::remove(path.c_str());

    CHECK_THROWS_AS(RunConfig::from_file("/tmp/wid_runconfig_missing.cfg"), IoError);
}

}  // TEST_SUITE
