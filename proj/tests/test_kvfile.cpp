// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "dmoe/error.hpp"
#include "dmoe/kvfile.hpp"

using namespace dmoe;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("parse_kv_text reads keys, skips comments and blank lines") {
    KvMap kv = parse_kv_text(
        "# run settings\n"
        "model.hidden = 64\n"
        "\n"
        "  model.vocab=262   \n"
        "name = hello world # not a comment marker mid-value\n");
    CHECK(kv.get_int("model.hidden") == 64);
    CHECK(kv.get_int("model.vocab") == 262);
    CHECK(kv.get("name") == "hello world # not a comment marker mid-value");
    CHECK(kv.has("model.hidden"));
    CHECK_FALSE(kv.has("model.layers"));
}

TEST_CASE("malformed lines and duplicates carry line numbers") {
    CHECK_THROWS_WITH_AS(parse_kv_text("a = 1\nnot-a-pair\n"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_kv_text("a = 1\na = 2\n"),
                         doctest::Contains("duplicate key 'a'"), ConfigError);
    CHECK_THROWS_AS(parse_kv_text("= 5\n"), ConfigError);
}

TEST_CASE("typed accessors validate their values") {
    KvMap kv = parse_kv_text("n = 42\nneg = -7\nf = 2.5\nbad = 12x\nbig = 18446744073709551615\n");
    CHECK(kv.get_int("n") == 42);
    CHECK(kv.get_int("neg") == -7);
    CHECK(kv.get_double("f") == 2.5);
    CHECK(kv.get_uint("big") == 18446744073709551615ULL);
    CHECK_THROWS_WITH_AS(kv.get_int("bad"), doctest::Contains("'bad'"), ConfigError);
    CHECK_THROWS_AS(kv.get_uint("neg"), ConfigError);
    CHECK_THROWS_AS(kv.get_double("bad"), ConfigError);
    CHECK_THROWS_WITH_AS(kv.get("missing"), doctest::Contains("missing config key"),
                         ConfigError);

    CHECK(kv.get_int_or("n", 5) == 42);
    CHECK(kv.get_int_or("absent", 5) == 5);
    CHECK(kv.get_uint_or("absent", 9) == 9);
    CHECK(kv.get_double_or("absent", 1.5) == 1.5);
    CHECK(kv.get_or("absent", "x") == "x");
    CHECK(kv.find("absent") == std::nullopt);
    CHECK(kv.find("n").value() == "42");
}

TEST_CASE("set preserves insertion order and overwrites in place") {
    KvMap kv;
    kv.set("b", "2");
    kv.set("a", "1");
    kv.set("b", "3");
    REQUIRE(kv.entries().size() == 2);
    CHECK(kv.entries()[0].first == "b");
    CHECK(kv.entries()[0].second == "3");
    CHECK(kv.entries()[1].first == "a");
}

TEST_CASE("kv files round-trip") {
    KvMap kv;
    kv.set("model.hidden", "32");
    kv.set("adam.beta1", "0.8");
    kv.set("train.steps", "10");
    std::string path = temp_path("dmoe_test_cfg.cfg");
    write_kv_file(path, kv);
    KvMap back = read_kv_file(path);
    CHECK(back.entries() == kv.entries());
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_kv_file(temp_path("dmoe_cfg_missing.cfg")), ConfigError);
}

TEST_CASE("parse_int_list splits comma lists and rejects junk") {
    CHECK(parse_int_list("1,2,3", "k") == std::vector<std::int64_t>{1, 2, 3});
    CHECK(parse_int_list(" 4 , 5 ", "k") == std::vector<std::int64_t>{4, 5});
    CHECK(parse_int_list("7", "k") == std::vector<std::int64_t>{7});
    CHECK_THROWS_WITH_AS(parse_int_list("1,,2", "domains"), doctest::Contains("'domains'"),
                         ConfigError);
    CHECK_THROWS_AS(parse_int_list("1,x", "k"), ConfigError);
}
