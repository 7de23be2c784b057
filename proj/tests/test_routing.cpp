// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "dmoe/error.hpp"
#include "dmoe/routing.hpp"

using namespace dmoe;

namespace {

std::vector<std::uint32_t> iota_u32(std::uint32_t n) {
    std::vector<std::uint32_t> v(n);
    std::iota(v.begin(), v.end(), 0u);
    return v;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("shuffle of [0..9] with seed 0 gives the frozen permutation") {
    PrngStream p(0);
    auto out = shuffle(iota_u32(10), p);
    CHECK(out == std::vector<std::uint32_t>{6, 3, 2, 9, 8, 1, 4, 7, 0, 5});
}

TEST_CASE("shuffle is a permutation and is seed-deterministic") {
    PrngStream a(99), b(99);
    auto pa = shuffle(iota_u32(257), a);
    auto pb = shuffle(iota_u32(257), b);
    CHECK(pa == pb);
    std::sort(pa.begin(), pa.end());
    CHECK(pa == iota_u32(257));
}

TEST_CASE("base assignment splits V slots as evenly as possible") {
    CHECK(build_base_assignment(10, 3) ==
          std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1, 2, 2, 2, 0});
    CHECK(build_base_assignment(10, 2) ==
          std::vector<std::uint32_t>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    CHECK(build_base_assignment(4, 4) == std::vector<std::uint32_t>{0, 1, 2, 3});
    CHECK(build_base_assignment(7, 1) ==
          std::vector<std::uint32_t>{0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("base assignment values stay in range and loads differ by at most one") {
    for (std::uint32_t v : {5u, 16u, 97u, 1000u}) {
        for (std::uint32_t e : {1u, 2u, 3u, 5u}) {
            if (e > v) continue;
            auto u = build_base_assignment(v, e);
            REQUIRE(u.size() == v);
            std::vector<std::uint32_t> counts(e, 0);
            for (auto k : u) {
                REQUIRE(k < e);
                ++counts[k];
            }
            auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
            CHECK(*hi - *lo <= 1);
        }
    }
    CHECK_THROWS_AS(build_base_assignment(3, 4), SpecError);
    CHECK_THROWS_AS(build_base_assignment(3, 0), SpecError);
}

TEST_CASE("two-domain table matches the frozen oracle") {
    RoutingSpec spec;
    spec.num_domains = 2;
    spec.num_rre_layers = 1;
    spec.experts_per_domain = 3;
    spec.vocab_size = 10;
    spec.seed = 0;
    RoutingTable table = build_routing_table(spec);

    const std::vector<std::uint32_t> want0{2, 1, 0, 0, 2, 0, 0, 2, 1, 1};
    const std::vector<std::uint32_t> want1{3, 5, 4, 4, 3, 4, 5, 3, 5, 3};
    for (std::uint32_t t = 0; t < 10; ++t) {
        CHECK(table.route(0, 0, t) == want0[t]);
        CHECK(table.route(1, 0, t) == want1[t]);
    }
    CHECK(table.load_histogram(0, 0) == std::vector<std::uint32_t>{4, 3, 3});
    CHECK(table.load_histogram(1, 0) == std::vector<std::uint32_t>{4, 3, 3});
}

TEST_CASE("single-expert tables route every token to the domain's expert") {
    RoutingSpec spec;
    spec.num_domains = 1;
    spec.num_rre_layers = 2;
    spec.experts_per_domain = 1;
    spec.vocab_size = 5;
    RoutingTable table = build_routing_table(spec);
    for (std::uint32_t j = 0; j < 2; ++j)
        for (std::uint32_t t = 0; t < 5; ++t) CHECK(table.route(0, j, t) == 0);
}

TEST_CASE("every entry lands inside its domain's expert group") {
    RoutingSpec spec;
    spec.num_domains = 4;
    spec.num_rre_layers = 3;
    spec.experts_per_domain = 5;
    spec.vocab_size = 23;
    spec.seed = 31337;
    RoutingTable table = build_routing_table(spec);
    for (std::uint32_t i = 0; i < spec.num_domains; ++i) {
        for (std::uint32_t j = 0; j < spec.num_rre_layers; ++j) {
            std::uint32_t lo = i * spec.experts_per_domain;
            std::uint32_t hi = lo + spec.experts_per_domain;
            for (std::uint32_t t = 0; t < spec.vocab_size; ++t) {
                std::uint32_t x = table.route(i, j, t);
                CHECK(x >= lo);
                CHECK(x < hi);
            }
            auto hist = table.load_histogram(i, j);
            std::uint32_t total = 0;
            for (auto c : hist) total += c;
            CHECK(total == spec.vocab_size);
            auto [lo_it, hi_it] = std::minmax_element(hist.begin(), hist.end());
            CHECK(*hi_it - *lo_it <= 1);
        }
    }
}

TEST_CASE("different layers draw different permutations") {
    RoutingSpec spec;
    spec.num_domains = 1;
    spec.num_rre_layers = 2;
    spec.experts_per_domain = 2;
    spec.vocab_size = 10;
    spec.seed = 0;
    RoutingTable table = build_routing_table(spec);
    std::vector<std::uint32_t> l0, l1;
    for (std::uint32_t t = 0; t < 10; ++t) {
        l0.push_back(table.route(0, 0, t));
        l1.push_back(table.route(0, 1, t));
    }
    CHECK(l0 != l1);
}

TEST_CASE("rebuilding with the same spec is bit-identical") {
    RoutingSpec spec;
    spec.num_domains = 3;
    spec.num_rre_layers = 2;
    spec.experts_per_domain = 4;
    spec.vocab_size = 50;
    spec.seed = 777;
    CHECK(build_routing_table(spec) == build_routing_table(spec));
    RoutingSpec other = spec;
    other.seed = 778;
    CHECK(build_routing_table(spec).entries() != build_routing_table(other).entries());
}

TEST_CASE("spec validation rejects degenerate shapes") {
    RoutingSpec spec;
    spec.num_domains = 2;
    spec.num_rre_layers = 1;
    spec.experts_per_domain = 3;
    spec.vocab_size = 10;
    CHECK_NOTHROW(spec.validate());

    auto bad = spec;
    bad.num_domains = 0;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = spec;
    bad.num_rre_layers = 0;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = spec;
    bad.experts_per_domain = 0;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = spec;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = spec;
    bad.experts_per_domain = 11;  // e > V
    CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("route lookups are bounds-checked") {
    RoutingSpec spec;
    spec.num_domains = 2;
    spec.num_rre_layers = 1;
    spec.experts_per_domain = 3;
    spec.vocab_size = 10;
    RoutingTable table = build_routing_table(spec);
    CHECK_THROWS_AS(table.route(2, 0, 0), BoundsError);
    CHECK_THROWS_AS(table.route(0, 1, 0), BoundsError);
    CHECK_THROWS_AS(table.route(0, 0, 10), BoundsError);
}

TEST_CASE("table constructor rejects a wrong-sized entry vector") {
    RoutingSpec spec;
    spec.num_domains = 2;
    spec.num_rre_layers = 1;
    spec.experts_per_domain = 1;
    spec.vocab_size = 3;
    CHECK_THROWS_AS(RoutingTable(spec, std::vector<std::uint32_t>(5, 0)), SpecError);
}

TEST_CASE("routing table files round-trip") {
    RoutingSpec spec;
    spec.num_domains = 3;
    spec.num_rre_layers = 2;
    spec.experts_per_domain = 4;
    spec.vocab_size = 17;
    spec.seed = 12345;
    RoutingTable table = build_routing_table(spec);
    std::string path = temp_path("dmoe_test_table.rret");
    write_routing_table(path, table);
    RoutingTable back = read_routing_table(path);
    CHECK(back == table);
    std::remove(path.c_str());
}

TEST_CASE("corrupt or truncated table files are rejected") {
    std::string path = temp_path("dmoe_test_table_bad.rret");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE_____________";
    }
    CHECK_THROWS_AS(read_routing_table(path), FormatError);

    RoutingSpec spec;
    spec.num_domains = 1;
    spec.num_rre_layers = 1;
    spec.experts_per_domain = 2;
    spec.vocab_size = 8;
    write_routing_table(path, build_routing_table(spec));
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 5);
    CHECK_THROWS_AS(read_routing_table(path), FormatError);
    CHECK_THROWS_AS(read_routing_table(temp_path("dmoe_no_such_file.rret")), FormatError);
    std::remove(path.c_str());
}
