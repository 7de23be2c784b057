// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "dmoe/error.hpp"
#include "dmoe/inherit.hpp"
#include "dmoe/model.hpp"

using namespace dmoe;

namespace {

ModelConfig donor_config() {
    ModelConfig c;
    c.dense_layers = 3;
    c.rre_layers = 0;
    c.heads = 2;
    c.hidden = 8;
    c.ffn = 12;
    c.vocab = 12;
    c.embedding_slots = 1;
    c.num_domains = 1;
    c.experts_per_domain = 1;
    c.max_seq_len = 6;
    c.init_seed = 33;
    return c;
}

ModelConfig target_config() {
    ModelConfig c = donor_config();
    c.dense_layers = 2;
    c.rre_layers = 1;
    c.vocab = 16;
    c.embedding_slots = 2;
    c.num_domains = 3;
    c.experts_per_domain = 2;
    c.routing_seed = 4;
    c.domain_slot = {0, 1, 0};
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

}  // namespace

TEST_CASE("vocab lookups are exact and duplicates are rejected") {
    Vocab v({"a", "b", "c"});
    CHECK(v.size() == 3);
    CHECK(v.token(1) == "b");
    CHECK(v.index_of("c") == 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("z"));
    CHECK_THROWS_AS(v.index_of("z"), BoundsError);
    CHECK_THROWS_AS(v.token(3), BoundsError);
    CHECK_THROWS_AS(Vocab({"a", "b", "a"}), SpecError);
}

TEST_CASE("merge keeps donor indices as a prefix and appends unseen tokens in order") {
    Vocab donor({"a", "b", "c"});
    Vocab addition({"b", "d", "a", "e"});
    Vocab merged = merge_vocab(donor, addition);
    CHECK(merged.tokens() == std::vector<std::string>{"a", "b", "c", "d", "e"});
    for (std::int64_t i = 0; i < donor.size(); ++i) {
        CHECK(merged.index_of(donor.token(i)) == i);
    }
    // Merging with nothing new is the identity.
    CHECK(merge_vocab(donor, donor) == donor);
    CHECK(merge_vocab(donor, Vocab(std::vector<std::string>{})) == donor);
}

TEST_CASE("inherited embeddings copy shared rows and draw fresh rows for new tokens") {
    Vocab donor({"a", "b", "c"});
    Vocab merged = merge_vocab(donor, Vocab({"d", "e"}));
    Tensor demb({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    Tensor out = inherit_embeddings(demb, donor, merged, 77);
    REQUIRE(out.shape == std::vector<std::int64_t>{5, 4});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(out.at(i, j) == demb.at(i, j));
    // New rows are nonzero, deterministic, and unscaled standard normal.
    Tensor again = inherit_embeddings(demb, donor, merged, 77);
    CHECK(out == again);
    Tensor other = inherit_embeddings(demb, donor, merged, 78);
    bool same = true;
    for (int j = 0; j < 4; ++j) same = same && out.at(3, j) == other.at(3, j);
    CHECK_FALSE(same);

    Tensor bad({2, 4}, std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(inherit_embeddings(bad, donor, merged, 0), ShapeError);
}

TEST_CASE("new embedding rows are standard normal, not width-scaled") {
    std::vector<std::string> donor_tokens, new_tokens;
    for (int i = 0; i < 4; ++i) donor_tokens.push_back("d" + std::to_string(i));
    for (int i = 0; i < 400; ++i) new_tokens.push_back("n" + std::to_string(i));
    Vocab donor(donor_tokens);
    Vocab merged = merge_vocab(donor, Vocab(new_tokens));
    Tensor demb = Tensor::zeros({4, 64});
    Tensor out = inherit_embeddings(demb, donor, merged, 5);
    double sumsq = 0.0;
    std::size_t n = 0;
    for (std::int64_t i = 4; i < out.rows(); ++i) {
        for (std::int64_t j = 0; j < 64; ++j) {
            sumsq += out.at(i, j) * out.at(i, j);
            ++n;
        }
    }
    double std_hat = std::sqrt(sumsq / static_cast<double>(n));
    CHECK(std_hat == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("slot extension doubles the table with a copy of itself") {
    Tensor emb({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor doubled = extend_embedding_slots(emb, 1);
    REQUIRE(doubled.shape == std::vector<std::int64_t>{6, 2});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            CHECK(doubled.at(i, j) == emb.at(i, j));
            CHECK(doubled.at(i + 3, j) == emb.at(i, j));
        }
    }
    CHECK_THROWS_AS(extend_embedding_slots(doubled, 2), SpecError);
}

TEST_CASE("warm start copies every shared block and clones the donor FFN into each expert") {
    Model donor = init_model(donor_config());
    ModelConfig tc = target_config();
    Model target = inherit_model(donor, tc, 123);

    // Shared attention and norm parameters are bit-copies.
    for (int li = 0; li < 3; ++li) {
        std::string lp = "layer" + std::to_string(li) + ".";
        for (const char* n : {"attn.ln.gamma", "attn.ln.beta", "attn.wq", "attn.bq",
                              "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
                              "attn.bo", "ffn.ln.gamma", "ffn.ln.beta"}) {
            CHECK(target.params.at(lp + n) == donor.params.at(lp + n));
        }
    }
    CHECK(target.params.at("final_norm.gamma") == donor.params.at("final_norm.gamma"));
    CHECK(target.params.at("embedding.pos") == donor.params.at("embedding.pos"));
    for (int li = 0; li < 2; ++li) {
        std::string lp = "layer" + std::to_string(li) + ".ffn.";
        for (const char* n : {"w1", "b1", "w2", "b2"}) {
            CHECK(target.params.at(lp + n) == donor.params.at(lp + n));
        }
    }
    // Every expert of the routed layer is the donor block for that layer.
    for (int a = 0; a < 3; ++a) {
        for (int k = 0; k < 2; ++k) {
            std::string ep = "layer2.rre.domain" + std::to_string(a) + ".expert" +
                             std::to_string(k) + ".";
            for (const char* n : {"w1", "b1", "w2", "b2"}) {
                CHECK(target.params.at(ep + n) ==
                      donor.params.at("layer2.ffn." + std::string(n)));
            }
        }
    }

    // Slot 0 holds the donor rows as a prefix; slot 1 is a copy of slot 0.
    const Tensor& slot0 = target.params.at("embedding.word.slot0");
    const Tensor& demb = donor.params.at("embedding.word.slot0");
    REQUIRE(slot0.shape == std::vector<std::int64_t>{16, 8});
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 8; ++j) CHECK(slot0.at(i, j) == demb.at(i, j));
    CHECK(target.params.at("embedding.word.slot1") == slot0);

    CHECK(target.params.total_params() == count_params(tc));
    REQUIRE(target.routing.has_value());
    CHECK(target.routing->spec().seed == tc.routing_seed);
}

TEST_CASE("a warm-started model reproduces donor logits on the donor vocabulary") {
    Model donor = init_model(donor_config());
    Model target = inherit_model(donor, target_config(), 123);
    std::vector<std::uint32_t> tokens{3, 1, 4, 1, 5};
    Tensor donor_logits = forward(donor, 0, tokens);  // (5, 12)
    // Every domain computes the same function at step 0: experts are clones
    // and both slots hold the same rows.
    for (std::uint32_t domain = 0; domain < 3; ++domain) {
        Tensor got = forward(target, domain, tokens);  // (5, 16)
        REQUIRE(got.shape == std::vector<std::int64_t>{5, 16});
        double diff = 0.0;
        for (int t = 0; t < 5; ++t)
            for (int v = 0; v < 12; ++v)
                diff = std::max(diff, std::abs(got.at(t, v) - donor_logits.at(t, v)));
        CHECK(diff == 0.0);
    }
}

TEST_CASE("warm start rejects mismatched donors") {
    Model donor = init_model(donor_config());
    ModelConfig tc = target_config();

    ModelConfig wrong = tc;
    wrong.hidden = 16;
    wrong.heads = 2;
    CHECK_THROWS_AS(inherit_model(donor, wrong, 0), ConfigError);
    wrong = tc;
    wrong.dense_layers = 3;  // depth 4 != donor depth 3
    CHECK_THROWS_AS(inherit_model(donor, wrong, 0), ConfigError);
    wrong = tc;
    wrong.vocab = 10;  // smaller than the donor's
    CHECK_THROWS_AS(inherit_model(donor, wrong, 0), ConfigError);
    wrong = tc;
    wrong.ffn = 10;
    CHECK_THROWS_AS(inherit_model(donor, wrong, 0), ConfigError);

    // A donor with real routing cannot seed the experts.
    ModelConfig sparse_donor = donor_config();
    sparse_donor.dense_layers = 1;
    sparse_donor.rre_layers = 2;
    sparse_donor.num_domains = 2;
    sparse_donor.experts_per_domain = 1;
    CHECK_THROWS_AS(inherit_model(init_model(sparse_donor), tc, 0), ConfigError);
}

TEST_CASE("extraction is bit-exact for the extracted domain") {
    ModelConfig tc = target_config();
    // A trained-looking model: plain init gives every expert different
    // weights, unlike the warm start, so this actually exercises routing.
    Model full = init_model(tc);
    for (std::uint32_t domain = 0; domain < 3; ++domain) {
        CAPTURE(domain);
        SubModelSpec spec;
        spec.domain = domain;
        Model sub = extract_submodel(full, spec);
        CHECK(sub.config.num_domains == 1);
        CHECK(sub.config.embedding_slots == 1);
        CHECK(sub.config.experts_per_domain == tc.experts_per_domain);
        CHECK(sub.params.total_params() == count_params(sub.config));
        REQUIRE(sub.routing.has_value());
        CHECK(sub.routing->spec().num_domains == 1);

        // Routing entries are the domain's rows, shifted to a zero base.
        for (std::uint32_t j = 0; j < 1; ++j) {
            for (std::uint32_t t = 0; t < 16; ++t) {
                CHECK(sub.routing->route(0, j, t) ==
                      full.routing->route(domain, j, t) - domain * 2);
            }
        }

        // The slot the domain reads from becomes the sub-model's only slot.
        std::string full_slot =
            "embedding.word.slot" + std::to_string(tc.slot_of(domain));
        CHECK(sub.params.at("embedding.word.slot0") == full.params.at(full_slot));

        for (auto tokens : {std::vector<std::uint32_t>{3, 1, 4, 1, 5},
                            std::vector<std::uint32_t>{0, 15, 7},
                            std::vector<std::uint32_t>{9}}) {
            Tensor a = forward(full, domain, tokens);
            Tensor b = forward(sub, 0, tokens);
            CHECK(max_abs_diff(a, b) == 0.0);
        }
    }
}

TEST_CASE("extraction rejects an out-of-range domain") {
    Model full = init_model(target_config());
    SubModelSpec spec;
    spec.domain = 3;
    CHECK_THROWS_AS(extract_submodel(full, spec), BoundsError);

    // Extracting the only domain of a dense model is just a copy.
    Model dense = init_model(donor_config());
    SubModelSpec d0;
    Model copy = extract_submodel(dense, d0);
    std::vector<std::uint32_t> tokens{1, 2, 3};
    CHECK(max_abs_diff(forward(copy, 0, tokens), forward(dense, 0, tokens)) == 0.0);
}

TEST_CASE("extraction shrinks the parameter count by the other domains' experts") {
    ModelConfig tc = target_config();
    Model full = init_model(tc);
    SubModelSpec spec;
    spec.domain = 0;
    Model sub = extract_submodel(full, spec);
    const std::int64_t expert_block =
        tc.hidden * tc.ffn + tc.ffn + tc.ffn * tc.hidden + tc.hidden;
    const std::int64_t dropped_experts =
        (tc.num_domains - 1) * tc.experts_per_domain * tc.rre_layers * expert_block;
    const std::int64_t dropped_slots = (tc.embedding_slots - 1) * tc.vocab * tc.hidden;
    CHECK(full.params.total_params() - sub.params.total_params() ==
          dropped_experts + dropped_slots);
}
