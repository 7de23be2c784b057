// SPDX-License-Identifier: Apache-2.0

#include "dmoe/inherit.hpp"

#include <string>

#include "dmoe/error.hpp"
#include "dmoe/prng.hpp"

namespace dmoe {

namespace {

std::string slot_name(std::int64_t slot) { return "embedding.word.slot" + std::to_string(slot); }

std::string layer_prefix(std::int64_t layer) { return "layer" + std::to_string(layer) + "."; }

std::string expert_prefix(std::int64_t layer, std::int64_t domain, std::int64_t expert) {
    return layer_prefix(layer) + "rre.domain" + std::to_string(domain) + ".expert" +
           std::to_string(expert) + ".";
}

void require_same_shape(const Tensor& dst, const Tensor& src, const std::string& name) {
    if (!dst.same_shape(src)) {
        throw ShapeError("inherit: shape mismatch for '" + name + "', " + shape_string(dst) +
                         " vs " + shape_string(src));
    }
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], static_cast<std::int64_t>(i));
        if (!inserted) {
            throw SpecError("vocab: duplicate token '" + tokens_[i] + "'");
        }
    }
}

const std::string& Vocab::token(std::int64_t id) const {
    if (id < 0 || id >= size()) {
        throw BoundsError("vocab: id " + std::to_string(id) + " out of range, size " +
                          std::to_string(size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Vocab::index_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw BoundsError("vocab: unknown token '" + token + "'");
    return it->second;
}

Vocab merge_vocab(const Vocab& donor, const Vocab& addition) {
    std::vector<std::string> merged = donor.tokens();
    for (const std::string& tok : addition.tokens()) {
        if (!donor.contains(tok)) merged.push_back(tok);
    }
    return Vocab(std::move(merged));
}

Tensor inherit_embeddings(const Tensor& donor_emb, const Vocab& donor_vocab,
                          const Vocab& merged_vocab, std::uint64_t seed) {
    if (donor_emb.ndim() != 2 || donor_emb.rows() != donor_vocab.size()) {
        throw ShapeError("inherit_embeddings: donor embedding is " + shape_string(donor_emb) +
                         " but donor vocab has " + std::to_string(donor_vocab.size()) + " tokens");
    }
    const std::int64_t width = donor_emb.cols();
    Tensor out = Tensor::zeros({merged_vocab.size(), width});
    PrngStream prng(seed);
    for (std::int64_t i = 0; i < merged_vocab.size(); ++i) {
        const std::string& tok = merged_vocab.token(i);
        if (donor_vocab.contains(tok)) {
            const std::int64_t src = donor_vocab.index_of(tok);
            for (std::int64_t j = 0; j < width; ++j) out.at(i, j) = donor_emb.at(src, j);
        } else {
            for (std::int64_t j = 0; j < width; ++j) out.at(i, j) = prng.next_normal();
        }
    }
    return out;
}

Tensor extend_embedding_slots(const Tensor& emb, std::int64_t current_slots) {
    if (current_slots != 1) {
        throw SpecError("extend_embedding_slots: embedding already has " +
                        std::to_string(current_slots) + " slots, refusing to extend again");
    }
    return vstack(emb, emb);
}

Model inherit_model(const Model& donor, const ModelConfig& target_config,
                    std::uint64_t embedding_seed) {
    target_config.validate();
    if (detect_mode(donor.config) != ArchMode::Dense) {
        throw ConfigError("inherit: donor must be a dense-mode model");
    }
    const ModelConfig& dc = donor.config;
    if (dc.total_layers() != target_config.total_layers()) {
        throw ConfigError("inherit: donor has " + std::to_string(dc.total_layers()) +
                          " layers, target wants " + std::to_string(target_config.total_layers()));
    }
    if (dc.hidden != target_config.hidden || dc.ffn != target_config.ffn ||
        dc.heads != target_config.heads) {
        throw ConfigError("inherit: donor and target widths differ");
    }
    if (dc.vocab > target_config.vocab) {
        throw ConfigError("inherit: donor vocab " + std::to_string(dc.vocab) +
                          " exceeds target vocab " + std::to_string(target_config.vocab));
    }
    if (dc.max_seq_len != target_config.max_seq_len) {
        throw ConfigError("inherit: donor and target max sequence lengths differ");
    }
    if (target_config.embedding_slots > 2) {
        throw ConfigError("inherit: target may have at most two embedding slots");
    }
    if (dc.embedding_slots != 1) {
        throw ConfigError("inherit: donor must have a single embedding slot");
    }

    Model model = init_model(target_config);
    ParamTree& p = model.params;
    const ParamTree& dp = donor.params;

    // Slot 0: donor rows are a prefix of the target IDs; the tail rows are
    // fresh standard normals from the dedicated embedding stream.
    {
        Tensor inherited = Tensor::zeros({target_config.vocab, target_config.hidden});
        const Tensor& donor_emb = dp.at(slot_name(0));
        PrngStream prng(embedding_seed);
        for (std::int64_t i = 0; i < target_config.vocab; ++i) {
            if (i < dc.vocab) {
                for (std::int64_t j = 0; j < target_config.hidden; ++j) {
                    inherited.at(i, j) = donor_emb.at(i, j);
                }
            } else {
                for (std::int64_t j = 0; j < target_config.hidden; ++j) {
                    inherited.at(i, j) = prng.next_normal();
                }
            }
        }
        p.at(slot_name(0)) = inherited;
        if (target_config.embedding_slots == 2) {
            // The second slot starts as a copy of the first, so domains
            // bound to it inherit the donor's knowledge too.
            p.at(slot_name(1)) = inherited;
        }
    }
    {
        const std::string name = "embedding.pos";
        require_same_shape(p.at(name), dp.at(name), name);
        p.at(name) = dp.at(name);
    }

    for (std::int64_t li = 0; li < target_config.total_layers(); ++li) {
        const std::string lp = layer_prefix(li);
        for (const char* part :
             {"attn.ln.gamma", "attn.ln.beta", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
              "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ffn.ln.gamma", "ffn.ln.beta"}) {
            const std::string name = lp + part;
            require_same_shape(p.at(name), dp.at(name), name);
            p.at(name) = dp.at(name);
        }
        if (li < target_config.dense_layers) {
            for (const char* part : {"ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
                const std::string name = lp + part;
                require_same_shape(p.at(name), dp.at(name), name);
                p.at(name) = dp.at(name);
            }
        } else {
            // Every expert of every domain clones the donor's feed-forward
            // block for this layer; which expert a token lands on therefore
            // cannot matter at step 0.
            for (std::int64_t a = 0; a < target_config.num_domains; ++a) {
                for (std::int64_t k = 0; k < target_config.experts_per_domain; ++k) {
                    const std::string ep = expert_prefix(li, a, k);
                    for (const char* part : {"w1", "b1", "w2", "b2"}) {
                        const std::string name = ep + part;
                        const std::string donor_name = lp + "ffn." + part;
                        require_same_shape(p.at(name), dp.at(donor_name), name);
                        p.at(name) = dp.at(donor_name);
                    }
                }
            }
        }
    }
    for (const char* name : {"final_norm.gamma", "final_norm.beta"}) {
        require_same_shape(p.at(name), dp.at(name), name);
        p.at(name) = dp.at(name);
    }
    return model;
}

Model extract_submodel(const Model& model, const SubModelSpec& spec) {
    const ModelConfig& c = model.config;
    if (static_cast<std::int64_t>(spec.domain) >= c.num_domains) {
        throw BoundsError("extract: domain " + std::to_string(spec.domain) +
                          " out of range, model has " + std::to_string(c.num_domains) +
                          " domains");
    }
    const std::int32_t slot = c.slot_of(spec.domain);

    ModelConfig sub = c;
    sub.num_domains = 1;
    sub.embedding_slots = 1;
    sub.domain_slot.clear();
    sub.validate();

    Model out;
    out.config = sub;
    ParamTree& p = out.params;
    const ParamTree& sp = model.params;

    p.add(slot_name(0), sp.at(slot_name(slot)), ParamTag::embedding(0));
    p.add("embedding.pos", sp.at("embedding.pos"), ParamTag::dense());
    for (std::int64_t li = 0; li < sub.total_layers(); ++li) {
        const std::string lp = layer_prefix(li);
        for (const char* part :
             {"attn.ln.gamma", "attn.ln.beta", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
              "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ffn.ln.gamma", "ffn.ln.beta"}) {
            p.add(lp + part, sp.at(lp + part), ParamTag::dense());
        }
        if (li < sub.dense_layers) {
            for (const char* part : {"ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
                p.add(lp + part, sp.at(lp + part), ParamTag::dense());
            }
        } else {
            const std::int32_t rj = static_cast<std::int32_t>(li - sub.dense_layers);
            for (std::int64_t k = 0; k < sub.experts_per_domain; ++k) {
                const ParamTag tag = ParamTag::rre(0, rj, static_cast<std::int32_t>(k));
                for (const char* part : {"w1", "b1", "w2", "b2"}) {
                    p.add(expert_prefix(li, 0, k) + part,
                          sp.at(expert_prefix(li, spec.domain, k) + part), tag);
                }
            }
        }
    }
    p.add("final_norm.gamma", sp.at("final_norm.gamma"), ParamTag::dense());
    p.add("final_norm.beta", sp.at("final_norm.beta"), ParamTag::dense());

    if (c.rre_layers > 0) {
        if (!model.routing) throw SpecError("extract: model has expert layers but no routing table");
        // Slice the domain's rows out of the table and re-index its experts
        // to [0, e). Entries are copied, not rebuilt from the seed, so the
        // sub-model dispatches exactly as the full model did.
        const RoutingTable& full = *model.routing;
        RoutingSpec rs = full.spec();
        rs.num_domains = 1;
        const std::uint32_t base =
            spec.domain * static_cast<std::uint32_t>(c.experts_per_domain);
        std::vector<std::uint32_t> entries;
        entries.reserve(static_cast<std::size_t>(rs.num_rre_layers) * rs.vocab_size);
        for (std::uint32_t j = 0; j < rs.num_rre_layers; ++j) {
            for (std::uint32_t t = 0; t < rs.vocab_size; ++t) {
                entries.push_back(full.route(spec.domain, j, t) - base);
            }
        }
        out.routing = RoutingTable(rs, std::move(entries));
    }
    return out;
}

}  // namespace dmoe
