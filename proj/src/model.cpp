// SPDX-License-Identifier: Apache-2.0

#include "dmoe/model.hpp"

#include <cmath>
#include <filesystem>
#include <utility>

#include "dmoe/error.hpp"
#include "dmoe/prng.hpp"

namespace dmoe {

namespace {

std::string layer_name(std::int64_t layer, const char* suffix) {
    return "layer" + std::to_string(layer) + "." + suffix;
}

std::string expert_prefix(std::int64_t layer, std::int64_t domain, std::int64_t expert) {
    return "layer" + std::to_string(layer) + ".rre.domain" + std::to_string(domain) + ".expert" +
           std::to_string(expert) + ".";
}

std::string slot_name(std::int64_t slot) { return "embedding.word.slot" + std::to_string(slot); }

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add: shape mismatch, " + shape_string(a) + " vs " + shape_string(b));
    }
    Tensor y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

Tensor slice_cols(const Tensor& t, std::int64_t col_begin, std::int64_t col_end) {
    const std::int64_t n = t.rows(), w = col_end - col_begin;
    Tensor y = Tensor::zeros({n, w});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < w; ++j) y.at(i, j) = t.at(i, col_begin + j);
    }
    return y;
}

void copy_into_cols(Tensor& dst, const Tensor& src, std::int64_t col_begin) {
    for (std::int64_t i = 0; i < src.rows(); ++i) {
        for (std::int64_t j = 0; j < src.cols(); ++j) dst.at(i, col_begin + j) = src.at(i, j);
    }
}

void add_into_cols(Tensor& dst, const Tensor& src, std::int64_t col_begin) {
    for (std::int64_t i = 0; i < src.rows(); ++i) {
        for (std::int64_t j = 0; j < src.cols(); ++j) dst.at(i, col_begin + j) += src.at(i, j);
    }
}

Tensor gather_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
    Tensor y = Tensor::zeros({static_cast<std::int64_t>(rows.size()), t.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::int64_t j = 0; j < t.cols(); ++j) {
            y.at(static_cast<std::int64_t>(i), j) = t.at(rows[i], j);
        }
    }
    return y;
}

void scatter_rows(Tensor& dst, const Tensor& src, const std::vector<std::int64_t>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::int64_t j = 0; j < src.cols(); ++j) {
            dst.at(rows[i], j) = src.at(static_cast<std::int64_t>(i), j);
        }
    }
}

void scatter_add_rows(Tensor& dst, const Tensor& src, const std::vector<std::int64_t>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::int64_t j = 0; j < src.cols(); ++j) {
            dst.at(rows[i], j) += src.at(static_cast<std::int64_t>(i), j);
        }
    }
}

// Positions served by each local expert, ascending within each bucket.
std::vector<std::vector<std::int64_t>> bucket_by_expert(const std::vector<std::uint32_t>& expert_of,
                                                        std::int64_t experts_per_domain) {
    std::vector<std::vector<std::int64_t>> buckets(static_cast<std::size_t>(experts_per_domain));
    for (std::size_t t = 0; t < expert_of.size(); ++t) {
        buckets[expert_of[t]].push_back(static_cast<std::int64_t>(t));
    }
    return buckets;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::int32_t ModelConfig::slot_of(std::uint32_t domain) const {
    if (static_cast<std::int64_t>(domain) >= num_domains) {
        throw BoundsError("domain " + std::to_string(domain) + " out of range, model has " +
                          std::to_string(num_domains) + " domains");
    }
    if (domain_slot.empty()) return 0;
    return domain_slot[domain];
}

void ModelConfig::validate() const {
    if (dense_layers < 0 || rre_layers < 0) {
        throw ConfigError("layer counts must be nonnegative");
    }
    if (total_layers() < 1) throw ConfigError("model needs at least one layer");
    if (heads < 1) throw ConfigError("heads must be positive");
    if (hidden < 1) throw ConfigError("hidden width must be positive");
    if (ffn < 1) throw ConfigError("feed-forward width must be positive");
    if (hidden % heads != 0) {
        throw ConfigError("hidden width " + std::to_string(hidden) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (vocab < 1) throw ConfigError("vocab size must be positive");
    if (embedding_slots < 1) throw ConfigError("need at least one embedding slot");
    if (num_domains < 1) throw ConfigError("need at least one domain");
    if (experts_per_domain < 1) throw ConfigError("need at least one expert per domain");
    if (max_seq_len < 1) throw ConfigError("max sequence length must be positive");
    if (!domain_slot.empty() &&
        static_cast<std::int64_t>(domain_slot.size()) != num_domains) {
        throw ConfigError("domain_slot must list one slot per domain (" +
                          std::to_string(domain_slot.size()) + " given, " +
                          std::to_string(num_domains) + " domains)");
    }
    for (std::int32_t s : domain_slot) {
        if (s < 0 || s >= embedding_slots) {
            throw ConfigError("domain_slot entry " + std::to_string(s) +
                              " outside [0, " + std::to_string(embedding_slots) + ")");
        }
    }
    if (rre_layers > 0 && experts_per_domain > vocab) {
        throw ConfigError("more experts per domain (" + std::to_string(experts_per_domain) +
                          ") than vocabulary tokens (" + std::to_string(vocab) + ")");
    }
}

ArchMode detect_mode(const ModelConfig& config) {
    config.validate();
    // No expert layers, or a single expert in total: routing is vacuous and
    // the stack behaves as a plain dense decoder. This case wins even when
    // dense_layers is zero.
    if (config.rre_layers == 0 || config.total_experts() == 1) return ArchMode::Dense;
    if (config.dense_layers == 0) return ArchMode::Sparse;
    return ArchMode::Mixed;
}

std::string arch_mode_name(ArchMode mode) {
    switch (mode) {
        case ArchMode::Dense: return "dense";
        case ArchMode::Sparse: return "sparse";
        case ArchMode::Mixed: return "mixed";
    }
    throw SpecError("unknown architecture mode");
}

std::int64_t count_params(const ModelConfig& config) {
    config.validate();
    const std::int64_t d = config.hidden, f = config.ffn;
    const std::int64_t attn = 2 * d + 4 * (d * d + d);     // norm + q,k,v,o projections
    const std::int64_t ffn_block = d * f + f + f * d + d;  // w1,b1,w2,b2
    std::int64_t n = 0;
    n += config.embedding_slots * config.vocab * d;
    n += (config.max_seq_len + 1) * d;
    n += config.total_layers() * (attn + 2 * d);
    n += config.dense_layers * ffn_block;
    n += config.rre_layers * config.num_domains * config.experts_per_domain * ffn_block;
    n += 2 * d;
    return n;
}

Model init_model(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    ParamTree& p = model.params;
    const std::int64_t d = config.hidden;

    for (std::int64_t s = 0; s < config.embedding_slots; ++s) {
        p.add(slot_name(s), Tensor::zeros({config.vocab, d}),
              ParamTag::embedding(static_cast<std::int32_t>(s)));
    }
    p.add("embedding.pos", Tensor::zeros({config.max_seq_len + 1, d}), ParamTag::dense());

    for (std::int64_t li = 0; li < config.total_layers(); ++li) {
        p.add(layer_name(li, "attn.ln.gamma"), Tensor::zeros({d}), ParamTag::dense());
        p.add(layer_name(li, "attn.ln.beta"), Tensor::zeros({d}), ParamTag::dense());
        for (const char* proj : {"q", "k", "v", "o"}) {
            p.add(layer_name(li, (std::string("attn.w") + proj).c_str()), Tensor::zeros({d, d}),
                  ParamTag::dense());
            p.add(layer_name(li, (std::string("attn.b") + proj).c_str()), Tensor::zeros({d}),
                  ParamTag::dense());
        }
        p.add(layer_name(li, "ffn.ln.gamma"), Tensor::zeros({d}), ParamTag::dense());
        p.add(layer_name(li, "ffn.ln.beta"), Tensor::zeros({d}), ParamTag::dense());
        if (li < config.dense_layers) {
            p.add(layer_name(li, "ffn.w1"), Tensor::zeros({d, config.ffn}), ParamTag::dense());
            p.add(layer_name(li, "ffn.b1"), Tensor::zeros({config.ffn}), ParamTag::dense());
            p.add(layer_name(li, "ffn.w2"), Tensor::zeros({config.ffn, d}), ParamTag::dense());
            p.add(layer_name(li, "ffn.b2"), Tensor::zeros({d}), ParamTag::dense());
        } else {
            const std::int32_t rj = static_cast<std::int32_t>(li - config.dense_layers);
            for (std::int64_t a = 0; a < config.num_domains; ++a) {
                for (std::int64_t k = 0; k < config.experts_per_domain; ++k) {
                    const std::string ep = expert_prefix(li, a, k);
                    const ParamTag tag = ParamTag::rre(static_cast<std::int32_t>(a), rj,
                                                       static_cast<std::int32_t>(k));
                    p.add(ep + "w1", Tensor::zeros({d, config.ffn}), tag);
                    p.add(ep + "b1", Tensor::zeros({config.ffn}), tag);
                    p.add(ep + "w2", Tensor::zeros({config.ffn, d}), tag);
                    p.add(ep + "b2", Tensor::zeros({d}), tag);
                }
            }
        }
    }
    p.add("final_norm.gamma", Tensor::zeros({d}), ParamTag::dense());
    p.add("final_norm.beta", Tensor::zeros({d}), ParamTag::dense());

    // One stream fills every tensor in tree order: matrices get scaled
    // normals, norm gains get ones, biases stay zero. The draw count per
    // tensor is its size, so the fill is reproducible tensor by tensor.
    PrngStream prng(config.init_seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < p.size(); ++i) {
        Tensor& t = p.tensor(i);
        if (t.ndim() == 2) {
            for (double& v : t.data) v = prng.next_normal() * scale;
        } else if (ends_with(p.name(i), "gamma")) {
            for (double& v : t.data) v = 1.0;
        }
    }

    if (config.rre_layers > 0) {
        RoutingSpec rs;
        rs.num_domains = static_cast<std::uint32_t>(config.num_domains);
        rs.num_rre_layers = static_cast<std::uint32_t>(config.rre_layers);
        rs.experts_per_domain = static_cast<std::uint32_t>(config.experts_per_domain);
        rs.vocab_size = static_cast<std::uint32_t>(config.vocab);
        rs.seed = config.routing_seed;
        model.routing = build_routing_table(rs);
    }
    return model;
}

std::int64_t embedding_row_index(const ModelConfig& config, std::uint32_t domain,
                                 std::uint32_t token) {
    const std::int32_t slot = config.slot_of(domain);
    if (static_cast<std::int64_t>(token) >= config.vocab) {
        throw BoundsError("token " + std::to_string(token) + " out of range, slot vocab is " +
                          std::to_string(config.vocab));
    }
    return static_cast<std::int64_t>(slot) * config.vocab + static_cast<std::int64_t>(token);
}

Tensor embed(const Model& model, std::uint32_t domain,
             const std::vector<std::uint32_t>& token_ids) {
    const ModelConfig& c = model.config;
    const std::int32_t slot = c.slot_of(domain);  // validates the domain
    const std::int64_t len = static_cast<std::int64_t>(token_ids.size());
    if (len < 1) throw ShapeError("embed: empty token sequence");
    if (len > c.max_seq_len) {
        throw BoundsError("sequence length " + std::to_string(len) + " exceeds maximum " +
                          std::to_string(c.max_seq_len));
    }
    const Tensor& word = model.params.at(slot_name(slot));
    const Tensor& pos = model.params.at("embedding.pos");
    Tensor h = Tensor::zeros({len, c.hidden});
    for (std::int64_t t = 0; t < len; ++t) {
        const std::uint32_t tok = token_ids[static_cast<std::size_t>(t)];
        if (static_cast<std::int64_t>(tok) >= c.vocab) {
            throw BoundsError("token " + std::to_string(tok) + " at position " + std::to_string(t) +
                              " out of range, slot vocab is " + std::to_string(c.vocab));
        }
        for (std::int64_t j = 0; j < c.hidden; ++j) {
            h.at(t, j) = word.at(tok, j) + pos.at(t, j);
        }
    }
    return h;
}

Tensor forward(const Model& model, std::uint32_t domain,
               const std::vector<std::uint32_t>& token_ids, ForwardCache* cache) {
    const ModelConfig& c = model.config;
    const ParamTree& p = model.params;
    Tensor h = embed(model, domain, token_ids);  // all bounds checks happen here
    const std::int64_t len = h.rows();
    const std::int64_t dh = c.head_dim();

    if (cache) {
        cache->h0 = h;
        cache->layers.assign(static_cast<std::size_t>(c.total_layers()), LayerCache{});
    }
    const Tensor& pos = p.at("embedding.pos");

    for (std::int64_t li = 0; li < c.total_layers(); ++li) {
        LayerCache scratch;
        LayerCache& lc = cache ? cache->layers[static_cast<std::size_t>(li)] : scratch;
        const bool query_layer = li == c.total_layers() - 1;
        const bool expert_layer = li >= c.dense_layers;
        const std::string lp = "layer" + std::to_string(li) + ".";

        lc.x_in = h;
        lc.ln1_out = layer_norm(h, p.at(lp + "attn.ln.gamma"), p.at(lp + "attn.ln.beta"), &lc.ln1);
        // The last layer queries with the raw embedding of the position it
        // is predicting; content keys and values still come from the hidden
        // state. Everything the model says about position t+1 flows through
        // this one projection.
        if (query_layer) lc.q_src = slice_rows(pos, 1, len + 1);
        const Tensor& q_in = query_layer ? lc.q_src : lc.ln1_out;
        lc.q = affine(q_in, p.at(lp + "attn.wq"), p.at(lp + "attn.bq"));
        lc.k = affine(lc.ln1_out, p.at(lp + "attn.wk"), p.at(lp + "attn.bk"));
        lc.v = affine(lc.ln1_out, p.at(lp + "attn.wv"), p.at(lp + "attn.bv"));

        lc.attn_cat = Tensor::zeros({len, c.hidden});
        lc.heads.assign(static_cast<std::size_t>(c.heads), AttentionCache{});
        for (std::int64_t hh = 0; hh < c.heads; ++hh) {
            Tensor qh = slice_cols(lc.q, hh * dh, (hh + 1) * dh);
            Tensor kh = slice_cols(lc.k, hh * dh, (hh + 1) * dh);
            Tensor vh = slice_cols(lc.v, hh * dh, (hh + 1) * dh);
            Tensor yh = attention(qh, kh, vh, true, &lc.heads[static_cast<std::size_t>(hh)]);
            copy_into_cols(lc.attn_cat, yh, hh * dh);
        }
        Tensor attn_out = affine(lc.attn_cat, p.at(lp + "attn.wo"), p.at(lp + "attn.bo"));
        lc.h_mid = add(h, attn_out);

        lc.ln2_out = layer_norm(lc.h_mid, p.at(lp + "ffn.ln.gamma"), p.at(lp + "ffn.ln.beta"),
                                &lc.ln2);
        Tensor ffn_out;
        if (!expert_layer) {
            lc.ffn_pre = affine(lc.ln2_out, p.at(lp + "ffn.w1"), p.at(lp + "ffn.b1"));
            lc.ffn_act = gelu(lc.ffn_pre);
            ffn_out = affine(lc.ffn_act, p.at(lp + "ffn.w2"), p.at(lp + "ffn.b2"));
        } else {
            if (!model.routing) throw SpecError("expert layer without a routing table");
            const std::uint32_t rj = static_cast<std::uint32_t>(li - c.dense_layers);
            lc.expert_of.resize(token_ids.size());
            for (std::size_t t = 0; t < token_ids.size(); ++t) {
                const std::uint32_t global = model.routing->route(domain, rj, token_ids[t]);
                lc.expert_of[t] =
                    global - domain * static_cast<std::uint32_t>(c.experts_per_domain);
            }
            lc.ffn_pre = Tensor::zeros({len, c.ffn});
            lc.ffn_act = Tensor::zeros({len, c.ffn});
            ffn_out = Tensor::zeros({len, c.hidden});
            const auto buckets = bucket_by_expert(lc.expert_of, c.experts_per_domain);
            for (std::int64_t k = 0; k < c.experts_per_domain; ++k) {
                const auto& rows = buckets[static_cast<std::size_t>(k)];
                if (rows.empty()) continue;
                const std::string ep = expert_prefix(li, domain, k);
                Tensor xin = gather_rows(lc.ln2_out, rows);
                Tensor pre = affine(xin, p.at(ep + "w1"), p.at(ep + "b1"));
                Tensor act = gelu(pre);
                Tensor out = affine(act, p.at(ep + "w2"), p.at(ep + "b2"));
                scatter_rows(lc.ffn_pre, pre, rows);
                scatter_rows(lc.ffn_act, act, rows);
                scatter_rows(ffn_out, out, rows);
            }
        }
        h = add(lc.h_mid, ffn_out);
    }

    LayerNormCache lnf_scratch;
    LayerNormCache& lnf = cache ? cache->ln_f : lnf_scratch;
    Tensor h_final = layer_norm(h, p.at("final_norm.gamma"), p.at("final_norm.beta"), &lnf);
    if (cache) {
        cache->h_pre_final = h;
        cache->h_final = h_final;
    }
    const Tensor& word = p.at(slot_name(c.slot_of(domain)));
    return matmul_nt(h_final, word);
}

TargetSpec next_token_targets(const std::vector<std::uint32_t>& token_ids, std::uint32_t pad_id) {
    const std::size_t len = token_ids.size();
    TargetSpec ts;
    ts.targets.assign(len, 0);
    ts.mask.assign(len, 0);
    for (std::size_t t = 0; t + 1 < len; ++t) {
        ts.targets[t] = static_cast<std::int32_t>(token_ids[t + 1]);
        ts.mask[t] = token_ids[t + 1] != pad_id ? 1 : 0;
    }
    return ts;
}

double sequence_loss(const Model& model, std::uint32_t domain,
                     const std::vector<std::uint32_t>& token_ids, const TargetSpec& targets) {
    Tensor logits = forward(model, domain, token_ids);
    return cross_entropy(logits, targets.targets, targets.mask);
}

BackwardResult backward(const Model& model, std::uint32_t domain,
                        const std::vector<std::uint32_t>& token_ids, const TargetSpec& targets) {
    const ModelConfig& c = model.config;
    const ParamTree& p = model.params;

    ForwardCache cache;
    Tensor logits = forward(model, domain, token_ids, &cache);
    const std::int64_t len = logits.rows();
    const std::int64_t dh = c.head_dim();

    BackwardResult result;
    CrossEntropyCache ce;
    result.loss = cross_entropy(logits, targets.targets, targets.mask, &ce);
    result.grads = p.zeros_like();
    ParamTree& g = result.grads;

    Tensor glogits = Tensor::zeros(logits.shape);
    cross_entropy_backward(ce, targets.targets, targets.mask, 1.0, glogits);

    // Output projection shares the slot embedding: logits = h_final @ E^T.
    const std::string slot = slot_name(c.slot_of(domain));
    Tensor g_hf = Tensor::zeros(cache.h_final.shape);
    matmul_nt_backward(cache.h_final, p.at(slot), glogits, g_hf, g.at(slot));

    Tensor g_h = Tensor::zeros(cache.h_pre_final.shape);
    layer_norm_backward(cache.ln_f, p.at("final_norm.gamma"), g_hf, g_h, g.at("final_norm.gamma"),
                        g.at("final_norm.beta"));

    for (std::int64_t li = c.total_layers() - 1; li >= 0; --li) {
        const LayerCache& lc = cache.layers[static_cast<std::size_t>(li)];
        const bool query_layer = li == c.total_layers() - 1;
        const bool expert_layer = li >= c.dense_layers;
        const std::string lp = "layer" + std::to_string(li) + ".";

        // Feed-forward sublayer: h_out = h_mid + ffn(ln2(h_mid)).
        Tensor g_ln2out = Tensor::zeros(lc.ln2_out.shape);
        if (!expert_layer) {
            Tensor g_act = Tensor::zeros(lc.ffn_act.shape);
            affine_backward(lc.ffn_act, p.at(lp + "ffn.w2"), g_h, g_act, g.at(lp + "ffn.w2"),
                            g.at(lp + "ffn.b2"));
            Tensor g_pre = Tensor::zeros(lc.ffn_pre.shape);
            gelu_backward(lc.ffn_pre, g_act, g_pre);
            affine_backward(lc.ln2_out, p.at(lp + "ffn.w1"), g_pre, g_ln2out, g.at(lp + "ffn.w1"),
                            g.at(lp + "ffn.b1"));
        } else {
            const auto buckets = bucket_by_expert(lc.expert_of, c.experts_per_domain);
            for (std::int64_t k = 0; k < c.experts_per_domain; ++k) {
                const auto& rows = buckets[static_cast<std::size_t>(k)];
                if (rows.empty()) continue;
                const std::string ep = expert_prefix(li, domain, k);
                Tensor xin = gather_rows(lc.ln2_out, rows);
                Tensor pre = gather_rows(lc.ffn_pre, rows);
                Tensor act = gather_rows(lc.ffn_act, rows);
                Tensor gy = gather_rows(g_h, rows);
                Tensor g_act = Tensor::zeros(act.shape);
                affine_backward(act, p.at(ep + "w2"), gy, g_act, g.at(ep + "w2"), g.at(ep + "b2"));
                Tensor g_pre = Tensor::zeros(pre.shape);
                gelu_backward(pre, g_act, g_pre);
                Tensor g_x = Tensor::zeros(xin.shape);
                affine_backward(xin, p.at(ep + "w1"), g_pre, g_x, g.at(ep + "w1"),
                                g.at(ep + "b1"));
                scatter_add_rows(g_ln2out, g_x, rows);
            }
        }
        Tensor g_hmid = g_h;  // residual branch passes the gradient through
        layer_norm_backward(lc.ln2, p.at(lp + "ffn.ln.gamma"), g_ln2out, g_hmid,
                            g.at(lp + "ffn.ln.gamma"), g.at(lp + "ffn.ln.beta"));

        // Attention sublayer: h_mid = x_in + attn(ln1(x_in)).
        Tensor g_attn_cat = Tensor::zeros(lc.attn_cat.shape);
        affine_backward(lc.attn_cat, p.at(lp + "attn.wo"), g_hmid, g_attn_cat,
                        g.at(lp + "attn.wo"), g.at(lp + "attn.bo"));

        Tensor gq = Tensor::zeros(lc.q.shape);
        Tensor gk = Tensor::zeros(lc.k.shape);
        Tensor gv = Tensor::zeros(lc.v.shape);
        for (std::int64_t hh = 0; hh < c.heads; ++hh) {
            Tensor qh = slice_cols(lc.q, hh * dh, (hh + 1) * dh);
            Tensor kh = slice_cols(lc.k, hh * dh, (hh + 1) * dh);
            Tensor vh = slice_cols(lc.v, hh * dh, (hh + 1) * dh);
            Tensor gyh = slice_cols(g_attn_cat, hh * dh, (hh + 1) * dh);
            Tensor gqh = Tensor::zeros(qh.shape);
            Tensor gkh = Tensor::zeros(kh.shape);
            Tensor gvh = Tensor::zeros(vh.shape);
            attention_backward(qh, kh, vh, true, lc.heads[static_cast<std::size_t>(hh)], gyh, gqh,
                               gkh, gvh);
            add_into_cols(gq, gqh, hh * dh);
            add_into_cols(gk, gkh, hh * dh);
            add_into_cols(gv, gvh, hh * dh);
        }

        Tensor g_ln1out = Tensor::zeros(lc.ln1_out.shape);
        if (query_layer) {
            Tensor g_qsrc = Tensor::zeros(lc.q_src.shape);
            affine_backward(lc.q_src, p.at(lp + "attn.wq"), gq, g_qsrc, g.at(lp + "attn.wq"),
                            g.at(lp + "attn.bq"));
            Tensor& gpos = g.at("embedding.pos");
            for (std::int64_t t = 0; t < len; ++t) {
                for (std::int64_t j = 0; j < c.hidden; ++j) {
                    gpos.at(t + 1, j) += g_qsrc.at(t, j);
                }
            }
        } else {
            affine_backward(lc.ln1_out, p.at(lp + "attn.wq"), gq, g_ln1out, g.at(lp + "attn.wq"),
                            g.at(lp + "attn.bq"));
        }
        affine_backward(lc.ln1_out, p.at(lp + "attn.wk"), gk, g_ln1out, g.at(lp + "attn.wk"),
                        g.at(lp + "attn.bk"));
        affine_backward(lc.ln1_out, p.at(lp + "attn.wv"), gv, g_ln1out, g.at(lp + "attn.wv"),
                        g.at(lp + "attn.bv"));

        Tensor g_x = g_hmid;  // residual branch
        layer_norm_backward(lc.ln1, p.at(lp + "attn.ln.gamma"), g_ln1out, g_x,
                            g.at(lp + "attn.ln.gamma"), g.at(lp + "attn.ln.beta"));
        g_h = std::move(g_x);
    }

    Tensor& gword = g.at(slot);
    Tensor& gpos = g.at("embedding.pos");
    for (std::int64_t t = 0; t < len; ++t) {
        const std::uint32_t tok = token_ids[static_cast<std::size_t>(t)];
        for (std::int64_t j = 0; j < c.hidden; ++j) {
            gword.at(tok, j) += g_h.at(t, j);
            gpos.at(t, j) += g_h.at(t, j);
        }
    }
    return result;
}

KvMap model_config_to_kv(const ModelConfig& config) {
    KvMap kv;
    kv.set("model.dense_layers", std::to_string(config.dense_layers));
    kv.set("model.rre_layers", std::to_string(config.rre_layers));
    kv.set("model.heads", std::to_string(config.heads));
    kv.set("model.hidden", std::to_string(config.hidden));
    kv.set("model.ffn", std::to_string(config.ffn));
    kv.set("model.vocab", std::to_string(config.vocab));
    kv.set("model.embedding_slots", std::to_string(config.embedding_slots));
    kv.set("model.num_domains", std::to_string(config.num_domains));
    kv.set("model.experts_per_domain", std::to_string(config.experts_per_domain));
    kv.set("model.max_seq_len", std::to_string(config.max_seq_len));
    kv.set("model.init_seed", std::to_string(config.init_seed));
    kv.set("model.routing_seed", std::to_string(config.routing_seed));
    if (!config.domain_slot.empty()) {
        std::string joined;
        for (std::size_t i = 0; i < config.domain_slot.size(); ++i) {
            if (i) joined += ",";
            joined += std::to_string(config.domain_slot[i]);
        }
        kv.set("model.domain_slot", joined);
    }
    return kv;
}

ModelConfig model_config_from_kv(const KvMap& kv) {
    ModelConfig c;
    c.dense_layers = kv.get_int("model.dense_layers");
    c.rre_layers = kv.get_int("model.rre_layers");
    c.heads = kv.get_int("model.heads");
    c.hidden = kv.get_int("model.hidden");
    c.ffn = kv.get_int("model.ffn");
    c.vocab = kv.get_int("model.vocab");
    c.embedding_slots = kv.get_int_or("model.embedding_slots", 1);
    c.num_domains = kv.get_int_or("model.num_domains", 1);
    c.experts_per_domain = kv.get_int_or("model.experts_per_domain", 1);
    c.max_seq_len = kv.get_int("model.max_seq_len");
    c.init_seed = kv.get_uint_or("model.init_seed", 0);
    c.routing_seed = kv.get_uint_or("model.routing_seed", 0);
    if (kv.has("model.domain_slot")) {
        const std::string raw = kv.get("model.domain_slot");
        std::size_t start = 0;
        while (start <= raw.size()) {
            std::size_t comma = raw.find(',', start);
            const std::string piece =
                raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (piece.empty()) {
                throw ConfigError("config key 'model.domain_slot': empty list entry");
            }
            try {
                c.domain_slot.push_back(std::stoi(piece));
            } catch (const std::exception&) {
                throw ConfigError("config key 'model.domain_slot': expected integer, got '" +
                                  piece + "'");
            }
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    c.validate();
    return c;
}

void save_model(const std::string& dir, const Model& model) {
    std::filesystem::create_directories(dir);
    write_kv_file(dir + "/config.cfg", model_config_to_kv(model.config));
    write_param_tree(dir + "/params.bin", model.params);
    if (model.routing) write_routing_table(dir + "/routing.rret", *model.routing);
}

Model load_model(const std::string& dir) {
    Model m;
    m.config = model_config_from_kv(read_kv_file(dir + "/config.cfg"));
    m.params = read_param_tree(dir + "/params.bin");
    if (m.params.total_params() != count_params(m.config)) {
        throw FormatError("checkpoint '" + dir + "': parameter blob does not match its config");
    }
    if (m.config.rre_layers > 0) {
        m.routing = read_routing_table(dir + "/routing.rret");
        const RoutingSpec& rs = m.routing->spec();
        const bool consistent =
            rs.num_domains == static_cast<std::uint32_t>(m.config.num_domains) &&
            rs.num_rre_layers == static_cast<std::uint32_t>(m.config.rre_layers) &&
            rs.experts_per_domain == static_cast<std::uint32_t>(m.config.experts_per_domain) &&
            rs.vocab_size == static_cast<std::uint32_t>(m.config.vocab);
        if (!consistent) {
            throw FormatError("checkpoint '" + dir + "': routing table does not match its config");
        }
    }
    return m;
}

}  // namespace dmoe
