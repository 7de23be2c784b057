// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer with a mixed dense/expert stack.
//
// The bottom `dense_layers` layers are ordinary transformer blocks shared by
// every domain. The top `rre_layers` layers replace the feed-forward block
// with a bank of per-domain experts; each token is dispatched to one expert
// chosen by the static routing table (no learned router). The last layer of
// the stack additionally draws its attention queries from the position
// embedding of the *next* position instead of the hidden state, so the
// prediction stream is kept separate from the content stream.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmoe/kernels.hpp"
#include "dmoe/kvfile.hpp"
#include "dmoe/param_tree.hpp"
#include "dmoe/routing.hpp"
#include "dmoe/tensor.hpp"

namespace dmoe {

struct ModelConfig {
    std::int64_t dense_layers = 0;       // shared bottom blocks
    std::int64_t rre_layers = 0;         // expert-routed top blocks
    std::int64_t heads = 1;
    std::int64_t hidden = 8;             // model width
    std::int64_t ffn = 16;               // feed-forward inner width
    std::int64_t vocab = 32;             // tokens per embedding slot
    std::int64_t embedding_slots = 1;
    std::int64_t num_domains = 1;
    std::int64_t experts_per_domain = 1;
    std::int64_t max_seq_len = 16;
    std::uint64_t init_seed = 0;
    std::uint64_t routing_seed = 0;
    // Which embedding slot each domain reads from; empty means slot 0 for all.
    std::vector<std::int32_t> domain_slot;

    std::int64_t total_layers() const { return dense_layers + rre_layers; }
    std::int64_t total_experts() const { return num_domains * experts_per_domain; }
    std::int64_t head_dim() const { return hidden / heads; }
    std::int32_t slot_of(std::uint32_t domain) const;
    void validate() const;  // throws ConfigError
};

// Dense: no expert layers, or a single expert in total (routing is vacuous).
// Sparse: expert layers only. Mixed: both kinds of layer and real routing.
enum class ArchMode { Dense, Sparse, Mixed };

ArchMode detect_mode(const ModelConfig& config);
std::string arch_mode_name(ArchMode mode);

struct Model {
    ModelConfig config;
    ParamTree params;
    // Present exactly when the stack has expert layers.
    std::optional<RoutingTable> routing;
};

// Builds all parameters in a fixed tree order and fills them from a single
// seeded stream: matrices ~ N(0, 1/sqrt(hidden)), norm gains 1, biases 0.
Model init_model(const ModelConfig& config);

// Closed-form parameter count for the tree init_model would build.
std::int64_t count_params(const ModelConfig& config);

// Conceptual row index of a token in the stacked multi-slot vocabulary.
std::int64_t embedding_row_index(const ModelConfig& config, std::uint32_t domain,
                                 std::uint32_t token);

// Word-plus-position embedding of a token sequence. (T, hidden)
Tensor embed(const Model& model, std::uint32_t domain,
             const std::vector<std::uint32_t>& token_ids);

// Per-layer activation record kept for the backward pass.
struct LayerCache {
    Tensor x_in;       // hidden entering the layer
    LayerNormCache ln1;
    Tensor ln1_out;
    Tensor q_src;      // query-layer only: raw next-position embeddings
    Tensor q, k, v;    // (T, hidden) after the input projections
    std::vector<AttentionCache> heads;
    Tensor attn_cat;   // heads concatenated, before the output projection
    Tensor h_mid;      // hidden after the attention residual
    LayerNormCache ln2;
    Tensor ln2_out;
    Tensor ffn_pre;    // (T, ffn) before the activation
    Tensor ffn_act;    // (T, ffn) after the activation
    // Expert layers: chosen expert per position, local to the domain bank.
    std::vector<std::uint32_t> expert_of;
};

struct ForwardCache {
    Tensor h0;
    std::vector<LayerCache> layers;
    LayerNormCache ln_f;
    Tensor h_pre_final;  // hidden entering the final norm
    Tensor h_final;      // final norm output
};

// Full forward pass; logits are (T, vocab) against the instance's slot.
Tensor forward(const Model& model, std::uint32_t domain,
               const std::vector<std::uint32_t>& token_ids,
               ForwardCache* cache = nullptr);

// Shifted next-token targets. Position t predicts token t+1; the last
// position and positions whose target is `pad_id` are masked out.
struct TargetSpec {
    std::vector<std::int32_t> targets;
    std::vector<std::uint8_t> mask;
};
TargetSpec next_token_targets(const std::vector<std::uint32_t>& token_ids,
                              std::uint32_t pad_id);

double sequence_loss(const Model& model, std::uint32_t domain,
                     const std::vector<std::uint32_t>& token_ids,
                     const TargetSpec& targets);

struct BackwardResult {
    double loss = 0.0;
    ParamTree grads;  // same tree shape as model.params
};

// Loss plus exact gradients via reverse-mode differentiation of the
// forward pass. Only parameters actually touched by the instance (its
// embedding slot, its domain's experts, all shared blocks) receive
// nonzero gradient.
BackwardResult backward(const Model& model, std::uint32_t domain,
                        const std::vector<std::uint32_t>& token_ids,
                        const TargetSpec& targets);

// Checkpoint directory: config record, parameter blob, routing table.
void save_model(const std::string& dir, const Model& model);
Model load_model(const std::string& dir);

KvMap model_config_to_kv(const ModelConfig& config);
ModelConfig model_config_from_kv(const KvMap& kv);

}  // namespace dmoe
