// SPDX-License-Identifier: Apache-2.0
//
// Model surgery: warm-starting the sparse model from a dense donor, and
// slicing a single domain's standalone sub-model back out of it. Both
// directions are exact: an inherited model reproduces the donor's logits at
// step 0, and an extracted sub-model reproduces the full model's logits on
// its domain, bit for bit.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmoe/model.hpp"
#include "dmoe/tensor.hpp"

namespace dmoe {

// Ordered token list with dense indices.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
    const std::string& token(std::int64_t id) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    std::int64_t index_of(const std::string& token) const;  // BoundsError when absent
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocab&) const = default;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> index_;
};

// Donor tokens keep their indices as a prefix; unseen addition tokens are
// appended in their original order.
Vocab merge_vocab(const Vocab& donor, const Vocab& addition);

// Embedding matrix over the merged vocabulary: shared-token rows copied
// from the donor, new-token rows drawn N(0,1) from the seeded stream in
// ascending merged-index order.
Tensor inherit_embeddings(const Tensor& donor_emb, const Vocab& donor_vocab,
                          const Vocab& merged_vocab, std::uint64_t seed);

// Doubles a single-slot embedding by appending a copy of itself, so the
// second slot starts from the inherited rows instead of noise. Refuses to
// extend an embedding that already has more than one slot.
Tensor extend_embedding_slots(const Tensor& emb, std::int64_t current_slots);

// Warm start: donor must be a dense-mode model with matching layer count
// and widths, and a vocabulary no larger than the target's (donor IDs are a
// prefix of the target IDs). Every expert of every domain is initialized
// as a copy of the donor's feed-forward block for that layer, so routing
// cannot change the function computed at step 0.
Model inherit_model(const Model& donor, const ModelConfig& target_config,
                    std::uint64_t embedding_seed);

struct SubModelSpec {
    std::uint32_t domain = 0;
};

// Standalone single-domain model: shared blocks, the domain's experts
// (re-indexed to [0, e)), its embedding slot, and its slice of the routing
// table. Forward on a domain instance is bit-identical to the full model.
Model extract_submodel(const Model& model, const SubModelSpec& spec);

}  // namespace dmoe
