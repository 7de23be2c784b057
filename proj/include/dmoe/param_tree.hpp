// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmoe/tensor.hpp"

namespace dmoe {

// Every parameter carries one tag. The tag partitions the tree into the
// shared dense parameters, the per-(domain, layer, expert) RRE parameters,
// and the per-slot embedding matrices; the optimizer and the model-surgery
// operations key off it.
struct ParamTag {
    enum class Kind : std::uint8_t { Dense = 0, Rre = 1, Embedding = 2 };

    Kind kind = Kind::Dense;
    std::int32_t domain = -1;     // Rre only
    std::int32_t rre_layer = -1;  // Rre only: index among RRE layers, not global layer
    std::int32_t expert = -1;     // Rre only
    std::int32_t slot = -1;       // Embedding only

    static ParamTag dense() { return {}; }
    static ParamTag rre(std::int32_t domain, std::int32_t rre_layer, std::int32_t expert) {
        return {Kind::Rre, domain, rre_layer, expert, -1};
    }
    static ParamTag embedding(std::int32_t slot) { return {Kind::Embedding, -1, -1, -1, slot}; }

    bool operator==(const ParamTag&) const = default;
};

// Ordered map from hierarchical name to tagged tensor. Iteration follows
// insertion order, which makes optimizer sweeps and serialization
// deterministic.
class ParamTree {
public:
    Tensor& add(const std::string& name, Tensor tensor, ParamTag tag);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const ParamTag& tag_of(const std::string& name) const;

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
    const ParamTag& tag(std::size_t i) const { return tags_[i]; }

    // Same names, tags, and shapes, all data zero.
    ParamTree zeros_like() const;

    // Sum of tensor sizes.
    std::int64_t total_params() const;

    bool operator==(const ParamTree&) const = default;

private:
    std::size_t index_of(const std::string& name) const;

    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::vector<ParamTag> tags_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Manifest + blob file: a name table with dtype tag, parameter tag, shape,
// and element offset per tensor, followed by one contiguous little-endian
// f64 blob.
void write_param_tree(const std::string& path, const ParamTree& tree);
ParamTree read_param_tree(const std::string& path);

}  // namespace dmoe
