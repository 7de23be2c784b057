// SPDX-License-Identifier: Apache-2.0
//
// Random Routed Experts routing table. Tokens are routed in two levels:
// the domain selects an expert group, then a precomputed random table maps
// each token ID to one expert of that group. There is no learnable router;
// the table is fixed before training and never changes.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmoe/prng.hpp"

namespace dmoe {

struct RoutingSpec {
    std::uint32_t num_domains = 1;       // d
    std::uint32_t num_rre_layers = 1;    // l
    std::uint32_t experts_per_domain = 1;  // e
    std::uint32_t vocab_size = 1;        // V
    std::uint64_t seed = 0;

    // Total experts per layer across all domains.
    std::uint32_t total_experts() const { return num_domains * experts_per_domain; }

    // Throws SpecError when any field is zero or e > V.
    void validate() const;

    bool operator==(const RoutingSpec&) const = default;
};

// Immutable (d, l, V) lookup of global expert indices. Entry (i, j, t) is
// the expert that token t of domain i activates in RRE layer j, and always
// lies in [i*e, (i+1)*e).
class RoutingTable {
public:
    RoutingTable(RoutingSpec spec, std::vector<std::uint32_t> entries);

    const RoutingSpec& spec() const { return spec_; }
    const std::vector<std::uint32_t>& entries() const { return entries_; }

    // Pure lookup; bounds-checked.
    std::uint32_t route(std::uint32_t domain, std::uint32_t layer, std::uint32_t token_id) const;

    // Tokens per expert within the domain's group (length e, sums to V).
    std::vector<std::uint32_t> load_histogram(std::uint32_t domain, std::uint32_t layer) const;

    bool operator==(const RoutingTable&) const = default;

private:
    std::size_t index(std::uint32_t domain, std::uint32_t layer, std::uint32_t token_id) const;

    RoutingSpec spec_;
    std::vector<std::uint32_t> entries_;  // row-major (d, l, V)
};

// Fisher-Yates from the highest index down, swap target chosen as the next
// PRNG output modulo the number of remaining candidates.
std::vector<std::uint32_t> shuffle(std::vector<std::uint32_t> sequence, PrngStream& prng);

// Balanced e-way split of V token slots: value k gets floor(k / floor(V/e))
// for the first floor(V/e)*e slots, and the V mod e remainder slots go one
// each to experts 0, 1, ... All values lie in [0, e).
std::vector<std::uint32_t> build_base_assignment(std::uint32_t vocab_size,
                                                 std::uint32_t experts_per_domain);

// Construct the full table from a single PRNG stream seeded with spec.seed.
// Outer loop over layers, inner over domains; each (layer, domain) pair
// draws a fresh shuffled permutation from the ongoing stream. Bit-identical
// across rebuilds with the same spec.
RoutingTable build_routing_table(const RoutingSpec& spec);

// Binary table file: magic "RRET", version u32, d/l/e/V u32, seed u64,
// then d*l*V entries as u32, all little-endian.
void write_routing_table(const std::string& path, const RoutingTable& table);
RoutingTable read_routing_table(const std::string& path);

}  // namespace dmoe
