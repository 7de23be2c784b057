// SPDX-License-Identifier: Apache-2.0

#include "dmoe/routing.hpp"

#include <cstdio>
#include <memory>
#include <numeric>

#include "dmoe/error.hpp"

namespace dmoe {

void RoutingSpec::validate() const {
    if (num_domains == 0 || num_rre_layers == 0 || experts_per_domain == 0 || vocab_size == 0) {
        throw SpecError("routing spec: all dimensions must be positive");
    }
    if (experts_per_domain > vocab_size) {
        throw SpecError("routing spec: experts_per_domain (" + std::to_string(experts_per_domain) +
                        ") exceeds vocab_size (" + std::to_string(vocab_size) + ")");
    }
}

RoutingTable::RoutingTable(RoutingSpec spec, std::vector<std::uint32_t> entries)
    : spec_(spec), entries_(std::move(entries)) {
    spec_.validate();
    const std::size_t expected = static_cast<std::size_t>(spec_.num_domains) *
                                 spec_.num_rre_layers * spec_.vocab_size;
    if (entries_.size() != expected) {
        throw SpecError("routing table: entry count " + std::to_string(entries_.size()) +
                        " does not match spec (" + std::to_string(expected) + ")");
    }
}

std::size_t RoutingTable::index(std::uint32_t domain, std::uint32_t layer,
                                std::uint32_t token_id) const {
    if (domain >= spec_.num_domains) {
        throw BoundsError("route: domain " + std::to_string(domain) + " out of range");
    }
    if (layer >= spec_.num_rre_layers) {
        throw BoundsError("route: layer " + std::to_string(layer) + " out of range");
    }
    if (token_id >= spec_.vocab_size) {
        throw BoundsError("route: token " + std::to_string(token_id) + " out of range");
    }
    return (static_cast<std::size_t>(domain) * spec_.num_rre_layers + layer) * spec_.vocab_size +
           token_id;
}

std::uint32_t RoutingTable::route(std::uint32_t domain, std::uint32_t layer,
                                  std::uint32_t token_id) const {
    return entries_[index(domain, layer, token_id)];
}

std::vector<std::uint32_t> RoutingTable::load_histogram(std::uint32_t domain,
                                                        std::uint32_t layer) const {
    std::vector<std::uint32_t> counts(spec_.experts_per_domain, 0);
    const std::uint32_t base = domain * spec_.experts_per_domain;
    for (std::uint32_t t = 0; t < spec_.vocab_size; ++t) {
        counts[entries_[index(domain, layer, t)] - base]++;
    }
    return counts;
}

std::vector<std::uint32_t> shuffle(std::vector<std::uint32_t> sequence, PrngStream& prng) {
    for (std::size_t i = sequence.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(prng.next() % i);
        std::swap(sequence[i - 1], sequence[j]);
    }
    return sequence;
}

std::vector<std::uint32_t> build_base_assignment(std::uint32_t vocab_size,
                                                 std::uint32_t experts_per_domain) {
    if (experts_per_domain == 0 || experts_per_domain > vocab_size) {
        throw SpecError("base assignment: need 0 < e <= V");
    }
    const std::uint32_t q = vocab_size / experts_per_domain;
    const std::uint32_t v_trim = q * experts_per_domain;
    std::vector<std::uint32_t> u(vocab_size);
    for (std::uint32_t k = 0; k < v_trim; ++k) {
        u[k] = k / q;
    }
    for (std::uint32_t r = 0; r < vocab_size - v_trim; ++r) {
        u[v_trim + r] = r;
    }
    return u;
}

RoutingTable build_routing_table(const RoutingSpec& spec) {
    spec.validate();
    const std::uint32_t v = spec.vocab_size;
    const std::vector<std::uint32_t> u = build_base_assignment(v, spec.experts_per_domain);

    std::vector<std::uint32_t> identity(v);
    std::iota(identity.begin(), identity.end(), 0u);

    std::vector<std::uint32_t> entries(
        static_cast<std::size_t>(spec.num_domains) * spec.num_rre_layers * v);
    PrngStream prng(spec.seed);
    for (std::uint32_t j = 0; j < spec.num_rre_layers; ++j) {
        for (std::uint32_t i = 0; i < spec.num_domains; ++i) {
            const std::vector<std::uint32_t> perm = shuffle(identity, prng);
            const std::size_t row =
                (static_cast<std::size_t>(i) * spec.num_rre_layers + j) * v;
            const std::uint32_t offset = i * spec.experts_per_domain;
            for (std::uint32_t k = 0; k < v; ++k) {
                entries[row + perm[k]] = u[k] + offset;
            }
        }
    }
    return RoutingTable(spec, std::move(entries));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    if (std::fwrite(b, 1, 4, f) != 4) throw FormatError("routing table: short write");
}

void put_u64(std::FILE* f, std::uint64_t v) {
    put_u32(f, static_cast<std::uint32_t>(v));
    put_u32(f, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::FILE* f) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw FormatError("routing table: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::FILE* f) {
    const std::uint64_t lo = get_u32(f);
    const std::uint64_t hi = get_u32(f);
    return lo | (hi << 32);
}

constexpr std::uint32_t kTableVersion = 1;

}  // namespace

void write_routing_table(const std::string& path, const RoutingTable& table) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError("cannot open " + path + " for writing");
    if (std::fwrite("RRET", 1, 4, f.get()) != 4) throw FormatError("routing table: short write");
    const RoutingSpec& s = table.spec();
    put_u32(f.get(), kTableVersion);
    put_u32(f.get(), s.num_domains);
    put_u32(f.get(), s.num_rre_layers);
    put_u32(f.get(), s.experts_per_domain);
    put_u32(f.get(), s.vocab_size);
    put_u64(f.get(), s.seed);
    for (std::uint32_t entry : table.entries()) {
        put_u32(f.get(), entry);
    }
    if (std::fflush(f.get()) != 0) throw FormatError("routing table: flush failed");
}

RoutingTable read_routing_table(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::string_view(magic, 4) != "RRET") {
        throw FormatError(path + ": not a routing table file (bad magic)");
    }
    const std::uint32_t version = get_u32(f.get());
    if (version != kTableVersion) {
        throw FormatError(path + ": unsupported routing table version " + std::to_string(version));
    }
    RoutingSpec spec;
    spec.num_domains = get_u32(f.get());
    spec.num_rre_layers = get_u32(f.get());
    spec.experts_per_domain = get_u32(f.get());
    spec.vocab_size = get_u32(f.get());
    spec.seed = get_u64(f.get());
    spec.validate();
    const std::size_t count = static_cast<std::size_t>(spec.num_domains) * spec.num_rre_layers *
                              spec.vocab_size;
    std::vector<std::uint32_t> entries(count);
    for (std::size_t k = 0; k < count; ++k) {
        entries[k] = get_u32(f.get());
    }
    return RoutingTable(spec, std::move(entries));
}

}  // namespace dmoe
