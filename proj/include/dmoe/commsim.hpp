// SPDX-License-Identifier: Apache-2.0
//
// Cost model for expert parallelism. Experts are placed on devices in
// per-domain groups; every routed token crosses the wire twice (to its
// expert and back) unless it already sits on the expert's device. Confining
// the exchange to the domain's group shrinks the expected traffic by
// ((D/G-1)/(D/G)) / ((D-1)/D), which this module computes both in closed
// form and by seeded simulation. A second scheduler models checkpoint shard
// uploads with a bounded number of concurrent streams.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dmoe {

struct ClusterSpec {
    std::int64_t devices = 1;     // D
    std::int64_t groups = 1;      // G, divides D
    std::int64_t hidden = 1;      // token payload elements per hop
    std::int64_t elem_bytes = 8;  // bytes per payload element

    std::int64_t group_size() const { return devices / groups; }
    void validate() const;  // throws LayoutError
};

// Device of every expert: domain i's experts occupy group i's devices
// round-robin, so each device hosts the same number of experts.
struct Placement {
    std::int64_t devices = 0;
    std::int64_t groups = 0;
    std::int64_t num_domains = 0;
    std::int64_t experts_per_domain = 0;
    std::vector<std::uint32_t> device_of;  // index = domain * e + local expert

    std::uint32_t device(std::int64_t domain, std::int64_t local_expert) const;
    std::int64_t group_size() const { return devices / groups; }
    std::int64_t group_begin(std::int64_t domain) const { return domain * group_size(); }
};

Placement place_experts(const ClusterSpec& cluster, std::int64_t num_domains,
                        std::int64_t experts_per_domain);

// Even-spread arithmetic: how many experts each device hosts.
std::int64_t experts_per_device(std::int64_t total_experts, std::int64_t devices);

struct TrafficReport {
    double bytes_global = 0.0;
    double bytes_grouped = 0.0;
    double ratio = 1.0;  // grouped / global; 1 when both are zero
    // Bytes sent or received per device (simulated reports only).
    std::vector<double> per_device_global;
    std::vector<double> per_device_grouped;
};

// Expected traffic with token sources uniform over all devices (global) or
// over the token's domain group (grouped). tokens_per_domain may list fewer
// domains than the placement; missing entries are zero.
TrafficReport all_to_all_volume_analytic(const ClusterSpec& cluster, const Placement& placement,
                                         const std::vector<std::uint64_t>& tokens_per_domain);

// One pass over every token with shared draws: the same PRNG output picks
// the source device under both scopes, so G=1 reproduces the global figures
// exactly rather than approximately.
TrafficReport all_to_all_volume_simulated(const ClusterSpec& cluster, const Placement& placement,
                                          const std::vector<std::uint64_t>& tokens_per_domain,
                                          std::uint64_t seed);

struct UploadEntry {
    std::int64_t shard = 0;
    double start = 0.0;
    double end = 0.0;
};

struct UploadPlan {
    std::vector<UploadEntry> entries;  // in shard index order
    std::int64_t max_concurrent = 1;
    double makespan = 0.0;
};

// Shards start in index order; each waits for a free slot among
// max_concurrent streams, each of fixed bandwidth.
UploadPlan round_robin_upload(const std::vector<double>& shard_sizes, double bandwidth,
                              std::int64_t max_concurrent);

// Sweep-line audit: never more than max_concurrent uploads in flight, every
// shard scheduled exactly once. An upload ending at t frees its slot for
// one starting at t.
bool upload_plan_respects_limit(const UploadPlan& plan, std::int64_t num_shards);

void write_upload_csv(std::ostream& out, const UploadPlan& plan);
void write_upload_csv(const std::string& path, const UploadPlan& plan);

}  // namespace dmoe
