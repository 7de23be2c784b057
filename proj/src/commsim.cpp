// SPDX-License-Identifier: Apache-2.0

#include "dmoe/commsim.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <queue>
#include <string>

#include "dmoe/error.hpp"
#include "dmoe/prng.hpp"

namespace dmoe {

namespace {

double finish_ratio(double grouped, double global) {
    return global > 0.0 ? grouped / global : 1.0;
}

void require_histogram(const Placement& placement, const std::vector<std::uint64_t>& hist) {
    if (static_cast<std::int64_t>(hist.size()) > placement.num_domains) {
        throw SpecError("traffic histogram lists " + std::to_string(hist.size()) +
                        " domains, placement has " + std::to_string(placement.num_domains));
    }
}

}  // namespace

void ClusterSpec::validate() const {
    if (groups < 1 || devices < groups) {
        throw LayoutError("cluster: need devices >= groups >= 1, got D=" +
                          std::to_string(devices) + " G=" + std::to_string(groups));
    }
    if (devices % groups != 0) {
        throw LayoutError("cluster: device count " + std::to_string(devices) +
                          " not divisible by " + std::to_string(groups) + " groups");
    }
    if (hidden < 1 || elem_bytes < 1) {
        throw LayoutError("cluster: payload dimensions must be positive");
    }
}

std::uint32_t Placement::device(std::int64_t domain, std::int64_t local_expert) const {
    if (domain < 0 || domain >= num_domains || local_expert < 0 ||
        local_expert >= experts_per_domain) {
        throw BoundsError("placement: expert (" + std::to_string(domain) + ", " +
                          std::to_string(local_expert) + ") out of range");
    }
    return device_of[static_cast<std::size_t>(domain * experts_per_domain + local_expert)];
}

Placement place_experts(const ClusterSpec& cluster, std::int64_t num_domains,
                        std::int64_t experts_per_domain) {
    cluster.validate();
    if (num_domains != cluster.groups) {
        throw LayoutError("placement: " + std::to_string(num_domains) + " domains but " +
                          std::to_string(cluster.groups) + " groups (one group per domain)");
    }
    if (experts_per_domain < 1) {
        throw LayoutError("placement: need at least one expert per domain");
    }
    const std::int64_t per_group = cluster.group_size();
    if (experts_per_domain % per_group != 0) {
        throw LayoutError("placement: " + std::to_string(experts_per_domain) +
                          " experts per domain do not spread evenly over " +
                          std::to_string(per_group) + " group devices");
    }
    Placement placement;
    placement.devices = cluster.devices;
    placement.groups = cluster.groups;
    placement.num_domains = num_domains;
    placement.experts_per_domain = experts_per_domain;
    placement.device_of.resize(static_cast<std::size_t>(num_domains * experts_per_domain));
    for (std::int64_t a = 0; a < num_domains; ++a) {
        for (std::int64_t k = 0; k < experts_per_domain; ++k) {
            placement.device_of[static_cast<std::size_t>(a * experts_per_domain + k)] =
                static_cast<std::uint32_t>(a * per_group + k % per_group);
        }
    }
    return placement;
}

std::int64_t experts_per_device(std::int64_t total_experts, std::int64_t devices) {
    if (devices < 1 || total_experts < 1 || total_experts % devices != 0) {
        throw LayoutError("experts_per_device: " + std::to_string(total_experts) +
                          " experts do not spread evenly over " + std::to_string(devices) +
                          " devices");
    }
    return total_experts / devices;
}

TrafficReport all_to_all_volume_analytic(const ClusterSpec& cluster, const Placement& placement,
                                         const std::vector<std::uint64_t>& tokens_per_domain) {
    cluster.validate();
    require_histogram(placement, tokens_per_domain);
    // The expert's device always belongs to the source scope, so the
    // cross-device probability is (|scope|-1)/|scope| regardless of which
    // expert the token hits.
    const double per_token =
        2.0 * static_cast<double>(cluster.hidden) * static_cast<double>(cluster.elem_bytes);
    const double scope_global = static_cast<double>(cluster.devices);
    const double scope_grouped = static_cast<double>(cluster.group_size());
    double total_tokens = 0.0;
    for (std::uint64_t n : tokens_per_domain) total_tokens += static_cast<double>(n);

    TrafficReport report;
    report.bytes_global = total_tokens * per_token * (scope_global - 1.0) / scope_global;
    report.bytes_grouped = total_tokens * per_token * (scope_grouped - 1.0) / scope_grouped;
    report.ratio = finish_ratio(report.bytes_grouped, report.bytes_global);
    return report;
}

TrafficReport all_to_all_volume_simulated(const ClusterSpec& cluster, const Placement& placement,
                                          const std::vector<std::uint64_t>& tokens_per_domain,
                                          std::uint64_t seed) {
    cluster.validate();
    require_histogram(placement, tokens_per_domain);
    const double per_token =
        2.0 * static_cast<double>(cluster.hidden) * static_cast<double>(cluster.elem_bytes);
    const std::uint64_t d_all = static_cast<std::uint64_t>(cluster.devices);
    const std::uint64_t d_grp = static_cast<std::uint64_t>(cluster.group_size());

    TrafficReport report;
    report.per_device_global.assign(static_cast<std::size_t>(cluster.devices), 0.0);
    report.per_device_grouped.assign(static_cast<std::size_t>(cluster.devices), 0.0);

    PrngStream prng(seed);
    for (std::size_t a = 0; a < tokens_per_domain.size(); ++a) {
        const std::int64_t domain = static_cast<std::int64_t>(a);
        const std::int64_t group_begin = placement.group_begin(domain);
        for (std::uint64_t t = 0; t < tokens_per_domain[a]; ++t) {
            const std::int64_t expert = static_cast<std::int64_t>(
                prng.next() % static_cast<std::uint64_t>(placement.experts_per_domain));
            const std::int64_t dst = placement.device(domain, expert);
            // One draw decides the source under both scopes, so when the
            // group spans every device the two figures coincide exactly.
            const std::uint64_t u = prng.next();
            const std::int64_t src_global = static_cast<std::int64_t>(u % d_all);
            const std::int64_t src_grouped = group_begin + static_cast<std::int64_t>(u % d_grp);
            if (src_global != dst) {
                report.bytes_global += per_token;
                report.per_device_global[static_cast<std::size_t>(src_global)] += per_token;
                report.per_device_global[static_cast<std::size_t>(dst)] += per_token;
            }
            if (src_grouped != dst) {
                report.bytes_grouped += per_token;
                report.per_device_grouped[static_cast<std::size_t>(src_grouped)] += per_token;
                report.per_device_grouped[static_cast<std::size_t>(dst)] += per_token;
            }
        }
    }
    report.ratio = finish_ratio(report.bytes_grouped, report.bytes_global);
    return report;
}

UploadPlan round_robin_upload(const std::vector<double>& shard_sizes, double bandwidth,
                              std::int64_t max_concurrent) {
    if (max_concurrent < 1) throw ConfigError("upload: max_concurrent must be at least 1");
    if (bandwidth <= 0.0) throw ConfigError("upload: bandwidth must be positive");
    for (std::size_t i = 0; i < shard_sizes.size(); ++i) {
        if (shard_sizes[i] < 0.0) {
            throw ConfigError("upload: shard " + std::to_string(i) + " has negative size");
        }
    }
    UploadPlan plan;
    plan.max_concurrent = max_concurrent;
    std::priority_queue<double, std::vector<double>, std::greater<double>> busy_until;
    for (std::size_t i = 0; i < shard_sizes.size(); ++i) {
        double start = 0.0;
        if (static_cast<std::int64_t>(busy_until.size()) >= max_concurrent) {
            start = busy_until.top();
            busy_until.pop();
        }
        const double end = start + shard_sizes[i] / bandwidth;
        busy_until.push(end);
        plan.entries.push_back({static_cast<std::int64_t>(i), start, end});
        plan.makespan = std::max(plan.makespan, end);
    }
    return plan;
}

bool upload_plan_respects_limit(const UploadPlan& plan, std::int64_t num_shards) {
    if (static_cast<std::int64_t>(plan.entries.size()) != num_shards) return false;
    std::vector<bool> seen(static_cast<std::size_t>(num_shards), false);
    // Events sorted by time with releases before acquisitions, so an upload
    // may start the instant another ends.
    std::vector<std::pair<double, int>> events;
    for (const UploadEntry& e : plan.entries) {
        if (e.shard < 0 || e.shard >= num_shards) return false;
        if (seen[static_cast<std::size_t>(e.shard)]) return false;
        seen[static_cast<std::size_t>(e.shard)] = true;
        if (e.end < e.start) return false;
        events.emplace_back(e.start, +1);
        events.emplace_back(e.end, -1);
    }
    std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::int64_t active = 0;
    for (const auto& [time, delta] : events) {
        active += delta;
        if (active > plan.max_concurrent) return false;
    }
    return true;
}

void write_upload_csv(std::ostream& out, const UploadPlan& plan) {
    out << "shard,start,end\n";
    char buf[64];
    for (const UploadEntry& e : plan.entries) {
        out << e.shard << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", e.start);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", e.end);
        out << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", plan.makespan);
    out << "# makespan," << buf << "\n";
}

void write_upload_csv(const std::string& path, const UploadPlan& plan) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_upload_csv(out, plan);
    if (!out) throw FormatError("failed writing '" + path + "'");
}

}  // namespace dmoe
