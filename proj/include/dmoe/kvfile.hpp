// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value text files: one `key = value` per line, `#` comments.
// Used for run configs and checkpoint config records. No environment
// lookups, no includes; what is in the file is the whole truth.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace dmoe {

class KvMap {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    // Throws ConfigError naming the key when absent.
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::optional<std::string> find(const std::string& key) const;

    // Typed accessors; throw ConfigError naming the key on a parse failure.
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key) const;
    std::uint64_t get_uint_or(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;  // insertion order
};

KvMap parse_kv_text(const std::string& text);
KvMap read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);

// Comma-separated integer list; `key` names the source in diagnostics.
std::vector<std::int64_t> parse_int_list(const std::string& raw, const std::string& key);

}  // namespace dmoe
