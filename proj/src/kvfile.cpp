// SPDX-License-Identifier: Apache-2.0

#include "dmoe/kvfile.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dmoe/error.hpp"

namespace dmoe {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void KvMap::set(const std::string& key, const std::string& value) {
    for (auto& kv : entries_) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

bool KvMap::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KvMap::find(const std::string& key) const {
    for (const auto& kv : entries_) {
        if (kv.first == key) return kv.second;
    }
    return std::nullopt;
}

const std::string& KvMap::get(const std::string& key) const {
    for (const auto& kv : entries_) {
        if (kv.first == key) return kv.second;
    }
    throw ConfigError("missing config key '" + key + "'");
}

std::string KvMap::get_or(const std::string& key, const std::string& fallback) const {
    auto v = find(key);
    return v ? *v : fallback;
}

std::int64_t KvMap::get_int(const std::string& key) const {
    const std::string& raw = get(key);
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(raw.c_str(), &end, 10);
    if (errno != 0 || end == raw.c_str() || *end != '\0') {
        throw ConfigError("config key '" + key + "': expected integer, got '" + raw + "'");
    }
    return static_cast<std::int64_t>(v);
}

std::int64_t KvMap::get_int_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t KvMap::get_uint(const std::string& key) const {
    const std::string& raw = get(key);
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
    if (errno != 0 || end == raw.c_str() || *end != '\0' || raw.find('-') != std::string::npos) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + raw + "'");
    }
    return static_cast<std::uint64_t>(v);
}

std::uint64_t KvMap::get_uint_or(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_uint(key) : fallback;
}

double KvMap::get_double(const std::string& key) const {
    const std::string& raw = get(key);
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(raw.c_str(), &end);
    if (errno != 0 || end == raw.c_str() || *end != '\0') {
        throw ConfigError("config key '" + key + "': expected number, got '" + raw + "'");
    }
    return v;
}

double KvMap::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (kv.has(key)) {
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
        kv.set(key, value);
    }
    return kv;
}

KvMap read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

std::vector<std::int64_t> parse_int_list(const std::string& raw, const std::string& key) {
    std::vector<std::int64_t> out;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t comma = raw.find(',', start);
        const std::string piece = trim(
            raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (piece.empty()) {
            throw ConfigError("config key '" + key + "': empty list entry");
        }
        errno = 0;
        char* end = nullptr;
        long long v = std::strtoll(piece.c_str(), &end, 10);
        if (errno != 0 || end == piece.c_str() || *end != '\0') {
            throw ConfigError("config key '" + key + "': expected integer, got '" + piece + "'");
        }
        out.push_back(static_cast<std::int64_t>(v));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void write_kv_file(const std::string& path, const KvMap& kv) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file '" + path + "'");
    for (const auto& e : kv.entries()) {
        out << e.first << " = " << e.second << "\n";
    }
    if (!out) throw ConfigError("failed writing config file '" + path + "'");
}

}  // namespace dmoe
