// SPDX-License-Identifier: Apache-2.0

#include "dmoe/param_tree.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "dmoe/error.hpp"

namespace dmoe {

Tensor& ParamTree::add(const std::string& name, Tensor tensor, ParamTag tag) {
    if (index_.count(name)) throw SpecError("param tree: duplicate name " + name);
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
    tags_.push_back(tag);
    return tensors_.back();
}

std::size_t ParamTree::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw BoundsError("param tree: no parameter named " + name);
    return it->second;
}

Tensor& ParamTree::at(const std::string& name) { return tensors_[index_of(name)]; }
const Tensor& ParamTree::at(const std::string& name) const { return tensors_[index_of(name)]; }
const ParamTag& ParamTree::tag_of(const std::string& name) const { return tags_[index_of(name)]; }

ParamTree ParamTree::zeros_like() const {
    ParamTree out;
    for (std::size_t i = 0; i < size(); ++i) {
        out.add(names_[i], Tensor::zeros(tensors_[i].shape), tags_[i]);
    }
    return out;
}

std::int64_t ParamTree::total_params() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.numel();
    return n;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr std::uint32_t kTreeVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;

void put_bytes(std::FILE* f, const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw FormatError("param tree: short write");
}

void put_u8(std::FILE* f, std::uint8_t v) { put_bytes(f, &v, 1); }

void put_u32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(f, b, 4);
}

void put_u64(std::FILE* f, std::uint64_t v) {
    put_u32(f, static_cast<std::uint32_t>(v));
    put_u32(f, static_cast<std::uint32_t>(v >> 32));
}

void put_i32(std::FILE* f, std::int32_t v) { put_u32(f, static_cast<std::uint32_t>(v)); }

void get_bytes(std::FILE* f, void* p, std::size_t n) {
    if (std::fread(p, 1, n, f) != n) throw FormatError("param tree: truncated file");
}

std::uint8_t get_u8(std::FILE* f) {
    std::uint8_t v;
    get_bytes(f, &v, 1);
    return v;
}

std::uint32_t get_u32(std::FILE* f) {
    unsigned char b[4];
    get_bytes(f, b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::FILE* f) {
    const std::uint64_t lo = get_u32(f);
    const std::uint64_t hi = get_u32(f);
    return lo | (hi << 32);
}

std::int32_t get_i32(std::FILE* f) { return static_cast<std::int32_t>(get_u32(f)); }

}  // namespace

void write_param_tree(const std::string& path, const ParamTree& tree) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError("cannot open " + path + " for writing");
    put_bytes(f.get(), "DMPT", 4);
    put_u32(f.get(), kTreeVersion);
    put_u64(f.get(), tree.size());

    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const std::string& name = tree.name(i);
        const Tensor& t = tree.tensor(i);
        const ParamTag& tag = tree.tag(i);
        put_u32(f.get(), static_cast<std::uint32_t>(name.size()));
        put_bytes(f.get(), name.data(), name.size());
        put_u8(f.get(), kDtypeF64);
        put_u8(f.get(), static_cast<std::uint8_t>(tag.kind));
        put_i32(f.get(), tag.domain);
        put_i32(f.get(), tag.rre_layer);
        put_i32(f.get(), tag.expert);
        put_i32(f.get(), tag.slot);
        put_u32(f.get(), static_cast<std::uint32_t>(t.shape.size()));
        for (std::int64_t d : t.shape) put_u64(f.get(), static_cast<std::uint64_t>(d));
        put_u64(f.get(), offset);
        offset += static_cast<std::uint64_t>(t.numel());
    }
    for (std::size_t i = 0; i < tree.size(); ++i) {
        for (double v : tree.tensor(i).data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u64(f.get(), bits);
        }
    }
    if (std::fflush(f.get()) != 0) throw FormatError("param tree: flush failed");
}

ParamTree read_param_tree(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path);
    char magic[4];
    get_bytes(f.get(), magic, 4);
    if (std::string_view(magic, 4) != "DMPT") throw FormatError(path + ": not a parameter file (bad magic)");
    const std::uint32_t version = get_u32(f.get());
    if (version != kTreeVersion) throw FormatError(path + ": unsupported parameter file version");
    const std::uint64_t count = get_u64(f.get());

    struct Entry {
        std::string name;
        ParamTag tag;
        std::vector<std::int64_t> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    std::uint64_t expected_offset = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint32_t len = get_u32(f.get());
        e.name.resize(len);
        get_bytes(f.get(), e.name.data(), len);
        if (get_u8(f.get()) != kDtypeF64) throw FormatError(path + ": unsupported dtype");
        const std::uint8_t kind = get_u8(f.get());
        if (kind > 2) throw FormatError(path + ": bad parameter tag");
        e.tag.kind = static_cast<ParamTag::Kind>(kind);
        e.tag.domain = get_i32(f.get());
        e.tag.rre_layer = get_i32(f.get());
        e.tag.expert = get_i32(f.get());
        e.tag.slot = get_i32(f.get());
        const std::uint32_t ndim = get_u32(f.get());
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            e.shape.push_back(static_cast<std::int64_t>(get_u64(f.get())));
            numel *= e.shape.back();
        }
        e.offset = get_u64(f.get());
        if (e.offset != expected_offset) throw FormatError(path + ": blob offsets are not contiguous");
        expected_offset += static_cast<std::uint64_t>(numel);
        entries.push_back(std::move(e));
    }

    ParamTree tree;
    for (Entry& e : entries) {
        Tensor t = Tensor::zeros(e.shape);
        for (double& v : t.data) {
            const std::uint64_t bits = get_u64(f.get());
            std::memcpy(&v, &bits, sizeof v);
        }
        tree.add(e.name, std::move(t), e.tag);
    }
    return tree;
}

}  // namespace dmoe
