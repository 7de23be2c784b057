// SPDX-License-Identifier: Apache-2.0

#include "dmoe/data.hpp"

#include <cstdio>
#include <memory>

#include "dmoe/error.hpp"

namespace dmoe {

SpecialTokens SpecialTokens::top_of(std::uint32_t vocab_size) {
    if (vocab_size < 6) throw SpecError("special tokens: vocabulary must hold at least 6 IDs");
    SpecialTokens s;
    s.eot = vocab_size - 6;
    s.en = vocab_size - 5;
    s.cn = vocab_size - 4;
    s.python = vocab_size - 3;
    s.java = vocab_size - 2;
    s.pad = vocab_size - 1;
    return s;
}

void SpecialTokens::validate(std::uint32_t vocab_size) const {
    const std::uint32_t ids[6] = {eot, en, cn, python, java, pad};
    for (int i = 0; i < 6; ++i) {
        if (ids[i] >= vocab_size) throw SpecError("special tokens: ID outside vocabulary");
        for (int j = i + 1; j < 6; ++j) {
            if (ids[i] == ids[j]) throw SpecError("special tokens: IDs must be distinct");
        }
    }
}

std::vector<std::uint32_t> format_doc(const CorpusDoc& doc, const SpecialTokens& specials) {
    std::vector<std::uint32_t> out;
    out.reserve(doc.tokens.size() + 2);
    switch (doc.kind) {
        case DomainKind::Mono:
            if (doc.sub_tag != SubTag::None) {
                throw FormatError("format: monolingual domain takes no sub-tag");
            }
            break;
        case DomainKind::Bilingual:
            if (doc.sub_tag == SubTag::En) {
                out.push_back(specials.en);
            } else if (doc.sub_tag == SubTag::Cn) {
                out.push_back(specials.cn);
            } else {
                throw FormatError("format: bilingual domain requires an en or cn sub-tag");
            }
            break;
        case DomainKind::Code:
            if (doc.sub_tag == SubTag::Python) {
                out.push_back(specials.python);
            } else if (doc.sub_tag == SubTag::Java) {
                out.push_back(specials.java);
            } else {
                throw FormatError("format: code domain requires a python or java sub-tag");
            }
            break;
    }
    out.insert(out.end(), doc.tokens.begin(), doc.tokens.end());
    out.push_back(specials.eot);
    return out;
}

std::vector<TrainingInstance> pack_pretrain(const std::vector<CorpusDoc>& docs,
                                            std::uint32_t seq_len, const SpecialTokens& specials) {
    if (seq_len == 0) throw SpecError("pack: sequence length must be positive");
    std::vector<TrainingInstance> out;
    if (docs.empty()) return out;
    const std::uint32_t domain = docs.front().domain_id;

    std::vector<std::uint32_t> stream;
    for (const CorpusDoc& doc : docs) {
        if (doc.domain_id != domain) {
            throw FormatError("pack: one stream must hold a single domain");
        }
        const std::vector<std::uint32_t> formatted = format_doc(doc, specials);
        stream.insert(stream.end(), formatted.begin(), formatted.end());
    }

    const std::size_t count = stream.size() / seq_len;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        TrainingInstance inst;
        inst.domain_id = domain;
        inst.token_ids.assign(stream.begin() + static_cast<std::ptrdiff_t>(i * seq_len),
                              stream.begin() + static_cast<std::ptrdiff_t>((i + 1) * seq_len));
        out.push_back(std::move(inst));
    }
    return out;
}

TrainingInstance pad_or_truncate(std::uint32_t domain_id, std::vector<std::uint32_t> formatted,
                                 std::uint32_t seq_len, const SpecialTokens& specials) {
    if (seq_len == 0) throw SpecError("pad: sequence length must be positive");
    TrainingInstance inst;
    inst.domain_id = domain_id;
    if (formatted.size() > seq_len) {
        formatted.resize(seq_len);
    } else {
        formatted.resize(seq_len, specials.pad);
    }
    inst.token_ids = std::move(formatted);
    return inst;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr std::uint32_t kInstanceVersion = 1;

void put_bytes(std::FILE* f, const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw FormatError("instance file: short write");
}

void put_u16(std::FILE* f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    put_bytes(f, b, 2);
}

void put_u32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(f, b, 4);
}

void put_u64(std::FILE* f, std::uint64_t v) {
    put_u32(f, static_cast<std::uint32_t>(v));
    put_u32(f, static_cast<std::uint32_t>(v >> 32));
}

void get_bytes(std::FILE* f, void* p, std::size_t n) {
    if (std::fread(p, 1, n, f) != n) throw FormatError("instance file: truncated");
}

std::uint16_t get_u16(std::FILE* f) {
    unsigned char b[2];
    get_bytes(f, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
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

}  // namespace

void write_instances(const std::string& path, const std::vector<TrainingInstance>& instances,
                     std::uint32_t seq_len, std::uint32_t num_domains) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError("cannot open " + path + " for writing");
    put_bytes(f.get(), "PGSI", 4);
    put_u32(f.get(), kInstanceVersion);
    put_u32(f.get(), seq_len);
    put_u32(f.get(), num_domains);
    put_u64(f.get(), instances.size());
    for (const TrainingInstance& inst : instances) {
        if (inst.token_ids.size() != seq_len) {
            throw FormatError("instance file: instance length differs from seq_len");
        }
        if (inst.domain_id >= num_domains) {
            throw FormatError("instance file: domain_id outside domain count");
        }
        put_u16(f.get(), static_cast<std::uint16_t>(inst.domain_id));
        put_u16(f.get(), 0);  // reserved
        for (std::uint32_t tok : inst.token_ids) put_u32(f.get(), tok);
    }
    if (std::fflush(f.get()) != 0) throw FormatError("instance file: flush failed");
}

InstanceFile read_instances(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path);
    char magic[4];
    get_bytes(f.get(), magic, 4);
    if (std::string_view(magic, 4) != "PGSI") throw FormatError(path + ": not an instance file (bad magic)");
    const std::uint32_t version = get_u32(f.get());
    if (version != kInstanceVersion) throw FormatError(path + ": unsupported instance file version");
    InstanceFile out;
    out.seq_len = get_u32(f.get());
    out.num_domains = get_u32(f.get());
    const std::uint64_t count = get_u64(f.get());
    out.instances.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        TrainingInstance inst;
        inst.domain_id = get_u16(f.get());
        get_u16(f.get());  // reserved
        if (inst.domain_id >= out.num_domains) throw FormatError(path + ": domain_id outside domain count");
        inst.token_ids.resize(out.seq_len);
        for (std::uint32_t& tok : inst.token_ids) tok = get_u32(f.get());
        out.instances.push_back(std::move(inst));
    }
    return out;
}

std::vector<std::uint32_t> tokenize_bytes(const std::string& text) {
    std::vector<std::uint32_t> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
}

std::string detokenize_bytes(const std::vector<std::uint32_t>& tokens, std::uint32_t vocab_size) {
    (void)vocab_size;
    std::string out;
    // control and pad tokens render as nothing
    for (std::uint32_t t : tokens) {
        if (t < 256) out.push_back(static_cast<char>(t));
    }
    return out;
}

}  // namespace dmoe
