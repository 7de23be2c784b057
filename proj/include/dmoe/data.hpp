// SPDX-License-Identifier: Apache-2.0
//
// Multi-domain corpus formatting and fixed-length instance packing.
// Pretraining concatenates formatted documents per domain and slices
// windows of exactly L tokens; fine-tuning pads or truncates one document
// per instance.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dmoe {

// Control/padding token IDs, reserved at the top of the vocabulary.
struct SpecialTokens {
    std::uint32_t eot = 0;
    std::uint32_t en = 0;
    std::uint32_t cn = 0;
    std::uint32_t python = 0;
    std::uint32_t java = 0;
    std::uint32_t pad = 0;

    // Reserve the top six IDs of a vocabulary of the given size, in the
    // fixed order EOT, EN, CN, PYTHON, JAVA, PAD.
    static SpecialTokens top_of(std::uint32_t vocab_size);

    void validate(std::uint32_t vocab_size) const;
};

enum class DomainKind : std::uint8_t { Mono = 0, Bilingual = 1, Code = 2 };

enum class SubTag : std::uint8_t { None = 0, En = 1, Cn = 2, Python = 3, Java = 4 };

struct CorpusDoc {
    std::uint32_t domain_id = 0;
    DomainKind kind = DomainKind::Mono;
    SubTag sub_tag = SubTag::None;
    std::vector<std::uint32_t> tokens;
};

struct TrainingInstance {
    std::uint32_t domain_id = 0;
    std::vector<std::uint32_t> token_ids;  // exactly the fixed length

    bool operator==(const TrainingInstance&) const = default;
};

// Wrap a document body with its control tokens: monolingual domains get
// body + [EOT]; bilingual domains [EN|CN] + body + [EOT]; code domains
// [PYTHON|JAVA] + body + [EOT]. Throws FormatError when the sub-tag does
// not fit the domain kind.
std::vector<std::uint32_t> format_doc(const CorpusDoc& doc, const SpecialTokens& specials);

// Concatenate formatted docs (all from one domain) and slice consecutive
// windows of exactly seq_len tokens. The trailing partial window is
// dropped.
std::vector<TrainingInstance> pack_pretrain(const std::vector<CorpusDoc>& docs,
                                            std::uint32_t seq_len, const SpecialTokens& specials);

// One instance per formatted document: shorter docs get PAD appended,
// longer ones keep their first seq_len tokens.
TrainingInstance pad_or_truncate(std::uint32_t domain_id, std::vector<std::uint32_t> formatted,
                                 std::uint32_t seq_len, const SpecialTokens& specials);

// Instance file: magic "PGSI", version u32, seq_len u32, domain-count u32,
// instance-count u64, then records of (domain_id u16, reserved u16,
// seq_len x u32 token IDs), little-endian.
void write_instances(const std::string& path, const std::vector<TrainingInstance>& instances,
                     std::uint32_t seq_len, std::uint32_t num_domains);

struct InstanceFile {
    std::uint32_t seq_len = 0;
    std::uint32_t num_domains = 0;
    std::vector<TrainingInstance> instances;
};

InstanceFile read_instances(const std::string& path);

// Byte-level demo tokenizer: each UTF-8 byte maps to its own ID, specials
// live above 255.
std::vector<std::uint32_t> tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const std::vector<std::uint32_t>& tokens, std::uint32_t vocab_size);

}  // namespace dmoe
