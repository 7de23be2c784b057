// SPDX-License-Identifier: Apache-2.0

#include "dmoe/cli.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dmoe/commsim.hpp"
#include "dmoe/config.hpp"
#include "dmoe/data.hpp"
#include "dmoe/error.hpp"
#include "dmoe/inherit.hpp"
#include "dmoe/model.hpp"
#include "dmoe/optim.hpp"
#include "dmoe/prng.hpp"
#include "dmoe/routing.hpp"

namespace dmoe {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

DomainKind parse_kind(const std::string& s) {
    if (s == "mono") return DomainKind::Mono;
    if (s == "bilingual") return DomainKind::Bilingual;
    if (s == "code") return DomainKind::Code;
    throw ConfigError("unknown domain kind '" + s + "' (expected mono|bilingual|code)");
}

SubTag parse_sub_tag(const std::string& s) {
    if (s == "none") return SubTag::None;
    if (s == "en") return SubTag::En;
    if (s == "cn") return SubTag::Cn;
    if (s == "python") return SubTag::Python;
    if (s == "java") return SubTag::Java;
    throw ConfigError("unknown sub-tag '" + s + "' (expected none|en|cn|python|java)");
}

// The byte tokenizer needs all 256 byte IDs below the reserved block.
void require_byte_vocab(std::int64_t vocab) {
    if (vocab < 262) {
        throw ConfigError("--vocab must be at least 262 (256 byte IDs plus 6 reserved tokens)");
    }
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::vector<CorpusDoc> load_corpus(const std::string& path, std::uint32_t domain_id,
                                   DomainKind kind, SubTag sub_tag) {
    std::vector<CorpusDoc> docs;
    for (const std::string& line : read_lines(path)) {
        CorpusDoc doc;
        doc.domain_id = domain_id;
        doc.kind = kind;
        doc.sub_tag = sub_tag;
        doc.tokens = tokenize_bytes(line);
        docs.push_back(std::move(doc));
    }
    return docs;
}

struct LoadedData {
    std::uint32_t seq_len = 0;
    std::uint32_t num_domains = 0;
    std::vector<TrainingInstance> instances;
};

// A single instance file, or every *.pgsi in a directory in name order.
LoadedData load_instances(const std::string& path) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".pgsi") {
                files.push_back(entry.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigError("no .pgsi files in directory '" + path + "'");
    } else {
        files.push_back(path);
    }
    LoadedData out;
    for (std::size_t i = 0; i < files.size(); ++i) {
        InstanceFile f = read_instances(files[i]);
        if (i == 0) {
            out.seq_len = f.seq_len;
        } else if (f.seq_len != out.seq_len) {
            throw ConfigError("instance files disagree on sequence length: '" + files[i] +
                              "' has " + std::to_string(f.seq_len) + ", expected " +
                              std::to_string(out.seq_len));
        }
        out.num_domains = std::max(out.num_domains, f.num_domains);
        out.instances.insert(out.instances.end(), f.instances.begin(), f.instances.end());
    }
    return out;
}

std::vector<std::uint64_t> read_count_file(const std::string& path) {
    std::vector<std::uint64_t> counts;
    std::size_t lineno = 0;
    for (const std::string& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        errno = 0;
        char* end = nullptr;
        unsigned long long v = std::strtoull(line.c_str(), &end, 10);
        if (errno != 0 || end == line.c_str() || *end != '\0') {
            throw ConfigError("'" + path + "' line " + std::to_string(lineno) +
                              ": expected a count, got '" + line + "'");
        }
        counts.push_back(static_cast<std::uint64_t>(v));
    }
    return counts;
}

std::vector<double> read_size_file(const std::string& path) {
    std::vector<double> sizes;
    std::size_t lineno = 0;
    for (const std::string& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        errno = 0;
        char* end = nullptr;
        double v = std::strtod(line.c_str(), &end);
        if (errno != 0 || end == line.c_str() || *end != '\0') {
            throw ConfigError("'" + path + "' line " + std::to_string(lineno) +
                              ": expected a size, got '" + line + "'");
        }
        sizes.push_back(v);
    }
    return sizes;
}

void print_formatted(std::ostream& out, const std::vector<std::uint32_t>& tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out << ' ';
        out << tokens[i];
    }
    out << '\n';
}

TargetSpec instance_targets(const TrainingInstance& inst, const SpecialTokens& specials) {
    return next_token_targets(inst.token_ids, specials.pad);
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"deterministic mixed dense/expert decoder toolkit"};
    app.name("dmoe");
    app.require_subcommand(1);

    // rre: routing-table construction and lookup
    auto* rre = app.add_subcommand("rre", "routing table operations");
    rre->require_subcommand(1);

    struct {
        std::uint32_t domains = 1, layers = 1, experts = 1, vocab = 1;
        std::uint64_t seed = 0;
        std::string out;
    } rre_table_args;
    auto* rre_table = rre->add_subcommand("table", "build a routing table file");
    rre_table->add_option("--domains", rre_table_args.domains, "domain count")->required();
    rre_table->add_option("--layers", rre_table_args.layers, "expert layer count")->required();
    rre_table->add_option("--experts", rre_table_args.experts, "experts per domain")->required();
    rre_table->add_option("--vocab", rre_table_args.vocab, "vocabulary size")->required();
    rre_table->add_option("--seed", rre_table_args.seed, "table seed");
    rre_table->add_option("--out", rre_table_args.out, "output path")->required();
    rre_table->callback([&] {
        RoutingSpec spec;
        spec.num_domains = rre_table_args.domains;
        spec.num_rre_layers = rre_table_args.layers;
        spec.experts_per_domain = rre_table_args.experts;
        spec.vocab_size = rre_table_args.vocab;
        spec.seed = rre_table_args.seed;
        write_routing_table(rre_table_args.out, build_routing_table(spec));
    });

    struct {
        std::string table;
        std::uint32_t domain = 0, layer = 0, token = 0;
    } rre_route_args;
    auto* rre_route = rre->add_subcommand("route", "look up one token's expert");
    rre_route->add_option("--table", rre_route_args.table, "table file")->required();
    rre_route->add_option("--domain", rre_route_args.domain, "domain index")->required();
    rre_route->add_option("--layer", rre_route_args.layer, "expert layer index")->required();
    rre_route->add_option("--token", rre_route_args.token, "token ID")->required();
    rre_route->callback([&] {
        RoutingTable table = read_routing_table(rre_route_args.table);
        std::cout << table.route(rre_route_args.domain, rre_route_args.layer,
                                 rre_route_args.token)
                  << "\n";
    });

    // data: corpus formatting and instance files
    auto* data = app.add_subcommand("data", "corpus formatting and packing");
    data->require_subcommand(1);

    struct {
        std::string in, out, kind = "mono", sub_tag = "none";
        std::int64_t vocab = 262;
    } fmt_args;
    auto* data_format = data->add_subcommand("format", "wrap documents with control tokens");
    data_format->add_option("--in", fmt_args.in, "corpus file, one document per line")->required();
    data_format->add_option("--vocab", fmt_args.vocab, "vocabulary size");
    data_format->add_option("--kind", fmt_args.kind, "mono|bilingual|code");
    data_format->add_option("--sub-tag", fmt_args.sub_tag, "none|en|cn|python|java");
    data_format->add_option("--out", fmt_args.out, "output path (default stdout)");
    data_format->callback([&] {
        require_byte_vocab(fmt_args.vocab);
        const SpecialTokens specials =
            SpecialTokens::top_of(static_cast<std::uint32_t>(fmt_args.vocab));
        const auto docs =
            load_corpus(fmt_args.in, 0, parse_kind(fmt_args.kind), parse_sub_tag(fmt_args.sub_tag));
        std::ofstream file;
        if (!fmt_args.out.empty()) {
            file.open(fmt_args.out);
            if (!file) throw FormatError("cannot open '" + fmt_args.out + "' for writing");
        }
        std::ostream& out = fmt_args.out.empty() ? std::cout : file;
        for (const CorpusDoc& doc : docs) print_formatted(out, format_doc(doc, specials));
    });

    struct {
        std::string in, out, kind = "mono", sub_tag = "none";
        std::int64_t vocab = 262;
        std::uint32_t domain_id = 0, len = 0, num_domains = 0;
    } pack_args;
    auto* data_pack = data->add_subcommand("pack", "concatenate and slice fixed-length instances");
    data_pack->add_option("--in", pack_args.in, "corpus file, one document per line")->required();
    data_pack->add_option("--vocab", pack_args.vocab, "vocabulary size");
    data_pack->add_option("--kind", pack_args.kind, "mono|bilingual|code");
    data_pack->add_option("--sub-tag", pack_args.sub_tag, "none|en|cn|python|java");
    data_pack->add_option("--domain-id", pack_args.domain_id, "domain of this corpus");
    data_pack->add_option("--len", pack_args.len, "instance length")->required();
    data_pack->add_option("--num-domains", pack_args.num_domains,
                          "domain count recorded in the file (default domain-id + 1)");
    data_pack->add_option("--out", pack_args.out, "output instance file")->required();
    data_pack->callback([&] {
        require_byte_vocab(pack_args.vocab);
        const SpecialTokens specials =
            SpecialTokens::top_of(static_cast<std::uint32_t>(pack_args.vocab));
        const auto docs = load_corpus(pack_args.in, pack_args.domain_id,
                                      parse_kind(pack_args.kind), parse_sub_tag(pack_args.sub_tag));
        const auto instances = pack_pretrain(docs, pack_args.len, specials);
        const std::uint32_t nd =
            pack_args.num_domains ? pack_args.num_domains : pack_args.domain_id + 1;
        write_instances(pack_args.out, instances, pack_args.len, nd);
        std::cout << "instances," << instances.size() << "\n";
    });

    struct {
        std::string in, out, kind = "mono", sub_tag = "none";
        std::int64_t vocab = 262;
        std::uint32_t domain_id = 0, len = 0, num_domains = 0;
    } pad_args;
    auto* data_pad = data->add_subcommand("pad", "pad or truncate one instance per document");
    data_pad->add_option("--in", pad_args.in, "corpus file, one document per line")->required();
    data_pad->add_option("--vocab", pad_args.vocab, "vocabulary size");
    data_pad->add_option("--kind", pad_args.kind, "mono|bilingual|code");
    data_pad->add_option("--sub-tag", pad_args.sub_tag, "none|en|cn|python|java");
    data_pad->add_option("--domain-id", pad_args.domain_id, "domain of this corpus");
    data_pad->add_option("--len", pad_args.len, "instance length")->required();
    data_pad->add_option("--num-domains", pad_args.num_domains,
                         "domain count recorded in the file (default domain-id + 1)");
    data_pad->add_option("--out", pad_args.out, "output instance file")->required();
    data_pad->callback([&] {
        require_byte_vocab(pad_args.vocab);
        const SpecialTokens specials =
            SpecialTokens::top_of(static_cast<std::uint32_t>(pad_args.vocab));
        const auto docs = load_corpus(pad_args.in, pad_args.domain_id, parse_kind(pad_args.kind),
                                      parse_sub_tag(pad_args.sub_tag));
        std::vector<TrainingInstance> instances;
        for (const CorpusDoc& doc : docs) {
            instances.push_back(pad_or_truncate(doc.domain_id, format_doc(doc, specials),
                                                pad_args.len, specials));
        }
        const std::uint32_t nd =
            pad_args.num_domains ? pad_args.num_domains : pad_args.domain_id + 1;
        write_instances(pad_args.out, instances, pad_args.len, nd);
        std::cout << "instances," << instances.size() << "\n";
    });

    struct {
        std::string in;
    } stats_args;
    auto* data_stats = data->add_subcommand("stats", "summarize an instance file");
    data_stats->add_option("--in", stats_args.in, "instance file")->required();
    data_stats->callback([&] {
        const InstanceFile f = read_instances(stats_args.in);
        std::cout << "seq_len," << f.seq_len << "\n";
        std::cout << "num_domains," << f.num_domains << "\n";
        std::cout << "instances," << f.instances.size() << "\n";
        std::vector<std::size_t> per_domain(f.num_domains, 0);
        for (const TrainingInstance& inst : f.instances) {
            if (inst.domain_id < f.num_domains) ++per_domain[inst.domain_id];
        }
        for (std::size_t a = 0; a < per_domain.size(); ++a) {
            std::cout << "domain_" << a << "," << per_domain[a] << "\n";
        }
    });

    // train
    struct {
        std::string config, data, out, schedule, trace;
        std::int64_t steps = -1;
    } train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model from scratch");
    train_cmd->add_option("--config", train_args.config, "run config file")->required();
    train_cmd->add_option("--data", train_args.data, "instance file or directory")->required();
    train_cmd->add_option("--steps", train_args.steps, "step count (overrides train.steps)");
    train_cmd->add_option("--out", train_args.out, "checkpoint directory")->required();
    train_cmd->add_option("--stage-schedule", train_args.schedule, "stage schedule file");
    train_cmd->add_option("--trace", train_args.trace,
                          "loss trace CSV (default <out>/loss_trace.csv)");
    train_cmd->callback([&] {
        const RunConfig rc = read_run_config(train_args.config);
        const LoadedData loaded = load_instances(train_args.data);
        if (static_cast<std::int64_t>(loaded.seq_len) > rc.model.max_seq_len) {
            throw ConfigError("data sequence length " + std::to_string(loaded.seq_len) +
                              " exceeds model.max_seq_len " +
                              std::to_string(rc.model.max_seq_len));
        }
        Model model = init_model(rc.model);
        TrainOptions opt;
        opt.steps = train_args.steps >= 0 ? train_args.steps : rc.steps;
        opt.batch_size = rc.batch_size;
        opt.sampler_seed = rc.sampler_seed;
        opt.adam = rc.adam;
        if (!train_args.schedule.empty()) {
            opt.schedule = stage_schedule_from_kv(read_kv_file(train_args.schedule));
        }
        const TrainResult result = train(model, loaded.instances, opt);
        save_model(train_args.out, model);
        const std::string trace_path =
            train_args.trace.empty() ? train_args.out + "/loss_trace.csv" : train_args.trace;
        write_loss_trace(trace_path, result.trace);
        std::cout << "steps," << result.trace.size() << "\n";
        if (!result.trace.empty()) {
            std::cout << "first_loss," << fmt(result.trace.front().loss) << "\n";
            std::cout << "final_loss," << fmt(result.trace.back().loss) << "\n";
        }
    });

    // eval
    struct {
        std::string model, data;
    } eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "mean loss of a checkpoint on an instance file");
    eval_cmd->add_option("--model", eval_args.model, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_args.data, "instance file or directory")->required();
    eval_cmd->callback([&] {
        const Model model = load_model(eval_args.model);
        const LoadedData loaded = load_instances(eval_args.data);
        if (loaded.instances.empty()) {
            throw SpecError("eval: no instances in '" + eval_args.data + "'");
        }
        const SpecialTokens specials =
            SpecialTokens::top_of(static_cast<std::uint32_t>(model.config.vocab));
        double sum = 0.0;
        for (const TrainingInstance& inst : loaded.instances) {
            sum += sequence_loss(model, inst.domain_id, inst.token_ids,
                                 instance_targets(inst, specials));
        }
        std::cout << "instances," << loaded.instances.size() << "\n";
        std::cout << "mean_loss," << fmt(sum / static_cast<double>(loaded.instances.size()))
                  << "\n";
    });

    // inherit
    struct {
        std::string donor, config, out;
        std::uint64_t embedding_seed = 0;
    } inherit_args;
    auto* inherit_cmd = app.add_subcommand("inherit", "warm-start a sparse model from a dense donor");
    inherit_cmd->add_option("--donor", inherit_args.donor, "donor checkpoint directory")->required();
    inherit_cmd->add_option("--config", inherit_args.config, "target model config file")->required();
    inherit_cmd->add_option("--out", inherit_args.out, "output checkpoint directory")->required();
    inherit_cmd->add_option("--embedding-seed", inherit_args.embedding_seed,
                            "seed for new embedding rows");
    inherit_cmd->callback([&] {
        const Model donor = load_model(inherit_args.donor);
        const KvMap kv = read_kv_file(inherit_args.config);
        check_known_keys(kv);
        const ModelConfig target = model_config_from_kv(kv);
        const Model model = inherit_model(donor, target, inherit_args.embedding_seed);
        save_model(inherit_args.out, model);
        std::cout << "params," << model.params.total_params() << "\n";
    });

    // extract
    struct {
        std::string model, out;
        std::uint32_t domain = 0;
    } extract_args;
    auto* extract_cmd = app.add_subcommand("extract", "slice one domain's standalone sub-model");
    extract_cmd->add_option("--model", extract_args.model, "checkpoint directory")->required();
    extract_cmd->add_option("--domain", extract_args.domain, "domain to extract")->required();
    extract_cmd->add_option("--out", extract_args.out, "output checkpoint directory")->required();
    extract_cmd->callback([&] {
        const Model full = load_model(extract_args.model);
        SubModelSpec spec;
        spec.domain = extract_args.domain;
        const Model sub = extract_submodel(full, spec);
        save_model(extract_args.out, sub);
        std::cout << "params," << sub.params.total_params() << "\n";
    });

    // commsim
    auto* commsim = app.add_subcommand("commsim", "communication and upload cost models");
    commsim->require_subcommand(1);

    struct {
        std::int64_t devices = 1, groups = 1, experts = 0, hidden = 1024, elem_bytes = 2;
        std::uint64_t tokens = 0, seed = 0;
        std::string hist, mode = "both";
    } vol_args;
    auto* vol_cmd = commsim->add_subcommand("volume", "all-to-all traffic, global vs grouped");
    vol_cmd->add_option("--devices", vol_args.devices, "device count")->required();
    vol_cmd->add_option("--groups", vol_args.groups, "group count")->required();
    vol_cmd->add_option("--tokens", vol_args.tokens, "total routed tokens")->required();
    vol_cmd->add_option("--hist", vol_args.hist, "per-domain token counts, one per line");
    vol_cmd->add_option("--experts", vol_args.experts,
                        "experts per domain (default: one per group device)");
    vol_cmd->add_option("--hidden", vol_args.hidden, "payload elements per hop");
    vol_cmd->add_option("--elem-bytes", vol_args.elem_bytes, "bytes per element");
    vol_cmd->add_option("--seed", vol_args.seed, "simulation seed");
    vol_cmd->add_option("--mode", vol_args.mode, "analytic|simulated|both");
    vol_cmd->callback([&] {
        ClusterSpec cluster;
        cluster.devices = vol_args.devices;
        cluster.groups = vol_args.groups;
        cluster.hidden = vol_args.hidden;
        cluster.elem_bytes = vol_args.elem_bytes;
        cluster.validate();
        const std::int64_t e = vol_args.experts > 0 ? vol_args.experts : cluster.group_size();
        const Placement placement = place_experts(cluster, cluster.groups, e);
        std::vector<std::uint64_t> hist;
        if (!vol_args.hist.empty()) {
            hist = read_count_file(vol_args.hist);
        } else {
            const std::uint64_t g = static_cast<std::uint64_t>(cluster.groups);
            hist.assign(g, 0);
            for (std::uint64_t a = 0; a < g; ++a) {
                hist[a] = vol_args.tokens / g + (a < vol_args.tokens % g ? 1 : 0);
            }
        }
        if (vol_args.mode == "analytic") {
            const TrafficReport r = all_to_all_volume_analytic(cluster, placement, hist);
            std::cout << "quantity,value\n";
            std::cout << "bytes_global," << fmt(r.bytes_global) << "\n";
            std::cout << "bytes_grouped," << fmt(r.bytes_grouped) << "\n";
            std::cout << "ratio," << fmt(r.ratio) << "\n";
        } else if (vol_args.mode == "simulated") {
            const TrafficReport r =
                all_to_all_volume_simulated(cluster, placement, hist, vol_args.seed);
            std::cout << "quantity,value\n";
            std::cout << "bytes_global," << fmt(r.bytes_global) << "\n";
            std::cout << "bytes_grouped," << fmt(r.bytes_grouped) << "\n";
            std::cout << "ratio," << fmt(r.ratio) << "\n";
        } else if (vol_args.mode == "both") {
            const TrafficReport a = all_to_all_volume_analytic(cluster, placement, hist);
            const TrafficReport s =
                all_to_all_volume_simulated(cluster, placement, hist, vol_args.seed);
            std::cout << "quantity,analytic,simulated\n";
            std::cout << "bytes_global," << fmt(a.bytes_global) << "," << fmt(s.bytes_global)
                      << "\n";
            std::cout << "bytes_grouped," << fmt(a.bytes_grouped) << "," << fmt(s.bytes_grouped)
                      << "\n";
            std::cout << "ratio," << fmt(a.ratio) << "," << fmt(s.ratio) << "\n";
        } else {
            throw ConfigError("unknown mode '" + vol_args.mode +
                              "' (expected analytic|simulated|both)");
        }
    });

    struct {
        std::string shards, out;
        std::int64_t limit = 1;
        double bandwidth = 1.0;
    } upload_args;
    auto* upload_cmd = commsim->add_subcommand("upload", "bounded-concurrency shard uploads");
    upload_cmd->add_option("--shards", upload_args.shards, "shard sizes, one per line")->required();
    upload_cmd->add_option("--limit", upload_args.limit, "max concurrent uploads")->required();
    upload_cmd->add_option("--bandwidth", upload_args.bandwidth, "per-stream bandwidth");
    upload_cmd->add_option("--out", upload_args.out, "output CSV (default stdout)");
    upload_cmd->callback([&] {
        const std::vector<double> sizes = read_size_file(upload_args.shards);
        const UploadPlan plan =
            round_robin_upload(sizes, upload_args.bandwidth, upload_args.limit);
        if (upload_args.out.empty()) {
            write_upload_csv(std::cout, plan);
        } else {
            write_upload_csv(upload_args.out, plan);
            std::cout << "makespan," << fmt(plan.makespan) << "\n";
        }
    });

    // gradcheck
    struct {
        std::string config;
        std::int64_t len = 8, coords = 200;
        std::uint32_t domain = 0;
        std::uint64_t seed = 0;
    } gc_args;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gc_cmd->add_option("--config", gc_args.config, "run config file")->required();
    gc_cmd->add_option("--len", gc_args.len, "instance length");
    gc_cmd->add_option("--domain", gc_args.domain, "instance domain");
    gc_cmd->add_option("--seed", gc_args.seed, "instance and subsample seed");
    gc_cmd->add_option("--coords", gc_args.coords, "max coordinates per tensor");
    gc_cmd->callback([&] {
        const RunConfig rc = read_run_config(gc_args.config);
        Model model = init_model(rc.model);
        if (gc_args.len < 2 || gc_args.len > rc.model.max_seq_len) {
            throw ConfigError("--len must lie in [2, model.max_seq_len]");
        }
        PrngStream prng(gc_args.seed);
        TrainingInstance inst;
        inst.domain_id = gc_args.domain;
        for (std::int64_t t = 0; t < gc_args.len; ++t) {
            inst.token_ids.push_back(static_cast<std::uint32_t>(
                prng.next() % static_cast<std::uint64_t>(rc.model.vocab)));
        }
        const GradCheckReport report = grad_check(model, inst, gc_args.seed, gc_args.coords);
        std::cout << "coords_checked," << report.coords_checked << "\n";
        std::cout << "max_rel_err," << fmt(report.max_rel_err) << "\n";
        std::cout << "worst_tensor," << report.worst_tensor << "\n";
        std::cout << "worst_index," << report.worst_index << "\n";
        std::cout << "dense_grad_norm," << fmt(report.dense_grad_norm) << "\n";
        std::cout << "rre_grad_norm," << fmt(report.rre_grad_norm) << "\n";
        std::cout << "embedding_grad_norm," << fmt(report.embedding_grad_norm) << "\n";
    });

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("dmoe");
    for (const std::string& a : args) argv_storage.push_back(a);
    std::vector<char*> argv;
    for (std::string& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

}  // namespace dmoe
