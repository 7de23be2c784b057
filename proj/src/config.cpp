// SPDX-License-Identifier: Apache-2.0

#include "dmoe/config.hpp"

#include <array>

#include "dmoe/error.hpp"

namespace dmoe {

namespace {

constexpr std::array kKnownKeys = {
    "model.dense_layers", "model.rre_layers",   "model.heads",
    "model.hidden",       "model.ffn",          "model.vocab",
    "model.embedding_slots", "model.num_domains", "model.experts_per_domain",
    "model.max_seq_len",  "model.init_seed",    "model.routing_seed",
    "model.domain_slot",  "adam.beta1",         "adam.beta2",
    "adam.eps_dense",     "adam.eps_rre",       "adam.peak_lr",
    "adam.end_lr",        "adam.warmup_steps",  "adam.decay_steps",
    "train.steps",        "train.batch_size",   "train.sampler_seed",
};

}  // namespace

void check_known_keys(const KvMap& kv) {
    for (const auto& [key, value] : kv.entries()) {
        bool known = false;
        for (const char* k : kKnownKeys) {
            if (key == k) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
}

AdamConfig adam_config_from_kv(const KvMap& kv) {
    AdamConfig a;
    a.beta1 = kv.get_double_or("adam.beta1", a.beta1);
    a.beta2 = kv.get_double_or("adam.beta2", a.beta2);
    a.eps_dense = kv.get_double_or("adam.eps_dense", a.eps_dense);
    a.eps_rre = kv.get_double_or("adam.eps_rre", a.eps_rre);
    a.peak_lr = kv.get_double_or("adam.peak_lr", a.peak_lr);
    a.end_lr = kv.get_double_or("adam.end_lr", a.end_lr);
    a.warmup_steps = kv.get_int_or("adam.warmup_steps", a.warmup_steps);
    a.decay_steps = kv.get_int_or("adam.decay_steps", a.decay_steps);
    a.validate();
    return a;
}

RunConfig run_config_from_kv(const KvMap& kv) {
    check_known_keys(kv);
    RunConfig rc;
    rc.model = model_config_from_kv(kv);
    rc.adam = adam_config_from_kv(kv);
    rc.steps = kv.get_int_or("train.steps", 0);
    rc.batch_size = kv.get_int_or("train.batch_size", 1);
    rc.sampler_seed = kv.get_uint_or("train.sampler_seed", 0);
    if (rc.steps < 0) throw ConfigError("config key 'train.steps': must be nonnegative");
    if (rc.batch_size < 1) throw ConfigError("config key 'train.batch_size': must be positive");
    return rc;
}

RunConfig read_run_config(const std::string& path) {
    return run_config_from_kv(read_kv_file(path));
}

}  // namespace dmoe
