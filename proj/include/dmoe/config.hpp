// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one flat key-value file covering the model, the
// optimizer, and the training loop. Unknown keys are rejected so typos
// surface as diagnostics instead of silently applied defaults.
#pragma once

#include <cstdint>
#include <string>

#include "dmoe/kvfile.hpp"
#include "dmoe/model.hpp"
#include "dmoe/optim.hpp"

namespace dmoe {

struct RunConfig {
    ModelConfig model;
    AdamConfig adam;
    std::int64_t steps = 0;
    std::int64_t batch_size = 1;
    std::uint64_t sampler_seed = 0;
};

// Throws ConfigError naming the first unknown key.
void check_known_keys(const KvMap& kv);

AdamConfig adam_config_from_kv(const KvMap& kv);
RunConfig run_config_from_kv(const KvMap& kv);
RunConfig read_run_config(const std::string& path);

}  // namespace dmoe
