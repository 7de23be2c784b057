// SPDX-License-Identifier: Apache-2.0
//
// Adam with split epsilons, the warmup/decay learning-rate schedule, staged
// domain activation, the training loop, and a finite-difference gradient
// checker. The optimizer applies a much smaller epsilon to expert-tagged
// parameters than to shared ones: expert gradients are sparse and small, and
// the tiny epsilon keeps their effective step size from collapsing.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmoe/data.hpp"
#include "dmoe/kvfile.hpp"
#include "dmoe/model.hpp"
#include "dmoe/param_tree.hpp"

namespace dmoe {

struct AdamConfig {
    double beta1 = 0.8;
    double beta2 = 0.95;
    double eps_dense = 1e-8;   // shared and embedding parameters
    double eps_rre = 1e-20;    // expert parameters
    double peak_lr = 1e-3;
    double end_lr = 2e-5;
    std::int64_t warmup_steps = 5000;
    std::int64_t decay_steps = 180000;

    void validate() const;  // throws ConfigError
};

struct AdamState {
    ParamTree m;  // first moments, same tree shape as the parameters
    ParamTree v;  // second moments
    std::int64_t step = 0;
    // Running beta powers for bias correction; multiplying per step is
    // cheaper than pow and bit-reproducible.
    double beta1_pow = 1.0;
    double beta2_pow = 1.0;
    // Epsilon actually applied to each tensor on the most recent step, in
    // tree order. Lets tests assert the split directly instead of inferring
    // it from update magnitudes.
    std::vector<double> applied_eps;
};

AdamState init_adam_state(const ParamTree& params);

// Piecewise-linear schedule: 0 -> peak over warmup_steps, peak -> end_lr
// reaching end_lr at decay_steps, constant end_lr afterward.
double lr_at(const AdamConfig& config, std::int64_t step);

// One update with bias correction; denominator is sqrt(v_hat) + eps where
// eps follows the parameter's tag. Trees must mirror each other.
void adam_step(ParamTree& params, const ParamTree& grads, AdamState& state,
               const AdamConfig& config, double lr);

// Contiguous half-open step ranges, each with its active domain set.
struct Stage {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    std::vector<std::uint32_t> domains;
};

struct StageSchedule {
    std::vector<Stage> stages;

    static StageSchedule single_stage(std::int64_t steps, std::int64_t num_domains);
    void validate(std::int64_t num_domains) const;  // throws ScheduleError
    std::size_t stage_index_at(std::int64_t step) const;
};

StageSchedule stage_schedule_from_kv(const KvMap& kv);

struct TrainOptions {
    std::int64_t steps = 0;
    std::int64_t batch_size = 1;
    std::uint64_t sampler_seed = 0;
    AdamConfig adam;
    StageSchedule schedule;  // empty stages = one stage over all domains
};

struct StepTraceRow {
    std::int64_t step = 0;
    std::int64_t stage = 0;
    double loss = 0.0;
    double lr = 0.0;
    double dense_grad_norm = 0.0;
    double rre_grad_norm = 0.0;
};

struct TrainResult {
    std::vector<StepTraceRow> trace;
};

// In-place training. Each step samples batch_size instances from the
// stage's active domains (uniform over domains that have data, then uniform
// within the domain's pool), averages the gradients, and applies one Adam
// update. Fully deterministic given the seed.
TrainResult train(Model& model, const std::vector<TrainingInstance>& data,
                  const TrainOptions& options);

void write_loss_trace(const std::string& path, const std::vector<StepTraceRow>& trace);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::int64_t worst_index = -1;
    std::int64_t coords_checked = 0;
    double dense_grad_norm = 0.0;
    double rre_grad_norm = 0.0;
    double embedding_grad_norm = 0.0;
};

// Central finite differences against the analytic gradients over a seeded
// subsample of at most max_coords_per_tensor coordinates per tensor.
GradCheckReport grad_check(Model& model, const TrainingInstance& instance,
                           std::uint64_t seed = 0, std::int64_t max_coords_per_tensor = 200);

}  // namespace dmoe
