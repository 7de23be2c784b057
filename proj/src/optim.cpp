// SPDX-License-Identifier: Apache-2.0

#include "dmoe/optim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "dmoe/error.hpp"
#include "dmoe/prng.hpp"

namespace dmoe {

namespace {

void require_aligned(const ParamTree& a, const ParamTree& b, const char* what) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string("optimizer: ") + what + " has " + std::to_string(b.size()) +
                         " tensors, parameters have " + std::to_string(a.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.name(i) != b.name(i) || !a.tensor(i).same_shape(b.tensor(i))) {
            throw ShapeError(std::string("optimizer: ") + what + " does not mirror parameter '" +
                             a.name(i) + "'");
        }
    }
}

double tree_norm(const ParamTree& grads, bool rre) {
    double sum = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if ((grads.tag(i).kind == ParamTag::Kind::Rre) != rre) continue;
        for (double v : grads.tensor(i).data) sum += v * v;
    }
    return std::sqrt(sum);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void AdamConfig::validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (eps_dense <= 0.0 || eps_rre <= 0.0) {
        throw ConfigError("adam: epsilons must be positive");
    }
    if (eps_rre > eps_dense) {
        throw ConfigError("adam: expert epsilon must not exceed the dense epsilon");
    }
    if (peak_lr < 0.0 || end_lr < 0.0) {
        throw ConfigError("adam: learning rates must be nonnegative");
    }
    if (warmup_steps < 0 || decay_steps < warmup_steps) {
        throw ConfigError("adam: need 0 <= warmup_steps <= decay_steps");
    }
}

AdamState init_adam_state(const ParamTree& params) {
    AdamState state;
    state.m = params.zeros_like();
    state.v = params.zeros_like();
    state.applied_eps.assign(params.size(), 0.0);
    return state;
}

double lr_at(const AdamConfig& config, std::int64_t step) {
    if (step < 0) throw ScheduleError("lr_at: negative step");
    if (step >= config.decay_steps) return config.end_lr;
    if (step <= config.warmup_steps) {
        if (config.warmup_steps == 0) return config.peak_lr;
        return config.peak_lr * static_cast<double>(step) /
               static_cast<double>(config.warmup_steps);
    }
    const double t = static_cast<double>(step - config.warmup_steps) /
                     static_cast<double>(config.decay_steps - config.warmup_steps);
    return config.peak_lr + (config.end_lr - config.peak_lr) * t;
}

void adam_step(ParamTree& params, const ParamTree& grads, AdamState& state,
               const AdamConfig& config, double lr) {
    config.validate();
    require_aligned(params, grads, "gradient tree");
    require_aligned(params, state.m, "first-moment tree");
    require_aligned(params, state.v, "second-moment tree");

    state.step += 1;
    state.beta1_pow *= config.beta1;
    state.beta2_pow *= config.beta2;
    const double bc1 = 1.0 - state.beta1_pow;
    const double bc2 = 1.0 - state.beta2_pow;
    state.applied_eps.assign(params.size(), 0.0);

    for (std::size_t i = 0; i < params.size(); ++i) {
        const double eps =
            params.tag(i).kind == ParamTag::Kind::Rre ? config.eps_rre : config.eps_dense;
        state.applied_eps[i] = eps;
        Tensor& p = params.tensor(i);
        const Tensor& g = grads.tensor(i);
        Tensor& m = state.m.tensor(i);
        Tensor& v = state.v.tensor(i);
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = config.beta1 * m.data[j] + (1.0 - config.beta1) * g.data[j];
            v.data[j] = config.beta2 * v.data[j] + (1.0 - config.beta2) * g.data[j] * g.data[j];
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

StageSchedule StageSchedule::single_stage(std::int64_t steps, std::int64_t num_domains) {
    Stage st;
    st.begin = 0;
    st.end = steps;
    for (std::int64_t a = 0; a < num_domains; ++a) {
        st.domains.push_back(static_cast<std::uint32_t>(a));
    }
    StageSchedule schedule;
    schedule.stages.push_back(std::move(st));
    return schedule;
}

void StageSchedule::validate(std::int64_t num_domains) const {
    if (stages.empty()) throw ScheduleError("schedule: no stages");
    if (stages.front().begin != 0) throw ScheduleError("schedule: first stage must begin at 0");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const Stage& st = stages[i];
        if (st.end <= st.begin) {
            throw ScheduleError("schedule: stage " + std::to_string(i) + " is empty");
        }
        if (i > 0 && st.begin != stages[i - 1].end) {
            throw ScheduleError("schedule: stage " + std::to_string(i) +
                                " does not start where stage " + std::to_string(i - 1) + " ends");
        }
        if (st.domains.empty()) {
            throw ScheduleError("schedule: stage " + std::to_string(i) + " activates no domains");
        }
        std::unordered_set<std::uint32_t> seen;
        for (std::uint32_t a : st.domains) {
            if (static_cast<std::int64_t>(a) >= num_domains) {
                throw ScheduleError("schedule: stage " + std::to_string(i) + " activates domain " +
                                    std::to_string(a) + ", model has " +
                                    std::to_string(num_domains));
            }
            if (!seen.insert(a).second) {
                throw ScheduleError("schedule: stage " + std::to_string(i) +
                                    " lists domain " + std::to_string(a) + " twice");
            }
        }
    }
}

std::size_t StageSchedule::stage_index_at(std::int64_t step) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (step >= stages[i].begin && step < stages[i].end) return i;
    }
    throw ScheduleError("schedule: step " + std::to_string(step) + " not covered by any stage");
}

StageSchedule stage_schedule_from_kv(const KvMap& kv) {
    StageSchedule schedule;
    for (std::int64_t i = 0;; ++i) {
        const std::string prefix = "stage" + std::to_string(i) + ".";
        if (!kv.has(prefix + "begin")) break;
        Stage st;
        st.begin = kv.get_int(prefix + "begin");
        st.end = kv.get_int(prefix + "end");
        for (std::int64_t a : parse_int_list(kv.get(prefix + "domains"), prefix + "domains")) {
            if (a < 0) {
                throw ConfigError("config key '" + prefix + "domains': negative domain");
            }
            st.domains.push_back(static_cast<std::uint32_t>(a));
        }
        schedule.stages.push_back(std::move(st));
    }
    if (schedule.stages.empty()) {
        throw ConfigError("stage schedule: no stages defined (expected stage0.begin)");
    }
    return schedule;
}

TrainResult train(Model& model, const std::vector<TrainingInstance>& data,
                  const TrainOptions& options) {
    const ModelConfig& c = model.config;
    if (options.batch_size < 1) throw ConfigError("train: batch_size must be positive");
    if (options.steps < 0) throw ConfigError("train: steps must be nonnegative");
    options.adam.validate();
    if (options.steps == 0) return {};  // nothing to do, nothing to schedule

    StageSchedule schedule = options.schedule;
    if (schedule.stages.empty()) {
        schedule = StageSchedule::single_stage(options.steps, c.num_domains);
    }
    schedule.validate(c.num_domains);
    if (options.steps > 0 && schedule.stages.back().end < options.steps) {
        throw ScheduleError("schedule: covers " + std::to_string(schedule.stages.back().end) +
                            " steps, training wants " + std::to_string(options.steps));
    }

    // Loss masking needs the PAD ID, which lives in the reserved block at
    // the top of the vocabulary.
    const SpecialTokens specials = SpecialTokens::top_of(static_cast<std::uint32_t>(c.vocab));

    std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(c.num_domains));
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (static_cast<std::int64_t>(data[i].domain_id) >= c.num_domains) {
            throw BoundsError("train: instance " + std::to_string(i) + " has domain " +
                              std::to_string(data[i].domain_id) + ", model has " +
                              std::to_string(c.num_domains));
        }
        pools[data[i].domain_id].push_back(i);
    }

    PrngStream sampler(options.sampler_seed);
    AdamState state = init_adam_state(model.params);
    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(options.steps));

    for (std::int64_t step = 0; step < options.steps; ++step) {
        const std::size_t stage_idx = schedule.stage_index_at(step);
        const Stage& stage = schedule.stages[stage_idx];
        std::vector<std::uint32_t> available;
        for (std::uint32_t a : stage.domains) {
            if (!pools[a].empty()) available.push_back(a);
        }
        if (available.empty()) {
            throw ScheduleError("schedule: stage " + std::to_string(stage_idx) +
                                " has no available domain data");
        }

        ParamTree batch_grads = model.params.zeros_like();
        double batch_loss = 0.0;
        for (std::int64_t b = 0; b < options.batch_size; ++b) {
            const std::uint32_t domain =
                available[sampler.next() % static_cast<std::uint64_t>(available.size())];
            const auto& pool = pools[domain];
            const TrainingInstance& inst =
                data[pool[sampler.next() % static_cast<std::uint64_t>(pool.size())]];
            const TargetSpec targets = next_token_targets(inst.token_ids, specials.pad);
            BackwardResult bw = backward(model, inst.domain_id, inst.token_ids, targets);
            batch_loss += bw.loss;
            for (std::size_t i = 0; i < batch_grads.size(); ++i) {
                Tensor& acc = batch_grads.tensor(i);
                const Tensor& g = bw.grads.tensor(i);
                for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += g.data[j];
            }
        }
        const double inv_batch = 1.0 / static_cast<double>(options.batch_size);
        batch_loss *= inv_batch;
        for (std::size_t i = 0; i < batch_grads.size(); ++i) {
            for (double& v : batch_grads.tensor(i).data) v *= inv_batch;
        }

        const double lr = lr_at(options.adam, step);
        StepTraceRow row;
        row.step = step;
        row.stage = static_cast<std::int64_t>(stage_idx);
        row.loss = batch_loss;
        row.lr = lr;
        row.dense_grad_norm = tree_norm(batch_grads, false);
        row.rre_grad_norm = tree_norm(batch_grads, true);
        result.trace.push_back(row);

        adam_step(model.params, batch_grads, state, options.adam, lr);
    }
    return result;
}

void write_loss_trace(const std::string& path, const std::vector<StepTraceRow>& trace) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "step,stage,loss,lr,dense_grad_norm,rre_grad_norm\n";
    for (const StepTraceRow& r : trace) {
        out << r.step << "," << r.stage << "," << format_double(r.loss) << ","
            << format_double(r.lr) << "," << format_double(r.dense_grad_norm) << ","
            << format_double(r.rre_grad_norm) << "\n";
    }
    if (!out) throw FormatError("failed writing '" + path + "'");
}

GradCheckReport grad_check(Model& model, const TrainingInstance& instance, std::uint64_t seed,
                           std::int64_t max_coords_per_tensor) {
    const ModelConfig& c = model.config;
    // No PAD masking here: only the final position (which has no target)
    // is excluded, so the check covers every loss-bearing path.
    const TargetSpec targets =
        next_token_targets(instance.token_ids, static_cast<std::uint32_t>(c.vocab));
    const BackwardResult analytic = backward(model, instance.domain_id, instance.token_ids, targets);

    GradCheckReport report;
    report.dense_grad_norm = 0.0;
    report.rre_grad_norm = 0.0;
    report.embedding_grad_norm = 0.0;
    for (std::size_t i = 0; i < analytic.grads.size(); ++i) {
        double sum = 0.0;
        for (double v : analytic.grads.tensor(i).data) sum += v * v;
        switch (analytic.grads.tag(i).kind) {
            case ParamTag::Kind::Dense: report.dense_grad_norm += sum; break;
            case ParamTag::Kind::Rre: report.rre_grad_norm += sum; break;
            case ParamTag::Kind::Embedding: report.embedding_grad_norm += sum; break;
        }
    }
    report.dense_grad_norm = std::sqrt(report.dense_grad_norm);
    report.rre_grad_norm = std::sqrt(report.rre_grad_norm);
    report.embedding_grad_norm = std::sqrt(report.embedding_grad_norm);

    PrngStream prng(seed);
    const double h = 1e-5;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        Tensor& t = model.params.tensor(i);
        const std::int64_t n = t.numel();
        std::vector<std::int64_t> coords;
        if (n <= max_coords_per_tensor) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = j;
        } else {
            std::unordered_set<std::int64_t> seen;
            while (static_cast<std::int64_t>(coords.size()) < max_coords_per_tensor) {
                const std::int64_t j =
                    static_cast<std::int64_t>(prng.next() % static_cast<std::uint64_t>(n));
                if (seen.insert(j).second) coords.push_back(j);
            }
        }
        for (std::int64_t j : coords) {
            double& slot = t.data[static_cast<std::size_t>(j)];
            const double saved = slot;
            slot = saved + h;
            const double up = sequence_loss(model, instance.domain_id, instance.token_ids, targets);
            slot = saved - h;
            const double down =
                sequence_loss(model, instance.domain_id, instance.token_ids, targets);
            slot = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double ana = analytic.grads.tensor(i).data[static_cast<std::size_t>(j)];
            const double denom = std::max({1.0, std::fabs(numeric), std::fabs(ana)});
            const double rel = std::fabs(numeric - ana) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_tensor = model.params.name(i);
                report.worst_index = j;
            }
        }
    }
    return report;
}

}  // namespace dmoe
