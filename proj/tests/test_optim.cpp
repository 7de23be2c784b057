// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "dmoe/error.hpp"
#include "dmoe/model.hpp"
#include "dmoe/optim.hpp"

using namespace dmoe;

namespace {

ModelConfig tiny_mixed() {
    ModelConfig c;
    c.dense_layers = 1;
    c.rre_layers = 1;
    c.heads = 2;
    c.hidden = 8;
    c.ffn = 12;
    c.vocab = 16;
    c.embedding_slots = 1;
    c.num_domains = 2;
    c.experts_per_domain = 2;
    c.max_seq_len = 8;
    c.init_seed = 7;
    c.routing_seed = 3;
    return c;
}

std::vector<TrainingInstance> toy_data(std::uint32_t domains, std::uint32_t per_domain,
                                       std::uint32_t len, std::uint32_t vocab) {
    std::vector<TrainingInstance> out;
    PrngStream prng(2024);
    for (std::uint32_t a = 0; a < domains; ++a) {
        for (std::uint32_t i = 0; i < per_domain; ++i) {
            TrainingInstance inst;
            inst.domain_id = a;
            for (std::uint32_t t = 0; t < len; ++t) {
                // Skew each domain toward its own token range so there is
                // something learnable.
                inst.token_ids.push_back((prng.next() % (vocab / domains)) +
                                         a * (vocab / domains));
            }
            out.push_back(std::move(inst));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("adam config validation") {
    AdamConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.beta1 == 0.8);
    CHECK(c.beta2 == 0.95);
    CHECK(c.eps_dense == 1e-8);
    CHECK(c.eps_rre == 1e-20);

    AdamConfig bad = c;
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.beta2 = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.eps_dense = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.eps_rre = 1e-4;  // larger than the dense epsilon
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.warmup_steps = 10;
    bad.decay_steps = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.peak_lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("the learning-rate schedule hits its endpoints exactly") {
    AdamConfig c;
    c.peak_lr = 1e-3;
    c.end_lr = 2e-5;
    c.warmup_steps = 100;
    c.decay_steps = 1000;

    CHECK(lr_at(c, 0) == 0.0);
    CHECK(lr_at(c, 50) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(c, 100) == 1e-3);
    CHECK(lr_at(c, 1000) == 2e-5);
    CHECK(lr_at(c, 5000) == 2e-5);
    // Halfway through decay: the linear interpolation of peak and end.
    CHECK(lr_at(c, 550) == doctest::Approx((1e-3 + 2e-5) / 2.0).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at(c, -1), ScheduleError);

    // Zero warmup starts at the peak; warmup == decay jumps to the end rate.
    AdamConfig z = c;
    z.warmup_steps = 0;
    CHECK(lr_at(z, 0) == 1e-3);
    AdamConfig degenerate = c;
    degenerate.warmup_steps = 1000;
    CHECK(lr_at(degenerate, 1000) == 2e-5);
}

TEST_CASE("one adam step matches the closed form bit for bit") {
    ParamTree params;
    params.add("p", Tensor({1}, {1.0}), ParamTag::dense());
    ParamTree grads = params.zeros_like();
    grads.at("p").data[0] = 1.0;

    AdamConfig c;  // beta1 0.8, beta2 0.95, eps_dense 1e-8
    AdamState state = init_adam_state(params);
    adam_step(params, grads, state, c, 0.1);

    // Frozen closed-form values for one step from zero moments:
    // m = 0.2 * g, v = 0.05 * g^2, bias correction cancels both exactly,
    // update = lr * 1 / (1 + eps).
    CHECK(state.m.at("p").data[0] == 0.19999999999999996);
    CHECK(state.v.at("p").data[0] == 0.050000000000000044);
    CHECK(params.at("p").data[0] == 1.0 - 0.09999999900000002);
    CHECK(state.step == 1);
    CHECK(state.beta1_pow == 0.8);
    CHECK(state.beta2_pow == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("moment recursions follow the textbook update") {
    ParamTree params;
    params.add("p", Tensor({2}, {0.5, -0.25}), ParamTag::dense());
    AdamConfig c;
    AdamState state = init_adam_state(params);

    double m = 0.0, v = 0.0;
    for (int step = 0; step < 5; ++step) {
        ParamTree grads = params.zeros_like();
        const double g = 0.1 * (step + 1);
        grads.at("p").data[0] = g;
        adam_step(params, grads, state, c, 1e-3);
        m = c.beta1 * m + (1 - c.beta1) * g;
        v = c.beta2 * v + (1 - c.beta2) * g * g;
        CHECK(state.m.at("p").data[0] == m);
        CHECK(state.v.at("p").data[0] == v);
    }
    // The second coordinate saw zero gradient every step: moments stay 0
    // and the parameter never moves.
    CHECK(state.m.at("p").data[1] == 0.0);
    CHECK(state.v.at("p").data[1] == 0.0);
    CHECK(params.at("p").data[1] == -0.25);
}

TEST_CASE("expert parameters get the small epsilon, everything else the large one") {
    ParamTree params;
    params.add("dense", Tensor({1}, {0.0}), ParamTag::dense());
    params.add("expert", Tensor({1}, {0.0}), ParamTag::rre(0, 0, 0));
    params.add("emb", Tensor({1}, {0.0}), ParamTag::embedding(0));
    ParamTree grads = params.zeros_like();
    for (std::size_t i = 0; i < grads.size(); ++i) grads.tensor(i).data[0] = 1e-12;

    AdamConfig c;
    AdamState state = init_adam_state(params);
    adam_step(params, grads, state, c, 1.0);
    REQUIRE(state.applied_eps.size() == 3);
    CHECK(state.applied_eps[0] == c.eps_dense);
    CHECK(state.applied_eps[1] == c.eps_rre);
    CHECK(state.applied_eps[2] == c.eps_dense);

    // With a tiny gradient the epsilon dominates the dense denominator
    // (sqrt(v_hat) = 1e-12 vs eps 1e-8) but not the expert one, so the
    // expert parameter moves orders of magnitude further.
    double dense_move = std::abs(params.at("dense").data[0]);
    double expert_move = std::abs(params.at("expert").data[0]);
    CHECK(expert_move > dense_move * 100.0);
}

TEST_CASE("adam rejects a gradient tree that does not mirror the parameters") {
    ParamTree params;
    params.add("p", Tensor({2}, {0.0, 0.0}), ParamTag::dense());
    AdamState state = init_adam_state(params);
    AdamConfig c;
    ParamTree bad;
    bad.add("p", Tensor({3}, {0.0, 0.0, 0.0}), ParamTag::dense());
    CHECK_THROWS_AS(adam_step(params, bad, state, c, 1e-3), ShapeError);
    ParamTree missing;
    CHECK_THROWS_AS(adam_step(params, missing, state, c, 1e-3), ShapeError);
}

TEST_CASE("stage schedules must tile the step range with valid domain sets") {
    StageSchedule s = StageSchedule::single_stage(10, 3);
    REQUIRE(s.stages.size() == 1);
    CHECK(s.stages[0].begin == 0);
    CHECK(s.stages[0].end == 10);
    CHECK(s.stages[0].domains == std::vector<std::uint32_t>{0, 1, 2});
    CHECK_NOTHROW(s.validate(3));
    CHECK(s.stage_index_at(0) == 0);
    CHECK(s.stage_index_at(9) == 0);
    CHECK_THROWS_AS(s.stage_index_at(10), ScheduleError);

    StageSchedule two;
    two.stages.push_back({0, 4, {0, 1}});
    two.stages.push_back({4, 10, {2}});
    CHECK_NOTHROW(two.validate(3));
    CHECK(two.stage_index_at(3) == 0);
    CHECK(two.stage_index_at(4) == 1);

    StageSchedule bad;
    bad.stages.push_back({1, 4, {0}});  // does not start at 0
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    bad.stages = {{0, 4, {0}}, {5, 8, {0}}};  // gap
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    bad.stages = {{0, 0, {0}}};  // empty range
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    bad.stages = {{0, 4, {}}};  // no domains
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    bad.stages = {{0, 4, {0, 0}}};  // duplicate domain
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    bad.stages = {{0, 4, {1}}};  // domain out of range
    CHECK_THROWS_AS(bad.validate(1), ScheduleError);
    StageSchedule none;
    CHECK_THROWS_AS(none.validate(1), ScheduleError);
}

TEST_CASE("stage schedules parse from kv text") {
    KvMap kv = parse_kv_text(
        "stage0.begin = 0\n"
        "stage0.end = 4\n"
        "stage0.domains = 0,1\n"
        "stage1.begin = 4\n"
        "stage1.end = 10\n"
        "stage1.domains = 2\n");
    StageSchedule s = stage_schedule_from_kv(kv);
    REQUIRE(s.stages.size() == 2);
    CHECK(s.stages[0].domains == std::vector<std::uint32_t>{0, 1});
    CHECK(s.stages[1].begin == 4);
    CHECK(s.stages[1].end == 10);
    CHECK_THROWS_AS(stage_schedule_from_kv(parse_kv_text("x = 1\n")), ConfigError);
}

TEST_CASE("training runs deterministically and reduces the loss on a toy corpus") {
    ModelConfig mc = tiny_mixed();
    auto data = toy_data(2, 8, 8, 16);

    TrainOptions opt;
    opt.steps = 30;
    opt.batch_size = 4;
    opt.sampler_seed = 5;
    opt.adam.warmup_steps = 5;
    opt.adam.decay_steps = 30;
    opt.adam.peak_lr = 3e-2;
    opt.adam.end_lr = 1e-3;

    Model m1 = init_model(mc);
    TrainResult r1 = train(m1, data, opt);
    REQUIRE(r1.trace.size() == 30);
    for (const auto& row : r1.trace) {
        CHECK(std::isfinite(row.loss));
        CHECK(row.lr == lr_at(opt.adam, row.step));
        CHECK(row.stage == 0);
        CHECK(row.dense_grad_norm >= 0.0);
    }
    // The toy problem is learnable: the loss falls well below the uniform
    // baseline by the end.
    double first = r1.trace.front().loss;
    double last = r1.trace.back().loss;
    CHECK(last < first);

    // Bit-exact replay.
    Model m2 = init_model(mc);
    TrainResult r2 = train(m2, data, opt);
    CHECK(m1.params == m2.params);
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].loss == r2.trace[i].loss);
    }

    // A different sampler seed walks a different path.
    TrainOptions other = opt;
    other.sampler_seed = 6;
    Model m3 = init_model(mc);
    train(m3, data, other);
    CHECK(m1.params != m3.params);
}

TEST_CASE("stages keep inactive domains' experts bit-frozen") {
    ModelConfig mc = tiny_mixed();
    auto data = toy_data(2, 8, 8, 16);

    TrainOptions opt;
    opt.steps = 12;
    opt.batch_size = 2;
    opt.sampler_seed = 1;
    opt.adam.warmup_steps = 2;
    opt.adam.decay_steps = 12;
    opt.adam.peak_lr = 1e-2;
    opt.adam.end_lr = 1e-3;
    opt.schedule.stages.push_back({0, 6, {0}});
    opt.schedule.stages.push_back({6, 12, {0, 1}});

    Model m = init_model(mc);
    ParamTree initial = m.params;
    TrainResult r = train(m, data, opt);

    CHECK(r.trace[0].stage == 0);
    CHECK(r.trace[5].stage == 0);
    CHECK(r.trace[6].stage == 1);
    // During stage 0 only domain 0 was sampled, so its rre gradient flowed
    // and domain 1's experts held still; they start moving in stage 1.
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const ParamTag& tag = m.params.tag(i);
        if (tag.kind == ParamTag::Kind::Rre && tag.domain == 1) {
            // They did move eventually (stage 1 trains them)...
            CHECK(m.params.tensor(i).data != initial.tensor(i).data);
        }
    }

    // With a schedule that never activates domain 1, its experts are
    // bit-identical at the end.
    TrainOptions frozen = opt;
    frozen.schedule = StageSchedule{};
    frozen.schedule.stages.push_back({0, 12, {0}});
    Model f = init_model(mc);
    ParamTree before = f.params;
    train(f, data, frozen);
    bool dense_moved = false;
    for (std::size_t i = 0; i < f.params.size(); ++i) {
        const ParamTag& tag = f.params.tag(i);
        if (tag.kind == ParamTag::Kind::Rre && tag.domain == 1) {
            CHECK(f.params.tensor(i).data == before.tensor(i).data);
        }
        if (tag.kind == ParamTag::Kind::Dense &&
            f.params.tensor(i).data != before.tensor(i).data) {
            dense_moved = true;
        }
    }
    CHECK(dense_moved);
}

TEST_CASE("training rejects impossible setups") {
    ModelConfig mc = tiny_mixed();
    Model m = init_model(mc);
    auto data = toy_data(2, 4, 8, 16);

    TrainOptions opt;
    opt.steps = 4;
    opt.batch_size = 0;
    CHECK_THROWS_AS(train(m, data, opt), ConfigError);

    opt.batch_size = 2;
    opt.schedule.stages.push_back({0, 2, {0}});  // covers 2 of 4 steps
    CHECK_THROWS_AS(train(m, data, opt), ScheduleError);

    // A stage whose domains have no instances cannot sample a batch.
    TrainOptions starved;
    starved.steps = 4;
    starved.batch_size = 2;
    starved.schedule.stages.push_back({0, 4, {1}});
    auto only_domain0 = toy_data(1, 4, 8, 16);
    Model m2 = init_model(mc);
    CHECK_THROWS_AS(train(m2, only_domain0, starved), ScheduleError);

    // Instances must name domains the model has.
    auto bad = toy_data(2, 1, 8, 16);
    bad[0].domain_id = 7;
    Model m3 = init_model(mc);
    TrainOptions plain;
    plain.steps = 1;
    plain.batch_size = 1;
    CHECK_THROWS_AS(train(m3, bad, plain), BoundsError);

    // Zero steps is a no-op that still validates.
    Model m4 = init_model(mc);
    ParamTree before = m4.params;
    TrainOptions none;
    none.steps = 0;
    none.batch_size = 1;
    TrainResult r = train(m4, data, none);
    CHECK(r.trace.empty());
    CHECK(m4.params == before);
}

TEST_CASE("the loss trace file lists one row per step") {
    std::vector<StepTraceRow> trace;
    for (int i = 0; i < 3; ++i) {
        StepTraceRow row;
        row.step = i;
        row.stage = 0;
        row.loss = 2.5 - i * 0.5;
        row.lr = 1e-3;
        row.dense_grad_norm = 1.0;
        row.rre_grad_norm = 0.5;
        trace.push_back(row);
    }
    auto path = (std::filesystem::temp_directory_path() / "dmoe_trace.csv").string();
    write_loss_trace(path, trace);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,stage,loss,lr,dense_grad_norm,rre_grad_norm");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
    std::remove(path.c_str());
}

TEST_CASE("analytic gradients agree with finite differences everywhere") {
    ModelConfig mc = tiny_mixed();
    Model m = init_model(mc);
    TrainingInstance inst;
    inst.domain_id = 1;
    inst.token_ids = {3, 1, 4, 1, 5, 9};

    GradCheckReport report = grad_check(m, inst, /*seed=*/0, /*max_coords=*/40);
    CHECK(report.coords_checked > 0);
    CHECK(report.max_rel_err < 1e-6);
    CHECK(report.dense_grad_norm > 0.0);
    CHECK(report.rre_grad_norm > 0.0);
    CHECK(report.embedding_grad_norm > 0.0);
    CHECK_FALSE(report.worst_tensor.empty());
}
