/*
 * Copyright 2026 The npupim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <catch_amalgamated.hpp>

#include <sstream>

#include "npupim/engine.hpp"

using namespace npupim;

namespace {

SimConfig small_config(std::uint32_t batch = 64, std::uint32_t tp = 4, std::uint32_t pp = 1) {
    SimConfig cfg;
    cfg.model = model_preset("gpt3-7b");
    cfg.model.tp_degree = tp;
    cfg.model.pp_degree = pp;
    cfg.workload = workload_preset("sharegpt");
    cfg.workload.batch_size = batch;
    cfg.workload.measure_iterations = 2;
    return cfg;
}

}  // namespace

TEST_CASE("interleaved schedule oracles", "[engine][oracle]") {
    // One stage pairing NPU-S 1000 with MHA 800 takes 1000; serial takes 1800.
    CHECK(interleaved_total({0, 1000, 0, 0}, {0, 800, 0, 0}) == 1000);
    CHECK(Cycle{1000} + 800 == 1800);
    // Four layers with constant stages hide every interior MHA job.
    const std::uint32_t n = 4;
    std::vector<Cycle> npu(2 * n + 2, 1000), mha(2 * n + 2, 800);
    mha.front() = mha.back() = 0;
    const Cycle inter = interleaved_total(npu, mha);
    Cycle serial = 0;
    for (std::size_t k = 0; k < npu.size(); ++k) serial += npu[k] + mha[k];
    CHECK(inter == (2 * n + 2) * 1000);
    CHECK(serial - inter == 2 * n * 800);
    CHECK_THROWS_AS(interleaved_total({1, 2}, {1}), std::invalid_argument);
}

TEST_CASE("execution mode flags", "[engine]") {
    CHECK(ExecutionMode::npu_only().name() == "npu-only");
    CHECK(ExecutionMode::npu_only().flags() == "none");
    CHECK(ExecutionMode::blocked().name() == "blocked");
    CHECK(ExecutionMode::neupims().flags() == "drb+gmlbp+sbi");
    CHECK(ExecutionMode::neupims(true, false, false).flags() == "drb");
    CHECK_NOTHROW(ExecutionMode::neupims(false, true, false).validate());
    CHECK_THROWS_AS(ExecutionMode::neupims(false, true, true).validate(), ConfigError);
    ExecutionMode bad = ExecutionMode::blocked();
    bad.subbatch_interleaving = true;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(parse_mode("npu-only") == Mode::NpuOnly);
    CHECK(parse_mode("blocked") == Mode::NpuPimBlocked);
    CHECK(parse_mode("neupims") == Mode::NeuPims);
    CHECK_THROWS(parse_mode("gpu"));
}

TEST_CASE("metric formulas", "[engine]") {
    Metrics idle;
    CHECK(idle.throughput() == 0);
    CHECK(idle.npu_util() == 0);
    CHECK(idle.pim_util() == 0);
    CHECK(idle.bw_util() == 0);
    Metrics m;
    m.sim_cycles = 1000;
    m.tokens_completed = 10;
    m.npu_busy = 1000;
    m.pim_busy = 250;
    m.bytes_moved = 0.5 * 32 * 64 * 1000;
    CHECK(m.throughput() == Catch::Approx(10 * 1e9 / 1000));
    CHECK(m.npu_util() == 1.0);
    CHECK(m.pim_util() == Catch::Approx(0.25));
    CHECK(m.bw_util() == Catch::Approx(0.5));
    Metrics sum = m;
    sum += m;
    CHECK(sum.tokens_completed == 20);
    CHECK(sum.sim_cycles == 2000);
    CHECK(sum.npu_util() == 1.0);
    std::string js = metrics_json(m, {{"mode", "blocked"}});
    CHECK_THAT(js, Catch::Matchers::ContainsSubstring("\"mode\""));
    CHECK_THAT(js, Catch::Matchers::ContainsSubstring("tokens_per_s"));
}

TEST_CASE("bandwidth profile", "[engine]") {
    HardwareConfig hw;
    Engine e(small_config(), ExecutionMode::neupims());
    const auto& bw = e.bandwidth();
    CHECK(bw.mem_only > 0);
    CHECK(bw.mem_only <= double(hw.mem_bytes_per_cycle));
    CHECK(bw.with_pim < bw.mem_only);
    CHECK(bw.pim_share > 0);
    CHECK(bw.pim_share <= 1);
    CHECK(bw.at_pim_share(0) == bw.mem_only);
    CHECK(bw.at_pim_share(bw.pim_share) == Catch::Approx(bw.with_pim));
    CHECK(bw.at_pim_share(2) == Catch::Approx(bw.with_pim));
}

TEST_CASE("runs are deterministic and conserve tokens", "[engine][property]") {
    for (auto mode : {ExecutionMode::npu_only(), ExecutionMode::blocked(), ExecutionMode::neupims(),
                      ExecutionMode::neupims(true, true, false), ExecutionMode::neupims(false, false, false)}) {
        INFO(mode.name() << " " << mode.flags());
        auto a = Engine(small_config(), mode).run();
        auto b = Engine(small_config(), mode).run();
        CHECK(a.metrics == b.metrics);
        CHECK(a.metrics.tokens_completed == a.tokens_generated_by_requests);
        CHECK(a.metrics.tokens_completed > 0);
        CHECK(a.metrics.npu_busy <= double(a.metrics.sim_cycles));
        CHECK(a.metrics.pim_busy <= double(a.metrics.sim_cycles));
        CHECK(a.metrics.npu_util() >= 0);
        CHECK(a.metrics.bw_util() <= 1);
        CHECK(a.metrics.energy > 0);
        if (mode.mode == Mode::NpuOnly) CHECK(a.metrics.pim_busy == 0);
        else CHECK(a.metrics.pim_busy > 0);
    }
}

TEST_CASE("timelines keep exclusive resources disjoint", "[engine][property]") {
    EngineOptions opts;
    opts.record_timeline = true;
    for (auto mode : {ExecutionMode::npu_only(), ExecutionMode::blocked(), ExecutionMode::neupims()}) {
        auto r = Engine(small_config(), mode, opts).run();
        INFO(mode.name());
        CHECK_FALSE(r.timeline.resources.empty());
        CHECK(r.timeline.non_overlapping());
        std::ostringstream csv;
        r.timeline.write_csv(csv);
        CHECK(csv.str().rfind("resource,start,end,label", 0) == 0);
    }
    StageTimeline t;
    t.add("npu-s", 0, 10, "a");
    t.add("npu-s", 5, 12, "b");
    CHECK_FALSE(t.non_overlapping());
}

TEST_CASE("a run is the sum of its iterations", "[engine]") {
    EngineOptions opts;
    opts.record_plans = true;
    // One device holds the whole model, so short requests keep KV in budget.
    auto cfg = small_config(64, 1, 1);
    cfg.workload = workload_preset("alpaca");
    cfg.workload.batch_size = 64;
    cfg.workload.measure_iterations = 2;
    Engine e(cfg, ExecutionMode::neupims(), opts);
    auto r = e.run();
    REQUIRE(r.plans.size() == cfg.workload.measure_iterations);
    Metrics sum;
    for (const auto& p : r.plans) sum += e.run_iteration(p).metrics;
    CHECK(sum.sim_cycles == r.metrics.sim_cycles);
    CHECK(sum.tokens_completed == r.metrics.tokens_completed);
    CHECK(sum.pim_busy == Catch::Approx(r.metrics.pim_busy));

    IterationPlan wrong = r.plans.front();
    wrong.channels.pop_back();
    CHECK_THROWS(e.run_iteration(wrong));
}

TEST_CASE("interleaving hides tensor-parallel communication", "[engine]") {
    EngineOptions opts;
    opts.record_plans = true;
    auto cfg = small_config(256, 4, 1);
    auto plan = Engine(cfg, ExecutionMode::neupims(), opts).run().plans.front();
    auto fast = cfg;
    fast.hardware.link_bytes_per_cycle = 1e12;
    auto penalty = [&](ExecutionMode mode) {
        const double slow = double(Engine(cfg, mode).run_iteration(plan).metrics.sim_cycles);
        const double quick = double(Engine(fast, mode).run_iteration(plan).metrics.sim_cycles);
        return slow - quick;
    };
    const double with_sbi = penalty(ExecutionMode::neupims(true, true, true));
    const double without = penalty(ExecutionMode::neupims(true, true, false));
    CHECK(without > 0);
    CHECK(with_sbi < without);
}

TEST_CASE("pipeline depth must fit the model", "[engine]") {
    auto cfg = small_config();
    cfg.model.pp_degree = 64;
    CHECK_THROWS_AS(Engine(cfg, ExecutionMode::neupims()), ConfigError);
    auto ok = small_config(64, 2, 2);
    auto r = Engine(ok, ExecutionMode::neupims()).run();
    CHECK(r.metrics.tokens_completed == r.tokens_generated_by_requests);
}
