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

#include <random>

#include "npupim/controller.hpp"
#include "npupim/pim_mha.hpp"
#include "npupim/scheduler.hpp"

using namespace npupim;

namespace {

std::uint64_t tiles(const std::vector<PimDims>& blocks) {
    std::uint64_t n = 0;
    for (const auto& b : blocks) n += b.tiles;
    return n;
}

}  // namespace

TEST_CASE("request plan covers the same tiles as the latency estimate", "[pim]") {
    HardwareConfig hw;
    for (const char* name : {"gpt3-7b", "gpt3-13b", "gpt3-30b"}) {
        ModelConfig m = model_preset(name);
        const auto p = mha_params_for(hw, m);
        for (std::uint64_t seq : {1ull, 31ull, 64ull, 512ull, 777ull, 2048ull}) {
            auto groups = plan_request_mha(seq, hw, m);
            std::uint64_t logit = 0, attend = 0, heads = 0, soft = 0;
            for (const auto& g : groups) {
                logit += tiles(g.logit_blocks);
                attend += tiles(g.attend_blocks);
                heads += g.heads;
                soft += g.softmax_elements;
                CHECK(g.writeback_bytes == g.softmax_elements * hw.data_width);
                for (const auto& b : g.logit_blocks) CHECK(b.tiles <= max_gemv_tiles(hw));
            }
            INFO(name << " seq " << seq);
            CHECK(heads == p.num_heads);
            CHECK(soft == heads * seq);
            CHECK(logit == ceil_div(seq, p.banks_per_channel) * ceil_div(p.d_model, p.page_elements));
            CHECK(attend ==
                  ceil_div(p.d_model / p.num_heads, p.banks_per_channel) * ceil_div(seq, p.page_elements) * p.num_heads);
        }
    }
    CHECK_THROWS_AS(plan_request_mha(0, hw, ModelConfig{}), std::invalid_argument);
}

TEST_CASE("GEMV blocks fit an eighth of the refresh interval", "[pim]") {
    HardwareConfig hw;
    const auto k = max_gemv_tiles(hw);
    CHECK(k >= 1);
    CHECK(estimate_gemv_duration(PimDims{k, 1, std::uint64_t{k} * 32 * 8}, hw) <= hw.timing.tREFI / 8);
    CHECK(estimate_gemv_duration(PimDims{k + 1, 1, std::uint64_t{k + 1} * 32 * 8}, hw) > hw.timing.tREFI / 8);
}

TEST_CASE("block estimate bounds the simulated block", "[pim][property]") {
    HardwareConfig hw;
    PimBlockCosts costs(hw);
    for (std::uint32_t k = 1; k <= max_gemv_tiles(hw); ++k)
        for (std::uint32_t gw : {0u, 1u, 2u}) {
            PimDims d{k, gw, std::uint64_t{k} * 32};
            const Cycle sim = costs.cost(d);
            const Cycle est = estimate_gemv_duration(d, hw);
            INFO("k " << k << " gwrites " << gw);
            CHECK(sim <= est);
            CHECK(double(est) <= 1.15 * double(sim) + 64);
        }
    // The dot-product phase alone is k tile latencies.
    CHECK(costs.cost(PimDims{8, 1, 256}) >= 8 * hw.pim_tile_latency);
}

TEST_CASE("GEMV and per-tile command forms do the same work", "[pim]") {
    HardwareConfig hw;
    PimDims d{3, 1, 96};
    auto gemv = gemv_block_commands(d, hw, 0, 40);
    auto dp = dotproduct_block_commands(d, hw, 0, 40);
    CHECK(gemv.size() == 1 + 1 + hw.bankgroups() + 2);
    CHECK(dp.size() > gemv.size());
    ChannelController a(hw, 0), b(hw, 0);
    for (const auto& c : gemv) REQUIRE(a.enqueue(c));
    for (const auto& c : dp) REQUIRE(b.enqueue(c));
    const Cycle ta = a.run_until_idle(0), tb = b.run_until_idle(0);
    CHECK(a.channel().counts().pim_tiles == b.channel().counts().pim_tiles);
    CHECK(a.stats().bus_slots < b.stats().bus_slots);
    CHECK(check_trace_timing(a.channel().events(), hw, false, ta).empty());
    CHECK(check_trace_timing(b.channel().events(), hw, false, tb).empty());
}

TEST_CASE("simulated request MHA tracks the latency estimate", "[pim][calibration]") {
    HardwareConfig hw;
    ModelConfig m = model_preset("gpt3-7b");
    const auto p = mha_params_for(hw, m);
    for (std::uint64_t seq : {64ull, 128ull, 256ull, 512ull, 1024ull, 2048ull, 4096ull}) {
        const double sim = double(simulate_request_mha(seq, hw, m));
        const double est = double(estimate_mha_latency(seq, p));
        INFO("seq " << seq << " sim " << sim << " est " << est);
        CHECK(sim / est >= 0.85);
        CHECK(sim / est <= 1.15);
    }
}

TEST_CASE("refresh costs PIM throughput", "[pim]") {
    HardwareConfig hw;
    PimBlockCosts costs(hw);
    const double rf = costs.refresh_factor();
    CHECK(rf > 1.0);
    CHECK(rf < 1.5);
}

TEST_CASE("head pipeline examples", "[pim][oracle]") {
    // PIM 100 per head split into logit and attend.
    // PIM-bound: softmax hides behind the next logit.
    const Cycle pim_bound = mha_head_pipeline(8, 50, 10, 50);
    CHECK(pim_bound >= 800);
    CHECK(pim_bound <= 810);
    CHECK(mha_head_pipeline(1, 50, 10, 50) == 110);
    // Softmax-bound: the first logit and the last attend stick out.
    CHECK(mha_head_pipeline(8, 5, 100, 5) == 810);
    CHECK(mha_head_pipeline(8, 50, 10, 50) <= 8 * 110);
    std::vector<HeadJob> jobs(8, HeadJob{50, 10, 50});
    CHECK(mha_head_pipeline(jobs, false) == 8 * 110);
    CHECK(mha_head_pipeline(std::vector<HeadJob>{}) == 0);
}

TEST_CASE("head pipeline bounds", "[pim][property]") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<HeadJob> jobs(1 + rng() % 16);
        Cycle pim = 0, vec = 0, serial = 0, longest = 0;
        for (auto& j : jobs) {
            j = HeadJob{Cycle(1 + rng() % 200), Cycle(1 + rng() % 200), Cycle(1 + rng() % 200)};
            pim += j.logit + j.attend;
            vec += j.softmax;
            serial += j.logit + j.softmax + j.attend;
            longest = std::max(longest, j.logit + j.softmax + j.attend);
        }
        const Cycle t = mha_head_pipeline(jobs);
        CHECK(t >= std::max({pim, vec, longest}));
        CHECK(t <= serial);
    }
}
