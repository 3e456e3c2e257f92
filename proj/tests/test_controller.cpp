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

using namespace npupim;

namespace {

MemCommand rd(std::uint32_t bank, std::uint32_t row) { return {MemKind::RD, 0, bank, row, 0, 64}; }

std::vector<IssuedCommand> drain(ChannelController& c, Cycle start = 0) {
    std::vector<IssuedCommand> out;
    Cycle t = start;
    while (!c.idle()) {
        if (auto i = c.tick(t)) out.push_back(*i);
        Cycle w = c.next_wake(t);
        REQUIRE(w != kBlocked);
        t = std::max(t + 1, w);
    }
    return out;
}

}  // namespace

TEST_CASE("address decoding interleaves channels then banks", "[controller]") {
    HardwareConfig hw;
    auto d = decode_address(hw, 0);
    CHECK(d.channel == 0);
    CHECK(d.bank == 0);
    CHECK(d.row == 0);
    d = decode_address(hw, hw.page_size + 5);
    CHECK(d.channel == 1);
    CHECK(d.col == 5);
    d = decode_address(hw, hw.page_size * hw.hbm_channels);
    CHECK(d.channel == 0);
    CHECK(d.bank == 1);
    d = decode_address(hw, hw.page_size * hw.hbm_channels * hw.banks_per_channel * 3);
    CHECK(d.row == 3);
    CHECK_THROWS_AS(decode_address(hw, hw.channel_capacity * hw.hbm_channels), std::out_of_range);
}

TEST_CASE("open_row_for emits only the needed commands", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    const std::uint64_t stride = hw.page_size * hw.hbm_channels * hw.banks_per_channel;
    CHECK(c.open_row_for(0, false, 64).size() == 2);
    c.run_until_idle(0);
    auto again = c.open_row_for(64, false, 64);
    REQUIRE(again.size() == 1);
    CHECK(again[0].kind == MemKind::RD);
    Cycle t = c.run_until_idle(0);
    auto other = c.open_row_for(stride, true, 64, t);
    REQUIRE(other.size() == 3);
    CHECK(other[0].kind == MemKind::PRE);
    CHECK(other[1].kind == MemKind::ACT);
    CHECK(other[2].kind == MemKind::WR);
    CHECK_THROWS_AS(c.open_row_for(hw.page_size, false, 64), std::invalid_argument);
}

TEST_CASE("row hits are served ahead of older misses", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    REQUIRE(c.enqueue(rd(0, 1)));
    REQUIRE(c.enqueue(rd(0, 2)));
    REQUIRE(c.enqueue(rd(0, 1)));
    std::vector<std::uint32_t> rows;
    for (const auto& i : drain(c))
        if (!i.is_pim && i.mem.kind == MemKind::RD) rows.push_back(i.mem.row);
    CHECK(rows == std::vector<std::uint32_t>{1, 1, 2});
}

TEST_CASE("PIM commands take priority", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    REQUIRE(c.enqueue(rd(0, 1)));
    for (const auto& p : gemv_block_commands(PimDims{1, 1, 32}, hw, 0, 100)) REQUIRE(c.enqueue(p));
    auto first = c.tick(0);
    REQUIRE(first);
    CHECK(first->is_pim);
    CHECK(first->pim.kind == PimKind::HEADER);
}

TEST_CASE("full queues push back", "[controller]") {
    HardwareConfig hw;
    hw.queue_depth = 4;
    ChannelController c(hw, 0);
    for (int i = 0; i < 4; ++i) CHECK(c.enqueue(rd(0, 1)));
    CHECK_FALSE(c.enqueue(rd(0, 1)));
    CHECK(c.mem_queue_size() == 4);
    CHECK_THROWS_AS(c.enqueue(MemCommand{MemKind::REF, 0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("refresh guard admits, defers or demands a split", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    PimDims small{2, 1, 32};
    const Cycle est = estimate_gemv_duration(small, hw);
    CHECK(c.refresh_guard(small, 0) == RefreshDecision::Admit);
    CHECK(c.refresh_guard(small, hw.timing.tREFI - est) == RefreshDecision::Admit);
    CHECK(c.refresh_guard(small, hw.timing.tREFI - est + 1) == RefreshDecision::Defer);
    CHECK_THROWS_AS(c.refresh_guard(PimDims{200, 1, 32}, 0), SplitRequiredError);
}

TEST_CASE("refresh keeps pace and PIM never straddles it", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    const std::uint32_t k = max_gemv_tiles(hw);
    Cycle t = 0;
    for (int i = 0; i < 40; ++i) {
        for (const auto& p : gemv_block_commands(PimDims{k, 1, 32}, hw, 0, 1000 + 8 * i)) REQUIRE(c.enqueue(p, t));
        t = c.run_until_idle(t);
    }
    const auto& counts = c.channel().counts();
    CHECK(counts.ref >= t / hw.timing.tREFI - 1);
    CHECK(check_trace_timing(c.channel().events(), hw, false, t).empty());
}

TEST_CASE("random mixed traffic passes the timing checker", "[controller][property]") {
    for (bool aliased : {false, true}) {
        HardwareConfig hw;
        ChannelController c(hw, 0, aliased);
        std::mt19937_64 rng(aliased ? 7 : 3);
        std::uniform_int_distribution<std::uint32_t> bank(0, hw.banks_per_channel - 1), row(0, 63), coin(0, 9);
        Cycle t = 0;
        std::uint64_t mem = 0;
        for (int wave = 0; wave < 30; ++wave) {
            for (int i = 0; i < 60; ++i) {
                MemCommand m = rd(bank(rng), row(rng));
                if (coin(rng) < 3) m.kind = MemKind::WR;
                REQUIRE(c.enqueue(m, t));
                ++mem;
            }
            if (coin(rng) < 6)
                for (const auto& p : gemv_block_commands(PimDims{1 + coin(rng) % 4, 1, 32}, hw, 0, 4000 + 8 * wave))
                    REQUIRE(c.enqueue(p, t));
            t = c.run_until_idle(t);
        }
        INFO("aliased " << aliased);
        CHECK(c.stats().mem_issued >= mem);
        CHECK(check_trace_timing(c.channel().events(), hw, aliased, t).empty());
    }
}

TEST_CASE("same-row MEM and PIM work both complete", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0);
    for (std::uint32_t b = 0; b < hw.banks_per_channel; ++b) REQUIRE(c.enqueue(rd(b, 77)));
    for (const auto& p : gemv_block_commands(PimDims{1, 1, 32}, hw, 0, 77)) REQUIRE(c.enqueue(p));
    const Cycle end = c.run_until_idle(0);
    CHECK(c.idle());
    CHECK(check_trace_timing(c.channel().events(), hw, false, end).empty());
}

TEST_CASE("aliased per-tile blocks survive MEM traffic and refresh", "[controller]") {
    HardwareConfig hw;
    ChannelController c(hw, 0, true);
    std::mt19937_64 rng(17);
    Cycle t = 0;
    for (int wave = 0; wave < 12; ++wave) {
        for (int i = 0; i < 40; ++i) REQUIRE(c.enqueue(rd(rng() % 32, rng() % 32), t));
        for (const auto& p : dotproduct_block_commands(PimDims{3, 1, 96}, hw, 0, 100 + wave)) REQUIRE(c.enqueue(p, t));
        t = c.run_until_idle(t);
        // Idle gaps let refreshes fall due with nothing queued.
        if (wave + 1 < 12) t += 1500;
    }
    CHECK(c.channel().counts().ref >= t / hw.timing.tREFI - 1);
    CHECK(check_trace_timing(c.channel().events(), hw, true, t).empty());
}
