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

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "npupim/dram.hpp"
#include "npupim/scheduler.hpp"

using namespace npupim;

namespace {

LoadFn identity_load() {
    return [](std::uint32_t s) { return Cycle{s}; };
}

std::vector<PackItem> items(const std::vector<std::uint32_t>& lens) {
    std::vector<PackItem> out;
    for (std::size_t i = 0; i < lens.size(); ++i) out.push_back({RequestId(i), lens[i]});
    return out;
}

std::vector<std::uint32_t> lens_of(const std::vector<PackItem>& list) {
    std::vector<std::uint32_t> out;
    for (const auto& i : list) out.push_back(i.seq_len);
    return out;
}

Cycle brute_force_makespan(const std::vector<std::uint32_t>& lens, std::uint32_t m) {
    Cycle best = ~Cycle{0};
    std::uint64_t combos = 1;
    for (std::size_t i = 0; i < lens.size(); ++i) combos *= m;
    for (std::uint64_t code = 0; code < combos; ++code) {
        std::vector<Cycle> load(m, 0);
        std::uint64_t c = code;
        for (auto l : lens) {
            load[c % m] += l;
            c /= m;
        }
        best = std::min(best, *std::max_element(load.begin(), load.end()));
    }
    return best;
}

Request req(RequestId id, std::uint32_t in, std::uint32_t out) {
    Request r;
    r.id = id;
    r.input_len = in;
    r.target_output_len = out;
    return r;
}

SchedulerConfig small_cfg(std::uint32_t slots) {
    SchedulerConfig cfg;
    cfg.batch_slots = slots;
    return cfg;
}

}  // namespace

TEST_CASE("latency estimate matches the worked example", "[scheduler][oracle]") {
    MhaParams p{4096, 50, 100, 512, 32, 32};
    CHECK(estimate_mha_latency(512, p) == 16800);
    // Hand evaluation of each term for another shape.
    const std::uint64_t s = 1000, e = 4096, pd = 512, b = 32, h = 32;
    const std::uint64_t part1 = 100 * (e / pd) + 50 * ((s + b - 1) / b) * (e / pd);
    const std::uint64_t part2 = 100 * ((s + pd - 1) / pd) * h + 50 * ((e / h + b - 1) / b) * ((s + pd - 1) / pd) * h;
    CHECK(estimate_mha_latency(s, p) == part1 + part2);
    MhaParams unit{512, 1, 0, 512, 32, 1};
    // One K^T tile plus ceil(512 / 32) attend tiles.
    CHECK(estimate_mha_latency(32, unit) == 1 + 16);
    CHECK(estimate_mha_latency(1024, p) > estimate_mha_latency(512, p));
    CHECK_THROWS_AS(estimate_mha_latency(0, p), std::invalid_argument);
}

TEST_CASE("device-local estimate parameters", "[scheduler]") {
    HardwareConfig hw;
    ModelConfig m = model_preset("gpt3-7b");
    auto p = mha_params_for(hw, m);
    CHECK(p.d_model == 4096 / m.tp_degree);
    CHECK(p.num_heads == 32 / m.tp_degree);
    CHECK(p.page_elements == 512);
    CHECK(p.tile_latency == effective_tile_latency(hw));
}

TEST_CASE("greedy packing examples", "[scheduler][oracle]") {
    auto r = pack_channels(items({10, 9, 2, 1}), ChannelLists(2), identity_load());
    CHECK(lens_of(r.channels[0]) == std::vector<std::uint32_t>{10, 1});
    CHECK(lens_of(r.channels[1]) == std::vector<std::uint32_t>{9, 2});
    CHECK(r.loads == std::vector<Cycle>{11, 11});
    CHECK(brute_force_makespan({10, 9, 2, 1}, 2) == 11);

    auto one = pack_channels(items({3, 1, 2}), ChannelLists(1), identity_load());
    CHECK(one.channels[0].size() == 3);

    auto eq = pack_channels(items(std::vector<std::uint32_t>(8, 5)), ChannelLists(4), identity_load());
    for (const auto& c : eq.channels) CHECK(c.size() == 2);
}

TEST_CASE("packing skips full channels and refuses when none fit", "[scheduler]") {
    FitFn only_ch1 = [](std::uint32_t ch, const PackItem&) { return ch == 1; };
    auto r = pack_channels(items({4, 3}), ChannelLists(2), identity_load(), only_ch1);
    CHECK(r.channels[0].empty());
    CHECK(r.channels[1].size() == 2);
    FitFn none = [](std::uint32_t, const PackItem&) { return false; };
    auto refused = pack_channels(items({4, 3}), ChannelLists(2), identity_load(), none);
    CHECK(refused.refused.size() == 2);
}

TEST_CASE("greedy bound against brute force", "[scheduler][property]") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::uint32_t m = 2 + rng() % 2;
        const std::size_t n = 1 + rng() % 8;
        std::vector<std::uint32_t> lens;
        for (std::size_t i = 0; i < n; ++i) lens.push_back(1 + rng() % 100);
        auto r = pack_channels(items(lens), ChannelLists(m), identity_load());
        const Cycle mx = *std::max_element(r.loads.begin(), r.loads.end());
        const Cycle mn = *std::min_element(r.loads.begin(), r.loads.end());
        CHECK(mx - mn <= *std::max_element(lens.begin(), lens.end()));
        CHECK(3 * mx <= 4 * brute_force_makespan(lens, m));
        std::size_t placed = 0;
        for (const auto& c : r.channels) placed += c.size();
        CHECK(placed == n);
    }
}

TEST_CASE("greedy packing beats round-robin on log-normal lengths", "[scheduler][property]") {
    HardwareConfig hw;
    auto p = mha_params_for(hw, model_preset("gpt3-7b"));
    LoadFn load = [&](std::uint32_t s) { return estimate_mha_latency(s, p); };
    int wins = 0;
    const int seeds = 100;
    for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 rng(seed);
        std::lognormal_distribution<double> d(std::log(300.0), 1.0);
        std::vector<std::uint32_t> lens;
        for (int i = 0; i < 256; ++i) lens.push_back(std::clamp<std::uint32_t>(std::uint32_t(d(rng)), 1, 2048));
        auto g = pack_channels(items(lens), ChannelLists(32), load);
        std::uint32_t cursor = 0;
        auto rr = pack_round_robin(items(lens), ChannelLists(32), load, cursor);
        CHECK(cursor == 256 % 32);
        wins += *std::max_element(g.loads.begin(), g.loads.end()) <= *std::max_element(rr.loads.begin(), rr.loads.end());
    }
    CHECK(wins >= 95);
}

TEST_CASE("sub-batch partition examples", "[scheduler][oracle]") {
    ChannelLists two{{{0, 1}, {1, 1}, {2, 1}}, {{3, 1}, {4, 1}, {5, 1}}};
    auto s = partition_subbatches(two);
    REQUIRE(s.per_channel.size() == 2);
    CHECK(s.per_channel[0] == std::pair<std::uint32_t, std::uint32_t>{2, 1});
    CHECK(s.per_channel[1] == std::pair<std::uint32_t, std::uint32_t>{1, 2});
    CHECK(s.sb1 == std::vector<RequestId>{0, 1, 3});
    CHECK(s.sb2 == std::vector<RequestId>{2, 4, 5});

    auto four = partition_subbatches(ChannelLists{{{0, 1}, {1, 1}, {2, 1}, {3, 1}}});
    CHECK(four.per_channel[0] == std::pair<std::uint32_t, std::uint32_t>{2, 2});

    auto ones = partition_subbatches(ChannelLists{{{0, 1}}, {{1, 1}}, {{2, 1}}});
    CHECK(ones.sb1.size() == 2);
    CHECK(ones.sb2.size() == 1);
    // The alternation restarts on each call.
    CHECK(partition_subbatches(two).per_channel == s.per_channel);
}

TEST_CASE("sub-batch partition properties", "[scheduler][property]") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        ChannelLists lists(1 + rng() % 32);
        RequestId id = 0;
        for (auto& l : lists)
            for (std::size_t n = rng() % 12; n > 0; --n) l.push_back({id++, 1});
        auto s = partition_subbatches(lists);
        const auto d = std::int64_t(s.sb1.size()) - std::int64_t(s.sb2.size());
        CHECK(std::abs(d) <= 1);
        for (const auto& [a, b] : s.per_channel) CHECK(std::abs(std::int64_t(a) - std::int64_t(b)) <= 1);
        std::set<RequestId> all(s.sb1.begin(), s.sb1.end());
        for (auto r : s.sb2) CHECK(all.insert(r).second);
        CHECK(all.size() == id);
    }
}

TEST_CASE("KV page table conservation and exhaustion", "[scheduler][kv]") {
    HardwareConfig hw;
    KvPageTable fresh(hw.hbm_channels, hw.channel_capacity / hw.page_size);
    CHECK(fresh.free_pages(0) == 1048576);

    KvPageTable t(2, 4, 1);
    CHECK(t.capacity(0) == 3);
    auto a = t.allocate(0);
    REQUIRE(a);
    CHECK(*a >= 1);
    CHECK(t.free_pages(0) + t.allocated_pages(0) == 3);
    t.free(0, *a);
    CHECK(t.free_pages(0) == 3);
    for (int i = 0; i < 3; ++i) CHECK(t.allocate(0));
    CHECK_FALSE(t.allocate(0));
    CHECK(t.free_pages(1) == 3);

    Request r = req(0, 1, 1);
    r.channel = 0;
    r.kv_pages.resize(1);
    CHECK_THROWS_AS(allocate_kv_page(t, 0, r, 0), CapacityError);
}

TEST_CASE("admission is FIFO and bounded by free slots", "[scheduler]") {
    Scheduler s(small_cfg(2));
    std::vector<Request> reqs;
    for (RequestId i = 0; i < 10; ++i) reqs.push_back(req(i, 10, 5));
    s.submit(reqs);
    auto plan = s.iteration_boundary();
    CHECK(plan.admitted == std::vector<RequestId>{0, 1});
    CHECK(s.queued() == 8);
    CHECK(plan.batch_size() == 2);

    auto idle = s.iteration_boundary();
    CHECK(idle.admitted.empty());
    CHECK(idle.batch_size() == 2);
}

TEST_CASE("finished requests free pages and slots", "[scheduler]") {
    Scheduler s(small_cfg(1));
    s.submit({req(0, 600, 1), req(1, 10, 3)});
    s.iteration_boundary();
    const std::uint32_t ch = *s.active()[0].channel;
    const auto used = s.kv().allocated_pages(ch);
    CHECK(used == s.layers_on_device() * s.pages_per_layer(600));
    CHECK(s.advance() == 1);
    auto plan = s.iteration_boundary();
    CHECK(plan.completed == std::vector<RequestId>{0});
    CHECK(plan.admitted == std::vector<RequestId>{1});
    std::uint64_t total = 0;
    for (std::uint32_t c = 0; c < s.kv().channels(); ++c) total += s.kv().allocated_pages(c);
    CHECK(total == s.layers_on_device() * s.pages_per_layer(10));
}

TEST_CASE("pages grow with context and are conserved", "[scheduler][kv][property]") {
    Scheduler s(small_cfg(64));
    std::mt19937_64 rng(9);
    std::vector<Request> reqs;
    for (RequestId i = 0; i < 300; ++i) reqs.push_back(req(i, 1 + rng() % 900, 1 + rng() % 700));
    s.submit(reqs);
    std::uint64_t tokens = 0;
    for (int it = 0; it < 400; ++it) {
        s.iteration_boundary();
        for (std::uint32_t c = 0; c < s.kv().channels(); ++c)
            REQUIRE(s.kv().free_pages(c) + s.kv().allocated_pages(c) == s.kv().capacity(c));
        std::uint64_t held = 0, need = 0;
        for (const auto& r : s.active()) {
            for (const auto& l : r.kv_pages) held += l.size();
            need += s.layers_on_device() * s.pages_per_layer(r.context_len());
        }
        CHECK(held >= need);
        tokens += s.advance();
    }
    CHECK(tokens > 0);
}

TEST_CASE("plans serialize to one JSON line", "[scheduler]") {
    Scheduler s(small_cfg(4));
    s.submit({req(0, 10, 5), req(1, 20, 5)});
    std::ostringstream out;
    write_plan_json(out, s.iteration_boundary());
    const auto text = out.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK_THAT(text, Catch::Matchers::ContainsSubstring("\"admitted\":[0,1]"));
    CHECK_THAT(text, Catch::Matchers::ContainsSubstring("\"sb1\""));
}
