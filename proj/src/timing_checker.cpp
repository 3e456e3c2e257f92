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

#include <algorithm>
#include <deque>
#include <map>

#include "npupim/dram.hpp"

namespace npupim {

namespace {

struct BufState {
    bool open = false;
    std::uint32_t row = 0;
    std::optional<Cycle> act, pre, wr_end;
};

}  // namespace

std::vector<TimingViolation> check_trace_timing(const std::vector<BankEvent>& input, const HardwareConfig& hw,
                                                bool aliased, Cycle end_time) {
    const auto& t = hw.timing;
    std::vector<BankEvent> events = input;
    std::stable_sort(events.begin(), events.end(), [](const BankEvent& a, const BankEvent& b) { return a.time < b.time; });

    const std::uint32_t nb = hw.banks_per_channel;
    std::vector<BufState> mem(nb), pim(nb);
    auto state = [&](std::uint32_t b, BufferKind k) -> BufState& {
        return (aliased || k == BufferKind::Mem) ? mem[b] : pim[b];
    };
    auto group_of = [&](std::uint32_t b) { return b / hw.banks_per_bankgroup; };

    std::vector<TimingViolation> out;
    auto fail = [&](Cycle at, std::string rule) { out.push_back({at, std::move(rule)}); };

    std::deque<Cycle> act_window;
    std::map<std::uint32_t, Cycle> last_group_act;
    std::optional<Cycle> last_read;
    std::uint32_t last_read_group = 0;
    Cycle bus_free = 0;
    Cycle refresh_end = 0;
    std::uint64_t refreshes = 0;
    // Refresh may trail its due time while open rows drain.
    const Cycle ref_allowance = 2 * (t.tRAS + t.tWR + t.tRP + t.tRCD);

    for (const auto& ev : events) {
        if (ev.time < refresh_end) fail(ev.time, "tRFC");
        switch (ev.type) {
            case BankEvent::Type::Act: {
                std::uint32_t first = nb;
                for (std::uint32_t b = 0; b < nb; ++b) {
                    if (!ev.banks.test(b)) continue;
                    if (first == nb) first = b;
                    auto& s = state(b, ev.buffer);
                    if (s.open) fail(ev.time, "ACT to open row buffer");
                    if (s.pre && ev.time < *s.pre + t.tRP) fail(ev.time, "tRP");
                    if (!aliased) {
                        auto& other = ev.buffer == BufferKind::Mem ? pim[b] : mem[b];
                        if (other.open && other.row == ev.row) fail(ev.time, "same row open in both buffers");
                    }
                    s.open = true;
                    s.row = ev.row;
                    s.act = ev.time;
                }
                if (first == nb) break;
                auto g = group_of(first);
                if (auto it = last_group_act.find(g); it != last_group_act.end() && ev.time < it->second + t.tRRD_L)
                    fail(ev.time, "tRRD_L");
                last_group_act[g] = ev.time;
                if (act_window.size() >= 4 && ev.time < act_window[act_window.size() - 4] + t.tFAW)
                    fail(ev.time, "tFAW");
                act_window.push_back(ev.time);
                if (act_window.size() > 4) act_window.pop_front();
                break;
            }
            case BankEvent::Type::Pre:
                for (std::uint32_t b = 0; b < nb; ++b) {
                    if (!ev.banks.test(b)) continue;
                    auto& s = state(b, ev.buffer);
                    if (!s.open) continue;
                    if (s.act && ev.time < *s.act + t.tRAS) fail(ev.time, "tRAS");
                    if (s.wr_end && ev.time < *s.wr_end + t.tWR) fail(ev.time, "tWR");
                    s.open = false;
                    s.pre = ev.time;
                }
                break;
            case BankEvent::Type::Read:
            case BankEvent::Type::Write:
            case BankEvent::Type::PimCompute:
                for (std::uint32_t b = 0; b < nb; ++b) {
                    if (!ev.banks.test(b)) continue;
                    auto& s = state(b, ev.buffer);
                    if (!s.open || s.row != ev.row) fail(ev.time, "column access to closed or wrong row");
                    else if (ev.time < *s.act + t.tRCD) fail(ev.time, "tRCD");
                    if (ev.type == BankEvent::Type::Write) s.wr_end = ev.time + ev.duration;
                    if (ev.type == BankEvent::Type::Read) {
                        if (last_read) {
                            Cycle gap = group_of(b) == last_read_group ? t.tCCD_L : t.tCCD_S;
                            if (ev.time < *last_read + gap)
                                fail(ev.time, group_of(b) == last_read_group ? "tCCD_L" : "tCCD_S");
                        }
                        last_read = ev.time;
                        last_read_group = group_of(b);
                    }
                }
                if (ev.type != BankEvent::Type::PimCompute) {
                    if (ev.time < bus_free) fail(ev.time, "data bus overlap");
                    bus_free = std::max(bus_free, ev.time + ev.duration);
                }
                break;
            case BankEvent::Type::Readout:
                if (ev.time < bus_free) fail(ev.time, "data bus overlap");
                bus_free = std::max(bus_free, ev.time + ev.duration);
                break;
            case BankEvent::Type::Ref:
                for (std::uint32_t b = 0; b < nb; ++b)
                    for (auto* s : {&mem[b], &pim[b]}) {
                        if (s->open) fail(ev.time, "REF with open row");
                        if (s->pre && ev.time < *s->pre + t.tRP) fail(ev.time, "tRP");
                    }
                ++refreshes;
                if (ev.time > refreshes * t.tREFI + ref_allowance) fail(ev.time, "tREFI");
                refresh_end = ev.time + ev.duration;
                if (ev.duration < t.tRFC) fail(ev.time, "tRFC");
                break;
        }
    }
    // Every refresh that fell due before the end must have happened.
    if (end_time > ref_allowance) {
        std::uint64_t due = (end_time - ref_allowance) / t.tREFI;
        if (refreshes < due) fail(end_time, "tREFI");
    }
    return out;
}

}  // namespace npupim
