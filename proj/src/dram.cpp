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

#include "npupim/dram.hpp"

#include <algorithm>
#include <cmath>

namespace npupim {

namespace {

Cycle stamp_plus(const std::optional<Cycle>& s, Cycle delta) { return s ? *s + delta : 0; }

Cycle transfer_cycles(Bytes bytes, Bytes per_cycle) { return bytes == 0 ? 0 : ceil_div(bytes, per_cycle); }

std::uint32_t first_bit(const std::bitset<64>& m) {
    for (std::uint32_t i = 0; i < 64; ++i)
        if (m.test(i)) return i;
    return 0;
}

}  // namespace

std::string to_string(MemKind kind) {
    switch (kind) {
        case MemKind::ACT: return "ACT";
        case MemKind::RD: return "RD";
        case MemKind::WR: return "WR";
        case MemKind::PRE: return "PRE";
        case MemKind::REF: return "REF";
    }
    return "?";
}

std::string to_string(PimKind kind) {
    switch (kind) {
        case PimKind::GWRITE: return "PIM_GWRITE";
        case PimKind::ACTIVATION: return "PIM_ACTIVATION";
        case PimKind::DOTPRODUCT: return "PIM_DOTPRODUCT";
        case PimKind::RDRESULT: return "PIM_RDRESULT";
        case PimKind::HEADER: return "PIM_HEADER";
        case PimKind::GEMV: return "PIM_GEMV";
        case PimKind::PIM_PRECHARGE: return "PIM_PRECHARGE";
    }
    return "?";
}

std::ostream& operator<<(std::ostream& out, const TraceRecord& rec) {
    out << rec.cycle << ' ' << rec.channel << ' ';
    if (rec.is_pim) {
        const auto& c = rec.pim;
        out << to_string(c.kind);
        switch (c.kind) {
            case PimKind::GWRITE: out << " mask=" << c.bank_mask.to_ullong() << " row=" << c.row; break;
            case PimKind::ACTIVATION: out << " group=" << c.group << " row=" << c.row; break;
            case PimKind::GEMV: out << " k=" << c.k; break;
            case PimKind::HEADER:
                if (c.dims)
                    out << " tiles=" << c.dims->tiles << " gwrites=" << c.dims->gwrites
                        << " results=" << c.dims->result_elements;
                break;
            default: break;
        }
    } else {
        const auto& c = rec.mem;
        out << to_string(c.kind);
        if (c.kind != MemKind::REF) out << " bank=" << c.bank << " row=" << c.row;
        if (c.kind == MemKind::RD || c.kind == MemKind::WR) out << " col=" << c.col << " bytes=" << c.bytes;
    }
    return out;
}

Cycle activation_span(const HardwareConfig& hw) {
    // Four activations per tFAW window; groups beyond four wait for the window.
    const std::uint32_t groups = hw.bankgroups();
    if (groups <= 4) return groups - 1;
    const std::uint32_t full_windows = (groups - 1) / 4;
    return full_windows * hw.timing.tFAW + (groups - 1) % 4;
}

Cycle effective_tile_latency(const HardwareConfig& hw) {
    const Cycle period = hw.timing.tRP + activation_span(hw) + hw.timing.tRCD + hw.pim_tile_latency;
    // Stretched by the share of time the channel spends in refresh.
    const Cycle usable = hw.timing.tREFI > hw.timing.tRFC ? hw.timing.tREFI - hw.timing.tRFC : 1;
    return ceil_div(period * hw.timing.tREFI, usable);
}

Cycle estimate_gemv_duration(const PimDims& dims, const HardwareConfig& hw) {
    const auto& t = hw.timing;
    const Cycle open = t.tFAW + activation_span(hw) + t.tRCD;
    const Cycle readout = transfer_cycles(dims.result_elements * hw.data_width, hw.mem_bytes_per_cycle);
    // Slack covers MEM bursts already on the bus ahead of the readout; the
    // extra tFAW in `open` covers activations issued by MEM just before.
    const Cycle slack = 16;
    return 1 + Cycle{dims.gwrites} * hw.gwrite_latency + open + Cycle{dims.tiles} * hw.pim_tile_latency +
           Cycle{dims.tiles - 1} * (t.tRP + activation_span(hw) + t.tRCD) + readout + t.tRP + slack;
}

ChannelState::ChannelState(const HardwareConfig& hw, std::uint32_t index, bool aliased)
    : hw_(hw), index_(index), aliased_(aliased), banks_(hw.banks_per_channel), next_refresh_due_(hw.timing.tREFI) {
    if (hw.banks_per_channel > 64) throw ConfigError("hardware.banks_per_channel must be <= 64");
    for (std::uint32_t b = 0; b < banks_.size(); ++b) banks_[b].bankgroup_id = b / hw.banks_per_bankgroup;
}

const RowBuffer& ChannelState::buffer(std::uint32_t bank, BufferKind kind) const {
    const auto& b = banks_.at(bank);
    return (aliased_ || kind == BufferKind::Mem) ? b.mem_buffer : b.pim_buffer;
}

RowBuffer& ChannelState::buf(std::uint32_t bank, BufferKind kind) {
    auto& b = banks_.at(bank);
    return (aliased_ || kind == BufferKind::Mem) ? b.mem_buffer : b.pim_buffer;
}

bool ChannelState::mem_precharged() const {
    return std::all_of(banks_.begin(), banks_.end(), [](const BankState& b) { return !b.mem_buffer.open_row; });
}

bool ChannelState::pim_precharged() const {
    for (std::uint32_t b = 0; b < banks_.size(); ++b)
        if (buffer(b, BufferKind::Pim).open_row) return false;
    return true;
}

bool ChannelState::all_precharged() const { return mem_precharged() && pim_precharged(); }

std::bitset<64> ChannelState::group_mask(std::uint32_t group) const {
    std::bitset<64> m;
    for (std::uint32_t b = 0; b < banks_.size(); ++b)
        if (banks_[b].bankgroup_id == group) m.set(b);
    return m;
}

bool ChannelState::act_slot_ok(Cycle t, std::uint32_t group, const ActList* extra) const {
    const Cycle faw = hw_.timing.tFAW;
    const Cycle lo = t >= faw ? t - faw + 1 : 0;
    Cycle near[32];
    std::size_t n = 0;
    auto scan = [&](const auto& list) {
        for (const auto& [a, g] : list) {
            if (a + faw <= t) continue;
            if (a >= t + faw) continue;
            if (g == group && (a > t ? a - t : t - a) < hw_.timing.tRRD_L) return false;
            if (n < 32) near[n++] = a;
        }
        return true;
    };
    if (!scan(acts_)) return false;
    if (extra && !scan(*extra)) return false;
    // Every tFAW-long window containing t must hold fewer than four others.
    for (Cycle s = lo; s <= t; ++s) {
        std::size_t in = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (near[i] >= s && near[i] < s + faw) ++in;
        if (in >= 4) return false;
    }
    return true;
}

Cycle ChannelState::earliest_act(Cycle t, std::uint32_t group, const ActList* extra) const {
    while (!act_slot_ok(t, group, extra)) ++t;
    return t;
}

Cycle ChannelState::earliest_bus(Cycle t, Cycle duration) const {
    if (duration == 0) return t;
    for (const auto& [b, e] : bus_) {
        if (t + duration <= b) break;
        if (t < e) t = e;
    }
    return t;
}

Cycle ChannelState::earliest_row_free(std::uint32_t bank, std::uint32_t row, BufferKind opening, Cycle t) const {
    if (aliased_) return t;
    const auto& b = banks_[bank];
    const auto& other = opening == BufferKind::Mem ? b.pim_buffer : b.mem_buffer;
    if (other.open_row && *other.open_row == row) return kBlocked;
    if (opening == BufferKind::Mem)
        for (const auto& [r, until] : pim_row_spans_)
            if (r == row && until > t) t = until;
    return t;
}

Cycle ChannelState::common_floor(Cycle now) const {
    Cycle t = std::max(now, refresh_busy_until_);
    if (last_issue_) t = std::max(t, *last_issue_ + 1);
    return t;
}

Cycle ChannelState::act_ready(std::uint32_t bank, BufferKind kind, Cycle t) const {
    const auto& rb = buffer(bank, kind);
    if (rb.open_row) return kBlocked;
    return std::max(t, stamp_plus(rb.last_pre, hw_.timing.tRP));
}

Cycle ChannelState::pre_ready(std::uint32_t bank, BufferKind kind, Cycle t) const {
    const auto& rb = buffer(bank, kind);
    if (!rb.open_row) return t;
    t = std::max(t, stamp_plus(rb.last_act, hw_.timing.tRAS));
    t = std::max(t, stamp_plus(rb.last_wr, hw_.timing.tWR));
    return t;
}

Cycle ChannelState::check_timing(const MemCommand& cmd, Cycle now) const {
    if (cmd.bank >= banks_.size() && cmd.kind != MemKind::REF) throw std::out_of_range("bank index");
    Cycle t = common_floor(now);
    const auto& timing = hw_.timing;
    switch (cmd.kind) {
        case MemKind::ACT: {
            if (aliased_ && header_) return kBlocked;
            t = act_ready(cmd.bank, BufferKind::Mem, t);
            if (t == kBlocked) return kBlocked;
            t = earliest_row_free(cmd.bank, cmd.row, BufferKind::Mem, t);
            if (t == kBlocked) return kBlocked;
            return earliest_act(t, banks_[cmd.bank].bankgroup_id);
        }
        case MemKind::RD:
        case MemKind::WR: {
            const auto& rb = buffer(cmd.bank, BufferKind::Mem);
            if (!rb.open_row || *rb.open_row != cmd.row) return kBlocked;
            if (aliased_ && header_) return kBlocked;
            t = std::max(t, stamp_plus(rb.last_act, timing.tRCD));
            if (cmd.kind == MemKind::RD && last_read_) {
                const Cycle gap = banks_[cmd.bank].bankgroup_id == last_read_group_ ? timing.tCCD_L : timing.tCCD_S;
                t = std::max(t, *last_read_ + gap);
            }
            const Cycle dur = transfer_cycles(cmd.bytes, hw_.mem_bytes_per_cycle);
            // The command slot and the burst start together.
            for (;;) {
                Cycle b = earliest_bus(t, dur);
                if (b == t) break;
                t = b;
            }
            return t;
        }
        case MemKind::PRE:
            if (aliased_ && header_) return kBlocked;
            return pre_ready(cmd.bank, BufferKind::Mem, t);
        case MemKind::REF: {
            if (!all_precharged() || header_) return kBlocked;
            for (std::uint32_t b = 0; b < banks_.size(); ++b) {
                t = std::max(t, stamp_plus(buffer(b, BufferKind::Mem).last_pre, timing.tRP));
                t = std::max(t, stamp_plus(buffer(b, BufferKind::Pim).last_pre, timing.tRP));
            }
            t = std::max(t, pim_busy_until_);
            if (!bus_.empty()) t = std::max(t, bus_.back().second);
            if (!acts_.empty()) t = std::max(t, acts_.back().first + 1);
            return t;
        }
    }
    return t;
}

ChannelState::GemvPlan ChannelState::plan_gemv(std::uint32_t k, Cycle start) const {
    const auto& timing = hw_.timing;
    const std::uint32_t groups = hw_.bankgroups();
    std::bitset<64> all;
    for (std::uint32_t b = 0; b < banks_.size(); ++b) all.set(b);
    const std::uint32_t base = *buffer(0, BufferKind::Pim).open_row;

    GemvPlan plan;
    Cycle compute = start;
    Cycle last_act = 0;
    for (std::uint32_t b = 0; b < banks_.size(); ++b)
        last_act = std::max(last_act, stamp_plus(buffer(b, BufferKind::Pim).last_act, 0));

    // Planned activations join the window bookkeeping of later groups.
    ActList planned;
    for (std::uint32_t i = 0; i < k; ++i) {
        if (i > 0) {
            Cycle pre = std::max(compute, last_act + timing.tRAS);
            BankEvent p{BankEvent::Type::Pre, pre, 0, BufferKind::Pim, all, base + i - 1};
            plan.events.push_back(p);
            Cycle ready = pre + timing.tRP;
            Cycle latest = 0;
            for (std::uint32_t g = 0; g < groups; ++g) {
                Cycle a = earliest_act(ready, g, &planned);
                BankEvent ev{BankEvent::Type::Act, a, 0, BufferKind::Pim, group_mask(g), base + i};
                plan.events.push_back(ev);
                planned.push_back({a, g});
                latest = std::max(latest, a);
                ready = a;
            }
            last_act = latest;
            compute = latest + timing.tRCD;
        }
        plan.events.push_back({BankEvent::Type::PimCompute, compute, hw_.pim_tile_latency, BufferKind::Pim, all, base + i});
        compute += hw_.pim_tile_latency;
    }
    plan.compute_end = compute;
    const Cycle dur = transfer_cycles(header_ ? header_->result_elements * hw_.data_width : 0, hw_.mem_bytes_per_cycle);
    Cycle r = earliest_bus(compute, dur);
    if (dur > 0) plan.events.push_back({BankEvent::Type::Readout, r, dur, BufferKind::Pim, {}, 0});
    plan.done = r + dur;
    return plan;
}

Cycle ChannelState::check_timing(const PimCommand& cmd, Cycle now) const {
    Cycle t = std::max(common_floor(now), pim_busy_until_);
    const auto& timing = hw_.timing;
    switch (cmd.kind) {
        case PimKind::HEADER:
            if (!cmd.dims || cmd.dims->tiles == 0) return kBlocked;
            if (aliased_ && !mem_precharged()) return kBlocked;
            return t;
        case PimKind::GWRITE:
            return t;
        case PimKind::ACTIVATION: {
            if (cmd.group >= hw_.bankgroups()) throw std::out_of_range("bankgroup index");
            for (std::uint32_t b = 0; b < banks_.size(); ++b) {
                if (banks_[b].bankgroup_id != cmd.group) continue;
                t = act_ready(b, BufferKind::Pim, t);
                if (t == kBlocked) return kBlocked;
                t = earliest_row_free(b, cmd.row, BufferKind::Pim, t);
                if (t == kBlocked) return kBlocked;
            }
            return earliest_act(t, cmd.group);
        }
        case PimKind::GEMV:
        case PimKind::DOTPRODUCT: {
            if (cmd.kind == PimKind::GEMV && (!header_ || cmd.k == 0)) return kBlocked;
            if (gbuf_rows_ == 0) return kBlocked;
            const auto& first = buffer(0, BufferKind::Pim);
            if (!first.open_row) return kBlocked;
            for (std::uint32_t b = 0; b < banks_.size(); ++b) {
                const auto& rb = buffer(b, BufferKind::Pim);
                if (!rb.open_row || *rb.open_row != *first.open_row) return kBlocked;
                t = std::max(t, stamp_plus(rb.last_act, timing.tRCD));
            }
            if (!aliased_ && cmd.kind == PimKind::GEMV)
                for (std::uint32_t i = 1; i < cmd.k; ++i)
                    for (const auto& b : banks_)
                        if (b.mem_buffer.open_row && *b.mem_buffer.open_row == *first.open_row + i) return kBlocked;
            return t;
        }
        case PimKind::RDRESULT: {
            Cycle dur = transfer_cycles(Bytes{banks_.size()} * hw_.data_width, hw_.mem_bytes_per_cycle);
            return earliest_bus(t, dur);
        }
        case PimKind::PIM_PRECHARGE:
            for (std::uint32_t b = 0; b < banks_.size(); ++b) t = pre_ready(b, BufferKind::Pim, t);
            return t;
    }
    return t;
}

void ChannelState::record(const BankEvent& ev) {
    if (record_events_) events_.push_back(ev);
}

void ChannelState::note_act(Cycle t, std::uint32_t group) {
    auto it = std::upper_bound(acts_.begin(), acts_.end(), std::make_pair(t, group));
    acts_.insert(it, {t, group});
}

void ChannelState::reserve_bus(Cycle t, Cycle duration) {
    if (duration == 0) return;
    auto it = std::upper_bound(bus_.begin(), bus_.end(), std::make_pair(t, t + duration));
    bus_.insert(it, {t, t + duration});
}

void ChannelState::issue(Cycle now) { last_issue_ = now; }

Cycle ChannelState::apply(const MemCommand& cmd, Cycle now) {
    Cycle legal = check_timing(cmd, now);
    if (legal != now)
        throw ProtocolError("channel " + std::to_string(index_) + ": " + to_string(cmd.kind) + " illegal at cycle " +
                            std::to_string(now) + (legal == kBlocked ? " (blocked)" : ", earliest " + std::to_string(legal)));
    issue(now);
    ++counts_.mem_slots;
    if (record_events_) trace_.push_back({now, index_, false, cmd, {}});
    std::bitset<64> mask;
    if (cmd.kind != MemKind::REF) mask.set(cmd.bank);
    auto& rb = buf(cmd.kind == MemKind::REF ? 0 : cmd.bank, BufferKind::Mem);
    switch (cmd.kind) {
        case MemKind::ACT:
            rb.open_row = cmd.row;
            rb.last_act = now;
            note_act(now, banks_[cmd.bank].bankgroup_id);
            ++counts_.act;
            record({BankEvent::Type::Act, now, 0, BufferKind::Mem, mask, cmd.row});
            return now + 1;
        case MemKind::RD:
        case MemKind::WR: {
            const Cycle dur = transfer_cycles(cmd.bytes, hw_.mem_bytes_per_cycle);
            reserve_bus(now, dur);
            counts_.mem_bytes += cmd.bytes;
            if (cmd.kind == MemKind::RD) {
                rb.last_rd = now;
                last_read_ = now;
                last_read_group_ = banks_[cmd.bank].bankgroup_id;
                ++counts_.rd;
                record({BankEvent::Type::Read, now, dur, BufferKind::Mem, mask, cmd.row});
            } else {
                rb.last_wr = now + dur;
                ++counts_.wr;
                record({BankEvent::Type::Write, now, dur, BufferKind::Mem, mask, cmd.row});
            }
            return now + dur;
        }
        case MemKind::PRE:
            if (rb.open_row) {
                rb.open_row.reset();
                rb.last_pre = now;
                ++counts_.pre;
                record({BankEvent::Type::Pre, now, 0, BufferKind::Mem, mask, 0});
            }
            return now + 1;
        case MemKind::REF:
            refresh_busy_until_ = now + hw_.timing.tRFC;
            next_refresh_due_ += hw_.timing.tREFI;
            ++counts_.ref;
            record({BankEvent::Type::Ref, now, hw_.timing.tRFC, BufferKind::Mem, {}, 0});
            return refresh_busy_until_;
    }
    return now + 1;
}

Cycle ChannelState::apply(const PimCommand& cmd, Cycle now) {
    if (cmd.kind == PimKind::GEMV && !header_) throw ProtocolError("PIM_GEMV without PIM_HEADER");
    if (cmd.kind == PimKind::GEMV && gbuf_rows_ == 0) throw ProtocolError("PIM_GEMV with empty global buffer");
    Cycle legal = check_timing(cmd, now);
    if (legal != now)
        throw ProtocolError("channel " + std::to_string(index_) + ": " + to_string(cmd.kind) + " illegal at cycle " +
                            std::to_string(now) + (legal == kBlocked ? " (blocked)" : ", earliest " + std::to_string(legal)));
    issue(now);
    ++counts_.pim_slots;
    if (record_events_) trace_.push_back({now, index_, true, {}, cmd});
    Cycle done = now + 1;
    switch (cmd.kind) {
        case PimKind::HEADER:
            header_ = cmd.dims;
            // A HEADER without GWRITEs continues on the loaded vector.
            if (cmd.dims->gwrites > 0) gbuf_rows_ = 0;
            ++counts_.headers;
            break;
        case PimKind::GWRITE:
            ++gbuf_rows_;
            ++counts_.gwrite;
            done = now + hw_.gwrite_latency;
            break;
        case PimKind::ACTIVATION: {
            auto mask = group_mask(cmd.group);
            for (std::uint32_t b = 0; b < banks_.size(); ++b)
                if (mask.test(b)) {
                    auto& rb = buf(b, BufferKind::Pim);
                    rb.open_row = cmd.row;
                    rb.last_act = now;
                }
            note_act(now, cmd.group);
            ++counts_.pim_act;
            record({BankEvent::Type::Act, now, 0, BufferKind::Pim, mask, cmd.row});
            break;
        }
        case PimKind::DOTPRODUCT: {
            std::bitset<64> all;
            for (std::uint32_t b = 0; b < banks_.size(); ++b) all.set(b);
            record({BankEvent::Type::PimCompute, now, hw_.pim_tile_latency, BufferKind::Pim, all,
                    *buffer(0, BufferKind::Pim).open_row});
            ++counts_.pim_tiles;
            done = now + hw_.pim_tile_latency;
            break;
        }
        case PimKind::RDRESULT: {
            Bytes bytes = Bytes{banks_.size()} * hw_.data_width;
            Cycle dur = transfer_cycles(bytes, hw_.mem_bytes_per_cycle);
            reserve_bus(now, dur);
            counts_.readout_bytes += bytes;
            record({BankEvent::Type::Readout, now, dur, BufferKind::Pim, {}, 0});
            done = now + dur;
            break;
        }
        case PimKind::GEMV: {
            auto plan = plan_gemv(cmd.k, now);
            if (plan.compute_end > next_refresh_due_)
                throw ProtocolError("PIM_GEMV overlaps refresh due at cycle " + std::to_string(next_refresh_due_));
            const std::uint32_t base = *buffer(0, BufferKind::Pim).open_row;
            for (const auto& ev : plan.events) {
                record(ev);
                if (ev.type == BankEvent::Type::Act) {
                    note_act(ev.time, banks_[first_bit(ev.banks)].bankgroup_id);
                    for (std::uint32_t b = 0; b < banks_.size(); ++b)
                        if (ev.banks.test(b)) {
                            auto& rb = buf(b, BufferKind::Pim);
                            rb.open_row = ev.row;
                            rb.last_act = ev.time;
                        }
                } else if (ev.type == BankEvent::Type::Pre) {
                    for (std::uint32_t b = 0; b < banks_.size(); ++b) buf(b, BufferKind::Pim).last_pre = ev.time;
                } else if (ev.type == BankEvent::Type::Readout) {
                    reserve_bus(ev.time, ev.duration);
                }
            }
            for (std::uint32_t i = 0; i < cmd.k; ++i) pim_row_spans_.push_back({base + i, plan.compute_end});
            counts_.pim_tiles += cmd.k;
            counts_.pim_act += Cycle{cmd.k - 1} * hw_.bankgroups();
            if (header_) counts_.readout_bytes += header_->result_elements * hw_.data_width;
            done = plan.done;
            break;
        }
        case PimKind::PIM_PRECHARGE: {
            std::bitset<64> mask;
            for (std::uint32_t b = 0; b < banks_.size(); ++b) {
                auto& rb = buf(b, BufferKind::Pim);
                if (rb.open_row) {
                    rb.open_row.reset();
                    rb.last_pre = now;
                    mask.set(b);
                }
            }
            if (mask.any()) {
                ++counts_.pim_pre;
                record({BankEvent::Type::Pre, now, 0, BufferKind::Pim, mask, 0});
            }
            header_.reset();
            std::erase_if(pim_row_spans_, [&](const auto& s) { return s.second <= now; });
            break;
        }
    }
    pim_busy_until_ = done;
    return done;
}

void ChannelState::compact(Cycle now) {
    const Cycle keep = 2 * std::max(hw_.timing.tFAW, hw_.timing.tRRD_L);
    while (!acts_.empty() && acts_.front().first + keep < now) acts_.pop_front();
    while (!bus_.empty() && bus_.front().second < now) bus_.pop_front();
    std::erase_if(pim_row_spans_, [&](const auto& s) { return s.second <= now; });
}

void ChannelState::clear_log() {
    events_.clear();
    trace_.clear();
}

}  // namespace npupim
