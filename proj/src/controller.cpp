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

#include "npupim/controller.hpp"

#include <algorithm>

namespace npupim {

DecodedAddress decode_address(const HardwareConfig& hw, std::uint64_t address) {
    if (address >= hw.channel_capacity * hw.hbm_channels)
        throw std::out_of_range("address " + std::to_string(address) + " beyond memory capacity");
    const std::uint64_t page = address / hw.page_size;
    DecodedAddress d;
    d.col = static_cast<std::uint32_t>(address % hw.page_size);
    d.channel = static_cast<std::uint32_t>(page % hw.hbm_channels);
    const std::uint64_t rest = page / hw.hbm_channels;
    d.bank = static_cast<std::uint32_t>(rest % hw.banks_per_channel);
    d.row = static_cast<std::uint32_t>(rest / hw.banks_per_channel);
    return d;
}

ChannelController::ChannelController(const HardwareConfig& hw, std::uint32_t index, bool aliased)
    : ch_(hw, index, aliased) {}

bool ChannelController::enqueue(const MemCommand& cmd, Cycle now) {
    if (cmd.kind == MemKind::REF) throw std::invalid_argument("REF is scheduled by the controller");
    if (cmd.bank >= ch_.bank_count()) throw std::out_of_range("bank index");
    if (mem_q_.size() >= ch_.hw().queue_depth) return false;
    mem_q_.push_back({cmd, now});
    return true;
}

bool ChannelController::enqueue(const PimCommand& cmd, Cycle now) {
    if (pim_q_.size() >= ch_.hw().queue_depth) return false;
    pim_q_.push_back({cmd, now});
    return true;
}

RefreshDecision ChannelController::refresh_guard(const PimDims& dims, Cycle now) const {
    const Cycle est = estimate_gemv_duration(dims, ch_.hw());
    if (est > ch_.hw().timing.tREFI)
        throw SplitRequiredError("PIM block estimate " + std::to_string(est) + " exceeds tREFI; split the GEMV");
    return now + est <= ch_.next_refresh_due() ? RefreshDecision::Admit : RefreshDecision::Defer;
}

std::vector<MemCommand> ChannelController::open_row_for(std::uint64_t address, bool write, Bytes bytes, Cycle now) {
    auto d = decode_address(ch_.hw(), address);
    if (d.channel != ch_.index())
        throw std::invalid_argument("address maps to channel " + std::to_string(d.channel));
    std::vector<MemCommand> seq;
    const auto& rb = ch_.buffer(d.bank, BufferKind::Mem);
    if (!rb.open_row || *rb.open_row != d.row) {
        if (rb.open_row) seq.push_back({MemKind::PRE, d.channel, d.bank, *rb.open_row, 0, 0});
        seq.push_back({MemKind::ACT, d.channel, d.bank, d.row, 0, 0});
    }
    seq.push_back({write ? MemKind::WR : MemKind::RD, d.channel, d.bank, d.row, d.col, bytes});
    for (const auto& c : seq)
        if (!enqueue(c, now)) throw CapacityError("MEM queue full");
    return seq;
}

std::optional<MemCommand> ChannelController::next_step(const MemCommand& want) const {
    const auto& rb = ch_.buffer(want.bank, BufferKind::Mem);
    MemCommand pre{MemKind::PRE, want.channel, want.bank, rb.open_row.value_or(0), 0, 0};
    MemCommand act{MemKind::ACT, want.channel, want.bank, want.row, 0, 0};
    switch (want.kind) {
        case MemKind::RD:
        case MemKind::WR:
            if (rb.open_row && *rb.open_row == want.row) return want;
            return rb.open_row ? pre : act;
        case MemKind::ACT:
            if (rb.open_row && *rb.open_row == want.row) return std::nullopt;
            return rb.open_row ? pre : act;
        case MemKind::PRE:
            if (!rb.open_row) return std::nullopt;
            return want;
        case MemKind::REF: return std::nullopt;
    }
    return std::nullopt;
}

bool ChannelController::row_wanted(std::uint32_t bank, std::uint32_t row) const {
    for (const auto& e : mem_q_)
        if ((e.cmd.kind == MemKind::RD || e.cmd.kind == MemKind::WR) && e.cmd.bank == bank && e.cmd.row == row)
            return true;
    return false;
}

std::optional<PimCommand> ChannelController::pim_ready(Cycle now) const {
    if (pim_q_.empty()) return std::nullopt;
    const auto& head = pim_q_.front().cmd;
    if (head.kind == PimKind::HEADER) {
        if (refresh_pending(now)) return std::nullopt;
        if (head.dims && refresh_guard(*head.dims, now) == RefreshDecision::Defer) return std::nullopt;
    }
    // Outside a HEADER block a due refresh goes before the next tile starts.
    if (refresh_pending(now) && !ch_.header() && !pim_rows_open_ &&
        (head.kind == PimKind::ACTIVATION || head.kind == PimKind::GWRITE))
        return std::nullopt;
    if (ch_.check_timing(head, now) != now) return std::nullopt;
    return head;
}

std::optional<MemCommand> ChannelController::pick_maintenance(Cycle now) const {
    const std::uint32_t idx = ch_.index();
    auto close_bank = [&](std::uint32_t b) -> std::optional<MemCommand> {
        MemCommand pre{MemKind::PRE, idx, b, *ch_.buffer(b, BufferKind::Mem).open_row, 0, 0};
        if (ch_.check_timing(pre, now) == now) return pre;
        return std::nullopt;
    };
    if (refresh_pending(now) && !ch_.header() && !pim_rows_open_) {
        bool all_closed = true;
        for (std::uint32_t b = 0; b < ch_.bank_count(); ++b)
            if (ch_.buffer(b, BufferKind::Mem).open_row) {
                all_closed = false;
                if (auto c = close_bank(b)) return c;
            }
        if (all_closed) {
            MemCommand ref{MemKind::REF, idx, 0, 0, 0, 0};
            if (ch_.check_timing(ref, now) == now) return ref;
        }
        return std::nullopt;
    }
    if (pim_q_.empty()) return std::nullopt;
    const auto& head = pim_q_.front().cmd;
    if (ch_.aliased()) {
        // Mode switch: the shared buffers must be closed before PIM uses them.
        // A HEADER closes every bank; a bare ACTIVATION closes its group,
        // which can only hold MEM rows at that point.
        const bool whole = head.kind == PimKind::HEADER && !refresh_pending(now);
        const bool group = head.kind == PimKind::ACTIVATION && (pim_rows_open_ || !refresh_pending(now));
        if (whole || group)
            for (std::uint32_t b = 0; b < ch_.bank_count(); ++b)
                if (ch_.buffer(b, BufferKind::Mem).open_row && (whole || ch_.bank(b).bankgroup_id == head.group))
                    if (auto c = close_bank(b)) return c;
        return std::nullopt;
    }
    // Same-row conflicts: close the MEM row that blocks the PIM head.
    if (ch_.check_timing(head, now) != kBlocked) return std::nullopt;
    for (std::uint32_t b = 0; b < ch_.bank_count(); ++b) {
        const auto& rb = ch_.buffer(b, BufferKind::Mem);
        if (!rb.open_row) continue;
        bool conflict = false;
        if (head.kind == PimKind::ACTIVATION)
            conflict = ch_.bank(b).bankgroup_id == head.group && *rb.open_row == head.row;
        else if (head.kind == PimKind::GEMV) {
            const auto& pb = ch_.buffer(0, BufferKind::Pim);
            conflict = pb.open_row && *rb.open_row > *pb.open_row && *rb.open_row < *pb.open_row + head.k;
        }
        if (conflict)
            if (auto c = close_bank(b)) return c;
    }
    return std::nullopt;
}

std::optional<MemCommand> ChannelController::pick_mem(Cycle now, std::size_t* index, bool* completes) const {
    if (refresh_pending(now)) return std::nullopt;
    if (ch_.aliased()) {
        const auto head = pim_q_.empty() ? std::optional<PimKind>() : pim_q_.front().cmd.kind;
        if (ch_.header() || pim_rows_open_ || head == PimKind::HEADER || head == PimKind::ACTIVATION)
            return std::nullopt;
    }
    // Row hits first.
    for (std::size_t i = 0; i < mem_q_.size(); ++i) {
        const auto& c = mem_q_[i].cmd;
        if (c.kind != MemKind::RD && c.kind != MemKind::WR) continue;
        const auto& rb = ch_.buffer(c.bank, BufferKind::Mem);
        if (rb.open_row && *rb.open_row == c.row && ch_.check_timing(c, now) == now) {
            *index = i;
            *completes = true;
            return c;
        }
    }
    // Then the oldest entry of each bank may open or close a row.
    std::uint64_t seen = 0;
    for (std::size_t i = 0; i < mem_q_.size(); ++i) {
        const auto& c = mem_q_[i].cmd;
        if (seen & (std::uint64_t{1} << c.bank)) continue;
        seen |= std::uint64_t{1} << c.bank;
        auto step = next_step(c);
        if (!step || step->kind == MemKind::RD || step->kind == MemKind::WR) continue;
        if (step->kind == MemKind::PRE && c.kind != MemKind::PRE && row_wanted(c.bank, step->row)) continue;
        if (ch_.check_timing(*step, now) == now) {
            *index = i;
            *completes = step->kind == c.kind;
            return step;
        }
    }
    return std::nullopt;
}

void ChannelController::issue_maintenance(const MemCommand& cmd, Cycle now) {
    Cycle done = ch_.apply(cmd, now);
    if (cmd.kind == MemKind::REF) ++stats_.ref_issued;
    else ++stats_.mem_issued;
    ++stats_.bus_slots;
    last_completion_ = std::max(last_completion_, done);
    last_issue_ = now;
}

void ChannelController::catch_up_refresh(Cycle now) {
    Cycle t = std::max(last_issue_ ? *last_issue_ + 1 : 0, ch_.next_refresh_due());
    while (t < now) {
        if (!refresh_pending(t)) {
            t = ch_.next_refresh_due();
            continue;
        }
        if (auto m = pick_maintenance(t)) issue_maintenance(*m, t);
        ++t;
    }
}

std::optional<IssuedCommand> ChannelController::tick(Cycle now) {
    if (++since_compact_ >= 256) {
        ch_.compact(now);
        since_compact_ = 0;
    }
    if (now > ch_.next_refresh_due() && (!last_issue_ || *last_issue_ < ch_.next_refresh_due()))
        catch_up_refresh(now);
    std::erase_if(mem_q_, [&](const Entry<MemCommand>& e) { return !next_step(e.cmd); });

    if (!pim_q_.empty() && pim_q_.front().cmd.kind == PimKind::HEADER && pim_q_.front().cmd.dims) {
        if (refresh_guard(*pim_q_.front().cmd.dims, now) == RefreshDecision::Defer && !refresh_pending(now) &&
            pim_q_.front().enqueued != kBlocked) {
            ++stats_.deferred_headers;
            pim_q_.front().enqueued = kBlocked;  // count each deferral once
        }
    }

    IssuedCommand out;
    out.cycle = now;
    if (auto pim = pim_ready(now)) {
        Cycle done = ch_.apply(*pim, now);
        last_issue_ = now;
        if (pim->kind == PimKind::ACTIVATION || pim->kind == PimKind::GEMV) pim_rows_open_ = true;
        if (pim->kind == PimKind::PIM_PRECHARGE) pim_rows_open_ = false;
        auto enq = pim_q_.front().enqueued;
        stats_.pim_queue_delay += enq == kBlocked ? 0 : now - enq;
        pim_q_.pop_front();
        ++stats_.pim_issued;
        ++stats_.bus_slots;
        last_completion_ = std::max(last_completion_, done);
        out.is_pim = true;
        out.pim = *pim;
        return out;
    }
    if (auto m = pick_maintenance(now)) {
        issue_maintenance(*m, now);
        out.mem = *m;
        return out;
    }
    std::size_t index = 0;
    bool completes = false;
    if (auto m = pick_mem(now, &index, &completes)) {
        Cycle done = ch_.apply(*m, now);
        last_issue_ = now;
        if (completes) {
            stats_.mem_queue_delay += now - mem_q_[index].enqueued;
            mem_q_.erase(mem_q_.begin() + static_cast<std::ptrdiff_t>(index));
        }
        ++stats_.mem_issued;
        ++stats_.bus_slots;
        last_completion_ = std::max(last_completion_, done);
        out.mem = *m;
        return out;
    }
    return std::nullopt;
}

Cycle ChannelController::next_wake(Cycle now) const {
    Cycle best = kBlocked;
    auto consider = [&](Cycle t) {
        if (t == kBlocked) return;
        best = std::min(best, std::max(t, now + 1));
    };
    if (ch_.next_refresh_due() > now) consider(ch_.next_refresh_due());
    consider(ch_.refresh_busy_until());
    if (!pim_q_.empty()) {
        const auto& head = pim_q_.front().cmd;
        Cycle t = ch_.check_timing(head, now + 1);
        if (head.kind == PimKind::HEADER && head.dims && t != kBlocked &&
            refresh_guard(*head.dims, t) == RefreshDecision::Defer)
            t = ch_.next_refresh_due();
        consider(t);
    }
    for (std::uint32_t b = 0; b < ch_.bank_count(); ++b)
        if (const auto& rb = ch_.buffer(b, BufferKind::Mem); rb.open_row)
            consider(ch_.check_timing(MemCommand{MemKind::PRE, ch_.index(), b, *rb.open_row, 0, 0}, now + 1));
    if (refresh_pending(now)) consider(ch_.check_timing(MemCommand{MemKind::REF, ch_.index(), 0, 0, 0, 0}, now + 1));
    for (const auto& e : mem_q_)
        if (auto step = next_step(e.cmd)) consider(ch_.check_timing(*step, now + 1));
    return best;
}

Cycle ChannelController::run_until_idle(Cycle start) {
    Cycle t = start;
    Cycle last_progress = start;
    while (!idle()) {
        if (auto c = tick(t)) {
            // Refresh alone is not progress on the queued work.
            if (c->is_pim || c->mem.kind != MemKind::REF) last_progress = t;
            ++t;
            continue;
        }
        Cycle w = next_wake(t);
        if (w == kBlocked || w - last_progress > deadlock_epoch())
            throw DeadlockError("channel " + std::to_string(ch_.index()) + " made no progress since cycle " +
                                std::to_string(last_progress));
        t = w;
    }
    return std::max(last_completion_, t);
}

}  // namespace npupim
