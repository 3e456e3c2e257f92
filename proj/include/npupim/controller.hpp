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

#pragma once

#include <deque>
#include <optional>
#include <variant>
#include <vector>

#include "npupim/dram.hpp"

namespace npupim {

/// A PIM block whose estimated duration exceeds one refresh interval; the
/// issuer must split it into smaller GEMVs.
class SplitRequiredError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct DecodedAddress {
    std::uint32_t channel = 0, bank = 0, row = 0, col = 0;
};

/// channel <- low bits of the page index, then bank, then row.
DecodedAddress decode_address(const HardwareConfig& hw, std::uint64_t address);

enum class RefreshDecision { Admit, Defer };

struct ControllerStats {
    std::uint64_t mem_issued = 0, pim_issued = 0, ref_issued = 0;
    std::uint64_t bus_slots = 0;
    std::uint64_t mem_queue_delay = 0, pim_queue_delay = 0;
    std::uint64_t deferred_headers = 0;

    double avg_mem_delay() const { return mem_issued ? double(mem_queue_delay) / mem_issued : 0.0; }
    double avg_pim_delay() const { return pim_issued ? double(pim_queue_delay) / pim_issued : 0.0; }
};

struct IssuedCommand {
    Cycle cycle = 0;
    bool is_pim = false;
    MemCommand mem;
    PimCommand pim;
};

/// Per-channel command scheduler: PIM first, FR-FCFS among MEM commands,
/// refresh scheduled around HEADER-announced PIM blocks.
class ChannelController {
  public:
    ChannelController(const HardwareConfig& hw, std::uint32_t index, bool aliased = false);

    /// False when the class queue is full (backpressure); nothing is queued.
    bool enqueue(const MemCommand& cmd, Cycle now = 0);
    bool enqueue(const PimCommand& cmd, Cycle now = 0);

    /// Issues at most one command at `now`.
    std::optional<IssuedCommand> tick(Cycle now);

    /// Earliest cycle > now at which tick could issue; kBlocked if never.
    Cycle next_wake(Cycle now) const;

    RefreshDecision refresh_guard(const PimDims& dims, Cycle now) const;

    /// Commands needed to access `address` given the current row state,
    /// appended to the MEM queue.
    std::vector<MemCommand> open_row_for(std::uint64_t address, bool write, Bytes bytes, Cycle now = 0);

    /// Ticks with event skipping until both queues drain. Returns the cycle
    /// after the last completion. Throws DeadlockError after a full epoch
    /// without progress.
    Cycle run_until_idle(Cycle start);

    bool idle() const { return mem_q_.empty() && pim_q_.empty(); }
    std::size_t mem_queue_size() const { return mem_q_.size(); }
    std::size_t pim_queue_size() const { return pim_q_.size(); }
    ChannelState& channel() { return ch_; }
    const ChannelState& channel() const { return ch_; }
    const ControllerStats& stats() const { return stats_; }
    Cycle last_completion() const { return last_completion_; }
    Cycle deadlock_epoch() const { return 10 * ch_.hw().timing.tREFI; }

  private:
    template <class C>
    struct Entry {
        C cmd;
        Cycle enqueued = 0;
    };

    /// Next command that moves a queued MEM entry forward, or nullopt when
    /// the entry is already satisfied.
    std::optional<MemCommand> next_step(const MemCommand& want) const;
    bool refresh_pending(Cycle now) const { return now >= ch_.next_refresh_due(); }
    bool row_wanted(std::uint32_t bank, std::uint32_t row) const;
    std::optional<MemCommand> pick_mem(Cycle now, std::size_t* index, bool* completes) const;
    std::optional<MemCommand> pick_maintenance(Cycle now) const;
    std::optional<PimCommand> pim_ready(Cycle now) const;
    /// Issues the refreshes that fell due while nothing was ticking, up to `now`.
    void catch_up_refresh(Cycle now);
    void issue_maintenance(const MemCommand& cmd, Cycle now);

    ChannelState ch_;
    std::deque<Entry<MemCommand>> mem_q_;
    std::deque<Entry<PimCommand>> pim_q_;
    ControllerStats stats_;
    Cycle last_completion_ = 0;
    /// PIM rows opened by ACTIVATION or GEMV and not yet precharged. Refresh
    /// waits for them; with aliased buffers MEM traffic does too.
    bool pim_rows_open_ = false;
    std::optional<Cycle> last_issue_;
    /// Commands since the channel history was last trimmed.
    std::uint32_t since_compact_ = 0;
};

}  // namespace npupim
