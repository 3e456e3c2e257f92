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

#include <bitset>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "npupim/config.hpp"

namespace npupim {

enum class BufferKind { Mem, Pim };

struct RowBuffer {
    std::optional<std::uint32_t> open_row;
    std::optional<Cycle> last_act;
    std::optional<Cycle> last_pre;
    std::optional<Cycle> last_rd;
    /// End of the last write burst; PRE waits tWR after it.
    std::optional<Cycle> last_wr;

    bool operator==(const RowBuffer&) const = default;
};

struct BankState {
    RowBuffer mem_buffer;
    RowBuffer pim_buffer;
    std::uint32_t bankgroup_id = 0;
};

enum class MemKind { ACT, RD, WR, PRE, REF };
enum class PimKind { GWRITE, ACTIVATION, DOTPRODUCT, RDRESULT, HEADER, GEMV, PIM_PRECHARGE };

std::string to_string(MemKind kind);
std::string to_string(PimKind kind);

struct MemCommand {
    MemKind kind = MemKind::RD;
    std::uint32_t channel = 0;
    std::uint32_t bank = 0;
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    Bytes bytes = 0;
};

/// Shape announced by HEADER for the GEMV that follows.
struct PimDims {
    /// Dot-product tiles (activated row sets) the GEMV walks through.
    std::uint32_t tiles = 1;
    /// Input vector rows loaded by GWRITE.
    std::uint32_t gwrites = 1;
    /// Elements streamed back to the host after the last tile.
    std::uint64_t result_elements = 0;
};

struct PimCommand {
    PimKind kind = PimKind::HEADER;
    std::uint32_t channel = 0;
    /// GWRITE source bank only; every other PIM command is broadcast.
    std::bitset<64> bank_mask;
    std::uint32_t row = 0;
    /// ACTIVATION target bankgroup.
    std::uint32_t group = 0;
    /// GEMV tile count.
    std::uint32_t k = 0;
    std::optional<PimDims> dims;
};

/// Primitive bank-level event emitted for every accepted command. Composite
/// PIM commands expand into several events. The timing checker replays these.
struct BankEvent {
    enum class Type { Act, Pre, Read, Write, PimCompute, Readout, Ref };
    Type type = Type::Act;
    Cycle time = 0;
    /// Busy span for Read/Write/Readout (data bus) and PimCompute.
    Cycle duration = 0;
    BufferKind buffer = BufferKind::Mem;
    std::bitset<64> banks;
    std::uint32_t row = 0;
};

/// One line per accepted command.
struct TraceRecord {
    Cycle cycle = 0;
    std::uint32_t channel = 0;
    bool is_pim = false;
    MemCommand mem;
    PimCommand pim;
};
std::ostream& operator<<(std::ostream& out, const TraceRecord& rec);

struct CommandCounts {
    std::uint64_t act = 0, rd = 0, wr = 0, pre = 0, ref = 0;
    std::uint64_t pim_act = 0, pim_tiles = 0, gwrite = 0, pim_pre = 0, headers = 0;
    /// Command-bus slots used by commands of each class.
    std::uint64_t mem_slots = 0, pim_slots = 0;
    Bytes mem_bytes = 0, readout_bytes = 0;
};

/// No-legal-time marker from check_timing (blocked on another command,
/// e.g. a same-row conflict or a missing HEADER).
inline constexpr Cycle kBlocked = ~Cycle{0};

/// One HBM pseudo-channel: banks with a MEM and a PIM row buffer, the global
/// vector buffer, and the shared activation, command and data-bus budgets.
/// With `aliased` set both buffers are the same physical buffer.
class ChannelState {
  public:
    ChannelState(const HardwareConfig& hw, std::uint32_t index, bool aliased = false);

    const HardwareConfig& hw() const { return hw_; }
    std::uint32_t index() const { return index_; }
    bool aliased() const { return aliased_; }

    const BankState& bank(std::uint32_t b) const { return banks_.at(b); }
    std::uint32_t bank_count() const { return static_cast<std::uint32_t>(banks_.size()); }
    const RowBuffer& buffer(std::uint32_t bank, BufferKind kind) const;

    /// Rows loaded into the global vector buffer since the last GEMV.
    std::uint32_t global_buffer_rows() const { return gbuf_rows_; }
    const std::optional<PimDims>& header() const { return header_; }
    Cycle next_refresh_due() const { return next_refresh_due_; }
    Cycle pim_busy_until() const { return pim_busy_until_; }
    Cycle refresh_busy_until() const { return refresh_busy_until_; }
    bool all_precharged() const;
    bool pim_precharged() const;
    bool mem_precharged() const;

    /// Earliest cycle >= now at which the command would be legal, or kBlocked.
    Cycle check_timing(const MemCommand& cmd, Cycle now) const;
    Cycle check_timing(const PimCommand& cmd, Cycle now) const;

    /// Applies a command at `now`; returns its completion cycle. Throws
    /// ProtocolError if the command is illegal at `now`.
    Cycle apply(const MemCommand& cmd, Cycle now);
    Cycle apply(const PimCommand& cmd, Cycle now);

    const std::vector<BankEvent>& events() const { return events_; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    const CommandCounts& counts() const { return counts_; }
    void set_record_events(bool on) { record_events_ = on; }
    /// Forgets activation and bus bookkeeping older than any timing window.
    void compact(Cycle now);
    void clear_log();

  private:
    struct GemvPlan {
        std::vector<BankEvent> events;
        Cycle compute_end = 0;
        Cycle done = 0;
    };

    RowBuffer& buf(std::uint32_t bank, BufferKind kind);
    std::bitset<64> group_mask(std::uint32_t group) const;
    using ActList = std::vector<std::pair<Cycle, std::uint32_t>>;
    bool act_slot_ok(Cycle t, std::uint32_t group, const ActList* extra = nullptr) const;
    Cycle earliest_act(Cycle t, std::uint32_t group, const ActList* extra = nullptr) const;
    Cycle earliest_bus(Cycle t, Cycle duration) const;
    Cycle earliest_row_free(std::uint32_t bank, std::uint32_t row, BufferKind opening, Cycle t) const;
    Cycle common_floor(Cycle now) const;
    Cycle act_ready(std::uint32_t bank, BufferKind kind, Cycle t) const;
    Cycle pre_ready(std::uint32_t bank, BufferKind kind, Cycle t) const;
    GemvPlan plan_gemv(std::uint32_t k, Cycle start) const;
    void record(const BankEvent& ev);
    void note_act(Cycle t, std::uint32_t group);
    void reserve_bus(Cycle t, Cycle duration);
    void issue(Cycle now);

    HardwareConfig hw_;
    std::uint32_t index_;
    bool aliased_;
    std::vector<BankState> banks_;
    std::uint32_t gbuf_rows_ = 0;
    std::optional<PimDims> header_;
    /// (time, bankgroup) of recent and reserved activations, sorted by time.
    std::deque<std::pair<Cycle, std::uint32_t>> acts_;
    /// Reserved data-bus intervals [begin, end), sorted.
    std::deque<std::pair<Cycle, Cycle>> bus_;
    /// Future PIM row occupancy from a planned GEMV: (row, until).
    std::vector<std::pair<std::uint32_t, Cycle>> pim_row_spans_;
    std::optional<Cycle> last_read_;
    std::uint32_t last_read_group_ = 0;
    std::optional<Cycle> last_issue_;
    Cycle next_refresh_due_;
    Cycle refresh_busy_until_ = 0;
    Cycle pim_busy_until_ = 0;
    bool record_events_ = true;
    std::vector<BankEvent> events_;
    std::vector<TraceRecord> trace_;
    CommandCounts counts_;
};

/// Time to open one row in every bankgroup at the activation-window rate,
/// from the first ACT to the last.
Cycle activation_span(const HardwareConfig& hw);

/// Steady-state period of one GEMV tile after the first (internal PIM
/// precharge, re-activation of every group, tRCD, the dot-product), scaled
/// by tREFI / (tREFI - tRFC) for time lost to refresh.
Cycle effective_tile_latency(const HardwareConfig& hw);

/// Upper bound on the service time of a full PIM block (HEADER, GWRITEs,
/// group ACTIVATIONs, GEMV, readout, PIM_PRECHARGE) for the given dims.
Cycle estimate_gemv_duration(const PimDims& dims, const HardwareConfig& hw);

/// Replays primitive events and reports every violated timing rule.
struct TimingViolation {
    Cycle time = 0;
    std::string rule;
};
std::vector<TimingViolation> check_trace_timing(const std::vector<BankEvent>& events, const HardwareConfig& hw,
                                                bool aliased, Cycle end_time);

}  // namespace npupim
