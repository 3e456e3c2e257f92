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

#include "npupim/pim_mha.hpp"

#include <algorithm>
#include <deque>

#include "npupim/controller.hpp"

namespace npupim {

std::uint32_t max_gemv_tiles(const HardwareConfig& hw) {
    const Cycle budget = hw.timing.tREFI / 8;
    std::uint32_t k = 1;
    while (k < 4096) {
        PimDims next{k + 1, 1, std::uint64_t{k + 1} * hw.banks_per_channel * 8};
        if (estimate_gemv_duration(next, hw) > budget) break;
        ++k;
    }
    return k;
}

namespace {

/// Splits `tiles` into GEMVs of at most kmax; the first piece loads the
/// vector. `covered(k)` gives the result elements of a k-tile piece given
/// the tiles already issued.
template <class Covered>
void split_blocks(std::vector<PimDims>& out, std::uint64_t tiles, std::uint32_t kmax, std::uint32_t gwrites,
                  Covered covered) {
    std::uint64_t done = 0;
    while (done < tiles) {
        auto k = static_cast<std::uint32_t>(std::min<std::uint64_t>(kmax, tiles - done));
        out.push_back({k, done == 0 ? gwrites : 0u, covered(done, k)});
        done += k;
    }
}

}  // namespace

std::vector<HeadGroupWork> plan_request_mha(std::uint64_t seq_len, const HardwareConfig& hw, const ModelConfig& model) {
    if (seq_len == 0) throw std::invalid_argument("plan_request_mha: zero sequence length");
    const std::uint64_t heads = model.num_heads / model.tp_degree;
    const std::uint64_t dh = model.head_dim();
    const std::uint64_t page = hw.page_elements();
    const std::uint64_t banks = hw.banks_per_channel;
    const std::uint32_t kmax = max_gemv_tiles(hw);
    const std::uint64_t per_group = std::clamp<std::uint64_t>(page / dh, 1, heads);

    std::vector<HeadGroupWork> groups;
    for (std::uint64_t h0 = 0; h0 < heads; h0 += per_group) {
        HeadGroupWork g;
        g.heads = static_cast<std::uint32_t>(std::min(per_group, heads - h0));
        const std::uint64_t chunks = ceil_div(g.heads * dh, page);
        // K^T x q: each tile covers one token per bank.
        for (std::uint64_t c = 0; c < chunks; ++c)
            split_blocks(g.logit_blocks, ceil_div(seq_len, banks), kmax, 1, [&](std::uint64_t done, std::uint32_t k) {
                return std::min<std::uint64_t>(k * banks, seq_len - std::min(seq_len, done * banks)) * g.heads;
            });
        // logits x V: per head and per row-sized slice of the sequence.
        const std::uint64_t seq_chunks = ceil_div(seq_len, page);
        for (std::uint32_t h = 0; h < g.heads; ++h)
            for (std::uint64_t c = 0; c < seq_chunks; ++c)
                split_blocks(g.attend_blocks, ceil_div(dh, banks), kmax, 1, [&](std::uint64_t done, std::uint32_t k) {
                    return std::min<std::uint64_t>(k * banks, dh - std::min(dh, done * banks));
                });
        g.softmax_elements = g.heads * seq_len;
        g.writeback_bytes = g.softmax_elements * hw.data_width;
        groups.push_back(std::move(g));
    }
    return groups;
}

namespace {

PimCommand simple(PimKind kind, std::uint32_t channel) {
    PimCommand c;
    c.kind = kind;
    c.channel = channel;
    return c;
}

void append_gwrites(std::vector<PimCommand>& cmds, std::uint32_t count, std::uint32_t channel, std::uint32_t row) {
    for (std::uint32_t i = 0; i < count; ++i) {
        PimCommand gw = simple(PimKind::GWRITE, channel);
        gw.bank_mask.set(0);
        gw.row = row;
        cmds.push_back(gw);
    }
}

void append_activations(std::vector<PimCommand>& cmds, std::uint32_t groups, std::uint32_t channel, std::uint32_t row) {
    for (std::uint32_t g = 0; g < groups; ++g) {
        PimCommand act = simple(PimKind::ACTIVATION, channel);
        act.group = g;
        act.row = row;
        cmds.push_back(act);
    }
}

}  // namespace

std::vector<PimCommand> gemv_block_commands(const PimDims& dims, const HardwareConfig& hw, std::uint32_t channel,
                                            std::uint32_t row) {
    std::vector<PimCommand> cmds;
    PimCommand header = simple(PimKind::HEADER, channel);
    header.dims = dims;
    cmds.push_back(header);
    append_gwrites(cmds, dims.gwrites, channel, row);
    append_activations(cmds, hw.bankgroups(), channel, row);
    auto gemv = simple(PimKind::GEMV, channel);
    gemv.k = dims.tiles;
    cmds.push_back(gemv);
    cmds.push_back(simple(PimKind::PIM_PRECHARGE, channel));
    return cmds;
}

std::vector<PimCommand> dotproduct_block_commands(const PimDims& dims, const HardwareConfig& hw, std::uint32_t channel,
                                                  std::uint32_t row) {
    std::vector<PimCommand> cmds;
    append_gwrites(cmds, dims.gwrites, channel, row);
    for (std::uint32_t t = 0; t < dims.tiles; ++t) {
        append_activations(cmds, hw.bankgroups(), channel, row + t);
        cmds.push_back(simple(PimKind::DOTPRODUCT, channel));
        cmds.push_back(simple(PimKind::RDRESULT, channel));
        cmds.push_back(simple(PimKind::PIM_PRECHARGE, channel));
    }
    return cmds;
}

std::vector<PimCommand> request_command_stream(std::uint64_t seq_len, const HardwareConfig& hw,
                                               const ModelConfig& model, std::uint32_t channel,
                                               std::uint32_t row_base) {
    std::vector<PimCommand> cmds;
    std::uint32_t row = row_base;
    for (const auto& g : plan_request_mha(seq_len, hw, model)) {
        for (const auto* blocks : {&g.logit_blocks, &g.attend_blocks})
            for (const auto& dims : *blocks) {
                auto block = gemv_block_commands(dims, hw, channel, row);
                cmds.insert(cmds.end(), block.begin(), block.end());
                row += dims.tiles;
            }
    }
    return cmds;
}

namespace {

Cycle drain_stream(ChannelController& ctl, const std::vector<PimCommand>& cmds) {
    std::size_t next = 0;
    Cycle t = 0;
    Cycle last_progress = 0;
    while (next < cmds.size() || !ctl.idle()) {
        while (next < cmds.size() && ctl.enqueue(cmds[next], t)) ++next;
        if (ctl.tick(t)) {
            last_progress = t++;
            continue;
        }
        Cycle w = ctl.next_wake(t);
        if (w == kBlocked || w - last_progress > ctl.deadlock_epoch())
            throw DeadlockError("PIM stream stalled at cycle " + std::to_string(t));
        t = w;
    }
    return std::max(ctl.last_completion(), t);
}

}  // namespace

Cycle simulate_request_mha(std::uint64_t seq_len, const HardwareConfig& hw, const ModelConfig& model, bool aliased) {
    ChannelController ctl(hw, 0, aliased);
    ctl.channel().set_record_events(false);
    return drain_stream(ctl, request_command_stream(seq_len, hw, model, 0));
}

Cycle PimBlockCosts::cost(const PimDims& dims) {
    auto key = std::make_tuple(dims.tiles, dims.gwrites, dims.result_elements);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    ChannelController ctl(hw_, 0);
    ctl.channel().set_record_events(false);
    auto cmds = gemv_block_commands(dims, hw_, 0, 0);
    Cycle preload = 0;
    if (dims.gwrites == 0) {
        // Continuation blocks reuse a vector loaded earlier.
        std::vector<PimCommand> with_vector;
        append_gwrites(with_vector, 1, 0, 0);
        cmds.insert(cmds.begin(), with_vector.begin(), with_vector.end());
        preload = hw_.gwrite_latency;
    }
    Cycle c = drain_stream(ctl, cmds) - preload;
    memo_.emplace(key, c);
    return c;
}

Cycle PimBlockCosts::cost(const std::vector<PimDims>& blocks) {
    Cycle sum = 0;
    for (const auto& b : blocks) sum += cost(b);
    return sum;
}

double PimBlockCosts::refresh_factor() {
    if (refresh_factor_ > 0) return refresh_factor_;
    // A mix of long logit GEMVs and short attend GEMVs.
    const std::uint32_t kmax = max_gemv_tiles(hw_);
    std::vector<PimDims> mix{{kmax, 1, std::uint64_t{kmax} * hw_.banks_per_channel * 4},
                             {kmax / 2 + 1, 0, std::uint64_t{kmax / 2 + 1} * hw_.banks_per_channel * 4},
                             {4, 1, 128},
                             {4, 1, 128},
                             {4, 1, 128},
                             {4, 1, 128}};
    std::vector<PimCommand> cmds;
    Cycle isolated = 0;
    std::uint32_t row = 0;
    while (isolated < 40 * hw_.timing.tREFI) {
        for (const auto& d : mix) {
            auto block = gemv_block_commands(d, hw_, 0, row);
            cmds.insert(cmds.end(), block.begin(), block.end());
            row = (row + d.tiles) % 4096;
            isolated += cost(d);
        }
    }
    ChannelController ctl(hw_, 0);
    ctl.channel().set_record_events(false);
    Cycle streamed = drain_stream(ctl, cmds);
    refresh_factor_ = static_cast<double>(streamed) / static_cast<double>(isolated);
    return refresh_factor_;
}

Cycle mha_head_pipeline(const std::vector<HeadJob>& jobs, bool overlap) {
    if (jobs.empty()) return 0;
    if (!overlap) {
        Cycle sum = 0;
        for (const auto& j : jobs) sum += j.logit + j.softmax + j.attend;
        return sum;
    }
    Cycle pim_free = 0, vec_free = 0;
    std::size_t next_logit = 0;
    // (ready time, job index) of attends waiting for the PIM unit, FIFO.
    std::deque<std::pair<Cycle, std::size_t>> pending;
    while (next_logit < jobs.size() || !pending.empty()) {
        if (!pending.empty() && pending.front().first <= pim_free) {
            pim_free += jobs[pending.front().second].attend;
            pending.pop_front();
            continue;
        }
        if (next_logit < jobs.size()) {
            const auto& j = jobs[next_logit];
            pim_free += j.logit;
            Cycle sm_start = std::max(pim_free, vec_free);
            vec_free = sm_start + j.softmax;
            pending.push_back({vec_free, next_logit});
            ++next_logit;
            continue;
        }
        pim_free = pending.front().first;
    }
    return pim_free;
}

Cycle mha_head_pipeline(std::uint32_t heads, Cycle logit, Cycle softmax, Cycle attend) {
    return mha_head_pipeline(std::vector<HeadJob>(heads, HeadJob{logit, softmax, attend}));
}

}  // namespace npupim
