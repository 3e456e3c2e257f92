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
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "npupim/config.hpp"
#include "npupim/workload.hpp"

namespace npupim {

/// Inputs of the per-request MHA latency estimate. P_DRAM is in elements.
struct MhaParams {
    std::uint64_t d_model = 0;
    std::uint64_t tile_latency = 0;
    std::uint64_t gwrite_latency = 0;
    std::uint64_t page_elements = 0;
    std::uint64_t banks_per_channel = 0;
    std::uint64_t num_heads = 0;
};

/// Device-local parameters: d_model and heads divided by the TP degree, and
/// the tile latency taken as the effective steady-state tile period.
MhaParams mha_params_for(const HardwareConfig& hw, const ModelConfig& model);

/// Per-request MHA cycles on one PIM channel. Every division rounds up.
Cycle estimate_mha_latency(std::uint64_t seq_len, const MhaParams& p);

struct PackItem {
    RequestId id = 0;
    std::uint32_t seq_len = 1;
};
using ChannelLists = std::vector<std::vector<PackItem>>;

struct PackResult {
    ChannelLists channels;
    std::vector<Cycle> loads;
    /// Requests no channel could take, in input order.
    std::vector<PackItem> refused;
};

using LoadFn = std::function<Cycle(std::uint32_t seq_len)>;
/// Whether `item` still fits on `channel` given placements so far.
using FitFn = std::function<bool(std::uint32_t channel, const PackItem& item)>;

/// Greedy min-load packing: longest first onto the least-loaded channel,
/// lowest index on ties, skipping channels that cannot hold the request.
PackResult pack_channels(const std::vector<PackItem>& new_reqs, ChannelLists channels, const LoadFn& load,
                         const FitFn& fits = {});

/// Arrival-order round-robin placement starting at `cursor`, which advances.
PackResult pack_round_robin(const std::vector<PackItem>& new_reqs, ChannelLists channels, const LoadFn& load,
                            std::uint32_t& cursor, const FitFn& fits = {});

std::vector<Cycle> channel_loads(const ChannelLists& channels, const LoadFn& load);

struct SubBatchSplit {
    std::vector<RequestId> sb1, sb2;
    /// Per channel: how many of its requests went to SB1 and SB2.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> per_channel;
};

/// Halves every channel's list; odd sizes alternate ceil and floor starting
/// with ceil. The alternation restarts on every call.
SubBatchSplit partition_subbatches(const ChannelLists& channels);

/// Row-sized KV pages per channel: a bump pointer over never-used pages plus
/// a stack of recycled ones. Pages below `reserved` hold weights.
class KvPageTable {
  public:
    KvPageTable(std::uint32_t channels, std::uint64_t pages_per_channel, std::uint64_t reserved_pages = 0);

    std::optional<PageId> allocate(std::uint32_t channel);
    void free(std::uint32_t channel, PageId page);

    std::uint64_t free_pages(std::uint32_t channel) const;
    std::uint64_t allocated_pages(std::uint32_t channel) const;
    /// Pages usable for KV on one channel.
    std::uint64_t capacity(std::uint32_t /*channel*/) const { return pages_per_channel_ - reserved_; }
    std::uint32_t channels() const { return static_cast<std::uint32_t>(state_.size()); }

  private:
    struct Channel {
        std::uint64_t next_fresh = 0;
        std::vector<PageId> recycled;
        std::vector<bool> owned;
    };
    std::uint64_t pages_per_channel_;
    std::uint64_t reserved_;
    std::vector<Channel> state_;
};

/// Pops a page on the request's home channel into kv_pages[layer]. Throws
/// CapacityError when the channel is exhausted.
PageId allocate_kv_page(KvPageTable& table, std::uint32_t channel, Request& request, std::uint32_t layer);

enum class PackingPolicy { GreedyMinLoad, RoundRobin };

struct SchedulerConfig {
    HardwareConfig hardware;
    ModelConfig model;
    std::uint32_t batch_slots = 256;
    PackingPolicy policy = PackingPolicy::GreedyMinLoad;
    /// Reserve weights in every channel before handing pages to the KV cache.
    bool reserve_weights = true;
};

struct IterationPlan {
    std::uint64_t iteration = 0;
    std::vector<RequestId> admitted;
    std::vector<RequestId> completed;
    ChannelLists channels;
    std::vector<Cycle> loads;
    SubBatchSplit split;

    std::size_t batch_size() const;
};

/// One JSON object per line.
void write_plan_json(std::ostream& out, const IterationPlan& plan);

/// Iteration-level scheduler for one device. Requests keep their home
/// channel for life; admission reserves KV pages for a request's final length
/// so a resident request never runs out of pages mid-generation.
class Scheduler {
  public:
    explicit Scheduler(const SchedulerConfig& cfg);

    void submit(std::vector<Request> requests);
    IterationPlan iteration_boundary();
    /// Every active request generates one token; KV pages grow as rows fill.
    /// Returns the number of tokens generated.
    std::uint64_t advance();

    const std::vector<Request>& active() const { return active_; }
    std::size_t queued() const { return pool_.size(); }
    const KvPageTable& kv() const { return kv_; }
    std::uint64_t iteration() const { return iteration_; }
    const SchedulerConfig& config() const { return cfg_; }
    const MhaParams& mha_params() const { return mha_; }

    std::uint32_t layers_on_device() const;
    Bytes kv_bytes_per_token_layer() const;
    std::uint64_t pages_per_layer(std::uint64_t context) const;
    /// Current per-channel lists in residence order.
    ChannelLists channel_lists() const;
    /// Plan over the current active set without admitting or retiring.
    IterationPlan current_plan() const;

  private:
    std::uint64_t pages_for(std::uint64_t context) const { return layers_on_device() * pages_per_layer(context); }
    void grow_pages(Request& r);

    SchedulerConfig cfg_;
    MhaParams mha_;
    KvPageTable kv_;
    std::deque<Request> pool_;
    std::vector<Request> active_;
    /// Pages promised to residents at their final length, per channel.
    std::vector<std::uint64_t> reserved_;
    std::uint32_t rr_cursor_ = 0;
    std::uint64_t iteration_ = 0;
};

}  // namespace npupim
