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

#include "npupim/scheduler.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <json.hpp>

#include "npupim/dram.hpp"

namespace npupim {

MhaParams mha_params_for(const HardwareConfig& hw, const ModelConfig& model) {
    MhaParams p;
    p.d_model = model.d_model / model.tp_degree;
    p.num_heads = model.num_heads / model.tp_degree;
    p.tile_latency = effective_tile_latency(hw);
    p.gwrite_latency = hw.gwrite_latency;
    p.page_elements = hw.page_elements();
    p.banks_per_channel = hw.banks_per_channel;
    return p;
}

Cycle estimate_mha_latency(std::uint64_t seq_len, const MhaParams& p) {
    if (seq_len == 0 || p.d_model == 0 || p.tile_latency == 0 || p.page_elements == 0 || p.banks_per_channel == 0 ||
        p.num_heads == 0)
        throw std::invalid_argument("estimate_mha_latency: non-positive parameter");
    Cycle latency = 0;
    // K^T x q
    const std::uint64_t e_chunks = ceil_div(p.d_model, p.page_elements);
    std::uint64_t tiles = ceil_div(seq_len, p.banks_per_channel) * e_chunks;
    latency += p.gwrite_latency * e_chunks + p.tile_latency * tiles;
    // logits x V
    const std::uint64_t seq_chunks = ceil_div(seq_len, p.page_elements);
    tiles = ceil_div(ceil_div(p.d_model, p.num_heads), p.banks_per_channel) * (seq_chunks * p.num_heads);
    latency += p.gwrite_latency * seq_chunks * p.num_heads + p.tile_latency * tiles;
    return latency;
}

std::vector<Cycle> channel_loads(const ChannelLists& channels, const LoadFn& load) {
    std::vector<Cycle> loads(channels.size(), 0);
    for (std::size_t c = 0; c < channels.size(); ++c)
        for (const auto& item : channels[c]) loads[c] += load(item.seq_len);
    return loads;
}

PackResult pack_channels(const std::vector<PackItem>& new_reqs, ChannelLists channels, const LoadFn& load,
                         const FitFn& fits) {
    if (channels.empty()) throw std::invalid_argument("pack_channels: no channels");
    PackResult out;
    out.loads = channel_loads(channels, load);
    std::vector<PackItem> sorted = new_reqs;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PackItem& a, const PackItem& b) { return a.seq_len > b.seq_len; });
    std::vector<std::uint32_t> order(channels.size());
    for (const auto& item : sorted) {
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return out.loads[a] < out.loads[b]; });
        bool placed = false;
        for (auto c : order) {
            if (fits && !fits(c, item)) continue;
            channels[c].push_back(item);
            out.loads[c] += load(item.seq_len);
            placed = true;
            break;
        }
        if (!placed) out.refused.push_back(item);
    }
    out.channels = std::move(channels);
    return out;
}

PackResult pack_round_robin(const std::vector<PackItem>& new_reqs, ChannelLists channels, const LoadFn& load,
                            std::uint32_t& cursor, const FitFn& fits) {
    if (channels.empty()) throw std::invalid_argument("pack_round_robin: no channels");
    const auto n = static_cast<std::uint32_t>(channels.size());
    PackResult out;
    for (const auto& item : new_reqs) {
        bool placed = false;
        for (std::uint32_t probe = 0; probe < n; ++probe) {
            std::uint32_t c = (cursor + probe) % n;
            if (fits && !fits(c, item)) continue;
            channels[c].push_back(item);
            cursor = (c + 1) % n;
            placed = true;
            break;
        }
        if (!placed) out.refused.push_back(item);
    }
    out.loads = channel_loads(channels, load);
    out.channels = std::move(channels);
    return out;
}

SubBatchSplit partition_subbatches(const ChannelLists& channels) {
    SubBatchSplit out;
    bool turn = true;
    for (const auto& list : channels) {
        const auto size = static_cast<std::uint32_t>(list.size());
        std::uint32_t bsize = size / 2;
        if (size % 2 == 1) {
            if (turn) bsize += 1;
            turn = !turn;
        }
        for (std::uint32_t i = 0; i < size; ++i) (i < bsize ? out.sb1 : out.sb2).push_back(list[i].id);
        out.per_channel.push_back({bsize, size - bsize});
    }
    return out;
}

KvPageTable::KvPageTable(std::uint32_t channels, std::uint64_t pages_per_channel, std::uint64_t reserved_pages)
    : pages_per_channel_(pages_per_channel), reserved_(reserved_pages), state_(channels) {
    if (reserved_pages > pages_per_channel) throw CapacityError("weights exceed channel capacity");
    for (auto& ch : state_) {
        ch.next_fresh = reserved_pages;
        ch.owned.assign(pages_per_channel, false);
    }
}

std::optional<PageId> KvPageTable::allocate(std::uint32_t channel) {
    auto& ch = state_.at(channel);
    PageId page;
    if (!ch.recycled.empty()) {
        page = ch.recycled.back();
        ch.recycled.pop_back();
    } else if (ch.next_fresh < pages_per_channel_) {
        page = static_cast<PageId>(ch.next_fresh++);
    } else {
        return std::nullopt;
    }
    ch.owned[page] = true;
    return page;
}

void KvPageTable::free(std::uint32_t channel, PageId page) {
    auto& ch = state_.at(channel);
    if (page < reserved_ || page >= ch.next_fresh || !ch.owned[page])
        throw std::logic_error("KvPageTable::free: page " + std::to_string(page) + " not allocated");
    ch.owned[page] = false;
    ch.recycled.push_back(page);
}

std::uint64_t KvPageTable::free_pages(std::uint32_t channel) const {
    const auto& ch = state_.at(channel);
    return (pages_per_channel_ - ch.next_fresh) + ch.recycled.size();
}

std::uint64_t KvPageTable::allocated_pages(std::uint32_t channel) const { return capacity(channel) - free_pages(channel); }

PageId allocate_kv_page(KvPageTable& table, std::uint32_t channel, Request& request, std::uint32_t layer) {
    if (!request.channel || *request.channel != channel)
        throw std::invalid_argument("allocate_kv_page: request not resident on channel " + std::to_string(channel));
    auto page = table.allocate(channel);
    if (!page) throw CapacityError("KV pages exhausted on channel " + std::to_string(channel));
    if (request.kv_pages.size() <= layer) request.kv_pages.resize(layer + 1);
    request.kv_pages[layer].push_back(*page);
    return *page;
}

std::size_t IterationPlan::batch_size() const { return split.sb1.size() + split.sb2.size(); }

void write_plan_json(std::ostream& out, const IterationPlan& plan) {
    nlohmann::json j;
    j["iteration"] = plan.iteration;
    j["admitted"] = plan.admitted;
    j["completed"] = plan.completed;
    j["loads"] = plan.loads;
    nlohmann::json chans = nlohmann::json::array();
    for (const auto& list : plan.channels) {
        nlohmann::json ids = nlohmann::json::array();
        for (const auto& item : list) ids.push_back(item.id);
        chans.push_back(ids);
    }
    j["channels"] = chans;
    j["sb1"] = plan.split.sb1;
    j["sb2"] = plan.split.sb2;
    out << j.dump() << '\n';
}

namespace {

Bytes weight_bytes_per_device(const ModelConfig& m, Bytes dw) {
    const std::uint64_t e = m.d_model, f = m.ffn_dim();
    const std::uint64_t per_layer = (4 * e * e + 2 * e * f) / m.tp_degree;
    return per_layer * (m.num_layers / m.pp_degree) * dw;
}

}  // namespace

Scheduler::Scheduler(const SchedulerConfig& cfg)
    : cfg_(cfg),
      mha_(mha_params_for(cfg.hardware, cfg.model)),
      kv_(cfg.hardware.hbm_channels, cfg.hardware.channel_capacity / cfg.hardware.page_size,
          cfg.reserve_weights
              ? ceil_div(ceil_div(weight_bytes_per_device(cfg.model, cfg.hardware.data_width), cfg.hardware.hbm_channels),
                         cfg.hardware.page_size)
              : 0),
      reserved_(cfg.hardware.hbm_channels, 0) {
    if (cfg.batch_slots == 0) throw ConfigError("batch slots must be >= 1");
}

std::uint32_t Scheduler::layers_on_device() const { return cfg_.model.num_layers / cfg_.model.pp_degree; }

Bytes Scheduler::kv_bytes_per_token_layer() const {
    return 2 * Bytes{cfg_.model.d_model / cfg_.model.tp_degree} * cfg_.hardware.data_width;
}

std::uint64_t Scheduler::pages_per_layer(std::uint64_t context) const {
    return ceil_div(context * kv_bytes_per_token_layer(), cfg_.hardware.page_size);
}

void Scheduler::submit(std::vector<Request> requests) {
    for (auto& r : requests) {
        if (r.input_len == 0 || r.target_output_len == 0) throw WorkloadError("request with zero length");
        r.state = RequestState::Queued;
        r.channel.reset();
        // Requests may arrive part-way through generation (warm-up snapshot).
        r.generated_len = std::min(r.generated_len, r.target_output_len - 1);
        r.kv_pages.clear();
        pool_.push_back(std::move(r));
    }
}

void Scheduler::grow_pages(Request& r) {
    const std::uint64_t want = pages_per_layer(r.context_len());
    r.kv_pages.resize(layers_on_device());
    for (std::uint32_t l = 0; l < layers_on_device(); ++l)
        while (r.kv_pages[l].size() < want) allocate_kv_page(kv_, *r.channel, r, l);
}

ChannelLists Scheduler::channel_lists() const {
    ChannelLists lists(cfg_.hardware.hbm_channels);
    for (const auto& r : active_) lists[*r.channel].push_back({r.id, r.context_len()});
    return lists;
}

IterationPlan Scheduler::iteration_boundary() {
    IterationPlan plan;
    plan.iteration = iteration_++;

    // Retire finished requests.
    std::vector<Request> keep;
    keep.reserve(active_.size());
    for (auto& r : active_) {
        if (!r.finished()) {
            keep.push_back(std::move(r));
            continue;
        }
        for (auto& layer : r.kv_pages)
            for (auto page : layer) kv_.free(*r.channel, page);
        reserved_[*r.channel] -= pages_for(r.input_len + r.target_output_len);
        r.kv_pages.clear();
        r.state = RequestState::Done;
        plan.completed.push_back(r.id);
    }
    active_ = std::move(keep);

    // Admit FIFO up to the free slots. A request that fits on no channel
    // keeps its place in the pool and later requests are considered.
    std::size_t free_slots = cfg_.batch_slots - std::min<std::size_t>(cfg_.batch_slots, active_.size());
    std::deque<Request> rest;
    std::size_t next = 0;
    LoadFn load = [&](std::uint32_t len) { return estimate_mha_latency(len, mha_); };
    while (free_slots > 0 && next < pool_.size()) {
        const std::size_t take = std::min(free_slots, pool_.size() - next);
        std::vector<PackItem> cand;
        std::map<RequestId, std::size_t> index_of;
        std::vector<std::uint64_t> final_pages(take);
        for (std::size_t i = 0; i < take; ++i) {
            const Request& r = pool_[next + i];
            cand.push_back({r.id, r.context_len()});
            index_of[r.id] = i;
            final_pages[i] = pages_for(r.input_len + r.target_output_len);
        }
        std::vector<std::uint64_t> tentative = reserved_;
        FitFn fits = [&](std::uint32_t c, const PackItem& item) {
            const auto need = final_pages[index_of.at(item.id)];
            if (tentative[c] + need > kv_.capacity(c)) return false;
            tentative[c] += need;  // the packer places on the first channel that fits
            return true;
        };
        PackResult res = cfg_.policy == PackingPolicy::GreedyMinLoad
                             ? pack_channels(cand, channel_lists(), load, fits)
                             : pack_round_robin(cand, channel_lists(), load, rr_cursor_, fits);

        std::vector<bool> refused(take, false);
        for (const auto& item : res.refused) refused[index_of.at(item.id)] = true;
        std::vector<std::uint32_t> home(take, 0);
        for (std::uint32_t c = 0; c < res.channels.size(); ++c)
            for (const auto& item : res.channels[c])
                if (auto it = index_of.find(item.id); it != index_of.end()) home[it->second] = c;

        std::map<RequestId, Request> admitted_reqs;
        for (std::size_t i = 0; i < take; ++i) {
            Request r = std::move(pool_[next + i]);
            if (refused[i]) {
                rest.push_back(std::move(r));
                continue;
            }
            r.state = RequestState::Active;
            r.channel = home[i];
            reserved_[home[i]] += final_pages[i];
            grow_pages(r);
            plan.admitted.push_back(r.id);
            admitted_reqs.emplace(r.id, std::move(r));
            --free_slots;
        }
        // Keep active_ in the packer's per-channel order.
        for (std::uint32_t c = 0; c < res.channels.size(); ++c)
            for (const auto& item : res.channels[c])
                if (auto it = admitted_reqs.find(item.id); it != admitted_reqs.end()) {
                    active_.push_back(std::move(it->second));
                    admitted_reqs.erase(it);
                }
        next += take;
    }
    for (std::size_t i = next; i < pool_.size(); ++i) rest.push_back(std::move(pool_[i]));
    pool_ = std::move(rest);

    plan.channels = channel_lists();
    plan.loads = channel_loads(plan.channels, load);
    plan.split = partition_subbatches(plan.channels);
    return plan;
}

IterationPlan Scheduler::current_plan() const {
    IterationPlan plan;
    plan.iteration = iteration_;
    plan.channels = channel_lists();
    LoadFn load = [&](std::uint32_t len) { return estimate_mha_latency(len, mha_); };
    plan.loads = channel_loads(plan.channels, load);
    plan.split = partition_subbatches(plan.channels);
    return plan;
}

std::uint64_t Scheduler::advance() {
    for (auto& r : active_) {
        if (r.finished()) continue;
        ++r.generated_len;
        grow_pages(r);
    }
    return active_.size();
}

}  // namespace npupim
