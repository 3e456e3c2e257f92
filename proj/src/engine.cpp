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

#include "npupim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <mutex>
#include <set>

#include <json.hpp>

#include "npupim/controller.hpp"
#include "npupim/graph.hpp"
#include "npupim/npu.hpp"
#include "npupim/workload.hpp"

namespace npupim {

ExecutionMode ExecutionMode::npu_only() { return {Mode::NpuOnly, false, false, false}; }
ExecutionMode ExecutionMode::blocked() { return {Mode::NpuPimBlocked, false, false, false}; }
ExecutionMode ExecutionMode::neupims(bool drb, bool gmlbp, bool sbi) { return {Mode::NeuPims, drb, gmlbp, sbi}; }

void ExecutionMode::validate() const {
    if (mode != Mode::NeuPims && (dual_row_buffers || greedy_packing || subbatch_interleaving))
        throw ConfigError("mode " + name() + " takes no drb/gmlbp/sbi flags");
    if (subbatch_interleaving && !dual_row_buffers)
        throw ConfigError("sbi requires drb: interleaving needs concurrent MEM and PIM access");
}

std::string ExecutionMode::name() const {
    switch (mode) {
        case Mode::NpuOnly: return "npu-only";
        case Mode::NpuPimBlocked: return "blocked";
        case Mode::NeuPims: return "neupims";
    }
    return "?";
}

std::string ExecutionMode::flags() const {
    std::vector<std::string> on;
    if (dual_row_buffers) on.push_back("drb");
    if (greedy_packing) on.push_back("gmlbp");
    if (subbatch_interleaving) on.push_back("sbi");
    if (on.empty()) return "none";
    std::string out = on[0];
    for (std::size_t i = 1; i < on.size(); ++i) out += "+" + on[i];
    return out;
}

Mode parse_mode(const std::string& name) {
    if (name == "npu-only" || name == "npu_only" || name == "npuonly") return Mode::NpuOnly;
    if (name == "blocked" || name == "npu-pim-blocked") return Mode::NpuPimBlocked;
    if (name == "neupims") return Mode::NeuPims;
    throw ConfigError("mode: unknown '" + name + "' (npu-only, blocked, neupims)");
}

void StageTimeline::add(const std::string& resource, Cycle start, Cycle end, std::string label) {
    if (end <= start) return;
    resources[resource].push_back({start, end, std::move(label)});
}

bool StageTimeline::non_overlapping() const {
    for (const auto& [name, list] : resources) {
        std::vector<Interval> sorted = list;
        std::sort(sorted.begin(), sorted.end(), [](const Interval& a, const Interval& b) { return a.start < b.start; });
        for (std::size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i].start < sorted[i - 1].end) return false;
    }
    return true;
}

void StageTimeline::write_csv(std::ostream& out) const {
    out << "resource,start,end,label\n";
    for (const auto& [name, list] : resources)
        for (const auto& iv : list) out << name << ',' << iv.start << ',' << iv.end << ',' << iv.label << '\n';
}

double Metrics::throughput() const { return sim_cycles ? double(tokens_completed) * clock_hz / double(sim_cycles) : 0.0; }
double Metrics::npu_util() const { return sim_cycles ? std::min(1.0, npu_busy / double(sim_cycles)) : 0.0; }
double Metrics::npuv_util() const { return sim_cycles ? std::min(1.0, npuv_busy / double(sim_cycles)) : 0.0; }
double Metrics::pim_util() const { return sim_cycles ? std::min(1.0, pim_busy / double(sim_cycles)) : 0.0; }

double Metrics::bw_util() const {
    double cap = double(channels) * double(bytes_per_cycle_per_channel) * double(sim_cycles);
    return cap > 0 ? std::min(1.0, bytes_moved / cap) : 0.0;
}

Metrics& Metrics::operator+=(const Metrics& o) {
    tokens_completed += o.tokens_completed;
    sim_cycles += o.sim_cycles;
    npu_busy += o.npu_busy;
    npuv_busy += o.npuv_busy;
    pim_busy += o.pim_busy;
    bytes_moved += o.bytes_moved;
    for (const auto& [k, v] : o.command_counts) command_counts[k] += v;
    energy += o.energy;
    clock_hz = o.clock_hz;
    channels = o.channels;
    bytes_per_cycle_per_channel = o.bytes_per_cycle_per_channel;
    return *this;
}

std::string metrics_json(const Metrics& m, const std::map<std::string, std::string>& labels) {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : labels) j[k] = v;
    j["tokens_completed"] = m.tokens_completed;
    j["sim_cycles"] = m.sim_cycles;
    j["tokens_per_s"] = m.throughput();
    j["npu_busy"] = m.npu_busy;
    j["npuv_busy"] = m.npuv_busy;
    j["pim_busy"] = m.pim_busy;
    j["bytes_moved"] = m.bytes_moved;
    j["npu_util"] = m.npu_util();
    j["npuv_util"] = m.npuv_util();
    j["pim_util"] = m.pim_util();
    j["bw_util"] = m.bw_util();
    j["command_counts"] = m.command_counts;
    j["energy"] = m.energy;
    return j.dump(2);
}

double BandwidthProfile::at_pim_share(double u) const {
    if (pim_share <= 0) return mem_only;
    const double f = std::clamp(u / pim_share, 0.0, 1.0);
    return mem_only - (mem_only - with_pim) * f;
}

namespace {

/// Saturating stream of page reads; the column loop is interleaved across
/// one page per bankgroup so consecutive bursts alternate groups.
class ReadStream {
  public:
    explicit ReadStream(const HardwareConfig& hw) : hw_(hw) {}

    MemCommand next() {
        const std::uint32_t groups = hw_.bankgroups();
        const std::uint32_t cols = static_cast<std::uint32_t>(hw_.page_size / hw_.mem_bytes_per_cycle);
        const std::uint32_t g = slot_ % groups;
        const std::uint32_t col = (slot_ / groups) % cols;
        const std::uint64_t set = slot_ / (groups * cols);
        ++slot_;
        const std::uint32_t in_group = static_cast<std::uint32_t>(set % hw_.banks_per_bankgroup);
        MemCommand c;
        c.kind = MemKind::RD;
        c.bank = g * hw_.banks_per_bankgroup + in_group;
        c.row = kMemRowBase + static_cast<std::uint32_t>((set / hw_.banks_per_bankgroup) % 4096);
        c.col = col;
        c.bytes = hw_.mem_bytes_per_cycle;
        return c;
    }

    static constexpr std::uint32_t kMemRowBase = 8192;

  private:
    HardwareConfig hw_;
    std::uint64_t slot_ = 0;
};

double stream_bandwidth(const HardwareConfig& hw, bool with_pim, double* pim_share) {
    ChannelController ctl(hw, 0, false);
    ReadStream reads(hw);
    const Cycle horizon = 20 * hw.timing.tREFI;
    const std::uint32_t kmax = max_gemv_tiles(hw);
    const PimDims dims{kmax, 1, hw.banks_per_channel};
    std::uint32_t pim_row = 0;
    std::uint64_t blocks = 0;
    const std::size_t mem_low = std::min<std::size_t>(64, hw.queue_depth);

    Cycle t = 0, last_progress = 0;
    std::uint64_t issued = 0;
    while (t < horizon) {
        while (ctl.mem_queue_size() < mem_low) ctl.enqueue(reads.next(), t);
        if (with_pim && ctl.pim_queue_size() == 0) {
            if (pim_row + kmax > 4096) pim_row = 0;
            for (const auto& c : gemv_block_commands(dims, hw, 0, pim_row)) ctl.enqueue(c, t);
            pim_row += kmax;
            ++blocks;
        }
        if (ctl.tick(t)) {
            last_progress = t;
            if ((++issued & 1023) == 0) ctl.channel().compact(t);
            ++t;
            continue;
        }
        const Cycle w = ctl.next_wake(t);
        if (w == kBlocked || w - last_progress > ctl.deadlock_epoch())
            throw DeadlockError("bandwidth probe made no progress since cycle " + std::to_string(last_progress));
        t = w;
    }
    if (pim_share) {
        PimBlockCosts costs(hw);
        *pim_share = std::min(1.0, double(blocks) * double(costs.cost(dims)) / double(t));
    }
    return double(ctl.channel().counts().mem_bytes) / double(t);
}

}  // namespace

BandwidthProfile measure_bandwidth(const HardwareConfig& hw) {
    BandwidthProfile p;
    p.mem_only = stream_bandwidth(hw, false, nullptr);
    p.with_pim = stream_bandwidth(hw, true, &p.pim_share);
    return p;
}

Cycle interleaved_total(const std::vector<Cycle>& npu_jobs, const std::vector<Cycle>& mha_jobs) {
    if (npu_jobs.size() != mha_jobs.size())
        throw std::invalid_argument("interleaved_total: stage vectors differ in length");
    Cycle total = 0;
    for (std::size_t k = 0; k < npu_jobs.size(); ++k) total += std::max(npu_jobs[k], mha_jobs[k]);
    return total;
}

namespace {

struct GemmShape {
    Cycle tile_sum = 0;
    Bytes bytes = 0;
    Bytes write_bytes = 0;
};

/// Busy time and traffic of one device, summed over layers.
struct Tally {
    double npu = 0, npuv = 0, pim = 0;
    double rd_bytes = 0, wr_bytes = 0;
    double pim_tiles = 0, gwrites = 0;

    void scale(double f) {
        npu *= f, npuv *= f, pim *= f;
        rd_bytes *= f, wr_bytes *= f;
        pim_tiles *= f, gwrites *= f;
    }
    void add(const Tally& o) {
        npu += o.npu, npuv += o.npuv, pim += o.pim;
        rd_bytes += o.rd_bytes, wr_bytes += o.wr_bytes;
        pim_tiles += o.pim_tiles, gwrites += o.gwrites;
    }
};

/// NPU-side work of one stage: GEMM chain, vector ops and link transfers.
struct NpuWork {
    std::vector<GemmShape> gemms;
    Cycle vector = 0;
    Cycle comm = 0;

    void append(const NpuWork& o) {
        gemms.insert(gemms.end(), o.gemms.begin(), o.gemms.end());
        vector += o.vector;
        comm += o.comm;
    }
};

/// Per-group PIM costs of one request at a given context length.
struct RequestMha {
    std::vector<HeadJob> groups;
    /// PIM-busy cycles before the refresh factor.
    Cycle pim = 0;
    std::uint64_t tiles = 0, gwrites = 0;
    Bytes readout_bytes = 0, writeback_bytes = 0;
    std::uint64_t softmax_elements = 0;
    std::vector<Cycle> logit, attend;
    std::vector<std::uint64_t> group_softmax;
    std::vector<Bytes> group_writeback;
};

/// MHA of one request set on the device, per channel.
struct MhaStage {
    Cycle duration = 0;
    /// Refresh-scaled PIM-busy cycles per channel.
    std::vector<double> pim_busy;
    /// Softmax cycles on the full vector unit.
    Cycle softmax = 0;
    Tally tally;
};

/// Block costs and the refresh factor depend only on the hardware; engines
/// start from a shared, already measured copy.
PimBlockCosts cached_block_costs(const HardwareConfig& hw) {
    static std::mutex mu;
    static std::vector<std::pair<HardwareConfig, PimBlockCosts>> cache;
    std::lock_guard<std::mutex> lock(mu);
    for (const auto& [k, v] : cache)
        if (k == hw) return v;
    PimBlockCosts costs(hw);
    costs.refresh_factor();
    cache.emplace_back(hw, costs);
    return costs;
}

}  // namespace

struct Engine::Impl {
    Impl(const SimConfig& cfg, const ExecutionMode& mode, const EngineOptions& opts, const BandwidthProfile& bw)
        : hw(cfg.hardware),
          model(cfg.model),
          mode(mode),
          opts(opts),
          bw(bw),
          costs(mode.uses_pim() ? cached_block_costs(cfg.hardware) : PimBlockCosts(cfg.hardware)) {
        rf = mode.uses_pim() ? costs.refresh_factor() : 1.0;
        layers = model.num_layers / model.pp_degree;
        full_bw = bw.mem_only * hw.hbm_channels;
        const std::uint64_t lanes = std::uint64_t{hw.vector_units} * hw.vector_lanes;
        share_lanes = std::max<std::uint64_t>(1, lanes / hw.hbm_channels);
    }

    HardwareConfig hw;
    ModelConfig model;
    ExecutionMode mode;
    EngineOptions opts;
    BandwidthProfile bw;
    PimBlockCosts costs;
    double rf = 1.0;
    std::uint32_t layers = 1;
    double full_bw = 1.0;
    std::uint64_t share_lanes = 1;
    std::map<std::uint64_t, std::vector<GemmShape>> gemm_memo;
    std::map<std::uint32_t, RequestMha> mha_memo;

    // GEMMs of one layer for `batch` rows: QKVGen, Projection, FFN1, FFN2.
    const std::vector<GemmShape>& gemms(std::uint64_t batch) {
        auto it = gemm_memo.find(batch);
        if (it != gemm_memo.end()) return it->second;
        std::vector<GemmShape> out;
        for (const auto& node : decoder_gemm_nodes(model, batch)) {
            auto job = make_npu_job(node, hw);
            GemmShape g;
            for (const auto& t : job.tiles) g.tile_sum += gemm_tile_cycles(t);
            g.bytes = job.total_bytes();
            g.write_bytes = job.output_bytes;
            out.push_back(g);
        }
        return gemm_memo.emplace(batch, std::move(out)).first->second;
    }

    Cycle gemm_time(const GemmShape& g, double bandwidth) const {
        const Cycle compute = ceil_div(g.tile_sum, hw.systolic_arrays);
        const auto memory = static_cast<Cycle>(std::ceil(double(g.bytes) / bandwidth));
        return std::max(compute, memory);
    }

    Cycle vector_time(OpKind kind, std::uint64_t elements) const {
        OperatorNode n;
        n.kind = kind;
        n.elements = elements;
        return vector_op_cycles(n, hw.vector_units, hw.vector_lanes);
    }

    Cycle allreduce_time(std::uint64_t batch) const {
        const std::uint32_t tp = model.tp_degree;
        if (tp <= 1) return 0;
        const double bytes = 2.0 * (tp - 1) / tp * double(batch) * model.d_model * hw.data_width;
        return static_cast<Cycle>(std::ceil(bytes / hw.link_bytes_per_cycle));
    }

    // LN1 + QKVGen.
    NpuWork pre_work(std::uint64_t batch) {
        NpuWork w;
        if (batch == 0) return w;
        const auto& g = gemms(batch);
        w.gemms = {g[0]};
        if (opts.model_norm_ops) w.vector = vector_time(OpKind::LayerNorm, batch * model.d_model);
        return w;
    }

    // Projection, residual, LN2, FFN1, FFN2, residual and two all-reduces.
    NpuWork post_work(std::uint64_t batch) {
        NpuWork w;
        if (batch == 0) return w;
        const auto& g = gemms(batch);
        w.gemms = {g[1], g[2], g[3]};
        if (opts.model_norm_ops)
            w.vector = 2 * vector_time(OpKind::Residual, batch * model.d_model) +
                       vector_time(OpKind::LayerNorm, batch * model.d_model);
        w.comm = 2 * allreduce_time(batch);
        return w;
    }

    Cycle npu_time(const NpuWork& w, double bandwidth, Tally* t = nullptr) const {
        Cycle total = w.vector;
        for (const auto& g : w.gemms) {
            const Cycle c = gemm_time(g, bandwidth);
            total += c;
            if (t) {
                t->npu += double(c);
                t->rd_bytes += double(g.bytes - g.write_bytes);
                t->wr_bytes += double(g.write_bytes);
            }
        }
        if (t) t->npuv += double(w.vector);
        return total;
    }

    const RequestMha& request_mha(std::uint32_t seq_len) {
        auto it = mha_memo.find(seq_len);
        if (it != mha_memo.end()) return it->second;
        RequestMha r;
        if (mode.uses_pim()) {
            for (const auto& g : plan_request_mha(seq_len, hw, model)) {
                const Cycle logit = costs.cost(g.logit_blocks);
                const Cycle attend = costs.cost(g.attend_blocks);
                const Cycle softmax = ceil_div(vector_op_coefficient(OpKind::Softmax) * g.softmax_elements, share_lanes) +
                                      static_cast<Cycle>(std::ceil(double(g.writeback_bytes) / bw.with_pim));
                r.groups.push_back({logit, softmax, attend});
                r.logit.push_back(logit);
                r.attend.push_back(attend);
                r.group_softmax.push_back(g.softmax_elements);
                r.group_writeback.push_back(g.writeback_bytes);
                r.pim += logit + attend;
                for (const auto* blocks : {&g.logit_blocks, &g.attend_blocks})
                    for (const auto& b : *blocks) {
                        r.tiles += b.tiles;
                        r.gwrites += b.gwrites;
                        r.readout_bytes += b.result_elements * hw.data_width;
                    }
                r.writeback_bytes += g.writeback_bytes;
                r.softmax_elements += g.softmax_elements;
            }
        } else {
            const std::uint32_t heads = model.num_heads / model.tp_degree;
            const std::uint64_t dh = model.head_dim();
            OperatorNode logit, attend;
            logit.kind = OpKind::LogitGEMV, logit.m = 1, logit.n = seq_len, logit.k = dh;
            attend.kind = OpKind::AttendGEMV, attend.m = 1, attend.n = dh, attend.k = seq_len;
            const Cycle tl = npu_gemv_time(logit, hw, full_bw);
            const Cycle ta = npu_gemv_time(attend, hw, full_bw);
            const Cycle ts = vector_time(OpKind::Softmax, seq_len);
            r.groups.assign(heads, HeadJob{tl, ts, ta});
            r.softmax_elements = std::uint64_t{heads} * seq_len;
            r.readout_bytes = heads * (profile(logit, hw.data_width).bytes + profile(attend, hw.data_width).bytes);
        }
        return mha_memo.emplace(seq_len, std::move(r)).first->second;
    }

    // MHA on the NPU itself: every (request, head) through one pipeline.
    MhaStage mha_npu_only(const ChannelLists& lists) {
        MhaStage s;
        std::vector<HeadJob> jobs;
        for (const auto& ch : lists)
            for (const auto& item : ch) {
                const auto& r = request_mha(item.seq_len);
                jobs.insert(jobs.end(), r.groups.begin(), r.groups.end());
                s.tally.rd_bytes += double(r.readout_bytes);
                for (const auto& j : r.groups) {
                    s.tally.npu += double(j.logit + j.attend);
                    s.softmax += j.softmax;
                }
            }
        s.tally.npuv += double(s.softmax);
        s.duration = mha_head_pipeline(jobs);
        return s;
    }

    void tally_pim(MhaStage& s, const ChannelLists& lists) {
        s.pim_busy.assign(lists.size(), 0.0);
        std::uint64_t elements = 0;
        for (std::size_t c = 0; c < lists.size(); ++c)
            for (const auto& item : lists[c]) {
                const auto& r = request_mha(item.seq_len);
                s.pim_busy[c] += double(r.pim) * rf;
                s.tally.pim_tiles += double(r.tiles);
                s.tally.gwrites += double(r.gwrites);
                s.tally.rd_bytes += double(r.readout_bytes);
                s.tally.wr_bytes += double(r.writeback_bytes);
                elements += r.softmax_elements;
            }
        if (elements) s.softmax = vector_time(OpKind::Softmax, elements);
        s.tally.npuv += double(s.softmax);
        double sum = 0;
        for (double p : s.pim_busy) sum += p;
        s.tally.pim += lists.empty() ? 0.0 : sum / double(lists.size());
    }

    // Dual row buffers: every channel pipelines its own heads, no barriers.
    MhaStage mha_dual_buffer(const ChannelLists& lists) {
        MhaStage s;
        tally_pim(s, lists);
        for (const auto& ch : lists) {
            std::vector<HeadJob> jobs;
            for (const auto& item : ch) {
                const auto& r = request_mha(item.seq_len);
                jobs.insert(jobs.end(), r.groups.begin(), r.groups.end());
            }
            const auto t = static_cast<Cycle>(std::ceil(double(mha_head_pipeline(jobs)) * rf));
            s.duration = std::max(s.duration, t);
        }
        return s;
    }

    // Single buffer: all channels switch to PIM mode together, so every
    // (request slot, head group) round runs logit, softmax and attend as
    // globally synchronized phases.
    MhaStage mha_blocked(const ChannelLists& lists) {
        MhaStage s;
        tally_pim(s, lists);
        const auto& tm = hw.timing;
        const Cycle switch_cost = tm.tWR + 2 * tm.tRP + tm.tRCD;
        std::size_t slots = 0;
        for (const auto& ch : lists) slots = std::max(slots, ch.size());
        for (std::size_t i = 0; i < slots; ++i) {
            std::size_t groups = 0;
            for (const auto& ch : lists)
                if (i < ch.size()) groups = std::max(groups, request_mha(ch[i].seq_len).groups.size());
            for (std::size_t g = 0; g < groups; ++g) {
                Cycle logit = 0, attend = 0;
                double writeback = 0;
                std::uint64_t elements = 0;
                for (const auto& ch : lists) {
                    if (i >= ch.size()) continue;
                    const auto& r = request_mha(ch[i].seq_len);
                    if (g >= r.groups.size()) continue;
                    logit = std::max(logit, r.logit[g]);
                    attend = std::max(attend, r.attend[g]);
                    elements += r.group_softmax[g];
                    writeback = std::max(writeback, double(r.group_writeback[g]));
                }
                const Cycle softmax = (elements ? vector_time(OpKind::Softmax, elements) : 0) +
                                      static_cast<Cycle>(std::ceil(writeback / bw.mem_only));
                s.duration += static_cast<Cycle>(std::ceil(double(logit + attend) * rf)) + softmax + 2 * switch_cost;
            }
        }
        return s;
    }

    MhaStage mha(const ChannelLists& lists) {
        if (!mode.uses_pim()) return mha_npu_only(lists);
        return mode.dual_buffers() ? mha_dual_buffer(lists) : mha_blocked(lists);
    }

    struct StageCost {
        Cycle duration = 0, npu = 0, mha = 0, comm = 0;
        Tally tally;
    };

    // One barrier-delimited stage: NPU work of one sub-batch beside the MHA
    // of the other. PIM activity on a channel takes a share of its bandwidth.
    StageCost stage(const NpuWork& w, const MhaStage* m) {
        StageCost s;
        s.mha = m ? m->duration : 0;
        s.comm = w.comm;
        const Cycle softmax = m ? m->softmax : 0;
        double bandwidth = full_bw;
        auto settle = [&] {
            s.npu = npu_time(w, bandwidth);
            s.duration = std::max({s.npu, s.mha, s.comm, w.vector + softmax});
        };
        settle();
        if (m && !m->pim_busy.empty() && s.duration > 0) {
            for (int iter = 0; iter < 3; ++iter) {
                bandwidth = 0;
                for (double p : m->pim_busy) bandwidth += bw.at_pim_share(p / double(s.duration));
                settle();
            }
        }
        npu_time(w, bandwidth, &s.tally);
        if (m) s.tally.add(m->tally);
        return s;
    }

    // All device layers for one request set with the NPU and MHA serialized.
    Cycle serial_pass(const ChannelLists& lists, std::uint64_t batch, Tally& total, StageTimeline* tl, Cycle t0) {
        Tally layer;
        const NpuWork pre = pre_work(batch), post = post_work(batch);
        const Cycle tpre = npu_time(pre, full_bw, &layer);
        const MhaStage m = mha(lists);
        layer.add(m.tally);
        const Cycle tpost = npu_time(post, full_bw, &layer) + post.comm;
        const Cycle per_layer = tpre + m.duration + tpost;
        layer.scale(layers);
        total.add(layer);
        if (tl) {
            const std::string mha_res = mode.uses_pim() ? "pim" : "npu-s";
            for (std::uint32_t l = 0; l < layers; ++l) {
                const Cycle t = t0 + Cycle{l} * per_layer;
                const std::string tag = "L" + std::to_string(l);
                tl->add("npu-s", t, t + tpre, tag + " pre");
                tl->add(mha_res, t + tpre, t + tpre + m.duration, tag + " mha");
                tl->add("npu-s", t + tpre + m.duration, t + per_layer - post.comm, tag + " post");
                tl->add("link", t + per_layer - post.comm, t + per_layer, tag + " allreduce");
            }
        }
        return per_layer * layers;
    }

    // Sub-batch interleaving over 2N+2 stages: stage k runs NPU job k next to
    // MHA job k-1, SB1 and SB2 alternating.
    Cycle interleaved_pass(const ChannelLists& lists, Tally& total, StageTimeline* tl, Cycle t0) {
        const auto split = partition_subbatches(lists);
        ChannelLists sb1(lists.size()), sb2(lists.size());
        std::uint64_t b1 = 0, b2 = 0;
        for (std::size_t c = 0; c < lists.size(); ++c) {
            const std::size_t n1 = split.per_channel[c].first;
            sb1[c].assign(lists[c].begin(), lists[c].begin() + n1);
            sb2[c].assign(lists[c].begin() + n1, lists[c].end());
            b1 += sb1[c].size(), b2 += sb2[c].size();
        }
        const NpuWork p1 = pre_work(b1), p2 = pre_work(b2), q1 = post_work(b1), q2 = post_work(b2);
        NpuWork x1 = q1, x2 = q2;
        x1.append(p1), x2.append(p2);
        const MhaStage m1 = mha(sb1), m2 = mha(sb2);

        struct Slot {
            StageCost cost;
            std::uint32_t repeat;
            std::string label;
        };
        const std::uint32_t mid = layers - 1;
        std::vector<Slot> slots{{stage(p1, nullptr), 1, "pre SB1"},
                                {stage(p2, &m1), 1, "pre SB2 | mha SB1"},
                                {stage(x1, &m2), mid, "post+pre SB1 | mha SB2"},
                                {stage(x2, &m1), mid, "post+pre SB2 | mha SB1"},
                                {stage(q1, &m2), 1, "post SB1 | mha SB2"},
                                {stage(q2, nullptr), 1, "post SB2"}};
        Cycle sum = 0;
        for (auto& s : slots) {
            Tally t = s.cost.tally;
            t.scale(s.repeat);
            total.add(t);
            sum += s.cost.duration * s.repeat;
        }
        if (tl) {
            std::vector<const Slot*> order{&slots[0], &slots[1]};
            for (std::uint32_t l = 0; l < mid; ++l) order.push_back(&slots[2]), order.push_back(&slots[3]);
            order.push_back(&slots[4]), order.push_back(&slots[5]);
            Cycle t = t0;
            for (std::size_t k = 0; k < order.size(); ++k) {
                const auto& c = order[k]->cost;
                const std::string tag = "S" + std::to_string(k) + " " + order[k]->label;
                tl->add("npu-s", t, t + c.npu, tag);
                tl->add("pim", t, t + c.mha, tag);
                tl->add("link", t, t + c.comm, tag);
                t += c.duration;
            }
        }
        return sum;
    }

    Cycle device_pass(const ChannelLists& lists, std::uint64_t batch, Tally& total, StageTimeline* tl, Cycle t0) {
        if (mode.interleaved()) return interleaved_pass(lists, total, tl, t0);
        return serial_pass(lists, batch, total, tl, t0);
    }
};

namespace {

BandwidthProfile cached_bandwidth(const HardwareConfig& hw) {
    static std::mutex mu;
    static std::vector<std::pair<HardwareConfig, BandwidthProfile>> cache;
    std::lock_guard<std::mutex> lock(mu);
    for (const auto& [k, v] : cache)
        if (k == hw) return v;
    auto p = measure_bandwidth(hw);
    cache.emplace_back(hw, p);
    return p;
}

}  // namespace

Engine::Engine(const SimConfig& cfg, ExecutionMode mode, EngineOptions opts)
    : cfg_(cfg), mode_(mode), opts_(opts) {
    mode_.validate();
    cfg_.hardware.validate();
    cfg_.model.validate();
    if (cfg_.model.pp_degree > cfg_.model.num_layers)
        throw ConfigError("model.pp_degree " + std::to_string(cfg_.model.pp_degree) + " exceeds num_layers " +
                          std::to_string(cfg_.model.num_layers));
    bw_ = cached_bandwidth(cfg_.hardware);
    impl_ = std::make_unique<Impl>(cfg_, mode_, opts_, bw_);
}

Engine::~Engine() = default;

IterationResult Engine::run_iteration(const IterationPlan& plan, Cycle start) {
    const auto& hw = cfg_.hardware;
    const std::uint32_t pp = cfg_.model.pp_degree;
    if (plan.channels.size() != hw.hbm_channels)
        throw std::invalid_argument("run_iteration: plan has " + std::to_string(plan.channels.size()) +
                                    " channel lists, hardware has " + std::to_string(hw.hbm_channels));
    IterationResult out;
    StageTimeline* tl = opts_.record_timeline ? &out.timeline : nullptr;
    if (tl) tl->iteration_boundaries.push_back(start);

    // Micro-batches take every pp-th request of each channel list.
    std::vector<ChannelLists> micro(pp, ChannelLists(hw.hbm_channels));
    for (std::size_t c = 0; c < plan.channels.size(); ++c)
        for (std::size_t i = 0; i < plan.channels[c].size(); ++i) micro[i % pp][c].push_back(plan.channels[c][i]);

    Tally tally;
    Cycle sum = 0, worst = 0;
    std::uint64_t tokens = 0;
    for (const auto& mb : micro) {
        std::uint64_t b = 0;
        for (const auto& ch : mb) b += ch.size();
        if (b == 0) continue;
        tokens += b;
        const Cycle t = impl_->device_pass(mb, b, tally, tl, start + sum);
        const auto p2p = pp > 1 ? static_cast<Cycle>(std::ceil(double(b) * cfg_.model.d_model * hw.data_width /
                                                               hw.link_bytes_per_cycle))
                                : 0;
        sum += t;
        worst = std::max(worst, t + p2p);
    }
    const Cycle total = sum + Cycle{pp - 1} * worst;

    Metrics& m = out.metrics;
    m.clock_hz = hw.clock_hz;
    m.channels = hw.hbm_channels;
    m.bytes_per_cycle_per_channel = hw.mem_bytes_per_cycle;
    m.tokens_completed = tokens;
    m.sim_cycles = total;
    m.npu_busy = tally.npu;
    m.npuv_busy = tally.npuv;
    m.pim_busy = tally.pim;
    m.bytes_moved = tally.rd_bytes + tally.wr_bytes;
    const double burst = double(hw.mem_bytes_per_cycle);
    m.command_counts["rd"] = tally.rd_bytes / burst;
    m.command_counts["wr"] = tally.wr_bytes / burst;
    m.command_counts["act"] = m.bytes_moved / double(hw.page_size);
    m.command_counts["pim_op"] = tally.pim_tiles;
    m.command_counts["gwrite"] = tally.gwrites;
    const auto& e = hw.energy;
    m.energy = (m.command_counts["rd"] * e.read + (m.command_counts["wr"] + tally.gwrites) * e.write +
                m.command_counts["act"] * e.activate + tally.pim_tiles * e.pim_op) *
               e.joules_per_unit;
    return out;
}

RunResult Engine::run() {
    Scheduler sched(scheduler_config_for(cfg_, mode_));
    RunResult res;
    res.warmup_iterations = warmup_batch(cfg_.workload, sched).iterations;
    res.metrics.clock_hz = cfg_.hardware.clock_hz;
    res.metrics.channels = cfg_.hardware.hbm_channels;
    res.metrics.bytes_per_cycle_per_channel = cfg_.hardware.mem_bytes_per_cycle;
    Cycle t = 0;
    IterationPlan plan = sched.current_plan();
    for (std::uint32_t i = 0; i < cfg_.workload.measure_iterations; ++i) {
        auto it = run_iteration(plan, t);
        if (opts_.record_plans) res.plans.push_back(plan);
        t += it.metrics.sim_cycles;
        res.metrics += it.metrics;
        for (auto& [name, list] : it.timeline.resources) {
            auto& dst = res.timeline.resources[name];
            dst.insert(dst.end(), list.begin(), list.end());
        }
        res.timeline.iteration_boundaries.insert(res.timeline.iteration_boundaries.end(),
                                                 it.timeline.iteration_boundaries.begin(),
                                                 it.timeline.iteration_boundaries.end());
        res.tokens_generated_by_requests += sched.advance();
        plan = sched.iteration_boundary();
    }
    if (opts_.record_timeline) res.timeline.iteration_boundaries.push_back(t);
    return res;
}

SchedulerConfig scheduler_config_for(const SimConfig& cfg, const ExecutionMode& mode) {
    SchedulerConfig sc;
    sc.hardware = cfg.hardware;
    sc.model = cfg.model;
    sc.batch_slots = cfg.workload.batch_size;
    sc.policy = mode.greedy() ? PackingPolicy::GreedyMinLoad : PackingPolicy::RoundRobin;
    return sc;
}

}  // namespace npupim
