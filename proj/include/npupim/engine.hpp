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

#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "npupim/config.hpp"
#include "npupim/pim_mha.hpp"
#include "npupim/scheduler.hpp"

namespace npupim {

enum class Mode { NpuOnly, NpuPimBlocked, NeuPims };

struct ExecutionMode {
    Mode mode = Mode::NeuPims;
    bool dual_row_buffers = true;
    bool greedy_packing = true;
    bool subbatch_interleaving = true;

    static ExecutionMode npu_only();
    static ExecutionMode blocked();
    static ExecutionMode neupims(bool drb = true, bool gmlbp = true, bool sbi = true);

    /// Throws ConfigError on inconsistent flags.
    void validate() const;
    /// "npu-only", "blocked" or "neupims".
    std::string name() const;
    /// "+"-joined enabled flags, "none" when empty.
    std::string flags() const;
    bool uses_pim() const { return mode != Mode::NpuOnly; }
    bool greedy() const { return mode == Mode::NeuPims && greedy_packing; }
    bool interleaved() const { return mode == Mode::NeuPims && subbatch_interleaving; }
    bool dual_buffers() const { return mode == Mode::NeuPims && dual_row_buffers; }
};

Mode parse_mode(const std::string& name);

struct EngineOptions {
    /// Include layernorm and residual vector ops.
    bool model_norm_ops = true;
    bool record_timeline = false;
    /// Keep the plan of every measured iteration.
    bool record_plans = false;
};

struct Interval {
    Cycle start = 0;
    Cycle end = 0;
    std::string label;
};

struct StageTimeline {
    std::map<std::string, std::vector<Interval>> resources;
    std::vector<Cycle> iteration_boundaries;

    void add(const std::string& resource, Cycle start, Cycle end, std::string label);
    /// Intervals on each resource are disjoint.
    bool non_overlapping() const;
    /// resource,start,end,label
    void write_csv(std::ostream& out) const;
};

struct Metrics {
    std::uint64_t tokens_completed = 0;
    Cycle sim_cycles = 0;
    double npu_busy = 0;
    double npuv_busy = 0;
    /// Average over channels.
    double pim_busy = 0;
    double bytes_moved = 0;
    std::map<std::string, double> command_counts;
    double energy = 0;
    double clock_hz = 1e9;
    std::uint32_t channels = 32;
    Bytes bytes_per_cycle_per_channel = 64;

    double throughput() const;
    double npu_util() const;
    double npuv_util() const;
    double pim_util() const;
    double bw_util() const;

    Metrics& operator+=(const Metrics& other);
    bool operator==(const Metrics&) const = default;
};

std::string metrics_json(const Metrics& m, const std::map<std::string, std::string>& labels = {});

/// Data-bus throughput of one channel under a saturating sequential read
/// stream, alone and next to a saturating PIM stream, measured with the
/// cycle-level controller.
struct BandwidthProfile {
    double mem_only = 0;
    double with_pim = 0;
    /// Share of the with-PIM run the PIM unit was busy.
    double pim_share = 0;

    /// Channel bandwidth when PIM is busy for fraction u of the time.
    double at_pim_share(double u) const;
};
BandwidthProfile measure_bandwidth(const HardwareConfig& hw);

/// Closed-form interleaved schedule: stage k runs NPU job k next to MHA job
/// k-1 and lasts as long as the longer of the two. Both vectors have
/// 2N+2 entries, MHA entry 0 and 2N+1 being empty.
Cycle interleaved_total(const std::vector<Cycle>& npu_jobs, const std::vector<Cycle>& mha_jobs);

struct IterationResult {
    Metrics metrics;
    StageTimeline timeline;
};

struct RunResult {
    Metrics metrics;
    StageTimeline timeline;
    std::uint32_t warmup_iterations = 0;
    std::uint64_t tokens_generated_by_requests = 0;
    std::vector<IterationPlan> plans;
};

class Engine {
  public:
    Engine(const SimConfig& cfg, ExecutionMode mode, EngineOptions opts = {});
    ~Engine();

    /// Warm-up followed by the measured iterations.
    RunResult run();

    /// Time one iteration of the whole TP x PP system for `plan`.
    IterationResult run_iteration(const IterationPlan& plan, Cycle start = 0);

    const SimConfig& config() const { return cfg_; }
    const ExecutionMode& mode() const { return mode_; }
    const BandwidthProfile& bandwidth() const { return bw_; }

  private:
    struct Impl;
    SimConfig cfg_;
    ExecutionMode mode_;
    EngineOptions opts_;
    BandwidthProfile bw_;
    std::unique_ptr<Impl> impl_;
};

SchedulerConfig scheduler_config_for(const SimConfig& cfg, const ExecutionMode& mode);

}  // namespace npupim
