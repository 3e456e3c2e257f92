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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "npupim/common.hpp"

namespace npupim {

/// DRAM timing parameters, all in memory-clock cycles.
struct DramTiming {
    Cycle tRP = 14;
    Cycle tRCD = 14;
    Cycle tRAS = 34;
    Cycle tRRD_L = 6;
    Cycle tWR = 16;
    Cycle tCCD_S = 1;
    Cycle tCCD_L = 2;
    Cycle tREFI = 3900;
    Cycle tRFC = 260;
    Cycle tFAW = 30;

    bool operator==(const DramTiming&) const = default;
};

/// Relative per-command energy weights. `joules_per_unit` scales the sum to
/// joules; left at 1.0 the energy column is a relative figure.
struct EnergyWeights {
    double read = 1.0;
    double write = 1.1;
    double activate = 2.5;
    double pim_op = 4.0;
    double joules_per_unit = 1.0;

    bool operator==(const EnergyWeights&) const = default;
};

struct HardwareConfig {
    std::uint32_t systolic_arrays = 8;
    std::uint32_t systolic_dim = 128;
    std::uint32_t vector_units = 8;
    std::uint32_t vector_lanes = 128;

    std::uint32_t hbm_channels = 32;
    std::uint32_t banks_per_channel = 32;
    std::uint32_t banks_per_bankgroup = 4;
    Bytes channel_capacity = Bytes{1} << 30;
    Bytes page_size = 1024;
    double clock_hz = 1e9;
    DramTiming timing;

    /// External data-bus rate of one channel.
    Bytes mem_bytes_per_cycle = 64;
    /// Dot-product time for one activated row in every bank (one PIM tile).
    Cycle pim_tile_latency = 32;
    Cycle gwrite_latency = 100;
    Bytes data_width = 2;

    /// Device-to-device link used for tensor-parallel all-reduce and
    /// pipeline-parallel activation hand-off.
    double link_bytes_per_cycle = 256.0;
    std::uint32_t queue_depth = 256;
    EnergyWeights energy;

    std::uint32_t bankgroups() const { return banks_per_channel / banks_per_bankgroup; }
    /// Elements held by one DRAM row.
    std::uint64_t page_elements() const { return page_size / data_width; }
    Bytes total_bytes_per_cycle() const { return mem_bytes_per_cycle * hbm_channels; }

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    bool operator==(const HardwareConfig&) const = default;
};

struct ModelConfig {
    std::string name = "gpt3-7b";
    std::uint32_t num_layers = 32;
    std::uint32_t num_heads = 32;
    std::uint32_t d_model = 4096;
    /// 0 means "4 x d_model".
    std::uint32_t ffn_hidden = 0;
    std::uint32_t tp_degree = 4;
    std::uint32_t pp_degree = 1;

    std::uint32_t ffn_dim() const { return ffn_hidden == 0 ? 4 * d_model : ffn_hidden; }
    std::uint32_t head_dim() const { return d_model / num_heads; }

    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Model presets for the GPT-3 family: gpt3-7b, gpt3-13b, gpt3-30b, gpt3-175b.
ModelConfig model_preset(const std::string& name);
std::vector<std::string> model_preset_names();

enum class DatasetKind { File, Synthetic };

struct LengthRecord {
    std::uint32_t input_len = 0;
    std::uint32_t output_len = 0;

    bool operator==(const LengthRecord&) const = default;
};

struct WorkloadSpec {
    DatasetKind dataset = DatasetKind::Synthetic;
    std::string dataset_path;
    std::vector<LengthRecord> length_records;
    double mean_input = 80.0;
    double mean_output = 296.0;
    std::uint32_t batch_size = 256;
    std::uint64_t rng_seed = 1;
    /// Upper bound on warm-up iterations.
    std::uint32_t warmup_max_iterations = 10000;
    /// Iterations simulated (and timed) after warm-up.
    std::uint32_t measure_iterations = 4;
    /// Context window: sampled input + output lengths are clipped to it
    /// (input first). 0 disables clipping.
    std::uint32_t max_context = 2048;

    void validate() const;

    bool operator==(const WorkloadSpec&) const = default;
};

/// Synthetic presets: "sharegpt" (80/296) and "alpaca" (12/56).
WorkloadSpec workload_preset(const std::string& name);

struct SimConfig {
    HardwareConfig hardware;
    ModelConfig model;
    WorkloadSpec workload;

    bool operator==(const SimConfig&) const = default;
};

/// Parse a YAML config file. Omitted keys keep their defaults, unknown keys
/// are rejected. A `model:` section may name a preset via `preset:` and
/// override individual fields.
SimConfig load_config(const std::filesystem::path& path);
SimConfig parse_config(const std::string& text);
std::string serialize_config(const SimConfig& config);

}  // namespace npupim
