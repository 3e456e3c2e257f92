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

#include <vector>

#include "npupim/config.hpp"
#include "npupim/graph.hpp"

namespace npupim {

struct GemmTile {
    std::uint64_t m = 0, n = 0, k = 0;
};

struct NpuJob {
    OperatorNode node;
    std::vector<GemmTile> tiles;
    Bytes weight_bytes = 0;
    Bytes activation_bytes = 0;
    Bytes output_bytes = 0;
    std::uint32_t assigned_unit = 0;

    Bytes total_bytes() const { return weight_bytes + activation_bytes + output_bytes; }
};

/// Output-stationary tiling; edge tiles carry the remainder.
std::vector<GemmTile> tile_gemm(const OperatorNode& node, std::uint32_t sa_dim);

/// K + M_t + N_t: one reduction step per cycle plus fill and drain.
Cycle gemm_tile_cycles(const GemmTile& tile);

NpuJob make_npu_job(const OperatorNode& node, const HardwareConfig& hw);

/// Roofline: max(ceil(sum of tile cycles / sa_parallelism), ceil(bytes / available_bw)).
Cycle npu_compute_time(const NpuJob& job, double available_bw, std::uint32_t sa_parallelism);

Cycle vector_op_cycles(const OperatorNode& node, std::uint32_t vu_count, std::uint32_t lanes);

/// GEMV executed by the NPU itself (no PIM): roofline of the systolic tile
/// time spread over all arrays and the streaming time at `available_bw`.
Cycle npu_gemv_time(const OperatorNode& node, const HardwareConfig& hw, double available_bw);

}  // namespace npupim
