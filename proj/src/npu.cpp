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

#include "npupim/npu.hpp"

#include <algorithm>
#include <cmath>

namespace npupim {

std::vector<GemmTile> tile_gemm(const OperatorNode& node, std::uint32_t sa_dim) {
    if (!is_gemm(node.kind)) throw std::invalid_argument("tile_gemm: not a GEMM: " + std::string(to_string(node.kind)));
    if (node.m == 0 || node.n == 0 || node.k == 0) throw std::invalid_argument("tile_gemm: zero dimension");
    if (sa_dim == 0) throw std::invalid_argument("tile_gemm: sa_dim is 0");
    std::vector<GemmTile> tiles;
    tiles.reserve(ceil_div(node.m, sa_dim) * ceil_div(node.n, sa_dim));
    for (std::uint64_t m0 = 0; m0 < node.m; m0 += sa_dim)
        for (std::uint64_t n0 = 0; n0 < node.n; n0 += sa_dim)
            tiles.push_back({std::min<std::uint64_t>(sa_dim, node.m - m0), std::min<std::uint64_t>(sa_dim, node.n - n0),
                             node.k});
    return tiles;
}

Cycle gemm_tile_cycles(const GemmTile& tile) { return tile.k + tile.m + tile.n; }

NpuJob make_npu_job(const OperatorNode& node, const HardwareConfig& hw) {
    NpuJob job;
    job.node = node;
    job.tiles = tile_gemm(node, hw.systolic_dim);
    job.weight_bytes = hw.data_width * node.k * node.n;
    job.activation_bytes = hw.data_width * node.m * node.k;
    job.output_bytes = hw.data_width * node.m * node.n;
    return job;
}

Cycle npu_compute_time(const NpuJob& job, double available_bw, std::uint32_t sa_parallelism) {
    if (available_bw <= 0) throw std::invalid_argument("npu_compute_time: available_bw must be > 0");
    if (sa_parallelism == 0) throw std::invalid_argument("npu_compute_time: sa_parallelism is 0");
    Cycle tile_sum = 0;
    for (const auto& t : job.tiles) tile_sum += gemm_tile_cycles(t);
    Cycle compute = ceil_div(tile_sum, sa_parallelism);
    auto memory = static_cast<Cycle>(std::ceil(static_cast<double>(job.total_bytes()) / available_bw));
    return std::max(compute, memory);
}

Cycle vector_op_cycles(const OperatorNode& node, std::uint32_t vu_count, std::uint32_t lanes) {
    if (!is_vector(node.kind))
        throw std::invalid_argument("vector_op_cycles: not a vector op: " + std::string(to_string(node.kind)));
    if (node.elements == 0) throw std::invalid_argument("vector_op_cycles: zero elements");
    if (vu_count == 0 || lanes == 0) throw std::invalid_argument("vector_op_cycles: no vector lanes");
    return ceil_div(vector_op_coefficient(node.kind) * node.elements, std::uint64_t{vu_count} * lanes);
}

Cycle npu_gemv_time(const OperatorNode& node, const HardwareConfig& hw, double available_bw) {
    if (!is_gemv(node.kind)) throw std::invalid_argument("npu_gemv_time: not a GEMV");
    if (available_bw <= 0) throw std::invalid_argument("npu_gemv_time: available_bw must be > 0");
    auto p = profile(node, hw.data_width);
    // Same output-stationary tiling as a GEMM; a single input row fills one
    // array row per tile.
    const std::uint64_t sa = hw.systolic_dim;
    Cycle tile_sum = 0;
    for (std::uint64_t m0 = 0; m0 < node.m; m0 += sa)
        for (std::uint64_t n0 = 0; n0 < node.n; n0 += sa)
            tile_sum += node.k + std::min(sa, node.m - m0) + std::min(sa, node.n - n0);
    const Cycle compute = ceil_div(tile_sum, hw.systolic_arrays);
    const auto memory = static_cast<Cycle>(std::ceil(static_cast<double>(p.bytes) / available_bw));
    return std::max(compute, memory);
}

}  // namespace npupim
