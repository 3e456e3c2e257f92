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

#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "npupim/config.hpp"
#include "npupim/workload.hpp"

namespace npupim {

enum class OpKind { QKVGen, LogitGEMV, Softmax, AttendGEMV, Projection, FFN1, FFN2, Residual, LayerNorm };
enum class ResourceClass { NpuSystolic, Pim, NpuVector };

std::string_view to_string(OpKind kind);
bool is_gemm(OpKind kind);
bool is_gemv(OpKind kind);
bool is_vector(OpKind kind);

/// Flops per element for vector kinds: softmax 5, layernorm 8, residual 1.
std::uint32_t vector_op_coefficient(OpKind kind);

struct OperatorNode {
    OpKind kind = OpKind::QKVGen;
    /// (M, N, K) for matrix ops; M = 1 for GEMVs. Vector ops use `elements`.
    std::uint64_t m = 0, n = 0, k = 0;
    std::uint64_t elements = 0;
    std::optional<RequestId> request_id;
    std::optional<std::uint32_t> head_id;
    std::uint32_t layer_id = 0;

    ResourceClass resource_class() const;
};

struct ArithmeticProfile {
    std::uint64_t flops = 0;
    std::uint64_t bytes = 0;
    double intensity = 0.0;
};

struct DecoderDag {
    std::vector<OperatorNode> nodes;
    /// deps[i] lists the nodes that must finish before nodes[i].
    std::vector<std::vector<std::size_t>> deps;

    std::size_t add(OperatorNode node, std::vector<std::size_t> node_deps);
    /// One node per line: index, kind, shape, deps.
    void dump(std::ostream& out) const;
};

/// Node count of one layer: 4 batched GEMMs, 4 batched vector ops
/// (two layernorms, two residual adds) and 3 per-request nodes per head.
inline std::uint64_t decoder_node_count(std::uint64_t batch, std::uint64_t heads) { return 8 + 3 * batch * heads; }

/// Shapes are the per-device shard under model.tp_degree: heads and the
/// column/row dims of the weight matrices are split, activations are not.
DecoderDag build_decoder_block(const ModelConfig& model, const std::vector<Request>& batch, std::uint32_t layer_id);

/// The batched GEMMs of one layer in execution order: QKVGen, Projection,
/// FFN1, FFN2 (per-device shard).
std::vector<OperatorNode> decoder_gemm_nodes(const ModelConfig& model, std::uint64_t batch, std::uint32_t layer_id = 0);

ArithmeticProfile profile(const OperatorNode& node, Bytes data_width);

}  // namespace npupim
