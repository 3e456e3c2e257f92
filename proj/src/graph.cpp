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

#include "npupim/graph.hpp"

namespace npupim {

std::string_view to_string(OpKind kind) {
    switch (kind) {
        case OpKind::QKVGen: return "QKVGen";
        case OpKind::LogitGEMV: return "LogitGEMV";
        case OpKind::Softmax: return "Softmax";
        case OpKind::AttendGEMV: return "AttendGEMV";
        case OpKind::Projection: return "Projection";
        case OpKind::FFN1: return "FFN1";
        case OpKind::FFN2: return "FFN2";
        case OpKind::Residual: return "Residual";
        case OpKind::LayerNorm: return "LayerNorm";
    }
    return "?";
}

bool is_gemm(OpKind kind) {
    return kind == OpKind::QKVGen || kind == OpKind::Projection || kind == OpKind::FFN1 || kind == OpKind::FFN2;
}
bool is_gemv(OpKind kind) { return kind == OpKind::LogitGEMV || kind == OpKind::AttendGEMV; }
bool is_vector(OpKind kind) {
    return kind == OpKind::Softmax || kind == OpKind::Residual || kind == OpKind::LayerNorm;
}

std::uint32_t vector_op_coefficient(OpKind kind) {
    switch (kind) {
        case OpKind::Softmax: return 5;
        case OpKind::LayerNorm: return 8;
        case OpKind::Residual: return 1;
        default: throw std::invalid_argument("not a vector op: " + std::string(to_string(kind)));
    }
}

ResourceClass OperatorNode::resource_class() const {
    if (is_gemm(kind)) return ResourceClass::NpuSystolic;
    if (is_gemv(kind)) return ResourceClass::Pim;
    return ResourceClass::NpuVector;
}

std::size_t DecoderDag::add(OperatorNode node, std::vector<std::size_t> node_deps) {
    nodes.push_back(node);
    deps.push_back(std::move(node_deps));
    return nodes.size() - 1;
}

void DecoderDag::dump(std::ostream& out) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        out << i << ' ' << to_string(n.kind);
        if (is_vector(n.kind))
            out << " elements=" << n.elements;
        else
            out << " shape=(" << n.m << ',' << n.n << ',' << n.k << ')';
        if (n.request_id) out << " req=" << *n.request_id;
        if (n.head_id) out << " head=" << *n.head_id;
        out << " deps=[";
        for (std::size_t j = 0; j < deps[i].size(); ++j) out << (j ? "," : "") << deps[i][j];
        out << "]\n";
    }
}

DecoderDag build_decoder_block(const ModelConfig& model, const std::vector<Request>& batch, std::uint32_t layer_id) {
    if (batch.empty()) throw std::invalid_argument("build_decoder_block: empty batch");
    const std::uint64_t b = batch.size();
    const std::uint64_t e = model.d_model;
    const std::uint64_t tp = model.tp_degree;
    const std::uint64_t f = model.ffn_dim();
    const std::uint64_t dh = model.head_dim();
    const std::uint32_t heads = model.num_heads / model.tp_degree;

    auto gemm = [&](OpKind kind, std::uint64_t m, std::uint64_t n, std::uint64_t k) {
        OperatorNode node;
        node.kind = kind;
        node.m = m, node.n = n, node.k = k;
        node.layer_id = layer_id;
        return node;
    };
    auto vec = [&](OpKind kind, std::uint64_t elements) {
        OperatorNode node;
        node.kind = kind;
        node.elements = elements;
        node.layer_id = layer_id;
        return node;
    };

    DecoderDag dag;
    dag.nodes.reserve(decoder_node_count(b, heads));
    auto ln1 = dag.add(vec(OpKind::LayerNorm, b * e), {});
    auto qkv = dag.add(gemm(OpKind::QKVGen, b, 3 * e / tp, e), {ln1});

    std::vector<std::size_t> attends;
    attends.reserve(b * heads);
    for (const auto& req : batch) {
        const std::uint64_t len = req.context_len();
        if (len == 0) throw std::invalid_argument("build_decoder_block: zero context length");
        for (std::uint32_t h = 0; h < heads; ++h) {
            auto logit = gemm(OpKind::LogitGEMV, 1, len, dh);
            logit.request_id = req.id, logit.head_id = h;
            auto li = dag.add(logit, {qkv});
            auto sm = vec(OpKind::Softmax, len);
            sm.request_id = req.id, sm.head_id = h;
            auto si = dag.add(sm, {li});
            auto attend = gemm(OpKind::AttendGEMV, 1, dh, len);
            attend.request_id = req.id, attend.head_id = h;
            attends.push_back(dag.add(attend, {si}));
        }
    }

    auto proj = dag.add(gemm(OpKind::Projection, b, e, e / tp), std::move(attends));
    auto res1 = dag.add(vec(OpKind::Residual, b * e), {proj});
    auto ln2 = dag.add(vec(OpKind::LayerNorm, b * e), {res1});
    auto ffn1 = dag.add(gemm(OpKind::FFN1, b, f / tp, e), {ln2});
    auto ffn2 = dag.add(gemm(OpKind::FFN2, b, e, f / tp), {ffn1});
    dag.add(vec(OpKind::Residual, b * e), {ffn2});
    return dag;
}

std::vector<OperatorNode> decoder_gemm_nodes(const ModelConfig& model, std::uint64_t batch, std::uint32_t layer_id) {
    if (batch == 0) throw std::invalid_argument("decoder_gemm_nodes: empty batch");
    const std::uint64_t e = model.d_model, f = model.ffn_dim(), tp = model.tp_degree;
    auto node = [&](OpKind kind, std::uint64_t n, std::uint64_t k) {
        OperatorNode out;
        out.kind = kind;
        out.m = batch, out.n = n, out.k = k;
        out.layer_id = layer_id;
        return out;
    };
    return {node(OpKind::QKVGen, 3 * e / tp, e), node(OpKind::Projection, e, e / tp), node(OpKind::FFN1, f / tp, e),
            node(OpKind::FFN2, e, f / tp)};
}

ArithmeticProfile profile(const OperatorNode& node, Bytes data_width) {
    ArithmeticProfile p;
    if (is_vector(node.kind)) {
        if (node.elements == 0) throw std::invalid_argument("profile: zero-element vector op");
        p.flops = vector_op_coefficient(node.kind) * node.elements;
        // read input, write output
        p.bytes = 2 * data_width * node.elements;
    } else {
        if (node.m == 0 || node.n == 0 || node.k == 0)
            throw std::invalid_argument("profile: zero dimension in " + std::string(to_string(node.kind)));
        p.flops = 2 * node.m * node.n * node.k;
        p.bytes = data_width * (node.m * node.k + node.k * node.n + node.m * node.n);
    }
    p.intensity = static_cast<double>(p.flops) / static_cast<double>(p.bytes);
    return p;
}

}  // namespace npupim
