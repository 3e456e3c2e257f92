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

#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "npupim/graph.hpp"
#include "npupim/npu.hpp"

using namespace npupim;

namespace {

std::vector<Request> make_batch(std::size_t n, std::uint32_t len) {
    std::vector<Request> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id = static_cast<RequestId>(i);
        out[i].input_len = len + static_cast<std::uint32_t>(i);
    }
    return out;
}

OperatorNode gemm(OpKind kind, std::uint64_t m, std::uint64_t n, std::uint64_t k) {
    OperatorNode node;
    node.kind = kind;
    node.m = m, node.n = n, node.k = k;
    return node;
}

OperatorNode vec(OpKind kind, std::uint64_t elements) {
    OperatorNode node;
    node.kind = kind;
    node.elements = elements;
    return node;
}

}  // namespace

TEST_CASE("decoder block node count and shapes", "[graph]") {
    ModelConfig m = model_preset("gpt3-7b");
    m.tp_degree = 4;
    auto dag = build_decoder_block(m, make_batch(5, 10), 3);
    const std::uint64_t heads = m.num_heads / m.tp_degree;
    CHECK(dag.nodes.size() == decoder_node_count(5, heads));
    CHECK(dag.nodes.size() == 8 + 3 * 5 * heads);
    REQUIRE(dag.deps.size() == dag.nodes.size());
    for (std::size_t i = 0; i < dag.nodes.size(); ++i) {
        CHECK(dag.nodes[i].layer_id == 3);
        for (auto d : dag.deps[i]) CHECK(d < i);
    }
    const auto& qkv = dag.nodes[1];
    CHECK(qkv.kind == OpKind::QKVGen);
    CHECK(qkv.m == 5);
    CHECK(qkv.n == 3 * 4096 / 4);
    CHECK(qkv.k == 4096);
    const auto& logit = dag.nodes[2];
    CHECK(logit.kind == OpKind::LogitGEMV);
    CHECK(logit.m == 1);
    CHECK(logit.n == 10);
    CHECK(logit.k == 128);
    CHECK(dag.nodes.back().kind == OpKind::Residual);
    std::ostringstream dump;
    dag.dump(dump);
    CHECK(!dump.str().empty());
    CHECK_THROWS_AS(build_decoder_block(m, {}, 0), std::invalid_argument);
}

TEST_CASE("batched gemm helper matches the decoder block", "[graph]") {
    ModelConfig m = model_preset("gpt3-13b");
    m.tp_degree = 2;
    auto dag = build_decoder_block(m, make_batch(7, 4), 0);
    auto gemms = decoder_gemm_nodes(m, 7);
    std::vector<OperatorNode> from_dag;
    for (const auto& n : dag.nodes)
        if (is_gemm(n.kind)) from_dag.push_back(n);
    REQUIRE(from_dag.size() == gemms.size());
    for (std::size_t i = 0; i < gemms.size(); ++i) {
        CHECK(gemms[i].kind == from_dag[i].kind);
        CHECK(gemms[i].m == from_dag[i].m);
        CHECK(gemms[i].n == from_dag[i].n);
        CHECK(gemms[i].k == from_dag[i].k);
    }
}

TEST_CASE("operator classes", "[graph]") {
    CHECK(is_gemm(OpKind::FFN1));
    CHECK(is_gemv(OpKind::LogitGEMV));
    CHECK(is_gemv(OpKind::AttendGEMV));
    CHECK(is_vector(OpKind::Softmax));
    CHECK(gemm(OpKind::AttendGEMV, 1, 2, 3).resource_class() == ResourceClass::Pim);
    CHECK(gemm(OpKind::FFN2, 1, 2, 3).resource_class() == ResourceClass::NpuSystolic);
    CHECK(vec(OpKind::LayerNorm, 4).resource_class() == ResourceClass::NpuVector);
}

TEST_CASE("arithmetic profile against direct formulas", "[graph]") {
    std::mt19937 rng(3);
    std::uniform_int_distribution<std::uint64_t> dim(1, 5000);
    for (int i = 0; i < 200; ++i) {
        const auto mm = dim(rng), nn = dim(rng), kk = dim(rng);
        auto p = profile(gemm(OpKind::Projection, mm, nn, kk), 2);
        CHECK(p.flops == 2 * mm * nn * kk);
        CHECK(p.bytes == 2 * (mm * kk + kk * nn + mm * nn));
        CHECK(p.intensity == Catch::Approx(double(p.flops) / double(p.bytes)));
    }
    auto sm = profile(vec(OpKind::Softmax, 1000), 2);
    CHECK(sm.flops == 5 * 1000);
    CHECK(sm.bytes == 2 * 2 * 1000);
    CHECK(profile(vec(OpKind::LayerNorm, 10), 2).flops == 80);
    CHECK_THROWS_AS(profile(gemm(OpKind::FFN1, 0, 1, 1), 2), std::invalid_argument);
    CHECK_THROWS_AS(profile(vec(OpKind::Residual, 0), 2), std::invalid_argument);
}

TEST_CASE("output-stationary tiling covers the output once", "[npu]") {
    std::mt19937 rng(9);
    std::uniform_int_distribution<std::uint64_t> dim(1, 700);
    for (int i = 0; i < 200; ++i) {
        const auto mm = dim(rng), nn = dim(rng), kk = dim(rng);
        auto tiles = tile_gemm(gemm(OpKind::FFN1, mm, nn, kk), 128);
        CHECK(tiles.size() == ceil_div(mm, 128) * ceil_div(nn, 128));
        std::uint64_t area = 0;
        for (const auto& t : tiles) {
            CHECK(t.m <= 128);
            CHECK(t.n <= 128);
            CHECK(t.k == kk);
            area += t.m * t.n;
        }
        CHECK(area == mm * nn);
    }
    CHECK_THROWS_AS(tile_gemm(gemm(OpKind::LogitGEMV, 1, 2, 3), 128), std::invalid_argument);
    CHECK(gemm_tile_cycles({128, 128, 4096}) == 4096 + 256);
}

TEST_CASE("roofline time", "[npu]") {
    HardwareConfig hw;
    // Compute bound: 256 x 4096 x 4096.
    auto big = make_npu_job(gemm(OpKind::Projection, 256, 4096, 4096), hw);
    const Cycle compute = ceil_div(2 * 32 * (4096 + 128 + 128), 8);
    CHECK(npu_compute_time(big, 1e9, 8) == compute);
    CHECK(big.weight_bytes == 2 * 4096 * 4096);
    CHECK(big.activation_bytes == 2 * 256 * 4096);
    CHECK(big.output_bytes == 2 * 256 * 4096);
    // Memory bound at low bandwidth.
    const double bw = 100.0;
    CHECK(npu_compute_time(big, bw, 8) == Cycle(std::ceil(double(big.total_bytes()) / bw)));
    // More arrays never slow a job down.
    CHECK(npu_compute_time(big, 2048, 16) <= npu_compute_time(big, 2048, 8));
    CHECK_THROWS_AS(npu_compute_time(big, 0, 8), std::invalid_argument);
    CHECK_THROWS_AS(npu_compute_time(big, 10, 0), std::invalid_argument);
}

TEST_CASE("vector and gemv costs", "[npu]") {
    HardwareConfig hw;
    CHECK(vector_op_cycles(vec(OpKind::Softmax, 1024), 8, 128) == 5);
    CHECK(vector_op_cycles(vec(OpKind::LayerNorm, 1), 8, 128) == 1);
    CHECK_THROWS_AS(vector_op_cycles(gemm(OpKind::FFN1, 1, 1, 1), 8, 128), std::invalid_argument);
    CHECK_THROWS_AS(vector_op_cycles(vec(OpKind::Softmax, 10), 0, 128), std::invalid_argument);

    Cycle prev = 0;
    for (std::uint64_t len : {64, 256, 1024, 4096}) {
        auto node = gemm(OpKind::LogitGEMV, 1, len, 128);
        const Cycle t = npu_gemv_time(node, hw, 1440.0);
        CHECK(t >= Cycle(std::ceil(double(profile(node, 2).bytes) / 1440.0)));
        CHECK(t > prev);
        prev = t;
    }
    // Logit over 256 keys: two 128-wide tiles of K + 1 + 128 cycles on 8 arrays.
    CHECK(npu_gemv_time(gemm(OpKind::LogitGEMV, 1, 256, 128), hw, 1e9) == ceil_div(2 * (128 + 1 + 128), 8));
    CHECK_THROWS_AS(npu_gemv_time(gemm(OpKind::FFN1, 1, 1, 1), hw, 10), std::invalid_argument);
}
