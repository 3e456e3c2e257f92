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
#include <tuple>
#include <vector>

#include "npupim/config.hpp"
#include "npupim/dram.hpp"

namespace npupim {

/// Work of one head group of one request: the heads whose query slice
/// shares a DRAM row. Logits of all heads in the group come from the same
/// GEMVs; attends run per head.
struct HeadGroupWork {
    std::uint32_t heads = 1;
    std::vector<PimDims> logit_blocks;
    std::vector<PimDims> attend_blocks;
    /// Softmax input size (heads x seq_len).
    std::uint64_t softmax_elements = 0;
    /// Probabilities written back for the attend GWRITEs.
    Bytes writeback_bytes = 0;
};

/// Largest GEMV tile count whose block estimate stays within an eighth of
/// tREFI, so refresh deferrals stay short.
std::uint32_t max_gemv_tiles(const HardwareConfig& hw);

/// Per-request MHA decomposition on one channel for the device-local model
/// shard (heads and d_model divided by the TP degree).
std::vector<HeadGroupWork> plan_request_mha(std::uint64_t seq_len, const HardwareConfig& hw, const ModelConfig& model);

/// HEADER, GWRITEs, one ACTIVATION per bankgroup, GEMV(k), PIM_PRECHARGE.
std::vector<PimCommand> gemv_block_commands(const PimDims& dims, const HardwareConfig& hw, std::uint32_t channel,
                                            std::uint32_t row);

/// Same work issued as per-tile ACTIVATIONs, DOTPRODUCT and RDRESULT.
std::vector<PimCommand> dotproduct_block_commands(const PimDims& dims, const HardwareConfig& hw, std::uint32_t channel,
                                                  std::uint32_t row);

/// Full command stream of one request's MHA, rows allocated from `row_base`.
std::vector<PimCommand> request_command_stream(std::uint64_t seq_len, const HardwareConfig& hw,
                                               const ModelConfig& model, std::uint32_t channel,
                                               std::uint32_t row_base = 0);

/// Runs one request's MHA stream on an idle channel through the controller,
/// refresh included. Returns the cycles to drain.
Cycle simulate_request_mha(std::uint64_t seq_len, const HardwareConfig& hw, const ModelConfig& model,
                           bool aliased = false);

/// Block latencies measured on an idle channel with the cycle-level
/// controller, memoized by shape.
class PimBlockCosts {
  public:
    explicit PimBlockCosts(const HardwareConfig& hw) : hw_(hw) {}

    Cycle cost(const PimDims& dims);
    Cycle cost(const std::vector<PimDims>& blocks);
    /// Long-run slowdown from refresh (REF plus HEADER deferrals), measured by
    /// streaming blocks across many refresh intervals.
    double refresh_factor();

  private:
    HardwareConfig hw_;
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint64_t>, Cycle> memo_;
    double refresh_factor_ = 0.0;
};

struct HeadJob {
    Cycle logit = 0;
    Cycle softmax = 0;
    Cycle attend = 0;
};

/// Software pipeline of logit -> softmax -> attend per head on one PIM unit
/// and one vector share. The PIM unit runs a ready attend before the next
/// logit. With `overlap` off every head runs strictly in sequence.
Cycle mha_head_pipeline(const std::vector<HeadJob>& jobs, bool overlap = true);

/// Uniform-head convenience form.
Cycle mha_head_pipeline(std::uint32_t heads, Cycle logit, Cycle softmax, Cycle attend);

}  // namespace npupim
