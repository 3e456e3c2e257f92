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
#include <optional>
#include <vector>

#include "npupim/config.hpp"

namespace npupim {

using RequestId = std::uint32_t;
using PageId = std::uint32_t;

enum class RequestState { Queued, Active, Done };

/// One inference stream. Output length is drawn up front; generation stops
/// when `generated_len` reaches `target_output_len`.
struct Request {
    RequestId id = 0;
    std::uint32_t input_len = 1;
    std::uint32_t target_output_len = 1;
    std::uint32_t generated_len = 0;
    RequestState state = RequestState::Queued;
    std::optional<std::uint32_t> channel;
    /// KV-cache pages, one list per layer resident on this device.
    std::vector<std::vector<PageId>> kv_pages;

    std::uint32_t context_len() const { return input_len + generated_len; }
    bool finished() const { return generated_len >= target_output_len; }
};

/// Reads a CSV with header `input_len,output_len`. Rows are returned in
/// file order; errors carry the 1-based line number.
std::vector<LengthRecord> load_length_dataset(const std::filesystem::path& path);

/// Log-normal shape used by the synthetic sampler. Chosen so that the
/// 5th/95th percentiles sit near 0.1x and 4x the mean.
inline constexpr double kSyntheticLogSigma = 1.121;

/// Deterministic for a fixed seed. File mode draws records uniformly with
/// replacement; synthetic mode draws input and output lengths independently
/// from log-normals matched to the configured means.
std::vector<Request> synthesize_requests(const WorkloadSpec& spec, std::size_t count, std::uint64_t rng_seed);

class Scheduler;

struct WarmupResult {
    std::vector<Request> batch;
    std::uint32_t iterations = 0;
};

/// Fills the batch with requests already part-way through generation (each
/// has produced a uniformly drawn share of its output) and runs iterations
/// until every one of them has taken a generation step, bounded by
/// spec.warmup_max_iterations. The scheduler keeps the warmed state; the
/// returned batch is a snapshot of its active set.
WarmupResult warmup_batch(const WorkloadSpec& spec, Scheduler& scheduler);

}  // namespace npupim
