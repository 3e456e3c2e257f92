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

#include "npupim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "npupim/scheduler.hpp"

namespace npupim {

namespace {

std::uint32_t parse_length(std::string_view field, std::size_t line) {
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
        field.remove_suffix(1);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw WorkloadError("malformed row at line " + std::to_string(line));
    if (v <= 0) throw WorkloadError("non-positive length at line " + std::to_string(line));
    return static_cast<std::uint32_t>(v);
}

void clip_to_context(Request& r, std::uint32_t max_context) {
    if (max_context == 0) return;
    r.input_len = std::min(r.input_len, max_context - 1);
    r.target_output_len = std::min(r.target_output_len, max_context - r.input_len);
}

}  // namespace

std::vector<LengthRecord> load_length_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw WorkloadError("cannot open dataset " + path.string());

    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw WorkloadError("no records");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "input_len,output_len")
        throw WorkloadError("line 1: expected header 'input_len,output_len'");

    std::vector<LengthRecord> records;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw WorkloadError("malformed row at line " + std::to_string(lineno));
        std::string_view view(line);
        records.push_back({parse_length(view.substr(0, comma), lineno), parse_length(view.substr(comma + 1), lineno)});
    }
    if (records.empty()) throw WorkloadError("no records");
    return records;
}

std::vector<Request> synthesize_requests(const WorkloadSpec& spec, std::size_t count, std::uint64_t rng_seed) {
    if (count == 0) throw WorkloadError("request count must be >= 1");
    std::mt19937_64 rng(rng_seed);
    std::vector<Request> out;
    out.reserve(count);

    if (spec.dataset == DatasetKind::File) {
        if (spec.length_records.empty()) throw WorkloadError("file-mode workload has no length records");
        std::uniform_int_distribution<std::size_t> pick(0, spec.length_records.size() - 1);
        for (std::size_t i = 0; i < count; ++i) {
            const auto& rec = spec.length_records[pick(rng)];
            Request r;
            r.id = static_cast<RequestId>(i);
            r.input_len = rec.input_len;
            r.target_output_len = rec.output_len;
            clip_to_context(r, spec.max_context);
            out.push_back(std::move(r));
        }
        return out;
    }

    // mean = exp(mu + sigma^2 / 2)
    const double s = kSyntheticLogSigma;
    std::lognormal_distribution<double> in_dist(std::log(spec.mean_input) - s * s / 2, s);
    std::lognormal_distribution<double> out_dist(std::log(spec.mean_output) - s * s / 2, s);
    for (std::size_t i = 0; i < count; ++i) {
        Request r;
        r.id = static_cast<RequestId>(i);
        r.input_len = static_cast<std::uint32_t>(std::max(1.0, std::round(in_dist(rng))));
        r.target_output_len = static_cast<std::uint32_t>(std::max(1.0, std::round(out_dist(rng))));
        clip_to_context(r, spec.max_context);
        out.push_back(std::move(r));
    }
    return out;
}

WarmupResult warmup_batch(const WorkloadSpec& spec, Scheduler& scheduler) {
    WarmupResult result;
    std::uint64_t chunk_seed = spec.rng_seed;
    RequestId next_id = 0;
    auto refill = [&](std::size_t count) {
        auto reqs = synthesize_requests(spec, count, chunk_seed++);
        for (auto& r : reqs) r.id = next_id++;
        return reqs;
    };

    // The initial fill is a snapshot of requests already in flight: each one
    // has produced a uniformly drawn part of its output.
    auto initial_reqs = refill(std::max<std::size_t>(spec.batch_size, 64));
    std::mt19937_64 progress_rng(spec.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& r : initial_reqs) {
        std::uniform_int_distribution<std::uint32_t> pick(0, r.target_output_len - 1);
        r.generated_len = pick(progress_rng);
    }
    scheduler.submit(std::move(initial_reqs));
    scheduler.iteration_boundary();
    if (scheduler.active().size() < spec.batch_size)
        throw CapacityError("warm-up cannot fill batch of " + std::to_string(spec.batch_size) +
                            " within KV capacity (admitted " + std::to_string(scheduler.active().size()) +
                            ", KV capacity limit reached)");

    std::set<RequestId> pending;
    for (const auto& r : scheduler.active()) pending.insert(r.id);
    while (!pending.empty() && result.iterations < spec.warmup_max_iterations) {
        scheduler.advance();
        ++result.iterations;
        // Everything resident has now taken a step.
        pending.clear();
        if (scheduler.queued() < spec.batch_size) scheduler.submit(refill(std::max<std::size_t>(spec.batch_size, 64)));
        scheduler.iteration_boundary();
    }
    if (scheduler.active().size() < spec.batch_size)
        throw CapacityError("warm-up cannot fill batch of " + std::to_string(spec.batch_size) +
                            " within KV capacity");
    result.batch = scheduler.active();
    return result;
}

}  // namespace npupim
