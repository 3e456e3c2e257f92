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
#include <ostream>
#include <string>
#include <vector>

#include "npupim/engine.hpp"

namespace npupim {

/// Aggregate CSV columns, in order.
inline constexpr const char* kReportHeader =
    "model,batch,dataset,mode,flags,tp,pp,seed,tokens_per_s,npu_util,pim_util,bw_util,energy";

struct ReportRow {
    std::string model;
    std::uint32_t batch = 0;
    std::string dataset;
    std::string mode;
    std::string flags;
    std::uint32_t tp = 1, pp = 1;
    std::uint64_t seed = 1;
    double tokens_per_s = 0, npu_util = 0, pim_util = 0, bw_util = 0, energy = 0;

    /// Everything except the measured columns.
    std::string key() const;
    bool operator==(const ReportRow&) const = default;
};

/// Mismatched or malformed report input; the message names the key or line.
class ReportError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

ReportRow make_row(const std::string& model, std::uint32_t batch, const std::string& dataset, const ExecutionMode& mode,
                   std::uint32_t tp, std::uint32_t pp, std::uint64_t seed, const Metrics& m);

/// Values are printed with round-trip precision.
void write_row(std::ostream& out, const ReportRow& row);
std::vector<ReportRow> read_report(const std::filesystem::path& path);

struct Comparison {
    /// (key, candidate / baseline throughput) in baseline order.
    std::vector<std::pair<std::string, double>> ratios;
    double geomean = 1.0;
};

/// Matches runs by model, batch, dataset, tp, pp and seed; mode and flags join
/// the key unless both reports hold a single mode. Throws ReportError listing
/// every key present in only one input, or naming a duplicate key.
Comparison compare_reports(const std::vector<ReportRow>& baseline, const std::vector<ReportRow>& candidate);

}  // namespace npupim
