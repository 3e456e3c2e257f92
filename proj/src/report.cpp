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

#include "npupim/report.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace npupim {

std::string ReportRow::key() const {
    std::ostringstream k;
    k << model << ',' << batch << ',' << dataset << ',' << mode << ',' << flags << ',' << tp << ',' << pp << ','
      << seed;
    return k.str();
}

ReportRow make_row(const std::string& model, std::uint32_t batch, const std::string& dataset, const ExecutionMode& mode,
                   std::uint32_t tp, std::uint32_t pp, std::uint64_t seed, const Metrics& m) {
    ReportRow r;
    r.model = model;
    r.batch = batch;
    r.dataset = dataset;
    r.mode = mode.name();
    r.flags = mode.flags();
    r.tp = tp, r.pp = pp;
    r.seed = seed;
    r.tokens_per_s = m.throughput();
    r.npu_util = m.npu_util();
    r.pim_util = m.pim_util();
    r.bw_util = m.bw_util();
    r.energy = m.energy;
    return r;
}

void write_row(std::ostream& out, const ReportRow& row) {
    std::ostringstream s;
    s.precision(17);
    s << row.key() << ',' << row.tokens_per_s << ',' << row.npu_util << ',' << row.pim_util << ',' << row.bw_util << ','
      << row.energy << '\n';
    out << s.str();
}

std::vector<ReportRow> read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ReportError("cannot open report " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        throw ReportError(path.string() + ": line 1: expected header '" + std::string(kReportHeader) + "'");
    std::vector<ReportRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 13) throw ReportError(path.string() + ": line " + std::to_string(lineno) + ": expected 13 fields");
        try {
            ReportRow r;
            r.model = f[0];
            r.batch = static_cast<std::uint32_t>(std::stoul(f[1]));
            r.dataset = f[2];
            r.mode = f[3];
            r.flags = f[4];
            r.tp = static_cast<std::uint32_t>(std::stoul(f[5]));
            r.pp = static_cast<std::uint32_t>(std::stoul(f[6]));
            r.seed = std::stoull(f[7]);
            r.tokens_per_s = std::stod(f[8]);
            r.npu_util = std::stod(f[9]);
            r.pim_util = std::stod(f[10]);
            r.bw_util = std::stod(f[11]);
            r.energy = std::stod(f[12]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ReportError(path.string() + ": line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

namespace {

std::string run_key(const ReportRow& r, bool with_mode) {
    std::ostringstream k;
    k << r.model << ',' << r.batch << ',' << r.dataset << ',';
    if (with_mode) k << r.mode << ',' << r.flags << ',';
    k << r.tp << ',' << r.pp << ',' << r.seed;
    return k.str();
}

std::size_t mode_count(const std::vector<ReportRow>& rows) {
    std::set<std::string> modes;
    for (const auto& r : rows) modes.insert(r.mode + "/" + r.flags);
    return modes.size();
}

}  // namespace

Comparison compare_reports(const std::vector<ReportRow>& baseline, const std::vector<ReportRow>& candidate) {
    // Two single-mode reports are matched across modes; otherwise mode and
    // flags are part of the key.
    const bool with_mode = !(mode_count(baseline) <= 1 && mode_count(candidate) <= 1);
    auto index = [&](const std::vector<ReportRow>& rows, const char* which) {
        std::map<std::string, double> out;
        for (const auto& r : rows)
            if (!out.emplace(run_key(r, with_mode), r.tokens_per_s).second)
                throw ReportError(std::string("duplicate key in ") + which + ": " + run_key(r, with_mode));
        return out;
    };
    const auto base = index(baseline, "baseline");
    const auto cand = index(candidate, "candidate");

    std::string missing;
    for (const auto& r : baseline)
        if (!cand.count(run_key(r, with_mode))) missing += "\n  missing in candidate: " + run_key(r, with_mode);
    for (const auto& r : candidate)
        if (!base.count(run_key(r, with_mode))) missing += "\n  missing in baseline: " + run_key(r, with_mode);
    if (!missing.empty()) throw ReportError("key mismatch:" + missing);

    Comparison out;
    double log_sum = 0;
    for (const auto& r : baseline) {
        const std::string key = run_key(r, with_mode);
        const double ratio = r.tokens_per_s > 0 ? cand.at(key) / r.tokens_per_s : 0.0;
        out.ratios.emplace_back(key, ratio);
        log_sum += std::log(ratio);
    }
    if (!out.ratios.empty()) out.geomean = std::exp(log_sum / double(out.ratios.size()));
    return out;
}

}  // namespace npupim
