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

#include <cmath>
#include <filesystem>
#include <fstream>

#include "npupim/report.hpp"

using namespace npupim;

namespace {

ReportRow row(const std::string& mode, std::uint32_t batch, double tps, std::uint64_t seed = 1) {
    ReportRow r;
    r.model = "gpt3-7b";
    r.batch = batch;
    r.dataset = "sharegpt";
    r.mode = mode;
    r.flags = mode == "neupims" ? "drb+gmlbp+sbi" : "none";
    r.tp = 4;
    r.seed = seed;
    r.tokens_per_s = tps;
    r.npu_util = 0.1 + 1.0 / 3.0;
    r.energy = 12345.678901234567;
    return r;
}

std::filesystem::path write_file(const std::string& name, const std::vector<ReportRow>& rows) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream out(p);
    out << kReportHeader << '\n';
    for (const auto& r : rows) write_row(out, r);
    return p;
}

}  // namespace

TEST_CASE("rows round-trip through the CSV exactly", "[report]") {
    std::vector<ReportRow> rows{row("blocked", 64, 1234.5678901234), row("neupims", 256, 1.0 / 7.0)};
    auto back = read_report(write_file("npupim_rt.csv", rows));
    CHECK(back == rows);
}

TEST_CASE("make_row copies labels and metrics", "[report]") {
    Metrics m;
    m.sim_cycles = 1000;
    m.tokens_completed = 5;
    m.pim_busy = 500;
    auto r = make_row("gpt3-30b", 128, "alpaca", ExecutionMode::neupims(true, false, false), 8, 1, 3, m);
    CHECK(r.mode == "neupims");
    CHECK(r.flags == "drb");
    CHECK(r.tokens_per_s == Catch::Approx(m.throughput()));
    CHECK(r.pim_util == Catch::Approx(0.5));
    CHECK(r.key().find("gpt3-30b") != std::string::npos);
}

TEST_CASE("malformed reports are rejected", "[report]") {
    auto p = std::filesystem::temp_directory_path() / "npupim_bad.csv";
    {
        std::ofstream out(p);
        out << "model,batch\n";
    }
    CHECK_THROWS_AS(read_report(p), ReportError);
    {
        std::ofstream out(p);
        out << kReportHeader << "\ngpt3-7b,64,sharegpt\n";
    }
    CHECK_THROWS_AS(read_report(p), ReportError);
}

TEST_CASE("comparing a report with itself gives unit ratios", "[report]") {
    std::vector<ReportRow> rows{row("npu-only", 64, 10), row("blocked", 64, 12), row("neupims", 64, 15),
                                row("neupims", 64, 16, 2)};
    auto c = compare_reports(rows, rows);
    REQUIRE(c.ratios.size() == rows.size());
    for (const auto& [k, v] : c.ratios) CHECK(v == 1.0);
    CHECK(c.geomean == 1.0);
}

TEST_CASE("single-mode reports compare across modes", "[report]") {
    std::vector<ReportRow> base{row("blocked", 64, 10), row("blocked", 128, 20)};
    std::vector<ReportRow> cand{row("neupims", 64, 20), row("neupims", 128, 80)};
    auto c = compare_reports(base, cand);
    REQUIRE(c.ratios.size() == 2);
    CHECK(c.ratios[0].second == Catch::Approx(2.0));
    CHECK(c.ratios[1].second == Catch::Approx(4.0));
    CHECK(c.geomean == Catch::Approx(std::sqrt(8.0)));
}

TEST_CASE("missing and duplicate keys are reported", "[report]") {
    std::vector<ReportRow> base{row("blocked", 64, 10), row("blocked", 128, 20)};
    std::vector<ReportRow> cand{row("blocked", 64, 10)};
    CHECK_THROWS_WITH(compare_reports(base, cand), Catch::Matchers::ContainsSubstring("missing in candidate"));
    CHECK_THROWS_WITH(compare_reports(cand, base), Catch::Matchers::ContainsSubstring("missing in baseline"));
    std::vector<ReportRow> dup{row("blocked", 64, 10), row("blocked", 64, 11)};
    CHECK_THROWS_AS(compare_reports(dup, dup), ReportError);
}
