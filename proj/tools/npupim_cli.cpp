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

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "npupim/engine.hpp"
#include "npupim/report.hpp"
#include "npupim/workload.hpp"

namespace fs = std::filesystem;
using namespace npupim;

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kSpecError = 2;
constexpr const char* kOutEnv = "NPUPIM_OUT_DIR";

struct RunSpec {
    SimConfig cfg;
    std::string model;
    std::string dataset;
    ExecutionMode mode;
    std::uint64_t seed = 1;

    std::string stem() const {
        return model + "_b" + std::to_string(cfg.workload.batch_size) + "_" + dataset + "_" + mode.name() + "_" +
               mode.flags() + "_tp" + std::to_string(cfg.model.tp_degree) + "_pp" +
               std::to_string(cfg.model.pp_degree) + "_s" + std::to_string(seed);
    }
};

struct RunOptions {
    std::string model;
    // Empty batches, dataset or seeds fall back to the config file, then to defaults.
    std::vector<std::uint32_t> batches;
    std::vector<std::string> modes{"neupims"};
    std::string dataset;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> ablate;
    std::optional<std::uint32_t> tp, pp, measure_iterations;
    std::string out;
    std::string config;
    bool force = false;
    bool timeline = false;
    bool plans = false;
    unsigned jobs = 1;
};

/// Cumulative flag series: blocked baseline, then one flag added per step.
std::vector<ExecutionMode> ablation_series(const std::vector<std::string>& flags) {
    std::vector<ExecutionMode> out{ExecutionMode::blocked()};
    ExecutionMode m = ExecutionMode::neupims(false, false, false);
    for (const auto& f : flags) {
        if (f == "drb") m.dual_row_buffers = true;
        else if (f == "gmlbp") m.greedy_packing = true;
        else if (f == "sbi") m.subbatch_interleaving = true;
        else throw ConfigError("--ablate: unknown flag '" + f + "' (drb, gmlbp, sbi)");
        m.validate();
        out.push_back(m);
    }
    return out;
}

ExecutionMode mode_from_name(const std::string& name) {
    switch (parse_mode(name)) {
        case Mode::NpuOnly: return ExecutionMode::npu_only();
        case Mode::NpuPimBlocked: return ExecutionMode::blocked();
        case Mode::NeuPims: return ExecutionMode::neupims();
    }
    throw ConfigError("mode: unknown '" + name + "'");
}

/// Result label for a workload taken as-is from a config.
std::string synthetic_label(const WorkloadSpec& w) {
    if (w.dataset == DatasetKind::File) return fs::path(w.dataset_path).stem().string();
    for (const char* name : {"sharegpt", "alpaca"}) {
        const auto p = workload_preset(name);
        if (p.mean_input == w.mean_input && p.mean_output == w.mean_output) return name;
    }
    return "synthetic";
}

std::vector<RunSpec> expand(const RunOptions& o, bool mode_given) {
    SimConfig base = o.config.empty() ? SimConfig{} : load_config(o.config);
    if (!o.model.empty()) base.model = model_preset(o.model);
    if (o.tp) base.model.tp_degree = *o.tp;
    if (o.pp) base.model.pp_degree = *o.pp;

    std::string dataset_label;
    if (o.dataset.empty()) {
        dataset_label = synthetic_label(base.workload);
    } else if (o.dataset == "sharegpt" || o.dataset == "alpaca") {
        dataset_label = o.dataset;
        const auto preset = workload_preset(o.dataset);
        base.workload.dataset = preset.dataset;
        base.workload.mean_input = preset.mean_input;
        base.workload.mean_output = preset.mean_output;
    } else {
        base.workload.dataset = DatasetKind::File;
        base.workload.dataset_path = o.dataset;
        base.workload.length_records = load_length_dataset(o.dataset);
        dataset_label = fs::path(o.dataset).stem().string();
    }
    if (o.measure_iterations) base.workload.measure_iterations = *o.measure_iterations;

    std::vector<ExecutionMode> modes;
    if (!o.ablate.empty()) {
        if (mode_given) throw ConfigError("--mode and --ablate are exclusive");
        modes = ablation_series(o.ablate);
    } else {
        for (const auto& m : o.modes) modes.push_back(mode_from_name(m));
    }

    const bool from_config = !o.config.empty();
    std::vector<std::uint32_t> batches = o.batches;
    if (batches.empty()) batches = {base.workload.batch_size};
    std::vector<std::uint64_t> seeds = o.seeds;
    if (seeds.empty())
        seeds = from_config ? std::vector<std::uint64_t>{base.workload.rng_seed}
                            : std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

    std::vector<RunSpec> runs;
    for (auto batch : batches)
        for (const auto& mode : modes)
            for (auto seed : seeds) {
                RunSpec r;
                r.cfg = base;
                r.cfg.workload.batch_size = batch;
                r.cfg.workload.rng_seed = seed;
                r.cfg.hardware.validate();
                r.cfg.model.validate();
                r.cfg.workload.validate();
                r.model = base.model.name;
                r.dataset = dataset_label;
                r.mode = mode;
                r.seed = seed;
                runs.push_back(std::move(r));
            }
    return runs;
}

int cmd_run(const RunOptions& o, bool mode_given) {
    std::vector<RunSpec> runs;
    fs::path out_dir;
    try {
        runs = expand(o, mode_given);
        if (!o.out.empty()) out_dir = o.out;
        else if (const char* env = std::getenv(kOutEnv); env && *env) out_dir = env;
        else out_dir = "results";
        fs::create_directories(out_dir);
        if (!o.force) {
            std::vector<fs::path> targets{out_dir / "results.csv"};
            for (const auto& r : runs) targets.push_back(out_dir / (r.stem() + ".json"));
            for (const auto& t : targets)
                if (fs::exists(t)) throw ConfigError(t.string() + " exists; pass --force to overwrite");
        }
    } catch (const std::exception& e) {
        std::cerr << "npupim: " << e.what() << "\n";
        return kSpecError;
    }

    std::vector<std::optional<ReportRow>> rows(runs.size());
    std::vector<std::string> errors(runs.size());
    std::atomic<std::size_t> next{0};
    std::mutex io;
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            const auto& r = runs[i];
            try {
                EngineOptions eo;
                eo.record_timeline = o.timeline;
                eo.record_plans = o.plans;
                Engine engine(r.cfg, r.mode, eo);
                auto res = engine.run();
                const std::map<std::string, std::string> labels{
                    {"model", r.model}, {"dataset", r.dataset}, {"mode", r.mode.name()}, {"flags", r.mode.flags()}};
                std::ofstream(out_dir / (r.stem() + ".json")) << metrics_json(res.metrics, labels) << "\n";
                if (o.timeline) {
                    std::ofstream tl(out_dir / (r.stem() + ".timeline.csv"));
                    res.timeline.write_csv(tl);
                }
                if (o.plans) {
                    std::ofstream pl(out_dir / (r.stem() + ".plans.jsonl"));
                    for (const auto& p : res.plans) write_plan_json(pl, p);
                }
                rows[i] = make_row(r.model, r.cfg.workload.batch_size, r.dataset, r.mode, r.cfg.model.tp_degree,
                                   r.cfg.model.pp_degree, r.seed, res.metrics);
                std::lock_guard<std::mutex> lock(io);
                std::cerr << "done " << r.stem() << " tokens/s=" << rows[i]->tokens_per_s << "\n";
            } catch (const std::exception& e) {
                errors[i] = e.what();
                std::lock_guard<std::mutex> lock(io);
                std::cerr << "FAILED " << r.stem() << ": " << e.what() << "\n";
            }
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(o.jobs, static_cast<unsigned>(runs.size())));
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // Successful rows are kept even when other runs fail.
    std::ofstream csv(out_dir / "results.csv");
    csv << kReportHeader << "\n";
    for (const auto& r : rows)
        if (r) write_row(csv, *r);
    const auto failed = std::count_if(errors.begin(), errors.end(), [](const std::string& e) { return !e.empty(); });
    if (failed) {
        std::cerr << "npupim: " << failed << " of " << runs.size() << " runs failed\n";
        return kRunFailure;
    }
    std::cout << (out_dir / "results.csv").string() << "\n";
    return kOk;
}

int cmd_compare(const std::string& baseline, const std::string& candidate) {
    try {
        auto cmp = compare_reports(read_report(baseline), read_report(candidate));
        std::cout << "key,ratio\n";
        std::cout.precision(6);
        for (const auto& [key, ratio] : cmp.ratios) std::cout << '"' << key << "\"," << ratio << "\n";
        std::cout << "geomean," << cmp.geomean << "\n";
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << "npupim: " << e.what() << "\n";
        return kSpecError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NPU + PIM LLM inference simulator"};
    app.require_subcommand(1);

    RunOptions ro;
    auto* run = app.add_subcommand("run", "Run an experiment sweep");
    run->add_option("--model", ro.model, "Model preset (gpt3-7b, gpt3-13b, gpt3-30b, gpt3-175b)");
    run->add_option("--batch", ro.batches, "Batch sizes (default: config, else 256)")->delimiter(',');
    auto* mode_opt = run->add_option("--mode", ro.modes, "npu-only, blocked, neupims")->delimiter(',');
    run->add_option("--dataset", ro.dataset, "Length CSV path or preset (sharegpt, alpaca); default: config, else sharegpt");
    run->add_option("--seed", ro.seeds, "Seeds (default: config seed, else 1..10)")->delimiter(',');
    run->add_option("--ablate", ro.ablate, "Cumulative flag series over the blocked baseline (drb,gmlbp,sbi)")
        ->delimiter(',');
    run->add_option("--tp", ro.tp, "Tensor-parallel degree");
    run->add_option("--pp", ro.pp, "Pipeline-parallel degree");
    run->add_option("--measure-iterations", ro.measure_iterations, "Timed iterations after warm-up");
    run->add_option("--out", ro.out, std::string("Output directory (default $") + kOutEnv + " or ./results)");
    run->add_option("--config", ro.config, "YAML config file");
    run->add_flag("--force", ro.force, "Overwrite existing outputs");
    run->add_flag("--timeline", ro.timeline, "Write a resource,start,end,label timeline per run");
    run->add_flag("--plans", ro.plans, "Write the iteration plans per run as JSON lines");
    run->add_option("--jobs", ro.jobs, "Parallel runs")->check(CLI::PositiveNumber);

    std::string baseline, candidate;
    auto* compare = app.add_subcommand("compare", "Throughput ratios of two result CSVs");
    compare->add_option("baseline", baseline)->required();
    compare->add_option("candidate", candidate)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kSpecError;
    }
    if (run->parsed()) return cmd_run(ro, mode_opt->count() > 0);
    return cmd_compare(baseline, candidate);
}
