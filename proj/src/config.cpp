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

#include "npupim/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "npupim/workload.hpp"

namespace npupim {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace

void HardwareConfig::validate() const {
    require(systolic_arrays > 0, "hardware.systolic_arrays must be > 0");
    require(systolic_dim > 0, "hardware.systolic_dim must be > 0");
    require(vector_units > 0, "hardware.vector_units must be > 0");
    require(vector_lanes > 0, "hardware.vector_lanes must be > 0");
    require(hbm_channels > 0, "hardware.hbm_channels must be > 0");
    require(banks_per_channel > 0, "hardware.banks_per_channel must be > 0");
    require(banks_per_bankgroup > 0, "hardware.banks_per_bankgroup must be > 0");
    require(banks_per_channel % banks_per_bankgroup == 0,
            "hardware.banks_per_channel not divisible by banks_per_bankgroup");
    require(data_width > 0, "hardware.data_width must be > 0");
    require(page_size > 0 && page_size % data_width == 0,
            "hardware.page_size not divisible by data_width");
    require(channel_capacity >= page_size, "hardware.channel_capacity smaller than one page");
    require(clock_hz > 0, "hardware.clock_hz must be > 0");
    require(mem_bytes_per_cycle > 0, "hardware.mem_bytes_per_cycle must be > 0");
    require(pim_tile_latency > 0, "hardware.pim_tile_latency must be > 0");
    require(gwrite_latency > 0, "hardware.gwrite_latency must be > 0");
    require(link_bytes_per_cycle > 0, "hardware.link_bytes_per_cycle must be > 0");
    require(queue_depth > 0, "hardware.queue_depth must be > 0");

    const auto& t = timing;
    const std::pair<const char*, Cycle> all[] = {
        {"tRP", t.tRP},       {"tRCD", t.tRCD},     {"tRAS", t.tRAS},   {"tRRD_L", t.tRRD_L},
        {"tWR", t.tWR},       {"tCCD_S", t.tCCD_S}, {"tCCD_L", t.tCCD_L}, {"tREFI", t.tREFI},
        {"tRFC", t.tRFC},     {"tFAW", t.tFAW},
    };
    for (const auto& [name, v] : all) require(v > 0, std::string("hardware.timing.") + name + " must be > 0");
    require(t.tRAS >= t.tRCD, "hardware.timing.tRAS must be >= tRCD");
    require(t.tREFI > t.tRFC, "hardware.timing.tREFI must be > tRFC");
}

void ModelConfig::validate() const {
    require(num_layers > 0, "model.num_layers must be > 0");
    require(num_heads > 0, "model.num_heads must be > 0");
    require(d_model > 0, "model.d_model must be > 0");
    require(d_model % num_heads == 0, "model.d_model not divisible by heads");
    require(tp_degree > 0 && num_heads % tp_degree == 0, "model.tp_degree must divide num_heads");
    require(pp_degree > 0, "model.pp_degree must be > 0");
    require(pp_degree <= num_layers, "model.pp_degree exceeds num_layers");
    require(num_layers % pp_degree == 0, "model.pp_degree must divide num_layers");
    require(ffn_dim() % tp_degree == 0, "model.ffn_hidden must be divisible by tp_degree");
}

void WorkloadSpec::validate() const {
    require(batch_size >= 1, "workload.batch_size must be >= 1");
    require(measure_iterations >= 1, "workload.measure_iterations must be >= 1");
    require(max_context == 0 || max_context >= 2, "workload.max_context must be 0 or >= 2");
    for (const auto& r : length_records)
        require(r.input_len >= 1 && r.output_len >= 1, "workload.length_records lengths must be >= 1");
    if (dataset == DatasetKind::Synthetic) {
        require(mean_input >= 1.0, "workload.mean_input must be >= 1");
        require(mean_output >= 1.0, "workload.mean_output must be >= 1");
    }
}

ModelConfig model_preset(const std::string& name) {
    // layers, heads, d_model, tp, pp
    static const std::map<std::string, ModelConfig> presets = {
        {"gpt3-7b", {"gpt3-7b", 32, 32, 4096, 0, 4, 1}},
        {"gpt3-13b", {"gpt3-13b", 40, 40, 5120, 0, 4, 1}},
        {"gpt3-30b", {"gpt3-30b", 48, 56, 7168, 0, 4, 2}},
        {"gpt3-175b", {"gpt3-175b", 96, 96, 12288, 0, 8, 4}},
    };
    auto it = presets.find(name);
    if (it == presets.end()) throw ConfigError("unknown model preset '" + name + "'");
    return it->second;
}

std::vector<std::string> model_preset_names() { return {"gpt3-7b", "gpt3-13b", "gpt3-30b", "gpt3-175b"}; }

WorkloadSpec workload_preset(const std::string& name) {
    WorkloadSpec w;
    w.dataset = DatasetKind::Synthetic;
    if (name == "sharegpt") {
        w.mean_input = 80;
        w.mean_output = 296;
    } else if (name == "alpaca") {
        w.mean_input = 12;
        w.mean_output = 56;
    } else {
        throw ConfigError("unknown dataset preset '" + name + "'");
    }
    return w;
}

// ---------------------------------------------------------------------------
// YAML (de)serialization

namespace {

class Section {
  public:
    Section(const YAML::Node& node, std::string path) : path_(std::move(path)) {
        // An empty section ("key:" with no body) reads as absent.
        if (node && !node.IsNull()) node_ = node;
        if (node_ && !node_.IsMap()) throw ConfigError(path_ + " must be a mapping");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!node_ || !node_[key]) return;
        try {
            out = node_[key].template as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError("invalid value for " + path_ + "." + key);
        }
    }

    YAML::Node child(const char* key) {
        seen_.insert(key);
        if (!node_) return YAML::Node(YAML::NodeType::Undefined);
        return node_[key];
    }

    void finish() const {
        if (!node_) return;
        for (const auto& kv : node_) {
            auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError("unknown key " + path_ + "." + key);
        }
    }

  private:
    YAML::Node node_{YAML::NodeType::Undefined};
    std::string path_;
    std::set<std::string> seen_;
};

void read_hardware(const YAML::Node& node, HardwareConfig& hw) {
    Section s(node, "hardware");
    s.get("systolic_arrays", hw.systolic_arrays);
    s.get("systolic_dim", hw.systolic_dim);
    s.get("vector_units", hw.vector_units);
    s.get("vector_lanes", hw.vector_lanes);
    s.get("hbm_channels", hw.hbm_channels);
    s.get("banks_per_channel", hw.banks_per_channel);
    s.get("banks_per_bankgroup", hw.banks_per_bankgroup);
    s.get("channel_capacity", hw.channel_capacity);
    s.get("page_size", hw.page_size);
    s.get("clock_hz", hw.clock_hz);
    s.get("mem_bytes_per_cycle", hw.mem_bytes_per_cycle);
    s.get("pim_tile_latency", hw.pim_tile_latency);
    s.get("gwrite_latency", hw.gwrite_latency);
    s.get("data_width", hw.data_width);
    s.get("link_bytes_per_cycle", hw.link_bytes_per_cycle);
    s.get("queue_depth", hw.queue_depth);

    Section t(s.child("timing"), "hardware.timing");
    t.get("tRP", hw.timing.tRP);
    t.get("tRCD", hw.timing.tRCD);
    t.get("tRAS", hw.timing.tRAS);
    t.get("tRRD_L", hw.timing.tRRD_L);
    t.get("tWR", hw.timing.tWR);
    t.get("tCCD_S", hw.timing.tCCD_S);
    t.get("tCCD_L", hw.timing.tCCD_L);
    t.get("tREFI", hw.timing.tREFI);
    t.get("tRFC", hw.timing.tRFC);
    t.get("tFAW", hw.timing.tFAW);
    t.finish();

    Section e(s.child("energy"), "hardware.energy");
    e.get("read", hw.energy.read);
    e.get("write", hw.energy.write);
    e.get("activate", hw.energy.activate);
    e.get("pim_op", hw.energy.pim_op);
    e.get("joules_per_unit", hw.energy.joules_per_unit);
    e.finish();
    s.finish();
}

void read_model(const YAML::Node& node, ModelConfig& m) {
    Section s(node, "model");
    std::string preset;
    s.get("preset", preset);
    if (!preset.empty()) m = model_preset(preset);
    s.get("name", m.name);
    s.get("num_layers", m.num_layers);
    s.get("num_heads", m.num_heads);
    s.get("d_model", m.d_model);
    s.get("ffn_hidden", m.ffn_hidden);
    s.get("tp_degree", m.tp_degree);
    s.get("pp_degree", m.pp_degree);
    s.finish();
}

void read_workload(const YAML::Node& node, WorkloadSpec& w) {
    Section s(node, "workload");
    std::string preset;
    s.get("preset", preset);
    if (!preset.empty()) w = workload_preset(preset);
    std::string dataset = w.dataset == DatasetKind::File ? "file" : "synthetic";
    s.get("dataset", dataset);
    if (dataset == "file")
        w.dataset = DatasetKind::File;
    else if (dataset == "synthetic")
        w.dataset = DatasetKind::Synthetic;
    else
        throw ConfigError("workload.dataset must be 'file' or 'synthetic'");
    s.get("dataset_path", w.dataset_path);
    s.get("mean_input", w.mean_input);
    s.get("mean_output", w.mean_output);
    s.get("batch_size", w.batch_size);
    s.get("rng_seed", w.rng_seed);
    s.get("warmup_max_iterations", w.warmup_max_iterations);
    s.get("measure_iterations", w.measure_iterations);
    s.get("max_context", w.max_context);
    auto records = s.child("length_records");
    if (records) {
        if (!records.IsSequence()) throw ConfigError("workload.length_records must be a list of [in, out]");
        w.length_records.clear();
        for (const auto& r : records) {
            if (!r.IsSequence() || r.size() != 2)
                throw ConfigError("workload.length_records entries must be [input_len, output_len]");
            w.length_records.push_back({r[0].as<std::uint32_t>(), r[1].as<std::uint32_t>()});
        }
    }
    s.finish();
}

}  // namespace

SimConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    SimConfig cfg;
    if (root.IsNull()) return cfg;
    Section top(root, "config");
    read_hardware(top.child("hardware"), cfg.hardware);
    read_model(top.child("model"), cfg.model);
    read_workload(top.child("workload"), cfg.workload);
    top.finish();

    cfg.hardware.validate();
    cfg.model.validate();
    cfg.workload.validate();
    return cfg;
}

SimConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    SimConfig cfg = parse_config(ss.str());
    if (cfg.workload.dataset == DatasetKind::File && cfg.workload.length_records.empty() &&
        !cfg.workload.dataset_path.empty()) {
        auto p = std::filesystem::path(cfg.workload.dataset_path);
        if (p.is_relative()) p = path.parent_path() / p;
        cfg.workload.length_records = load_length_dataset(p);
    }
    return cfg;
}

std::string serialize_config(const SimConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;

    const auto& hw = c.hardware;
    out << YAML::Key << "hardware" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "systolic_arrays" << YAML::Value << hw.systolic_arrays;
    out << YAML::Key << "systolic_dim" << YAML::Value << hw.systolic_dim;
    out << YAML::Key << "vector_units" << YAML::Value << hw.vector_units;
    out << YAML::Key << "vector_lanes" << YAML::Value << hw.vector_lanes;
    out << YAML::Key << "hbm_channels" << YAML::Value << hw.hbm_channels;
    out << YAML::Key << "banks_per_channel" << YAML::Value << hw.banks_per_channel;
    out << YAML::Key << "banks_per_bankgroup" << YAML::Value << hw.banks_per_bankgroup;
    out << YAML::Key << "channel_capacity" << YAML::Value << hw.channel_capacity;
    out << YAML::Key << "page_size" << YAML::Value << hw.page_size;
    out << YAML::Key << "clock_hz" << YAML::Value << hw.clock_hz;
    out << YAML::Key << "mem_bytes_per_cycle" << YAML::Value << hw.mem_bytes_per_cycle;
    out << YAML::Key << "pim_tile_latency" << YAML::Value << hw.pim_tile_latency;
    out << YAML::Key << "gwrite_latency" << YAML::Value << hw.gwrite_latency;
    out << YAML::Key << "data_width" << YAML::Value << hw.data_width;
    out << YAML::Key << "link_bytes_per_cycle" << YAML::Value << hw.link_bytes_per_cycle;
    out << YAML::Key << "queue_depth" << YAML::Value << hw.queue_depth;
    const auto& t = hw.timing;
    out << YAML::Key << "timing" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "tRP" << YAML::Value << t.tRP << YAML::Key << "tRCD" << YAML::Value << t.tRCD;
    out << YAML::Key << "tRAS" << YAML::Value << t.tRAS << YAML::Key << "tRRD_L" << YAML::Value << t.tRRD_L;
    out << YAML::Key << "tWR" << YAML::Value << t.tWR << YAML::Key << "tCCD_S" << YAML::Value << t.tCCD_S;
    out << YAML::Key << "tCCD_L" << YAML::Value << t.tCCD_L << YAML::Key << "tREFI" << YAML::Value << t.tREFI;
    out << YAML::Key << "tRFC" << YAML::Value << t.tRFC << YAML::Key << "tFAW" << YAML::Value << t.tFAW;
    out << YAML::EndMap;
    const auto& e = hw.energy;
    out << YAML::Key << "energy" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "read" << YAML::Value << e.read << YAML::Key << "write" << YAML::Value << e.write;
    out << YAML::Key << "activate" << YAML::Value << e.activate;
    out << YAML::Key << "pim_op" << YAML::Value << e.pim_op;
    out << YAML::Key << "joules_per_unit" << YAML::Value << e.joules_per_unit;
    out << YAML::EndMap;
    out << YAML::EndMap;

    const auto& m = c.model;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << m.name;
    out << YAML::Key << "num_layers" << YAML::Value << m.num_layers;
    out << YAML::Key << "num_heads" << YAML::Value << m.num_heads;
    out << YAML::Key << "d_model" << YAML::Value << m.d_model;
    out << YAML::Key << "ffn_hidden" << YAML::Value << m.ffn_hidden;
    out << YAML::Key << "tp_degree" << YAML::Value << m.tp_degree;
    out << YAML::Key << "pp_degree" << YAML::Value << m.pp_degree;
    out << YAML::EndMap;

    const auto& w = c.workload;
    out << YAML::Key << "workload" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dataset" << YAML::Value << (w.dataset == DatasetKind::File ? "file" : "synthetic");
    if (!w.dataset_path.empty()) out << YAML::Key << "dataset_path" << YAML::Value << w.dataset_path;
    out << YAML::Key << "mean_input" << YAML::Value << w.mean_input;
    out << YAML::Key << "mean_output" << YAML::Value << w.mean_output;
    out << YAML::Key << "batch_size" << YAML::Value << w.batch_size;
    out << YAML::Key << "rng_seed" << YAML::Value << w.rng_seed;
    out << YAML::Key << "warmup_max_iterations" << YAML::Value << w.warmup_max_iterations;
    out << YAML::Key << "measure_iterations" << YAML::Value << w.measure_iterations;
    out << YAML::Key << "max_context" << YAML::Value << w.max_context;
    if (!w.length_records.empty()) {
        out << YAML::Key << "length_records" << YAML::Value << YAML::BeginSeq;
        for (const auto& r : w.length_records)
            out << YAML::Flow << YAML::BeginSeq << r.input_len << r.output_len << YAML::EndSeq;
        out << YAML::EndSeq;
    }
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace npupim
