// SPDX-License-Identifier: Apache-2.0
#include "gdpf/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "gdpf/error.hpp"

namespace gdpf {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, "config: " + msg);
}

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(where + " must be an object");
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) fail("unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string name = where + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(name + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_unsigned()) fail(name + " must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(name + " must be a number");
    }
    out = v.get<T>();
}

}  // namespace

ExperimentConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(std::string("not valid JSON: ") + e.what());
    }
    check_keys(j, "top level", {"case", "seed", "threads", "scenario", "train", "model", "experiment"});

    ExperimentConfig cfg;
    if (!j.contains("case") || !j.at("case").is_string()) fail("\"case\" must be a path string");
    std::filesystem::path case_path = j.at("case").get<std::string>();
    if (case_path.is_relative() && !base_dir.empty()) case_path = base_dir / case_path;
    cfg.case_path = case_path.lexically_normal().string();

    read(j, "top level", "seed", cfg.seed);
    read(j, "top level", "threads", cfg.threads);
    cfg.scenario.seed = cfg.seed;
    cfg.train.seed = cfg.seed;

    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        const std::string w = "scenario";
        check_keys(s, w, {"injections_per_topology", "n2_pair_count", "n2_injections_per_topology",
                          "load_sigma_global", "load_sigma_local", "correlation_length", "gen_outage_prob",
                          "loss_margin"});
        read(s, w, "injections_per_topology", cfg.scenario.injections_per_topology);
        read(s, w, "n2_pair_count", cfg.scenario.n2_pair_count);
        read(s, w, "n2_injections_per_topology", cfg.scenario.n2_injections_per_topology);
        read(s, w, "load_sigma_global", cfg.scenario.load_sigma_global);
        read(s, w, "load_sigma_local", cfg.scenario.load_sigma_local);
        read(s, w, "correlation_length", cfg.scenario.correlation_length);
        read(s, w, "gen_outage_prob", cfg.scenario.gen_outage_prob);
        read(s, w, "loss_margin", cfg.scenario.loss_margin);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train", {"epochs", "batch_size", "lr", "patience"});
        read(t, "train", "epochs", cfg.train.epochs);
        read(t, "train", "batch_size", cfg.train.batch_size);
        read(t, "train", "lr", cfg.train.lr);
        read(t, "train", "patience", cfg.train.patience);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model", {"d_enc", "d_shared", "k", "leaky_slope"});
        read(m, "model", "d_enc", cfg.hyper.d_enc);
        read(m, "model", "d_shared", cfg.hyper.d_shared);
        read(m, "model", "k", cfg.hyper.k);
        read(m, "model", "leaky_slope", cfg.hyper.leaky_slope);
    }
    if (j.contains("experiment")) {
        const json& e = j.at("experiment");
        check_keys(e, "experiment", {"methods", "seeds", "monitor_test"});
        if (e.contains("methods")) {
            if (!e.at("methods").is_array()) fail("experiment.methods must be an array of strings");
            cfg.methods.clear();
            for (const auto& m : e.at("methods")) {
                if (!m.is_string()) fail("experiment.methods must be an array of strings");
                cfg.methods.push_back(normalize_method(m.get<std::string>()));
            }
        }
        read(e, "experiment", "seeds", cfg.seeds);
        read(e, "experiment", "monitor_test", cfg.monitor_test);
    }

    try {
        validate(cfg.scenario);
    } catch (const Error& e) {
        fail(e.what());
    }
    if (cfg.train.epochs == 0 || cfg.train.batch_size == 0 || !(cfg.train.lr > 0.0)) {
        fail("train.epochs, train.batch_size and train.lr must be positive");
    }
    if (cfg.hyper.d_enc == 0 || cfg.hyper.d_shared == 0 || cfg.hyper.k == 0) {
        fail("model.d_enc, model.d_shared and model.k must be positive");
    }
    if (cfg.seeds == 0) fail("experiment.seeds must be positive");
    if (cfg.threads == 0) fail("threads must be positive");
    return cfg;
}

ExperimentConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str(), path.parent_path());
}

}  // namespace gdpf
