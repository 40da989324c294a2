// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gdpf/grid.hpp"
#include "gdpf/neuralnet.hpp"
#include "gdpf/scenario.hpp"

namespace gdpf {

/// RMSE in Amperes over every record and branch of `split`.
double evaluate_rmse_amps(const SurrogateModel& model, const Dataset& split);

/// Same metric for the DC approximation, solved record by record on each
/// record's topology-applied grid.
double evaluate_dc_rmse_amps(const Grid& grid, const Dataset& split);

/// Subset of `ds` whose records sit on topology `topo_id`.
Dataset filter_topology(const Dataset& ds, std::size_t topo_id);

struct Quantiles {
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    std::size_t count = 0;

    bool operator==(const Quantiles&) const = default;
};

/// Linear-interpolation quantiles (the "type 7" rule) of the values.
Quantiles summarize(std::vector<double> values);

struct CurvePoint {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double n1_rmse_amps = 0.0;  // NaN when not monitored

    bool operator==(const CurvePoint& o) const;
};

struct RunResult {
    std::uint64_t seed = 0;
    double n1_rmse = 0.0;
    std::optional<double> n2_rmse;
    double ref_rmse = 0.0;
    double final_train_loss = 0.0;
    bool kept = true;
    std::vector<CurvePoint> curve;

    bool operator==(const RunResult&) const = default;
};

struct MethodReport {
    std::string method;  // encoding name or "dc"
    bool n2_supported = false;
    std::vector<RunResult> runs;
    Quantiles n1;
    std::optional<Quantiles> n2;
    Quantiles ref;

    bool operator==(const MethodReport&) const = default;
};

struct EvalReport {
    std::string case_name;
    std::size_t n1_test_records = 0;
    std::size_t n2_records = 0;
    std::vector<MethodReport> methods;

    const MethodReport* find(const std::string& method) const;
    bool operator==(const EvalReport&) const = default;
};

struct ExperimentConfig {
    std::string case_path;
    std::uint64_t seed = 1;
    ScenarioConfig scenario;
    TrainConfig train;
    Hyper hyper;
    std::vector<std::string> methods = {"guided_dropout", "one_hot", "one_var", "one_model", "dc"};
    std::size_t seeds = 5;
    unsigned threads = 1;
    bool monitor_test = true;  // record n-1 test RMSE after every epoch
};

/// Canonical method name: an encoding name (aliases accepted) or "dc".
std::string normalize_method(const std::string& name);
bool method_supports_n2(const std::string& method);

/// Trains and evaluates every requested method on pre-generated data.
EvalReport run_experiment(const Grid& grid, const Dataset& n1, const Dataset* n2, const ExperimentConfig& cfg);

/// Generates the n-1 and n-2 datasets from the config, then runs the comparison.
EvalReport run_experiment(const ExperimentConfig& cfg);

/// Keeps runs whose final training loss is within 10x the method's median and
/// recomputes the quantiles over them.
void finalize_method(MethodReport& report);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Writes report.json, curves.csv and summary.md into `dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

struct BenchReport {
    std::string grid_name;
    std::size_t batch = 0;
    double nn_flows_per_sec = 0.0;
    double ac_solves_per_sec = 0.0;
    double speedup = 0.0;
    std::size_t nn_flows = 0;
    std::size_t ac_solves = 0;
};

/// Times batched single-precision inference against sequential AC solves on
/// the same pre-generated inputs, each for roughly `duration_s` seconds.
BenchReport benchmark_throughput(const SurrogateModel& model, const Grid& grid, std::size_t batch,
                                 double duration_s, std::uint64_t seed = 1);

std::string bench_to_json(const BenchReport& report);

}  // namespace gdpf
