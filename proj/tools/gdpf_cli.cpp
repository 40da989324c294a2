// SPDX-License-Identifier: Apache-2.0
// gdpf: command-line front end for the power-flow surrogate pipeline.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gdpf/error.hpp"
#include "gdpf/experiment.hpp"
#include "gdpf/matpower_io.hpp"
#include "gdpf/neuralnet.hpp"
#include "gdpf/powerflow.hpp"
#include "gdpf/rng.hpp"
#include "gdpf/run_config.hpp"
#include "gdpf/scenario.hpp"

namespace {

using namespace gdpf;

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kParse = 2,
    kIslanding = 3,
    kNoConvergence = 4,
    kIo = 5,
    kTooFewRecords = 6,
};

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::MissingSection:
    case ErrorCode::MalformedRow:
    case ErrorCode::DanglingReference:
    case ErrorCode::MultipleSlack:
    case ErrorCode::NoSlack:
    case ErrorCode::InvalidGrid:
    case ErrorCode::ZeroImpedanceBranch:
        return kParse;
    case ErrorCode::DisconnectedGrid:
        return kIslanding;
    case ErrorCode::NotConverged:
    case ErrorCode::SingularJacobian:
    case ErrorCode::SingularMatrix:
        return kNoConvergence;
    case ErrorCode::IoError:
        return kIo;
    case ErrorCode::TooFewRecords:
    case ErrorCode::TooFewRows:
    case ErrorCode::EmptySplit:
        return kTooFewRecords;
    default:
        return kUsage;
    }
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Topology parse_topology(const std::string& text) {
    std::vector<std::size_t> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) {
            std::size_t used = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(item, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != item.size() || item.front() == '-') {
                throw UsageError("branch list must be comma-separated non-negative integers, got '" + text + "'");
            }
            lines.push_back(static_cast<std::size_t>(v));
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return Topology(std::move(lines));
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

std::vector<std::size_t> dataset_lines(const Dataset& ds) {
    std::set<std::size_t> lines;
    for (const auto& t : ds.manifest.topologies) {
        for (std::size_t l : t.topology.disconnected()) lines.insert(l);
    }
    return {lines.begin(), lines.end()};
}

std::optional<std::size_t> find_topology(const Dataset& ds, const Topology& topo) {
    for (const auto& t : ds.manifest.topologies) {
        if (t.topology == topo) return t.topo_id;
    }
    return std::nullopt;
}

// ---- solve ------------------------------------------------------------------

struct SolveArgs {
    std::string case_path;
    std::string method = "ac";
    std::string disconnect;
    double scale = 1.0;
};

int cmd_solve(const SolveArgs& a) {
    const Grid grid = load_case(a.case_path);
    const Topology topo = parse_topology(a.disconnect);
    for (std::size_t l : topo.disconnected()) {
        if (l >= grid.branches.size()) {
            throw UsageError("branch " + std::to_string(l) + " out of range (case has " +
                             std::to_string(grid.branches.size()) + " branches)");
        }
    }
    const Grid applied = apply_topology(grid, topo);
    if (!check_connectivity(applied).connected) {
        throw Error(ErrorCode::DisconnectedGrid, "disconnecting the requested branches islands the grid");
    }
    InjectionSample inj = case_injections(grid);
    for (auto* v : {&inj.p_gen, &inj.p_load, &inj.q_load}) {
        for (double& x : *v) x *= a.scale;
    }

    FlowVector amps;
    if (a.method == "dc") {
        amps = dc_currents(applied, solve_dc(applied, inj).p_mw);
    } else {
        const AcSolution sol = solve_ac(applied, inj);
        if (!sol.converged) {
            throw Error(ErrorCode::NotConverged, "AC power flow did not converge in " +
                                                     std::to_string(sol.iterations) + " iterations");
        }
        amps = branch_currents(applied, sol);
    }
    std::printf("index,from,to,amps\n");
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        std::printf("%zu,%d,%d,%.9g\n", i, grid.branches[i].from_bus, grid.branches[i].to_bus, amps[i]);
    }
    return kOk;
}

// ---- gen --------------------------------------------------------------------

struct GenArgs {
    std::string config;
    std::string out;
    std::string set = "n1";
    unsigned threads = 0;
};

int cmd_gen(const GenArgs& a) {
    const ExperimentConfig cfg = load_run_config(a.config);
    const Grid grid = load_case(cfg.case_path);
    GenerateOptions opts;
    opts.threads = a.threads > 0 ? a.threads : cfg.threads;
    opts.stream = a.set;
    std::vector<Topology> topologies;
    if (a.set == "n2") {
        topologies = sample_n2(grid, cfg.scenario.n2_pair_count, cfg.scenario.seed);
        opts.injections_per_topology = cfg.scenario.n2_injections_per_topology;
    } else {
        topologies = enumerate_n1(grid);
    }
    Dataset ds = generate_dataset(grid, topologies, cfg.scenario, opts);
    ds.manifest.case_path = cfg.case_path;
    save_dataset(ds, a.out);

    std::size_t kept = 0;
    std::size_t skipped = 0;
    for (const auto& t : ds.manifest.topologies) {
        kept += t.kept;
        skipped += t.skipped;
    }
    std::printf("%s: %zu topologies, %zu records kept, %zu skipped -> %s\n", a.set.c_str(),
                ds.manifest.topologies.size(), kept, skipped, a.out.c_str());
    return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string method;
    std::string out;
    std::string curve;
    std::string topology;
    std::string split = "stratified";
    std::uint64_t seed = 1;
    TrainConfig train;
    Hyper hyper;
};

int cmd_train(TrainArgs a) {
    const EncodingKind kind = encoding_from_string(a.method);
    if (kind == EncodingKind::one_model && a.topology.empty()) {
        throw UsageError("--method onemodel requires --topology (a branch list, or 'none' for the reference)");
    }
    Dataset ds = load_dataset(a.data);
    Topology bound;
    if (kind == EncodingKind::one_model) {
        bound = a.topology == "none" ? Topology{} : parse_topology(a.topology);
        const auto id = find_topology(ds, bound);
        ds = id ? filter_topology(ds, *id) : Dataset{ds.manifest, {}};
    }
    if (ds.records.size() < 2) {
        throw Error(ErrorCode::TooFewRecords, "training needs at least 2 records, dataset has " +
                                                  std::to_string(ds.records.size()));
    }

    Dataset train_part;
    Dataset val_part;
    if (a.split == "none") {
        train_part = ds;
        val_part = ds;
    } else {
        Split s = split_dataset(ds, a.seed);
        train_part = std::move(s.train);
        val_part = std::move(s.val);
    }
    const auto& first = ds.records.front();
    SurrogateModel model =
        make_model(kind, first.injections.p_gen.size(), first.injections.p_load.size(), first.amps.size(),
                   kind == EncodingKind::guided_dropout ? dataset_lines(ds) : std::vector<std::size_t>{}, a.hyper,
                   derive_seed(a.seed, "init"), bound);
    fit_model_scalers(model, train_part);
    const TrainingData train_set = make_training_data(model, train_part);
    const TrainingData val_set = make_training_data(model, val_part);
    a.train.seed = a.seed;
    const TrainResult result = train(std::move(model), train_set, val_set, a.train);
    save_model(result.model, a.out);

    const std::string curve_path = a.curve.empty() ? a.out + ".curve.csv" : a.curve;
    std::string csv = "epoch,train_loss,val_loss\n";
    char line[128];
    for (const auto& e : result.curve.epochs) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
        csv += line;
    }
    write_file(curve_path, csv);
    std::printf("trained %s: %zu epochs, best epoch %zu, best val loss %.6g -> %s\n",
                std::string(to_string(kind)).c_str(), result.curve.epochs.size(), result.curve.best_epoch,
                result.curve.best_val_loss, a.out.c_str());
    return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string data;
    std::string data_n2;
    std::string case_path;
    std::string split = "test";
    std::string out;
    std::uint64_t seed = 1;
};

double rmse_or_nan(const SurrogateModel& m, const Dataset& ds) {
    return ds.records.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate_rmse_amps(m, ds);
}

int cmd_eval(const EvalArgs& a) {
    const SurrogateModel model = load_model(a.model);
    const Dataset full = load_dataset(a.data);
    Dataset part = full;
    if (a.split != "all") {
        Split s = split_dataset(full, a.seed);
        part = a.split == "train" ? s.train : a.split == "val" ? s.val : s.test;
    }
    const std::optional<std::size_t> ref_found = find_topology(part, Topology{});
    bool has_ref = ref_found.has_value();
    const std::size_t ref_id = ref_found.value_or(0);
    if (model.encoding.kind == EncodingKind::one_model) {
        const auto id = find_topology(part, model.encoding.bound);
        part = id ? filter_topology(part, *id) : Dataset{part.manifest, {}};
        has_ref = has_ref && model.encoding.bound == Topology{};
    }
    if (part.records.empty()) {
        throw Error(ErrorCode::EmptySplit, "no records to evaluate in the '" + a.split + "' split");
    }

    std::optional<Dataset> n2;
    if (!a.data_n2.empty()) n2 = load_dataset(a.data_n2);

    EvalReport report;
    report.case_name = part.manifest.case_name;
    report.n1_test_records = part.records.size();
    report.n2_records = n2 ? n2->records.size() : 0;

    MethodReport mr;
    mr.method = std::string(to_string(model.encoding.kind));
    mr.n2_supported = n2.has_value() && method_supports_n2(mr.method);
    RunResult run;
    run.seed = a.seed;
    run.n1_rmse = evaluate_rmse_amps(model, part);
    run.ref_rmse = has_ref ? rmse_or_nan(model, filter_topology(part, ref_id)) : std::numeric_limits<double>::quiet_NaN();
    if (mr.n2_supported) run.n2_rmse = evaluate_rmse_amps(model, *n2);
    mr.runs.push_back(run);
    finalize_method(mr);
    report.methods.push_back(mr);

    if (!a.case_path.empty()) {
        const Grid grid = load_case(a.case_path);
        MethodReport dc;
        dc.method = "dc";
        dc.n2_supported = n2.has_value();
        RunResult dr;
        dr.seed = a.seed;
        dr.n1_rmse = evaluate_dc_rmse_amps(grid, part);
        dr.ref_rmse = std::numeric_limits<double>::quiet_NaN();
        if (has_ref) dr.ref_rmse = evaluate_dc_rmse_amps(grid, filter_topology(part, ref_id));
        if (n2) dr.n2_rmse = evaluate_dc_rmse_amps(grid, *n2);
        dc.runs.push_back(dr);
        finalize_method(dc);
        report.methods.push_back(dc);
    }

    if (!a.out.empty()) emit_report(report, a.out);
    for (const auto& m : report.methods) {
        std::string n2_text = "n/a";
        if (n2) n2_text = m.n2_supported ? std::to_string(*m.runs.front().n2_rmse) : "unsupported";
        std::printf("%s: n1_rmse_amps=%.6g n2_rmse_amps=%s\n", m.method.c_str(), m.runs.front().n1_rmse,
                    n2_text.c_str());
    }
    return kOk;
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
    std::string model;
    std::string case_path;
    std::size_t batch = 1024;
    double duration = 2.0;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_bench(const BenchArgs& a) {
    const SurrogateModel model = load_model(a.model);
    const Grid grid = load_case(a.case_path);
    if (model.n_gen != grid.gens.size() || model.n_bus != grid.buses.size() ||
        model.n_branch != grid.branches.size()) {
        throw Error(ErrorCode::ShapeMismatch, "model dimensions do not match the case");
    }
    const BenchReport r = benchmark_throughput(model, grid, a.batch, a.duration, a.seed);
    const std::string text = bench_to_json(r);
    if (!a.out.empty()) write_file(a.out, text);
    std::fputs(text.c_str(), stdout);
    return kOk;
}

// ---- experiment -------------------------------------------------------------

struct ExperimentArgs {
    std::string config;
    std::string out;
    unsigned threads = 0;
};

int cmd_experiment(const ExperimentArgs& a) {
    ExperimentConfig cfg = load_run_config(a.config);
    if (a.threads > 0) cfg.threads = a.threads;
    const EvalReport report = run_experiment(cfg);
    emit_report(report, a.out);
    std::ifstream summary(std::filesystem::path(a.out) / "summary.md");
    std::cout << summary.rdbuf();
    return kOk;
}

void add_hyper_flags(CLI::App* sub, TrainArgs& a) {
    sub->add_option("--epochs", a.train.epochs, "Maximum training epochs")->capture_default_str();
    sub->add_option("--batch-size", a.train.batch_size, "Mini-batch size")->capture_default_str();
    sub->add_option("--lr", a.train.lr, "Adam learning rate")->capture_default_str();
    sub->add_option("--patience", a.train.patience, "Epochs without validation improvement before stopping")
        ->capture_default_str();
    sub->add_option("--d-enc", a.hyper.d_enc, "Width of each input encoder")->capture_default_str();
    sub->add_option("--d-shared", a.hyper.d_shared, "Width of the shared latent layer")->capture_default_str();
    sub->add_option("--k", a.hyper.k, "Conditional units per line (guided dropout)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gdpf: neural surrogate for AC power flow under topology changes"};
    app.require_subcommand(1);

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "Solve one power flow and print per-branch currents (A) as CSV");
    s->add_option("--case", solve.case_path, "Matpower case file")->required();
    s->add_option("--method", solve.method, "Solver")->check(CLI::IsMember({"ac", "dc"}))->capture_default_str();
    s->add_option("--disconnect", solve.disconnect, "Comma-separated branch indices to take out of service");
    s->add_option("--scale", solve.scale, "Multiply every load and generator injection by this factor")
        ->capture_default_str();

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a labeled dataset (manifest.json + records.csv)");
    g->add_option("--config", gen.config, "Run configuration JSON")->required();
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--set", gen.set, "Topology set")->check(CLI::IsMember({"n1", "n2"}))->capture_default_str();
    g->add_option("--threads", gen.threads, "Worker threads (overrides the config; results are identical)");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a surrogate model on a dataset");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--method", tr.method, "Encoding")
        ->required()
        ->check(CLI::IsMember({"gd", "oh", "ov", "onemodel", "guided_dropout", "one_hot", "one_var", "one_model"}));
    t->add_option("--out", tr.out, "Model file to write")->required();
    t->add_option("--curve", tr.curve, "Learning-curve CSV (default: <out>.curve.csv)");
    t->add_option("--topology", tr.topology, "Bound topology for onemodel: branch list, or 'none' for the reference");
    t->add_option("--split", tr.split, "Train/validation split")
        ->check(CLI::IsMember({"stratified", "none"}))
        ->capture_default_str();
    t->add_option("--seed", tr.seed, "Seed for split, initialization and shuffling")->capture_default_str();
    add_hyper_flags(t, tr);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a model's RMSE in Amperes and write report files");
    e->add_option("--model", ev.model, "Model file")->required();
    e->add_option("--data", ev.data, "n-1 dataset directory")->required();
    e->add_option("--data-n2", ev.data_n2, "Optional n-2 dataset directory (test only)");
    e->add_option("--case", ev.case_path, "Case file; adds the DC baseline on the same records");
    e->add_option("--split", ev.split, "Which part of the n-1 dataset to score")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    e->add_option("--seed", ev.seed, "Seed of the split (match the one used for training)")->capture_default_str();
    e->add_option("--out", ev.out, "Report directory (report.json, curves.csv, summary.md)");

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Time batched NN inference against sequential AC solves");
    b->add_option("--model", be.model, "Model file")->required();
    b->add_option("--case", be.case_path, "Case file matching the model")->required();
    b->add_option("--batch", be.batch, "Inference batch size")->capture_default_str();
    b->add_option("--duration", be.duration, "Seconds spent timing each side")->capture_default_str();
    b->add_option("--seed", be.seed, "Seed for the benchmark inputs")->capture_default_str();
    b->add_option("--out", be.out, "Also write the JSON report to this file");

    ExperimentArgs ex;
    auto* x = app.add_subcommand("experiment", "Generate data, train every method over seeds, write report files");
    x->add_option("--config", ex.config, "Run configuration JSON")->required();
    x->add_option("--out", ex.out, "Report directory")->required();
    x->add_option("--threads", ex.threads, "Data-generation threads (overrides the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }

    try {
        if (s->parsed()) return cmd_solve(solve);
        if (g->parsed()) return cmd_gen(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (b->parsed()) return cmd_bench(be);
        if (x->parsed()) return cmd_experiment(ex);
    } catch (const UsageError& err) {
        std::fprintf(stderr, "gdpf: usage error: %s\n", err.what());
        return kUsage;
    } catch (const Error& err) {
        std::fprintf(stderr, "gdpf: %s: %s\n", std::string(to_string(err.code())).c_str(), err.what());
        return exit_code_for(err.code());
    } catch (const std::exception& err) {
        std::fprintf(stderr, "gdpf: %s\n", err.what());
        return kUsage;
    }
    return kUsage;
}
