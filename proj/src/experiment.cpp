// SPDX-License-Identifier: Apache-2.0
#include "gdpf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gdpf/error.hpp"
#include "gdpf/matpower_io.hpp"
#include "gdpf/powerflow.hpp"
#include "gdpf/rng.hpp"

namespace gdpf {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kEvalChunk = 4096;
constexpr double kConvergedFactor = 10.0;

const std::string kDc = "dc";

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Dataset subset(const Dataset& ds, std::size_t begin, std::size_t end) {
    Dataset out;
    out.manifest = ds.manifest;
    out.records.assign(ds.records.begin() + static_cast<std::ptrdiff_t>(begin),
                       ds.records.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

struct ErrorSum {
    double sum_sq = 0.0;
    std::size_t count = 0;

    double rmse() const { return std::sqrt(sum_sq / static_cast<double>(count)); }
};

ErrorSum model_errors(const SurrogateModel& model, const Dataset& split) {
    ErrorSum acc;
    for (std::size_t begin = 0; begin < split.records.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(split.records.size(), begin + kEvalChunk);
        const Dataset chunk = subset(split, begin, end);
        const Eigen::MatrixXd pred = predict_amps(model, raw_features(chunk), record_topologies(chunk));
        acc.sum_sq += (pred - raw_targets(chunk)).squaredNorm();
        acc.count += static_cast<std::size_t>(pred.size());
    }
    return acc;
}

void require_records(const Dataset& split) {
    if (split.records.empty()) {
        throw Error(ErrorCode::EmptySplit, "RMSE over an empty split");
    }
}

json number_or_null(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json quantiles_json(const Quantiles& q) {
    return {{"median", number_or_null(q.median)}, {"q25", number_or_null(q.q25)},
            {"q75", number_or_null(q.q75)}, {"count", q.count}};
}

Quantiles quantiles_from(const json& j) {
    return {number_from(j.at("median")), number_from(j.at("q25")), number_from(j.at("q75")),
            j.at("count").get<std::size_t>()};
}

std::string fmt(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt_summary(const Quantiles& q) {
    if (q.count == 0) return "n/a";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.4g [%.4g, %.4g]", q.median, q.q25, q.q75);
    return buf;
}

std::vector<CurvePoint> to_curve(const LearningCurve& lc) {
    std::vector<CurvePoint> out;
    out.reserve(lc.epochs.size());
    for (const auto& e : lc.epochs) out.push_back({e.epoch, e.train_loss, e.val_loss, e.monitor});
    return out;
}

std::vector<std::size_t> n1_lines(const Dataset& n1) {
    std::set<std::size_t> lines;
    for (const auto& t : n1.manifest.topologies) {
        for (std::size_t l : t.topology.disconnected()) lines.insert(l);
    }
    return {lines.begin(), lines.end()};
}

struct RunContext {
    const Grid& grid;
    const Dataset& n1;
    const Dataset* n2;
    const ExperimentConfig& cfg;
    std::uint64_t run_seed;
    const Split& split;
};

RunResult run_single_model(const RunContext& ctx, EncodingKind kind) {
    const Grid& grid = ctx.grid;
    SurrogateModel model = make_model(kind, grid.gens.size(), grid.buses.size(), grid.branches.size(),
                                      n1_lines(ctx.n1), ctx.cfg.hyper,
                                      derive_seed(ctx.run_seed, std::string("init-") + std::string(to_string(kind))));
    fit_model_scalers(model, ctx.split.train);
    const TrainingData train_set = make_training_data(model, ctx.split.train);
    const TrainingData val_set = make_training_data(model, ctx.split.val);

    TrainConfig tc = ctx.cfg.train;
    tc.seed = ctx.run_seed;
    EpochMonitor monitor;
    if (ctx.cfg.monitor_test) {
        monitor = [&](const SurrogateModel& m) { return evaluate_rmse_amps(m, ctx.split.test); };
    }
    const TrainResult result = train(std::move(model), train_set, val_set, tc, monitor);

    RunResult run;
    run.seed = ctx.run_seed;
    run.curve = to_curve(result.curve);
    run.final_train_loss = result.curve.epochs.empty() ? 0.0 : result.curve.epochs.back().train_loss;
    run.n1_rmse = evaluate_rmse_amps(result.model, ctx.split.test);
    run.ref_rmse = evaluate_rmse_amps(result.model, filter_topology(ctx.split.test, 0));
    if (ctx.n2 != nullptr && method_supports_n2(std::string(to_string(kind)))) {
        run.n2_rmse = evaluate_rmse_amps(result.model, *ctx.n2);
    }
    return run;
}

RunResult run_one_model(const RunContext& ctx) {
    const Grid& grid = ctx.grid;
    ErrorSum pooled;
    double ref_rmse = std::numeric_limits<double>::quiet_NaN();
    std::vector<CurvePoint> curve;
    std::vector<std::size_t> contributors;
    double final_sum = 0.0;
    std::size_t n_models = 0;

    for (const auto& entry : ctx.n1.manifest.topologies) {
        const Dataset train_t = filter_topology(ctx.split.train, entry.topo_id);
        const Dataset val_t = filter_topology(ctx.split.val, entry.topo_id);
        const Dataset test_t = filter_topology(ctx.split.test, entry.topo_id);
        if (train_t.records.empty()) continue;

        SurrogateModel model =
            make_model(EncodingKind::one_model, grid.gens.size(), grid.buses.size(), grid.branches.size(), {},
                       ctx.cfg.hyper, derive_seed(ctx.run_seed, "init-one_model", {entry.topo_id}), entry.topology);
        fit_model_scalers(model, train_t);
        const TrainingData train_set = make_training_data(model, train_t);
        const TrainingData val_set = make_training_data(model, val_t);
        TrainConfig tc = ctx.cfg.train;
        tc.seed = derive_seed(ctx.run_seed, "one_model", {entry.topo_id});
        const TrainResult result = train(std::move(model), train_set, val_set, tc);

        for (std::size_t e = 0; e < result.curve.epochs.size(); ++e) {
            if (curve.size() <= e) {
                curve.push_back({result.curve.epochs[e].epoch, 0.0, 0.0, std::numeric_limits<double>::quiet_NaN()});
                contributors.push_back(0);
            }
            curve[e].train_loss += result.curve.epochs[e].train_loss;
            curve[e].val_loss += result.curve.epochs[e].val_loss;
            ++contributors[e];
        }
        if (!result.curve.epochs.empty()) final_sum += result.curve.epochs.back().train_loss;
        ++n_models;

        if (!test_t.records.empty()) {
            const ErrorSum err = model_errors(result.model, test_t);
            pooled.sum_sq += err.sum_sq;
            pooled.count += err.count;
            if (entry.topo_id == 0) ref_rmse = err.rmse();
        }
    }
    if (pooled.count == 0) {
        throw Error(ErrorCode::EmptySplit, "no topology had test records for one_model");
    }
    for (std::size_t e = 0; e < curve.size(); ++e) {
        curve[e].train_loss /= static_cast<double>(contributors[e]);
        curve[e].val_loss /= static_cast<double>(contributors[e]);
    }

    RunResult run;
    run.seed = ctx.run_seed;
    run.curve = std::move(curve);
    run.final_train_loss = n_models == 0 ? 0.0 : final_sum / static_cast<double>(n_models);
    run.n1_rmse = pooled.rmse();
    run.ref_rmse = ref_rmse;
    return run;
}

}  // namespace

double evaluate_rmse_amps(const SurrogateModel& model, const Dataset& split) {
    require_records(split);
    return model_errors(model, split).rmse();
}

double evaluate_dc_rmse_amps(const Grid& grid, const Dataset& split) {
    require_records(split);
    std::map<std::size_t, Grid> applied;
    ErrorSum acc;
    for (const Record& r : split.records) {
        auto it = applied.find(r.topo_id);
        if (it == applied.end()) {
            it = applied.emplace(r.topo_id, apply_topology(grid, split.topology_of(r))).first;
        }
        const DcSolution sol = solve_dc(it->second, r.injections);
        const FlowVector pred = dc_currents(it->second, sol.p_mw);
        if (pred.size() != r.amps.size()) {
            throw Error(ErrorCode::ShapeMismatch, "record label width does not match the grid");
        }
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - r.amps[i];
            acc.sum_sq += d * d;
        }
        acc.count += pred.size();
    }
    return acc.rmse();
}

Dataset filter_topology(const Dataset& ds, std::size_t topo_id) {
    Dataset out;
    out.manifest = ds.manifest;
    for (const Record& r : ds.records) {
        if (r.topo_id == topo_id) out.records.push_back(r);
    }
    return out;
}

Quantiles summarize(std::vector<double> values) {
    Quantiles q;
    q.count = values.size();
    if (values.empty()) {
        q.median = q.q25 = q.q75 = std::numeric_limits<double>::quiet_NaN();
        return q;
    }
    std::sort(values.begin(), values.end());
    const auto at = [&](double p) {
        const double h = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    q.median = at(0.5);
    q.q25 = at(0.25);
    q.q75 = at(0.75);
    return q;
}

bool CurvePoint::operator==(const CurvePoint& o) const {
    const auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return epoch == o.epoch && same(train_loss, o.train_loss) && same(val_loss, o.val_loss) &&
           same(n1_rmse_amps, o.n1_rmse_amps);
}

const MethodReport* EvalReport::find(const std::string& method) const {
    for (const auto& m : methods) {
        if (m.method == method) return &m;
    }
    return nullptr;
}

std::string normalize_method(const std::string& name) {
    return name == kDc ? kDc : std::string(to_string(encoding_from_string(name)));
}

bool method_supports_n2(const std::string& method) {
    return method == "guided_dropout" || method == "one_hot" || method == kDc;
}

void finalize_method(MethodReport& report) {
    std::vector<double> finals;
    for (const auto& r : report.runs) finals.push_back(r.final_train_loss);
    const double median = summarize(finals).median;
    std::vector<double> n1, n2, ref;
    for (auto& r : report.runs) {
        r.kept = report.method == kDc || r.final_train_loss <= kConvergedFactor * median;
        if (!r.kept) continue;
        n1.push_back(r.n1_rmse);
        ref.push_back(r.ref_rmse);
        if (r.n2_rmse) n2.push_back(*r.n2_rmse);
    }
    report.n1 = summarize(n1);
    report.ref = summarize(ref);
    if (report.n2_supported && !n2.empty()) {
        report.n2 = summarize(n2);
    } else {
        report.n2.reset();
    }
}

EvalReport run_experiment(const Grid& grid, const Dataset& n1, const Dataset* n2, const ExperimentConfig& cfg) {
    if (cfg.seeds == 0) {
        throw Error(ErrorCode::InvalidConfig, "experiment needs at least one seed");
    }
    for (const auto& m : cfg.methods) normalize_method(m);

    std::vector<std::uint64_t> run_seeds;
    std::vector<Split> splits;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
        run_seeds.push_back(derive_seed(cfg.seed, "run", {s}));
        splits.push_back(split_dataset(n1, run_seeds.back()));
    }

    EvalReport report;
    report.case_name = grid.name;
    report.n1_test_records = splits.front().test.records.size();
    report.n2_records = n2 == nullptr ? 0 : n2->records.size();

    std::optional<double> dc_n2;
    for (const auto& name : cfg.methods) {
        MethodReport mr;
        mr.method = normalize_method(name);
        mr.n2_supported = n2 != nullptr && method_supports_n2(mr.method);
        for (std::size_t s = 0; s < cfg.seeds; ++s) {
            const RunContext ctx{grid, n1, n2, cfg, run_seeds[s], splits[s]};
            RunResult run;
            if (mr.method == kDc) {
                run.seed = run_seeds[s];
                run.n1_rmse = evaluate_dc_rmse_amps(grid, splits[s].test);
                run.ref_rmse = evaluate_dc_rmse_amps(grid, filter_topology(splits[s].test, 0));
                if (n2 != nullptr) {
                    if (!dc_n2) dc_n2 = evaluate_dc_rmse_amps(grid, *n2);
                    run.n2_rmse = dc_n2;
                }
            } else if (mr.method == "one_model") {
                run = run_one_model(ctx);
            } else {
                run = run_single_model(ctx, encoding_from_string(mr.method));
            }
            mr.runs.push_back(std::move(run));
        }
        finalize_method(mr);
        report.methods.push_back(std::move(mr));
    }
    return report;
}

EvalReport run_experiment(const ExperimentConfig& cfg) {
    const Grid grid = load_case(cfg.case_path);
    GenerateOptions n1_opts;
    n1_opts.stream = "n1";
    n1_opts.threads = cfg.threads;
    Dataset n1 = generate_dataset(grid, enumerate_n1(grid), cfg.scenario, n1_opts);
    n1.manifest.case_path = cfg.case_path;

    GenerateOptions n2_opts;
    n2_opts.stream = "n2";
    n2_opts.threads = cfg.threads;
    n2_opts.injections_per_topology = cfg.scenario.n2_injections_per_topology;
    const auto needs_n2 = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](const std::string& m) {
        return method_supports_n2(normalize_method(m));
    });
    if (!needs_n2 || cfg.scenario.n2_pair_count == 0) {
        return run_experiment(grid, n1, nullptr, cfg);
    }
    Dataset n2 = generate_dataset(grid, sample_n2(grid, cfg.scenario.n2_pair_count, cfg.scenario.seed),
                                  cfg.scenario, n2_opts);
    n2.manifest.case_path = cfg.case_path;
    return run_experiment(grid, n1, &n2, cfg);
}

std::string report_to_json(const EvalReport& report) {
    json methods = json::array();
    for (const auto& m : report.methods) {
        json runs = json::array();
        for (const auto& r : m.runs) {
            json curve = json::array();
            for (const auto& p : r.curve) {
                curve.push_back({{"epoch", p.epoch},
                                 {"train_loss", number_or_null(p.train_loss)},
                                 {"val_loss", number_or_null(p.val_loss)},
                                 {"n1_rmse_amps", number_or_null(p.n1_rmse_amps)}});
            }
            runs.push_back({{"seed", r.seed},
                            {"n1_rmse_amps", number_or_null(r.n1_rmse)},
                            {"n2_rmse_amps", r.n2_rmse ? number_or_null(*r.n2_rmse) : json(nullptr)},
                            {"ref_rmse_amps", number_or_null(r.ref_rmse)},
                            {"final_train_loss", number_or_null(r.final_train_loss)},
                            {"kept", r.kept},
                            {"curve", std::move(curve)}});
        }
        json entry = {{"method", m.method},
                      {"n2_supported", m.n2_supported},
                      {"n1_rmse_amps", quantiles_json(m.n1)},
                      {"ref_rmse_amps", quantiles_json(m.ref)},
                      {"runs", std::move(runs)}};
        entry["n2_rmse_amps"] = m.n2 ? quantiles_json(*m.n2) : json("unsupported");
        methods.push_back(std::move(entry));
    }
    const json j = {{"case", report.case_name},
                    {"n1_test_records", report.n1_test_records},
                    {"n2_records", report.n2_records},
                    {"methods", std::move(methods)}};
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        EvalReport report;
        report.case_name = j.at("case").get<std::string>();
        report.n1_test_records = j.at("n1_test_records").get<std::size_t>();
        report.n2_records = j.at("n2_records").get<std::size_t>();
        for (const auto& jm : j.at("methods")) {
            MethodReport m;
            m.method = jm.at("method").get<std::string>();
            m.n2_supported = jm.at("n2_supported").get<bool>();
            m.n1 = quantiles_from(jm.at("n1_rmse_amps"));
            m.ref = quantiles_from(jm.at("ref_rmse_amps"));
            if (jm.at("n2_rmse_amps").is_object()) m.n2 = quantiles_from(jm.at("n2_rmse_amps"));
            for (const auto& jr : jm.at("runs")) {
                RunResult r;
                r.seed = jr.at("seed").get<std::uint64_t>();
                r.n1_rmse = number_from(jr.at("n1_rmse_amps"));
                if (!jr.at("n2_rmse_amps").is_null()) r.n2_rmse = jr.at("n2_rmse_amps").get<double>();
                r.ref_rmse = number_from(jr.at("ref_rmse_amps"));
                r.final_train_loss = number_from(jr.at("final_train_loss"));
                r.kept = jr.at("kept").get<bool>();
                for (const auto& jp : jr.at("curve")) {
                    r.curve.push_back({jp.at("epoch").get<std::size_t>(), number_from(jp.at("train_loss")),
                                       number_from(jp.at("val_loss")), number_from(jp.at("n1_rmse_amps"))});
                }
                m.runs.push_back(std::move(r));
            }
            report.methods.push_back(std::move(m));
        }
        return report;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("malformed report: ") + e.what());
    }
}

void emit_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoError, "cannot create report directory " + dir.string());
    }
    const auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary);
        out << content;
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / name).string());
    };

    write("report.json", report_to_json(report));

    std::ostringstream csv;
    csv << "epoch,method,seed,train_loss,val_loss,n1_rmse_amps\n";
    for (const auto& m : report.methods) {
        for (const auto& r : m.runs) {
            for (const auto& p : r.curve) {
                csv << p.epoch << ',' << m.method << ',' << r.seed << ',' << fmt(p.train_loss) << ','
                    << fmt(p.val_loss) << ',' << fmt(p.n1_rmse_amps) << '\n';
            }
        }
    }
    write("curves.csv", csv.str());

    std::ostringstream md;
    md << "# Surrogate comparison: " << report.case_name << "\n\n";
    md << "RMSE in Amperes, median [25%, 75%] over kept seeds. n-1 test records: " << report.n1_test_records
       << "; n-2 records: " << report.n2_records << ".\n\n";
    md << "| method | n-1 test | n-2 test | reference topology | runs kept |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& m : report.methods) {
        const auto kept = std::count_if(m.runs.begin(), m.runs.end(), [](const RunResult& r) { return r.kept; });
        md << "| " << m.method << " | " << fmt_summary(m.n1) << " | "
           << (m.n2 ? fmt_summary(*m.n2) : std::string("unsupported")) << " | " << fmt_summary(m.ref) << " | "
           << kept << "/" << m.runs.size() << " |\n";
    }
    write("summary.md", md.str());
}

BenchReport benchmark_throughput(const SurrogateModel& model, const Grid& grid, std::size_t batch,
                                 double duration_s, std::uint64_t seed) {
    if (batch == 0 || !(duration_s > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "benchmark needs batch >= 1 and a positive duration");
    }
    std::vector<Topology> candidates;
    if (model.encoding.kind == EncodingKind::one_model) {
        candidates.push_back(model.encoding.bound);
    } else {
        candidates.emplace_back();
        const std::set<std::size_t> supported(model.cond_lines.begin(), model.cond_lines.end());
        for (const auto& t : enumerate_n1(grid)) {
            if (t.empty()) continue;
            if (model.encoding.kind != EncodingKind::guided_dropout || supported.count(t.disconnected().front())) {
                candidates.push_back(t);
            }
        }
    }

    ScenarioConfig sc;
    sc.seed = seed;
    const InjectionSampler sampler(grid, sc);
    Rng rng = make_rng(seed, "bench");
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    std::vector<InjectionSample> samples;
    std::vector<Topology> topos;
    Eigen::MatrixXf x(static_cast<Eigen::Index>(model.n_inputs()), static_cast<Eigen::Index>(batch));
    for (std::size_t b = 0; b < batch; ++b) {
        samples.push_back(sampler.sample(rng));
        topos.push_back(candidates[pick(rng)]);
        const auto& s = samples.back();
        Eigen::Index row = 0;
        for (double v : s.p_gen) x(row++, static_cast<Eigen::Index>(b)) = static_cast<float>(v);
        for (double v : s.p_load) x(row++, static_cast<Eigen::Index>(b)) = static_cast<float>(v);
    }
    std::map<Topology, Grid> applied;
    for (const auto& t : candidates) applied.emplace(t, apply_topology(grid, t));

    BenchReport report;
    report.grid_name = grid.name;
    report.batch = batch;

    const FastInference engine(model);
    Eigen::MatrixXf out;
    engine.predict(x, topos, out);
    auto start = Clock::now();
    double elapsed = 0.0;
    do {
        engine.predict(x, topos, out);
        report.nn_flows += batch;
        elapsed = seconds_since(start);
    } while (elapsed < duration_s);
    report.nn_flows_per_sec = static_cast<double>(report.nn_flows) / elapsed;

    const auto ac_once = [&](std::size_t i) {
        const Grid& g = applied.at(topos[i]);
        const AcSolution sol = solve_ac(g, samples[i]);
        if (sol.converged) {
            volatile double sink = branch_currents(g, sol).front();
            (void)sink;
        }
    };
    ac_once(0);
    start = Clock::now();
    std::size_t i = 0;
    do {
        ac_once(i);
        i = (i + 1) % batch;
        ++report.ac_solves;
        elapsed = seconds_since(start);
    } while (elapsed < duration_s);
    report.ac_solves_per_sec = static_cast<double>(report.ac_solves) / elapsed;
    report.speedup = report.nn_flows_per_sec / report.ac_solves_per_sec;
    return report;
}

std::string bench_to_json(const BenchReport& r) {
    const json j = {{"grid", r.grid_name},
                    {"batch", r.batch},
                    {"nn_flows_per_sec", r.nn_flows_per_sec},
                    {"ac_solves_per_sec", r.ac_solves_per_sec},
                    {"speedup", r.speedup},
                    {"nn_flows", r.nn_flows},
                    {"ac_solves", r.ac_solves}};
    return j.dump(2) + "\n";
}

}  // namespace gdpf
