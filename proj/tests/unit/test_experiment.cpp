// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gdpf/error.hpp"
#include "gdpf/experiment.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gdpf;
using namespace gdpf::test;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Every weight zero, so the model predicts scaler_y.mean everywhere.
SurrogateModel constant_model(const Grid& g, double amps) {
    SurrogateModel m = make_model(EncodingKind::guided_dropout, g.gens.size(), g.buses.size(), g.branches.size(), {},
                                  Hyper{}, 1);
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) m.params.group(i).weight.setZero();
    m.scaler_y.mean.setConstant(amps);
    return m;
}

Dataset labelled(const Grid& g, std::size_t records, double amps) {
    Dataset ds;
    ds.manifest.case_name = g.name;
    ds.manifest.topologies.push_back({0, Topology{}, records, 0});
    for (std::size_t i = 0; i < records; ++i) {
        Record r;
        r.injections = case_injections(g);
        r.amps.assign(g.branches.size(), amps);
        ds.records.push_back(r);
    }
    return ds;
}

double type7(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = 1.0 + p * static_cast<double>(v.size() - 1);
    const auto k = static_cast<std::size_t>(pos);
    if (k >= v.size()) return v.back();
    return v[k - 1] + (pos - static_cast<double>(k)) * (v[k] - v[k - 1]);
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.case_path = data_file("case14.m").string();
    cfg.seed = 3;
    cfg.scenario.seed = 3;
    cfg.scenario.injections_per_topology = 8;
    cfg.scenario.n2_pair_count = 3;
    cfg.scenario.n2_injections_per_topology = 6;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 16;
    cfg.train.lr = 1e-3;
    cfg.hyper.d_enc = 8;
    cfg.hyper.d_shared = 8;
    cfg.hyper.k = 2;
    cfg.seeds = 2;
    return cfg;
}

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

double median_of(std::vector<double> v) { return type7(std::move(v), 0.5); }

}  // namespace

TEST_CASE("RMSE of a constant predictor", "[experiment]") {
    const Grid g = load_bundled("case9");
    const SurrogateModel m = constant_model(g, 100.0);
    CHECK(evaluate_rmse_amps(m, labelled(g, 5, 100.0)) == 0.0);
    CHECK_THAT(evaluate_rmse_amps(m, labelled(g, 5, 110.0)), WithinAbs(10.0, 1e-12));
    CHECK_THROWS_MATCHES(evaluate_rmse_amps(m, Dataset{}), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::EmptySplit;
                         }));
}

TEST_CASE("DC RMSE agrees with a dense record-by-record oracle", "[experiment]") {
    const Grid g = load_bundled("case14");
    ScenarioConfig cfg;
    cfg.injections_per_topology = 4;
    const auto topos = enumerate_n1(g);
    const Dataset ds = generate_dataset(g, {topos[0], topos[3], topos[7]}, cfg);
    double sum = 0.0;
    std::size_t count = 0;
    for (const Record& r : ds.records) {
        Grid cut = g;
        for (std::size_t line : ds.topology_of(r).disconnected()) cut.branches[line].status = 0;
        const std::vector<double> flows = dense_dc_flows(cut, r.injections);
        for (std::size_t i = 0; i < flows.size(); ++i) {
            const double kv = cut.buses[positions_of(cut).at(cut.branches[i].from_bus)].base_kv;
            const double amps = cut.branches[i].status ? std::abs(flows[i]) * 1e6 / (std::sqrt(3.0) * kv * 1e3) : 0.0;
            sum += (amps - r.amps[i]) * (amps - r.amps[i]);
            ++count;
        }
    }
    CHECK_THAT(evaluate_dc_rmse_amps(g, ds), WithinRel(std::sqrt(sum / static_cast<double>(count)), 1e-9));
    CHECK(evaluate_dc_rmse_amps(g, ds) > 0.0);
}

TEST_CASE("quantiles follow linear interpolation", "[experiment]") {
    const Quantiles five = summarize({5.0, 1.0, 4.0, 2.0, 3.0});
    CHECK(five.median == 3.0);
    CHECK(five.q25 == 2.0);
    CHECK(five.q75 == 4.0);
    CHECK(five.count == 5);
    const Quantiles four = summarize({1.0, 2.0, 3.0, 10.0});
    CHECK(four.median == 2.5);
    CHECK(four.q25 == 1.75);
    CHECK(four.q75 == 4.75);
    const Quantiles one = summarize({7.0});
    CHECK(one.median == 7.0);
    CHECK(one.q25 == 7.0);
    CHECK(std::isnan(summarize({}).median));

    Rng rng = make_rng(1, "quantiles");
    std::uniform_real_distribution<double> u(0.0, 50.0);
    for (std::size_t n = 2; n < 12; ++n) {
        std::vector<double> v(n);
        for (double& x : v) x = u(rng);
        const Quantiles q = summarize(v);
        CHECK_THAT(q.median, WithinAbs(type7(v, 0.5), 1e-12));
        CHECK_THAT(q.q25, WithinAbs(type7(v, 0.25), 1e-12));
        CHECK_THAT(q.q75, WithinAbs(type7(v, 0.75), 1e-12));
    }
}

TEST_CASE("the convergence filter drops runs far above the median", "[experiment]") {
    MethodReport m;
    m.method = "one_hot";
    m.n2_supported = true;
    for (double loss : {0.1, 0.12, 0.09, 5.0}) {
        RunResult r;
        r.final_train_loss = loss;
        r.n1_rmse = loss * 10.0;
        r.ref_rmse = loss;
        r.n2_rmse = loss * 20.0;
        m.runs.push_back(r);
    }
    finalize_method(m);
    CHECK(m.runs[3].kept == false);
    CHECK(m.n1.count == 3);
    CHECK_THAT(m.n1.median, WithinAbs(1.0, 1e-12));
    REQUIRE(m.n2);
    CHECK_THAT(m.n2->median, WithinAbs(2.0, 1e-12));

    m.n2_supported = false;
    finalize_method(m);
    CHECK(!m.n2);
}

TEST_CASE("method names and n-2 support", "[experiment]") {
    CHECK(normalize_method("gd") == "guided_dropout");
    CHECK(normalize_method("dc") == "dc");
    CHECK_THROWS_AS(normalize_method("bogus"), Error);
    CHECK(method_supports_n2("guided_dropout"));
    CHECK(method_supports_n2("one_hot"));
    CHECK(method_supports_n2("dc"));
    CHECK(!method_supports_n2("one_var"));
    CHECK(!method_supports_n2("one_model"));
}

TEST_CASE("a tiny end-to-end experiment", "[experiment][slow]") {
    const ExperimentConfig cfg = tiny_config();
    const EvalReport report = run_experiment(cfg);
    CHECK(report.case_name == "case14");
    REQUIRE(report.methods.size() == 5);
    CHECK(report.n2_records > 0);
    CHECK(report.n1_test_records > 0);

    for (const auto& m : report.methods) {
        CAPTURE(m.method);
        REQUIRE(m.runs.size() == 2);
        CHECK(m.runs[0].seed == derive_seed(cfg.seed, "run", {0}));
        CHECK(m.runs[1].seed == derive_seed(cfg.seed, "run", {1}));
        CHECK(m.n2_supported == method_supports_n2(m.method));
        CHECK(m.n2.has_value() == m.n2_supported);
        std::vector<double> n1;
        for (const auto& r : m.runs) {
            CHECK(std::isfinite(r.n1_rmse));
            CHECK(r.n1_rmse > 0.0);
            CHECK(r.n2_rmse.has_value() == m.n2_supported);
            if (r.kept) n1.push_back(r.n1_rmse);
            if (m.method == "dc") {
                CHECK(r.curve.empty());
            } else {
                CHECK(r.curve.size() == cfg.train.epochs);
                CHECK(r.final_train_loss == r.curve.back().train_loss);
            }
        }
        CHECK_THAT(m.n1.median, WithinAbs(median_of(n1), 1e-12));
    }
    const MethodReport* gd = report.find("guided_dropout");
    REQUIRE(gd != nullptr);
    for (const auto& r : gd->runs) {
        for (const auto& p : r.curve) CHECK(std::isfinite(p.n1_rmse_amps));
    }
    const MethodReport* om = report.find("one_model");
    REQUIRE(om != nullptr);
    for (const auto& p : om->runs[0].curve) CHECK(std::isnan(p.n1_rmse_amps));
    const MethodReport* dc = report.find("dc");
    REQUIRE(dc != nullptr);
    CHECK(*dc->runs[0].n2_rmse == *dc->runs[1].n2_rmse);
    CHECK(report.find("nope") == nullptr);

    const auto dir = scratch_dir("experiment");
    emit_report(report, dir / "a");
    emit_report(run_experiment(cfg), dir / "b");
    for (const char* name : {"report.json", "curves.csv", "summary.md"}) {
        CAPTURE(name);
        CHECK(read_text(dir / "a" / name) == read_text(dir / "b" / name));
    }

    const std::string json_text = read_text(dir / "a" / "report.json");
    CHECK(report_from_json(json_text) == report);
    CHECK(json_text.find("\"unsupported\"") != std::string::npos);

    std::size_t epochs = 0;
    for (const auto& m : report.methods) {
        for (const auto& r : m.runs) epochs += r.curve.size();
    }
    const std::string curves = read_text(dir / "a" / "curves.csv");
    CHECK(curves.rfind("epoch,method,seed,train_loss,val_loss,n1_rmse_amps\n", 0) == 0);
    CHECK(line_count(curves) == 1 + epochs);

    const std::string summary = read_text(dir / "a" / "summary.md");
    CHECK(summary.find("| one_var |") != std::string::npos);
    CHECK(summary.find("unsupported") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("methods without n-2 data report no n-2 numbers", "[experiment]") {
    const Grid g = load_bundled("case9");
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"dc", "ov"};
    cfg.seeds = 1;
    const Dataset n1 = generate_dataset(g, enumerate_n1(g), cfg.scenario);
    const EvalReport report = run_experiment(g, n1, nullptr, cfg);
    REQUIRE(report.methods.size() == 2);
    CHECK(report.methods[1].method == "one_var");
    CHECK(!report.methods[0].n2);
    CHECK(report.n2_records == 0);

    cfg.seeds = 0;
    CHECK_THROWS_AS(run_experiment(g, n1, nullptr, cfg), Error);
    cfg.seeds = 1;
    cfg.methods = {"gd", "mystery"};
    CHECK_THROWS_AS(run_experiment(g, n1, nullptr, cfg), Error);
}

TEST_CASE("an empty report still yields valid files", "[experiment]") {
    EvalReport empty;
    empty.case_name = "none";
    const auto dir = scratch_dir("empty_report");
    emit_report(empty, dir);
    CHECK(report_from_json(read_text(dir / "report.json")) == empty);
    CHECK(read_text(dir / "curves.csv") == "epoch,method,seed,train_loss,val_loss,n1_rmse_amps\n");
    CHECK(read_text(dir / "summary.md").find("| method |") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("report JSON round-trips NaN and missing values", "[experiment]") {
    EvalReport r;
    r.case_name = "x";
    MethodReport m;
    m.method = "one_model";
    RunResult run;
    run.seed = 42;
    run.n1_rmse = 1.5;
    run.ref_rmse = std::numeric_limits<double>::quiet_NaN();
    run.curve = {{1, 0.5, 0.6, std::numeric_limits<double>::quiet_NaN()}};
    m.runs = {run};
    finalize_method(m);
    r.methods = {m};
    const EvalReport back = report_from_json(report_to_json(r));
    REQUIRE(back.methods.size() == 1);
    CHECK(back.methods[0].runs[0].curve == run.curve);
    CHECK(std::isnan(back.methods[0].runs[0].ref_rmse));
    CHECK(!back.methods[0].n2);
    CHECK_THROWS_AS(report_from_json("[]"), Error);
}

TEST_CASE("throughput benchmark reports positive, stable rates", "[experiment][slow]") {
    const Grid g = load_bundled("case14");
    const SurrogateModel m = make_model(EncodingKind::guided_dropout, g.gens.size(), g.buses.size(),
                                        g.branches.size(), {0, 1, 2}, Hyper{}, 1);
    const BenchReport r = benchmark_throughput(m, g, 256, 0.3);
    CHECK(r.grid_name == "case14");
    CHECK(r.batch == 256);
    CHECK(r.nn_flows_per_sec > 0.0);
    CHECK(r.ac_solves_per_sec > 0.0);
    CHECK_THAT(r.speedup, WithinRel(r.nn_flows_per_sec / r.ac_solves_per_sec, 1e-12));
    CHECK(bench_to_json(r).find("\"speedup\"") != std::string::npos);

    // Median of three measurements per duration damps scheduler noise.
    auto measure = [&](double duration) {
        std::vector<double> nn, ac;
        for (int i = 0; i < 3; ++i) {
            const BenchReport b = benchmark_throughput(m, g, 256, duration);
            nn.push_back(b.nn_flows_per_sec);
            ac.push_back(b.ac_solves_per_sec);
        }
        return std::pair{median_of(nn), median_of(ac)};
    };
    const auto [nn_short, ac_short] = measure(0.5);
    const auto [nn_long, ac_long] = measure(1.0);
    CHECK(std::abs(nn_long / nn_short - 1.0) < 0.10);
    CHECK(std::abs(ac_long / ac_short - 1.0) < 0.10);
}
