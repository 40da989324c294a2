// SPDX-License-Identifier: Apache-2.0
#include "gdpf/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "gdpf/error.hpp"

namespace gdpf {

namespace {

constexpr int kMaxOutageRedraws = 100;

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

nlohmann::json config_to_json(const ScenarioConfig& c) {
    return {{"seed", c.seed},
            {"injections_per_topology", c.injections_per_topology},
            {"n2_pair_count", c.n2_pair_count},
            {"n2_injections_per_topology", c.n2_injections_per_topology},
            {"load_sigma_global", c.load_sigma_global},
            {"load_sigma_local", c.load_sigma_local},
            {"correlation_length", c.correlation_length},
            {"gen_outage_prob", c.gen_outage_prob},
            {"loss_margin", c.loss_margin}};
}

ScenarioConfig config_from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.injections_per_topology = j.at("injections_per_topology").get<std::size_t>();
    c.n2_pair_count = j.at("n2_pair_count").get<std::size_t>();
    c.n2_injections_per_topology = j.at("n2_injections_per_topology").get<std::size_t>();
    c.load_sigma_global = j.at("load_sigma_global").get<double>();
    c.load_sigma_local = j.at("load_sigma_local").get<double>();
    c.correlation_length = j.at("correlation_length").get<double>();
    c.gen_outage_prob = j.at("gen_outage_prob").get<double>();
    c.loss_margin = j.at("loss_margin").get<double>();
    return c;
}

}  // namespace

void validate(const ScenarioConfig& cfg) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (!(cfg.load_sigma_global >= 0.0) || !(cfg.load_sigma_local >= 0.0)) {
        fail("load sigmas must be >= 0");
    }
    if (!(cfg.correlation_length >= 0.0)) {
        fail("correlation_length must be >= 0");
    }
    if (!(cfg.gen_outage_prob >= 0.0 && cfg.gen_outage_prob <= 1.0)) {
        fail("gen_outage_prob must lie in [0, 1]");
    }
    if (!(cfg.loss_margin >= 0.0)) {
        fail("loss_margin must be >= 0");
    }
    if (cfg.injections_per_topology < 1 || cfg.n2_pair_count < 1 || cfg.n2_injections_per_topology < 1) {
        fail("counts must be >= 1");
    }
}

const Topology& Dataset::topology_of(const Record& r) const {
    for (const auto& entry : manifest.topologies) {
        if (entry.topo_id == r.topo_id) {
            return entry.topology;
        }
    }
    throw Error(ErrorCode::IndexOutOfRange, "record references unknown topo_id " + std::to_string(r.topo_id));
}

std::vector<Topology> enumerate_n1(const Grid& grid) {
    std::vector<Topology> out{Topology{}};
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        if (!grid.branches[i].status) {
            continue;
        }
        Topology t{i};
        if (check_connectivity(grid, t).connected) {
            out.push_back(std::move(t));
        }
    }
    return out;
}

std::vector<Topology> sample_n2(const Grid& grid, std::size_t count, std::uint64_t seed) {
    std::vector<Topology> candidates;
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        if (!grid.branches[i].status) continue;
        for (std::size_t j = i + 1; j < grid.branches.size(); ++j) {
            if (!grid.branches[j].status) continue;
            Topology t{i, j};
            if (check_connectivity(grid, t).connected) {
                candidates.push_back(std::move(t));
            }
        }
    }
    if (count > candidates.size()) {
        throw Error(ErrorCode::NotEnoughPairs, "requested " + std::to_string(count) + " pairs, only " +
                                                   std::to_string(candidates.size()) + " keep the grid connected");
    }
    Rng rng = make_rng(seed, "n2-pairs");
    // Partial Fisher-Yates: the first `count` slots become a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
    }
    candidates.resize(count);
    return candidates;
}

Eigen::MatrixXd hop_distances(const Grid& grid) {
    const std::size_t n = grid.buses.size();
    const auto pos = grid.bus_positions();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& br : grid.branches) {
        if (br.status) {
            adj[pos.at(br.from_bus)].push_back(pos.at(br.to_bus));
            adj[pos.at(br.to_bus)].push_back(pos.at(br.from_bus));
        }
    }
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd d = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), inf);
    for (std::size_t s = 0; s < n; ++s) {
        std::queue<std::size_t> q;
        d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = 0.0;
        q.push(s);
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop();
            const double du = d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(u));
            for (std::size_t w : adj[u]) {
                auto& dw = d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(w));
                if (dw == inf) {
                    dw = du + 1.0;
                    q.push(w);
                }
            }
        }
    }
    return d;
}

InjectionSampler::InjectionSampler(const Grid& grid, const ScenarioConfig& cfg)
    : grid_(grid), cfg_(cfg), slack_gen_(grid.gens.size()) {
    validate(cfg_);
    const int slack_id = grid_.buses[grid_.slack_index()].id;
    for (std::size_t g = 0; g < grid_.gens.size(); ++g) {
        if (grid_.gens[g].status && grid_.gens[g].bus == slack_id) {
            slack_gen_ = g;
            break;
        }
    }

    const auto n = static_cast<Eigen::Index>(grid_.buses.size());
    if (cfg_.correlation_length == 0.0) {
        kernel_ = Eigen::MatrixXd::Identity(n, n);
    } else {
        kernel_ = (-hop_distances(grid_).array() / cfg_.correlation_length).exp().matrix();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(kernel_);
    if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
    } else {
        // Clipped spectral square root, rows rescaled to unit variance.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kernel_);
        Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        factor_ = eig.eigenvectors() * root.asDiagonal();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double norm = factor_.row(i).norm();
            if (norm > 0.0) factor_.row(i) /= norm;
        }
    }
}

InjectionSample InjectionSampler::dispatch(const std::vector<std::uint8_t>& gen_on,
                                           std::vector<double> p_load,
                                           std::vector<double> q_load) const {
    InjectionSample inj;
    inj.gen_on = gen_on;
    inj.p_gen.assign(grid_.gens.size(), 0.0);
    inj.p_load = std::move(p_load);
    inj.q_load = std::move(q_load);

    double total_load = 0.0;
    for (double p : inj.p_load) total_load += p;
    const double target = total_load * (1.0 + cfg_.loss_margin);

    double capacity = 0.0;
    for (std::size_t g = 0; g < grid_.gens.size(); ++g) {
        if (gen_on[g]) capacity += grid_.gens[g].p_max;
    }
    double dispatched = 0.0;
    for (std::size_t g = 0; g < grid_.gens.size(); ++g) {
        if (!gen_on[g] || g == slack_gen_) continue;
        const Gen& gen = grid_.gens[g];
        const double share = capacity > 0.0 ? target * gen.p_max / capacity : 0.0;
        inj.p_gen[g] = std::clamp(share, gen.p_min, gen.p_max);
        dispatched += inj.p_gen[g];
    }
    if (slack_gen_ < grid_.gens.size()) {
        inj.p_gen[slack_gen_] = target - dispatched;
    }
    return inj;
}

InjectionSample InjectionSampler::sample(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const std::size_t n = grid_.buses.size();

    const double global = std::exp(cfg_.load_sigma_global * normal(rng));
    Eigen::VectorXd u(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        u[i] = normal(rng);
    }
    const Eigen::VectorXd z = factor_ * u;
    const double s = cfg_.load_sigma_local;

    std::vector<double> p_load(n), q_load(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = global * std::exp(s * z[static_cast<Eigen::Index>(i)] - 0.5 * s * s);
        p_load[i] = grid_.buses[i].p_load * m;
        q_load[i] = grid_.buses[i].q_load * m;
    }

    std::vector<std::uint8_t> gen_on(grid_.gens.size(), 0);
    for (int attempt = 0; attempt < kMaxOutageRedraws; ++attempt) {
        bool any = false;
        for (std::size_t g = 0; g < grid_.gens.size(); ++g) {
            const bool forced_out = g != slack_gen_ && uniform(rng) < cfg_.gen_outage_prob;
            gen_on[g] = grid_.gens[g].status && !forced_out ? 1 : 0;
            any = any || gen_on[g];
        }
        if (any) {
            return dispatch(gen_on, std::move(p_load), std::move(q_load));
        }
    }
    throw Error(ErrorCode::AllGensOut,
                "no generator in service after " + std::to_string(kMaxOutageRedraws) + " draws");
}

InjectionSample sample_injections(const Grid& grid, const ScenarioConfig& cfg, Rng& rng) {
    return InjectionSampler(grid, cfg).sample(rng);
}

Dataset generate_dataset(const Grid& grid, const std::vector<Topology>& topologies,
                         const ScenarioConfig& cfg, const GenerateOptions& opts) {
    validate(cfg);
    const std::size_t per_topo =
        opts.injections_per_topology > 0 ? opts.injections_per_topology : cfg.injections_per_topology;
    const InjectionSampler sampler(grid, cfg);

    std::vector<Grid> grids;
    grids.reserve(topologies.size());
    for (const auto& topo : topologies) {
        if (!check_connectivity(grid, topo).connected) {
            throw Error(ErrorCode::DisconnectedGrid, "dataset topology islands the grid");
        }
        grids.push_back(apply_topology(grid, topo));
    }

    const std::size_t total = topologies.size() * per_topo;
    std::vector<std::optional<Record>> slots(total);

    auto label = [&](std::size_t task) {
        const std::size_t t = task / per_topo;
        const std::size_t s = task % per_topo;
        Rng rng = make_rng(cfg.seed, opts.stream, {t, s});
        InjectionSample inj = sampler.sample(rng);
        try {
            const AcSolution sol = solve_ac(grids[t], inj, opts.ac);
            if (!sol.converged) {
                return;
            }
            slots[task] = Record{t, std::move(inj), branch_currents(grids[t], sol)};
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SingularJacobian) throw;
        }
    };

    const unsigned threads = std::max(1u, opts.threads);
    if (threads == 1) {
        for (std::size_t task = 0; task < total; ++task) label(task);
    } else {
        std::vector<std::exception_ptr> failures(threads);
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 0; w < threads; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t task = w; task < total; task += threads) label(task);
                    } catch (...) {
                        failures[w] = std::current_exception();
                    }
                });
            }
        }
        for (const auto& f : failures) {
            if (f) std::rethrow_exception(f);
        }
    }

    Dataset ds;
    ds.manifest.case_name = grid.name;
    ds.manifest.seed = cfg.seed;
    ds.manifest.config = cfg;
    for (std::size_t t = 0; t < topologies.size(); ++t) {
        TopologyEntry entry{t, topologies[t], 0, 0};
        for (std::size_t s = 0; s < per_topo; ++s) {
            auto& slot = slots[t * per_topo + s];
            if (slot) {
                ++entry.kept;
                ds.records.push_back(std::move(*slot));
            } else {
                ++entry.skipped;
            }
        }
        ds.manifest.topologies.push_back(std::move(entry));
    }
    return ds;
}

Split split_dataset(const Dataset& ds, std::uint64_t seed) {
    if (ds.records.empty()) {
        throw Error(ErrorCode::TooFewRecords, "cannot split an empty dataset");
    }
    std::map<std::size_t, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        strata[ds.records[i].topo_id].push_back(i);
    }
    Split split{Dataset{ds.manifest, {}}, Dataset{ds.manifest, {}}, Dataset{ds.manifest, {}}};
    for (auto& [topo_id, idx] : strata) {
        if (idx.size() < 4) {
            throw Error(ErrorCode::TooFewRecords, "topology " + std::to_string(topo_id) + " has only " +
                                                      std::to_string(idx.size()) + " records");
        }
        Rng rng = make_rng(seed, "split", {topo_id});
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n_train = idx.size() / 2;
        const std::size_t n_val = (idx.size() - n_train) / 2;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            Dataset& dst = k < n_train ? split.train : k < n_train + n_val ? split.val : split.test;
            dst.records.push_back(ds.records[idx[k]]);
        }
    }
    return split;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    }

    nlohmann::json manifest;
    manifest["case"] = ds.manifest.case_name;
    manifest["case_path"] = ds.manifest.case_path;
    manifest["seed"] = ds.manifest.seed;
    manifest["config"] = config_to_json(ds.manifest.config);
    manifest["topologies"] = nlohmann::json::array();
    for (const auto& t : ds.manifest.topologies) {
        manifest["topologies"].push_back({{"topo_id", t.topo_id},
                                          {"disconnected", t.topology.disconnected()},
                                          {"kept", t.kept},
                                          {"skipped", t.skipped}});
    }
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
        if (!out) throw Error(ErrorCode::IoError, "cannot write manifest.json in " + dir.string());
    }

    std::size_t n_gen = 0, n_bus = 0, n_branch = 0;
    if (!ds.records.empty()) {
        n_gen = ds.records.front().injections.p_gen.size();
        n_bus = ds.records.front().injections.p_load.size();
        n_branch = ds.records.front().amps.size();
    }
    std::ofstream out(dir / "records.csv", std::ios::binary);
    out << "topo_id";
    for (std::size_t i = 0; i < n_gen; ++i) out << ",pg_" << i;
    for (std::size_t i = 0; i < n_bus; ++i) out << ",pl_" << i;
    for (std::size_t i = 0; i < n_bus; ++i) out << ",ql_" << i;
    for (std::size_t i = 0; i < n_branch; ++i) out << ",amps_" << i;
    out << "\n";
    std::string line;
    for (const auto& r : ds.records) {
        line = std::to_string(r.topo_id);
        for (double v : r.injections.p_gen) (line += ',') += fmt9(v);
        for (double v : r.injections.p_load) (line += ',') += fmt9(v);
        for (double v : r.injections.q_load) (line += ',') += fmt9(v);
        for (double v : r.amps) (line += ',') += fmt9(v);
        line += '\n';
        out << line;
    }
    if (!out) throw Error(ErrorCode::IoError, "cannot write records.csv in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        std::ifstream in(dir / "manifest.json", std::ios::binary);
        if (!in) throw Error(ErrorCode::IoError, "cannot read " + (dir / "manifest.json").string());
        try {
            const nlohmann::json j = nlohmann::json::parse(in);
            ds.manifest.case_name = j.at("case").get<std::string>();
            ds.manifest.case_path = j.value("case_path", std::string{});
            ds.manifest.seed = j.at("seed").get<std::uint64_t>();
            ds.manifest.config = config_from_json(j.at("config"));
            for (const auto& t : j.at("topologies")) {
                ds.manifest.topologies.push_back(
                    {t.at("topo_id").get<std::size_t>(),
                     Topology(t.at("disconnected").get<std::vector<std::size_t>>()),
                     t.at("kept").get<std::size_t>(), t.at("skipped").get<std::size_t>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::IoError, std::string("malformed manifest.json: ") + e.what());
        }
    }

    std::ifstream in(dir / "records.csv", std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + (dir / "records.csv").string());
    std::string header;
    std::getline(in, header);
    std::size_t n_gen = 0, n_bus = 0, n_branch = 0;
    {
        std::stringstream hs(header);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col.starts_with("pg_")) ++n_gen;
            else if (col.starts_with("pl_")) ++n_bus;
            else if (col.starts_with("amps_")) ++n_branch;
        }
    }
    const std::size_t n_cols = 1 + n_gen + 2 * n_bus + n_branch;
    std::string line;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        values.clear();
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p <= end) {
            const char* comma = std::find(p, end, ',');
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(p, comma, v);
            if (ec != std::errc() || ptr != comma) {
                throw Error(ErrorCode::IoError, "records.csv line " + std::to_string(line_no) + ": bad number");
            }
            values.push_back(v);
            p = comma + 1;
        }
        if (values.size() != n_cols) {
            throw Error(ErrorCode::IoError, "records.csv line " + std::to_string(line_no) + ": expected " +
                                                std::to_string(n_cols) + " columns");
        }
        Record r;
        r.topo_id = static_cast<std::size_t>(values[0]);
        auto it = values.begin() + 1;
        r.injections.p_gen.assign(it, it + static_cast<std::ptrdiff_t>(n_gen));
        it += static_cast<std::ptrdiff_t>(n_gen);
        r.injections.p_load.assign(it, it + static_cast<std::ptrdiff_t>(n_bus));
        it += static_cast<std::ptrdiff_t>(n_bus);
        r.injections.q_load.assign(it, it + static_cast<std::ptrdiff_t>(n_bus));
        it += static_cast<std::ptrdiff_t>(n_bus);
        r.amps.assign(it, values.end());
        // Generator status is not persisted; an outaged unit reads back as 0 MW in service.
        r.injections.gen_on.assign(n_gen, 1);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace gdpf
