// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdpf/grid.hpp"
#include "gdpf/powerflow.hpp"
#include "gdpf/rng.hpp"

namespace gdpf {

struct ScenarioConfig {
    std::uint64_t seed = 1;
    std::size_t injections_per_topology = 2000;
    std::size_t n2_pair_count = 50;
    std::size_t n2_injections_per_topology = 200;
    double load_sigma_global = 0.15;
    double load_sigma_local = 0.10;
    double correlation_length = 2.0;  // hops
    double gen_outage_prob = 0.05;
    double loss_margin = 0.02;

    bool operator==(const ScenarioConfig&) const = default;
};

/// Throws InvalidConfig when a field is out of its domain.
void validate(const ScenarioConfig& cfg);

struct TopologyEntry {
    std::size_t topo_id = 0;
    Topology topology;
    std::size_t kept = 0;
    std::size_t skipped = 0;

    bool operator==(const TopologyEntry&) const = default;
};

struct Manifest {
    std::string case_name;
    std::string case_path;
    std::uint64_t seed = 0;
    ScenarioConfig config;
    std::vector<TopologyEntry> topologies;

    bool operator==(const Manifest&) const = default;
};

struct Record {
    std::size_t topo_id = 0;
    InjectionSample injections;
    FlowVector amps;

    bool operator==(const Record&) const = default;
};

struct Dataset {
    Manifest manifest;
    std::vector<Record> records;

    const Topology& topology_of(const Record& r) const;
};

/// Reference topology followed by every single-branch outage that keeps the
/// grid connected, in branch order.
std::vector<Topology> enumerate_n1(const Grid& grid);

/// `count` distinct connectivity-preserving branch pairs, sampled uniformly
/// without replacement.
std::vector<Topology> sample_n2(const Grid& grid, std::size_t count, std::uint64_t seed);

/// Breadth-first hop distances between all bus pairs over in-service branches.
/// Unreachable pairs are reported as infinity.
Eigen::MatrixXd hop_distances(const Grid& grid);

/// Correlated lognormal load model plus proportional dispatch. Holds the
/// Cholesky factor of the spatial kernel so repeated draws are cheap.
class InjectionSampler {
public:
    InjectionSampler(const Grid& grid, const ScenarioConfig& cfg);

    InjectionSample sample(Rng& rng) const;

    const Eigen::MatrixXd& kernel() const noexcept { return kernel_; }
    const Eigen::MatrixXd& kernel_factor() const noexcept { return factor_; }

private:
    InjectionSample dispatch(const std::vector<std::uint8_t>& gen_on,
                             std::vector<double> p_load, std::vector<double> q_load) const;

    Grid grid_;
    ScenarioConfig cfg_;
    std::size_t slack_gen_;
    Eigen::MatrixXd kernel_;
    Eigen::MatrixXd factor_;
};

InjectionSample sample_injections(const Grid& grid, const ScenarioConfig& cfg, Rng& rng);

struct GenerateOptions {
    std::size_t injections_per_topology = 0;  // 0 = use cfg.injections_per_topology
    std::string stream = "n1";                // RNG stream label, keeps n-1 and n-2 draws apart
    unsigned threads = 1;
    AcOptions ac;
};

Dataset generate_dataset(const Grid& grid, const std::vector<Topology>& topologies,
                         const ScenarioConfig& cfg, const GenerateOptions& opts = {});

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Per-topology shuffle then 50/25/25 partition.
Split split_dataset(const Dataset& ds, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace gdpf
