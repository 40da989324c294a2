// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "gdpf/grid.hpp"
#include "gdpf/matpower_io.hpp"

namespace gdpf::test {

inline std::filesystem::path data_file(const std::string& name) {
    return std::filesystem::path(GDPF_DATA_DIR) / name;
}

inline Grid load_bundled(const std::string& name) {
    return load_case(data_file(name + ".m"));
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

/// Fresh, empty scratch directory unique to this process.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("gdpf_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Bus make_bus(int id, BusKind kind, double p_load = 0.0, double q_load = 0.0) {
    Bus b;
    b.id = id;
    b.kind = kind;
    b.p_load = p_load;
    b.q_load = q_load;
    b.base_kv = 138.0;
    return b;
}

inline Branch make_branch(int from, int to, double r, double x, double b_charging = 0.0) {
    Branch br;
    br.from_bus = from;
    br.to_bus = to;
    br.r = r;
    br.x = x;
    br.b_charging = b_charging;
    return br;
}

inline Gen make_gen(int bus, double p_gen, double p_max = 1000.0) {
    Gen g;
    g.bus = bus;
    g.p_gen = p_gen;
    g.p_max = p_max;
    return g;
}

/// Slack bus 1 feeding a PQ load on bus 2 through one lossless line.
inline Grid two_bus(double x = 0.1, double p_load_mw = 50.0, double q_load_mvar = 0.0) {
    Grid g;
    g.name = "two_bus";
    g.buses = {make_bus(1, BusKind::slack), make_bus(2, BusKind::pq, p_load_mw, q_load_mvar)};
    g.branches = {make_branch(1, 2, 0.0, x)};
    g.gens = {make_gen(1, 0.0)};
    return g;
}

/// Three buses on a ring, x = 1 pu everywhere; branch order 1-2, 1-3, 3-2.
inline Grid triangle() {
    Grid g;
    g.name = "triangle";
    g.buses = {make_bus(1, BusKind::slack), make_bus(2, BusKind::pq), make_bus(3, BusKind::pq)};
    g.branches = {make_branch(1, 2, 0.0, 1.0), make_branch(1, 3, 0.0, 1.0), make_branch(3, 2, 0.0, 1.0)};
    g.gens = {make_gen(1, 0.0)};
    return g;
}

}  // namespace gdpf::test
