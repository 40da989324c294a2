// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "gdpf/grid.hpp"

namespace gdpf {

using Complex = std::complex<double>;
using SparseComplexMatrix = Eigen::SparseMatrix<Complex>;

/// Set of disconnected branch positions. Always kept sorted and duplicate-free.
class Topology {
public:
    Topology() = default;
    Topology(std::initializer_list<std::size_t> lines);
    explicit Topology(std::vector<std::size_t> lines);

    const std::vector<std::size_t>& disconnected() const noexcept { return lines_; }
    bool empty() const noexcept { return lines_.empty(); }
    std::size_t size() const noexcept { return lines_.size(); }
    bool contains(std::size_t line) const;

    bool operator==(const Topology&) const = default;
    auto operator<=>(const Topology&) const = default;

private:
    std::vector<std::size_t> lines_;
};

/// Injections for one scenario. `p_gen`/`gen_on` follow Grid::gens order,
/// `p_load`/`q_load` follow Grid::buses order.
struct InjectionSample {
    std::vector<double> p_gen;
    std::vector<std::uint8_t> gen_on;
    std::vector<double> p_load;
    std::vector<double> q_load;

    bool operator==(const InjectionSample&) const = default;
};

/// Injections exactly as written in the case file.
InjectionSample case_injections(const Grid& grid);

struct AcOptions {
    double tolerance = 1e-8;
    int max_iter = 20;
};

struct AcSolution {
    Eigen::VectorXd vm;
    Eigen::VectorXd va;  // radians
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;  // pu

    Eigen::VectorXcd voltages() const;
};

struct DcSolution {
    Eigen::VectorXd theta;       // radians
    std::vector<double> p_mw;    // per branch, from -> to
};

/// Per-branch from-end current magnitude in Amperes.
using FlowVector = std::vector<double>;

struct Connectivity {
    bool connected = false;
    std::size_t components = 0;
};

Grid apply_topology(const Grid& grid, const Topology& topo);

Connectivity check_connectivity(const Grid& grid, const Topology& topo = {});

/// Pi-model stamps of one branch: [ff, ft, tf, tt].
struct BranchAdmittance {
    Complex ff, ft, tf, tt;
};
BranchAdmittance branch_admittance(const Branch& br);

SparseComplexMatrix build_ybus(const Grid& grid);

AcSolution solve_ac(const Grid& grid, const InjectionSample& inj, const AcOptions& opts = {});

/// Complex power injected at each bus by the network, S = V conj(Y V), in pu.
Eigen::VectorXcd bus_power_injection(const SparseComplexMatrix& ybus, const Eigen::VectorXcd& v);

DcSolution solve_dc(const Grid& grid, const InjectionSample& inj);

FlowVector branch_currents(const Grid& grid, const AcSolution& sol);

FlowVector dc_currents(const Grid& grid, const std::vector<double>& dc_flows_mw);

/// Amperes of a per-unit current at a bus with the given kV base.
double pu_current_to_amps(double i_pu, double base_mva, double base_kv);

/// Checks that `inj` is sized for `grid` (ShapeMismatch otherwise).
void check_injection_shape(const Grid& grid, const InjectionSample& inj);

}  // namespace gdpf
