// SPDX-License-Identifier: Apache-2.0
#include "gdpf/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <Eigen/LU>

#include "gdpf/error.hpp"

namespace gdpf {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kSingularRcond = 1e-14;

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) {
            parent_[std::max(a, b)] = std::min(a, b);
        }
    }

private:
    std::vector<std::size_t> parent_;
};

void check_topology(const Grid& grid, const Topology& topo) {
    for (std::size_t line : topo.disconnected()) {
        if (line >= grid.branches.size()) {
            throw Error(ErrorCode::IndexOutOfRange,
                        "branch index " + std::to_string(line) + " >= " +
                            std::to_string(grid.branches.size()));
        }
    }
}

struct BusInjections {
    Eigen::VectorXcd s_bus;          // pu
    std::vector<BusKind> kind;       // effective kind
    Eigen::VectorXd v_target;        // pu, slack/pv only
};

// Effective bus roles: a PV bus whose generators are all off behaves as PQ.
BusInjections bus_injections(const Grid& grid, const InjectionSample& inj,
                             const std::unordered_map<int, std::size_t>& pos) {
    const std::size_t n = grid.buses.size();
    BusInjections out;
    out.s_bus = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(n));
    out.v_target = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    out.kind.resize(n);
    std::vector<bool> has_gen(n, false);

    for (std::size_t g = 0; g < grid.gens.size(); ++g) {
        if (!grid.gens[g].status || !inj.gen_on[g]) {
            continue;
        }
        const std::size_t b = pos.at(grid.gens[g].bus);
        out.s_bus[static_cast<Eigen::Index>(b)] += Complex(inj.p_gen[g], 0.0);
        if (!has_gen[b]) {
            out.v_target[static_cast<Eigen::Index>(b)] = grid.gens[g].v_setpoint;
            has_gen[b] = true;
        }
    }
    for (std::size_t b = 0; b < n; ++b) {
        const Bus& bus = grid.buses[b];
        out.kind[b] = bus.kind;
        if (bus.kind == BusKind::pv && !has_gen[b]) {
            out.kind[b] = BusKind::pq;
        }
        if (bus.kind == BusKind::slack && !has_gen[b]) {
            out.v_target[static_cast<Eigen::Index>(b)] = bus.vm_init;
        }
    }
    // Generator q_gen enters the schedule at PQ buses only.
    for (std::size_t g = 0; g < grid.gens.size(); ++g) {
        if (!grid.gens[g].status || !inj.gen_on[g]) {
            continue;
        }
        const std::size_t b = pos.at(grid.gens[g].bus);
        if (out.kind[b] == BusKind::pq) {
            out.s_bus[static_cast<Eigen::Index>(b)] += Complex(0.0, grid.gens[g].q_gen);
        }
    }
    for (std::size_t b = 0; b < n; ++b) {
        out.s_bus[static_cast<Eigen::Index>(b)] -= Complex(inj.p_load[b], inj.q_load[b]);
    }
    out.s_bus /= grid.base_mva;
    return out;
}

}  // namespace

Topology::Topology(std::initializer_list<std::size_t> lines) : Topology(std::vector<std::size_t>(lines)) {}

Topology::Topology(std::vector<std::size_t> lines) : lines_(std::move(lines)) {
    std::sort(lines_.begin(), lines_.end());
    lines_.erase(std::unique(lines_.begin(), lines_.end()), lines_.end());
}

bool Topology::contains(std::size_t line) const {
    return std::binary_search(lines_.begin(), lines_.end(), line);
}

InjectionSample case_injections(const Grid& grid) {
    InjectionSample inj;
    for (const auto& g : grid.gens) {
        inj.p_gen.push_back(g.status ? g.p_gen : 0.0);
        inj.gen_on.push_back(g.status ? 1 : 0);
    }
    for (const auto& b : grid.buses) {
        inj.p_load.push_back(b.p_load);
        inj.q_load.push_back(b.q_load);
    }
    return inj;
}

void check_injection_shape(const Grid& grid, const InjectionSample& inj) {
    if (inj.p_gen.size() != grid.gens.size() || inj.gen_on.size() != grid.gens.size() ||
        inj.p_load.size() != grid.buses.size() || inj.q_load.size() != grid.buses.size()) {
        throw Error(ErrorCode::ShapeMismatch, "injection sample is not sized to the grid");
    }
}

Eigen::VectorXcd AcSolution::voltages() const {
    Eigen::VectorXcd v(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i) {
        v[i] = std::polar(vm[i], va[i]);
    }
    return v;
}

Grid apply_topology(const Grid& grid, const Topology& topo) {
    check_topology(grid, topo);
    Grid out = grid;
    for (std::size_t line : topo.disconnected()) {
        out.branches[line].status = false;
    }
    return out;
}

Connectivity check_connectivity(const Grid& grid, const Topology& topo) {
    check_topology(grid, topo);
    const auto pos = grid.bus_positions();
    DisjointSets sets(grid.buses.size());
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (br.status && !topo.contains(i)) {
            sets.unite(pos.at(br.from_bus), pos.at(br.to_bus));
        }
    }
    Connectivity c;
    for (std::size_t b = 0; b < grid.buses.size(); ++b) {
        c.components += sets.find(b) == b ? 1 : 0;
    }
    c.connected = c.components == 1;
    return c;
}

BranchAdmittance branch_admittance(const Branch& br) {
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex charging(0.0, br.b_charging / 2.0);
    const double t = br.tap;
    const Complex a = std::polar(t, br.shift * kDegToRad);
    BranchAdmittance y;
    y.ff = (ys + charging) / (t * t);
    y.ft = -ys / std::conj(a);
    y.tf = -ys / a;
    y.tt = ys + charging;
    return y;
}

SparseComplexMatrix build_ybus(const Grid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.buses.size());
    const auto pos = grid.bus_positions();
    std::vector<Eigen::Triplet<Complex>> triplets;
    triplets.reserve(grid.branches.size() * 4 + grid.buses.size());
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (!br.status) {
            continue;
        }
        if (br.r == 0.0 && br.x == 0.0) {
            throw Error(ErrorCode::ZeroImpedanceBranch, "branch " + std::to_string(i) + " has r = x = 0");
        }
        const auto f = static_cast<Eigen::Index>(pos.at(br.from_bus));
        const auto t = static_cast<Eigen::Index>(pos.at(br.to_bus));
        const BranchAdmittance y = branch_admittance(br);
        triplets.emplace_back(f, f, y.ff);
        triplets.emplace_back(f, t, y.ft);
        triplets.emplace_back(t, f, y.tf);
        triplets.emplace_back(t, t, y.tt);
    }
    for (Eigen::Index b = 0; b < n; ++b) {
        const Bus& bus = grid.buses[static_cast<std::size_t>(b)];
        triplets.emplace_back(b, b, Complex(bus.g_shunt, bus.b_shunt) / grid.base_mva);
    }
    SparseComplexMatrix y(n, n);
    y.setFromTriplets(triplets.begin(), triplets.end());
    y.makeCompressed();
    return y;
}

Eigen::VectorXcd bus_power_injection(const SparseComplexMatrix& ybus, const Eigen::VectorXcd& v) {
    Eigen::VectorXcd current = ybus * v;
    return v.array() * current.array().conjugate();
}

AcSolution solve_ac(const Grid& grid, const InjectionSample& inj, const AcOptions& opts) {
    check_injection_shape(grid, inj);
    if (!check_connectivity(grid).connected) {
        throw Error(ErrorCode::DisconnectedGrid, "AC solve on an islanded grid");
    }
    const auto pos = grid.bus_positions();
    const SparseComplexMatrix ybus = build_ybus(grid);
    const BusInjections spec = bus_injections(grid, inj, pos);
    const auto n = static_cast<Eigen::Index>(grid.buses.size());

    std::vector<Eigen::Index> pvpq, pq;
    for (Eigen::Index b = 0; b < n; ++b) {
        const BusKind kind = spec.kind[static_cast<std::size_t>(b)];
        if (kind != BusKind::slack) {
            pvpq.push_back(b);
        }
        if (kind == BusKind::pq) {
            pq.push_back(b);
        }
    }
    const auto n_pvpq = static_cast<Eigen::Index>(pvpq.size());
    const auto n_pq = static_cast<Eigen::Index>(pq.size());
    const Eigen::Index n_eq = n_pvpq + n_pq;

    // Row/column of each bus in the angle and magnitude blocks, -1 when absent.
    std::vector<Eigen::Index> angle_slot(static_cast<std::size_t>(n), -1);
    std::vector<Eigen::Index> mag_slot(static_cast<std::size_t>(n), -1);
    for (Eigen::Index i = 0; i < n_pvpq; ++i) {
        angle_slot[static_cast<std::size_t>(pvpq[static_cast<std::size_t>(i)])] = i;
    }
    for (Eigen::Index i = 0; i < n_pq; ++i) {
        mag_slot[static_cast<std::size_t>(pq[static_cast<std::size_t>(i)])] = n_pvpq + i;
    }

    AcSolution sol;
    sol.va = Eigen::VectorXd::Zero(n);
    sol.vm = Eigen::VectorXd::Ones(n);
    for (Eigen::Index b = 0; b < n; ++b) {
        if (spec.kind[static_cast<std::size_t>(b)] != BusKind::pq) {
            sol.vm[b] = spec.v_target[b];
        }
    }

    Eigen::VectorXd mismatch(n_eq);
    auto evaluate = [&](const Eigen::VectorXcd& v) {
        const Eigen::VectorXcd s = bus_power_injection(ybus, v) - spec.s_bus;
        for (Eigen::Index i = 0; i < n_pvpq; ++i) {
            mismatch[i] = s[pvpq[static_cast<std::size_t>(i)]].real();
        }
        for (Eigen::Index i = 0; i < n_pq; ++i) {
            mismatch[n_pvpq + i] = s[pq[static_cast<std::size_t>(i)]].imag();
        }
        return n_eq == 0 ? 0.0 : mismatch.lpNorm<Eigen::Infinity>();
    };

    Eigen::VectorXcd v = sol.voltages();
    sol.max_mismatch = evaluate(v);
    Eigen::MatrixXd jac(n_eq, n_eq);
    const Complex j(0.0, 1.0);

    while (std::isfinite(sol.max_mismatch) && sol.max_mismatch > opts.tolerance &&
           sol.iterations < opts.max_iter) {
        const Eigen::VectorXcd current = ybus * v;
        const Eigen::VectorXcd v_unit = v.array() / v.array().abs();
        jac.setZero();
        for (Eigen::Index k = 0; k < ybus.outerSize(); ++k) {
            for (SparseComplexMatrix::InnerIterator it(ybus, k); it; ++it) {
                const Eigen::Index row = it.row();
                const Eigen::Index col = it.col();
                const Complex y = it.value();
                const Complex ds_dva = -j * v[row] * std::conj(y * v[col]);
                const Complex ds_dvm = v[row] * std::conj(y * v_unit[col]);
                const Eigen::Index rp = angle_slot[static_cast<std::size_t>(row)];
                const Eigen::Index rq = mag_slot[static_cast<std::size_t>(row)];
                const Eigen::Index ca = angle_slot[static_cast<std::size_t>(col)];
                const Eigen::Index cm = mag_slot[static_cast<std::size_t>(col)];
                if (rp >= 0) {
                    if (ca >= 0) jac(rp, ca) += ds_dva.real();
                    if (cm >= 0) jac(rp, cm) += ds_dvm.real();
                }
                if (rq >= 0) {
                    if (ca >= 0) jac(rq, ca) += ds_dva.imag();
                    if (cm >= 0) jac(rq, cm) += ds_dvm.imag();
                }
            }
        }
        for (Eigen::Index b = 0; b < n; ++b) {
            const Complex ds_dva = j * v[b] * std::conj(current[b]);
            const Complex ds_dvm = std::conj(current[b]) * v_unit[b];
            const Eigen::Index rp = angle_slot[static_cast<std::size_t>(b)];
            const Eigen::Index rq = mag_slot[static_cast<std::size_t>(b)];
            if (rp >= 0) {
                jac(rp, rp) += ds_dva.real();
                if (rq >= 0) jac(rp, rq) += ds_dvm.real();
            }
            if (rq >= 0) {
                if (rp >= 0) jac(rq, rp) += ds_dva.imag();
                jac(rq, rq) += ds_dvm.imag();
            }
        }

        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        if (!(lu.rcond() > kSingularRcond)) {
            throw Error(ErrorCode::SingularJacobian,
                        "Newton step " + std::to_string(sol.iterations) + " has a singular Jacobian");
        }
        const Eigen::VectorXd dx = lu.solve(mismatch);
        for (Eigen::Index i = 0; i < n_pvpq; ++i) {
            sol.va[pvpq[static_cast<std::size_t>(i)]] -= dx[i];
        }
        for (Eigen::Index i = 0; i < n_pq; ++i) {
            sol.vm[pq[static_cast<std::size_t>(i)]] -= dx[n_pvpq + i];
        }
        ++sol.iterations;
        v = sol.voltages();
        sol.max_mismatch = evaluate(v);
    }
    sol.converged = std::isfinite(sol.max_mismatch) && sol.max_mismatch <= opts.tolerance;
    return sol;
}

DcSolution solve_dc(const Grid& grid, const InjectionSample& inj) {
    check_injection_shape(grid, inj);
    if (!check_connectivity(grid).connected) {
        throw Error(ErrorCode::DisconnectedGrid, "DC solve on an islanded grid");
    }
    const auto pos = grid.bus_positions();
    const auto n = static_cast<Eigen::Index>(grid.buses.size());
    const auto slack = static_cast<Eigen::Index>(grid.slack_index());

    Eigen::VectorXd p_net = Eigen::VectorXd::Zero(n);
    for (std::size_t g = 0; g < grid.gens.size(); ++g) {
        if (grid.gens[g].status && inj.gen_on[g]) {
            p_net[static_cast<Eigen::Index>(pos.at(grid.gens[g].bus))] += inj.p_gen[g];
        }
    }
    for (Eigen::Index b = 0; b < n; ++b) {
        p_net[b] -= inj.p_load[static_cast<std::size_t>(b)];
    }
    p_net /= grid.base_mva;

    Eigen::MatrixXd b_bus = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> susceptance(grid.branches.size(), 0.0);
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (!br.status) {
            continue;
        }
        const double b = 1.0 / (br.x * br.tap);
        susceptance[i] = b;
        const auto f = static_cast<Eigen::Index>(pos.at(br.from_bus));
        const auto t = static_cast<Eigen::Index>(pos.at(br.to_bus));
        b_bus(f, f) += b;
        b_bus(t, t) += b;
        b_bus(f, t) -= b;
        b_bus(t, f) -= b;
        // Phase shifters act as a fixed injection pair.
        const double shift_injection = -b * br.shift * kDegToRad;
        p_net[f] -= shift_injection;
        p_net[t] += shift_injection;
    }

    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index b = 0; b < n; ++b) {
        if (b != slack) keep.push_back(b);
    }
    const auto m = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd reduced(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        rhs[r] = p_net[keep[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < m; ++c) {
            reduced(r, c) = b_bus(keep[static_cast<std::size_t>(r)], keep[static_cast<std::size_t>(c)]);
        }
    }

    DcSolution sol;
    sol.theta = Eigen::VectorXd::Zero(n);
    if (m > 0) {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(reduced);
        if (!(lu.rcond() > kSingularRcond)) {
            throw Error(ErrorCode::SingularMatrix, "reduced B matrix is singular");
        }
        const Eigen::VectorXd theta = lu.solve(rhs);
        for (Eigen::Index r = 0; r < m; ++r) {
            sol.theta[keep[static_cast<std::size_t>(r)]] = theta[r];
        }
    }
    sol.p_mw.assign(grid.branches.size(), 0.0);
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (!br.status) {
            continue;
        }
        const double dtheta = sol.theta[static_cast<Eigen::Index>(pos.at(br.from_bus))] -
                              sol.theta[static_cast<Eigen::Index>(pos.at(br.to_bus))] -
                              br.shift * kDegToRad;
        sol.p_mw[i] = susceptance[i] * dtheta * grid.base_mva;
    }
    return sol;
}

double pu_current_to_amps(double i_pu, double base_mva, double base_kv) {
    return i_pu * base_mva * 1e6 / (std::sqrt(3.0) * base_kv * 1e3);
}

FlowVector branch_currents(const Grid& grid, const AcSolution& sol) {
    if (!sol.converged) {
        throw Error(ErrorCode::NotConverged, "branch currents need a converged AC solution");
    }
    const auto pos = grid.bus_positions();
    const Eigen::VectorXcd v = sol.voltages();
    FlowVector amps(grid.branches.size(), 0.0);
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (!br.status) {
            continue;
        }
        const std::size_t f = pos.at(br.from_bus);
        const std::size_t t = pos.at(br.to_bus);
        const BranchAdmittance y = branch_admittance(br);
        const Complex i_from =
            y.ff * v[static_cast<Eigen::Index>(f)] + y.ft * v[static_cast<Eigen::Index>(t)];
        amps[i] = pu_current_to_amps(std::abs(i_from), grid.base_mva, grid.buses[f].base_kv);
    }
    return amps;
}

FlowVector dc_currents(const Grid& grid, const std::vector<double>& dc_flows_mw) {
    if (dc_flows_mw.size() != grid.branches.size()) {
        throw Error(ErrorCode::ShapeMismatch, "DC flow vector is not sized to the branches");
    }
    const auto pos = grid.bus_positions();
    FlowVector amps(grid.branches.size(), 0.0);
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        if (!grid.branches[i].status) {
            continue;
        }
        const double kv = grid.buses[pos.at(grid.branches[i].from_bus)].base_kv;
        amps[i] = pu_current_to_amps(std::abs(dc_flows_mw[i]) / grid.base_mva, grid.base_mva, kv);
    }
    return amps;
}

}  // namespace gdpf
