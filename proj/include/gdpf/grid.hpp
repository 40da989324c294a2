// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace gdpf {

enum class BusKind { slack, pv, pq };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double p_load = 0.0;    // MW
    double q_load = 0.0;    // MVAr
    double g_shunt = 0.0;   // MW at 1 pu
    double b_shunt = 0.0;   // MVAr at 1 pu
    double base_kv = 0.0;
    double vm_init = 1.0;   // pu
    double va_init = 0.0;   // degrees

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;
    double tap = 1.0;       // 1.0 for lines
    double shift = 0.0;     // degrees
    bool status = true;

    bool operator==(const Branch&) const = default;
};

struct Gen {
    int bus = 0;
    double p_gen = 0.0;      // MW
    double q_gen = 0.0;      // MVAr
    double v_setpoint = 1.0; // pu
    double p_max = 0.0;
    double p_min = 0.0;
    bool status = true;

    bool operator==(const Gen&) const = default;
};

/// Bus-branch model of a transmission grid. Rows keep their case-file order;
/// branch positions double as line identifiers everywhere else in the library.
struct Grid {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Gen> gens;

    bool operator==(const Grid&) const = default;

    std::size_t slack_index() const;
    std::unordered_map<int, std::size_t> bus_positions() const;
};

/// Throws Error(InvalidGrid / DanglingReference / NoSlack / MultipleSlack)
/// when a structural invariant is broken.
void validate(const Grid& grid);

}  // namespace gdpf
