// SPDX-License-Identifier: Apache-2.0
#include "gdpf/matpower_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "gdpf/error.hpp"

namespace gdpf {

namespace {

constexpr std::size_t kBusColumns = 13;
constexpr std::size_t kGenColumns = 10;
constexpr std::size_t kBranchColumns = 11;

struct Row {
    std::size_t line = 0;
    std::vector<double> values;
};

struct Matrix {
    std::size_t line = 0;
    std::vector<Row> rows;
};

struct RawCase {
    std::string name;
    std::optional<double> base_mva;
    std::size_t base_mva_line = 0;
    std::map<std::string, Matrix> matrices;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

std::string_view strip_comment(std::string_view line) {
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\'') {
            in_quote = !in_quote;
        } else if (line[i] == '%' && !in_quote) {
            return line.substr(0, i);
        }
    }
    return line;
}

// `mpc.bus` -> `bus`
std::string field_name(std::string_view lhs) {
    lhs = trim(lhs);
    auto dot = lhs.rfind('.');
    if (dot != std::string_view::npos) {
        lhs = lhs.substr(dot + 1);
    }
    return std::string(trim(lhs));
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::MalformedRow, "line " + std::to_string(line) + ": " + what);
}

double parse_number(std::string_view token, std::size_t line) {
    if (!token.empty() && token.front() == '+') {
        token.remove_prefix(1);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        malformed(line, "non-numeric field '" + std::string(token) + "'");
    }
    return value;
}

void parse_row(std::string_view piece, std::size_t line, Matrix& matrix) {
    piece = trim(piece);
    if (piece.empty()) {
        return;
    }
    Row row;
    row.line = line;
    std::size_t i = 0;
    while (i < piece.size()) {
        while (i < piece.size() &&
               (std::isspace(static_cast<unsigned char>(piece[i])) || piece[i] == ',')) {
            ++i;
        }
        std::size_t start = i;
        while (i < piece.size() &&
               !(std::isspace(static_cast<unsigned char>(piece[i])) || piece[i] == ',')) {
            ++i;
        }
        if (i > start) {
            row.values.push_back(parse_number(piece.substr(start, i - start), line));
        }
    }
    matrix.rows.push_back(std::move(row));
}

// Splits matrix body text into rows on ';' and stops at ']'. Returns true
// when the closing bracket was consumed.
bool consume_matrix_text(std::string_view text, std::size_t line, Matrix& matrix) {
    auto close = text.find(']');
    bool done = close != std::string_view::npos;
    if (done) {
        text = text.substr(0, close);
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        auto semi = text.find(';', start);
        if (semi == std::string_view::npos) {
            parse_row(text.substr(start), line, matrix);
            break;
        }
        parse_row(text.substr(start, semi - start), line, matrix);
        start = semi + 1;
    }
    return done;
}

RawCase scan(std::string_view text) {
    RawCase raw;
    enum class State { top, matrix, skip_matrix, skip_cell } state = State::top;
    Matrix* current = nullptr;
    Matrix discard;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            eol = text.size();
        }
        std::string_view line = strip_comment(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++line_no;

        switch (state) {
        case State::matrix:
            if (consume_matrix_text(line, line_no, *current)) {
                state = State::top;
            }
            continue;
        case State::skip_matrix:
            if (line.find(']') != std::string_view::npos) {
                state = State::top;
            }
            continue;
        case State::skip_cell:
            if (line.find('}') != std::string_view::npos) {
                state = State::top;
            }
            continue;
        case State::top:
            break;
        }

        std::string_view body = trim(line);
        if (body.empty()) {
            continue;
        }
        if (body.starts_with("function")) {
            auto eq = body.find('=');
            if (eq != std::string_view::npos) {
                raw.name = std::string(trim(body.substr(eq + 1)));
            }
            continue;
        }
        auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            continue;
        }
        std::string name = field_name(body.substr(0, eq));
        std::string_view rhs = trim(body.substr(eq + 1));

        if (rhs.starts_with("[")) {
            bool wanted = name == "bus" || name == "gen" || name == "branch";
            if (wanted) {
                current = &raw.matrices[name];
                current->line = line_no;
                current->rows.clear();
            } else {
                discard.rows.clear();
                current = &discard;
            }
            if (!consume_matrix_text(rhs.substr(1), line_no, *current)) {
                state = wanted ? State::matrix : State::skip_matrix;
            }
        } else if (rhs.starts_with("{")) {
            if (rhs.find('}') == std::string_view::npos) {
                state = State::skip_cell;
            }
        } else if (name == "baseMVA") {
            auto semi = rhs.find(';');
            raw.base_mva = parse_number(trim(rhs.substr(0, semi)), line_no);
            raw.base_mva_line = line_no;
        }
    }
    if (state == State::matrix) {
        malformed(line_no, "unterminated matrix");
    }
    return raw;
}

const Matrix& require(const RawCase& raw, const std::string& name) {
    auto it = raw.matrices.find(name);
    if (it == raw.matrices.end()) {
        throw Error(ErrorCode::MissingSection, "no '" + name + "' matrix in case file");
    }
    return it->second;
}

int as_int(double v, std::size_t line, const char* what) {
    if (v != std::floor(v)) {
        malformed(line, std::string(what) + " must be an integer");
    }
    return static_cast<int>(v);
}

}  // namespace

std::size_t Grid::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].kind == BusKind::slack) {
            return i;
        }
    }
    throw Error(ErrorCode::NoSlack, "grid has no slack bus");
}

std::unordered_map<int, std::size_t> Grid::bus_positions() const {
    std::unordered_map<int, std::size_t> pos;
    pos.reserve(buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) {
        pos.emplace(buses[i].id, i);
    }
    return pos;
}

void validate(const Grid& grid) {
    if (!(grid.base_mva > 0.0)) {
        throw Error(ErrorCode::InvalidGrid, "base_mva must be positive");
    }
    std::unordered_set<int> ids;
    std::size_t slack_count = 0;
    for (const auto& bus : grid.buses) {
        if (!ids.insert(bus.id).second) {
            throw Error(ErrorCode::InvalidGrid, "duplicate bus id " + std::to_string(bus.id));
        }
        if (!(bus.base_kv > 0.0) || !(bus.vm_init > 0.0)) {
            throw Error(ErrorCode::InvalidGrid,
                        "bus " + std::to_string(bus.id) + " needs base_kv > 0 and vm_init > 0");
        }
        slack_count += bus.kind == BusKind::slack ? 1 : 0;
    }
    if (slack_count == 0) {
        throw Error(ErrorCode::NoSlack, "grid has no slack bus");
    }
    if (slack_count > 1) {
        throw Error(ErrorCode::MultipleSlack, std::to_string(slack_count) + " slack buses");
    }
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const auto& br = grid.branches[i];
        if (!ids.contains(br.from_bus) || !ids.contains(br.to_bus)) {
            throw Error(ErrorCode::DanglingReference,
                        "branch " + std::to_string(i) + " references an unknown bus");
        }
        if (br.from_bus == br.to_bus) {
            throw Error(ErrorCode::InvalidGrid, "branch " + std::to_string(i) + " is a self-loop");
        }
        if (br.status && br.x == 0.0) {
            throw Error(ErrorCode::InvalidGrid,
                        "in-service branch " + std::to_string(i) + " has zero reactance");
        }
    }
    for (std::size_t i = 0; i < grid.gens.size(); ++i) {
        const auto& gen = grid.gens[i];
        if (!ids.contains(gen.bus)) {
            throw Error(ErrorCode::DanglingReference,
                        "gen " + std::to_string(i) + " references an unknown bus");
        }
        if (gen.p_min > gen.p_max) {
            throw Error(ErrorCode::InvalidGrid, "gen " + std::to_string(i) + " has p_min > p_max");
        }
    }
}

Grid parse_case(std::string_view text) {
    RawCase raw = scan(text);
    if (!raw.base_mva) {
        throw Error(ErrorCode::MissingSection, "no 'baseMVA' assignment in case file");
    }
    const Matrix& bus_m = require(raw, "bus");
    const Matrix& gen_m = require(raw, "gen");
    const Matrix& branch_m = require(raw, "branch");

    Grid grid;
    grid.name = raw.name;
    grid.base_mva = *raw.base_mva;
    if (!(grid.base_mva > 0.0)) {
        malformed(raw.base_mva_line, "baseMVA must be positive");
    }

    std::unordered_map<int, std::size_t> ids;
    std::size_t slack_count = 0;
    for (const auto& row : bus_m.rows) {
        const auto& v = row.values;
        if (v.size() < kBusColumns) {
            malformed(row.line, "bus row has " + std::to_string(v.size()) + " columns, expected " +
                                    std::to_string(kBusColumns));
        }
        Bus bus;
        bus.id = as_int(v[0], row.line, "bus id");
        switch (as_int(v[1], row.line, "bus type")) {
        case 1: bus.kind = BusKind::pq; break;
        case 2: bus.kind = BusKind::pv; break;
        case 3: bus.kind = BusKind::slack; ++slack_count; break;
        default: malformed(row.line, "unsupported bus type " + std::to_string(v[1]));
        }
        bus.p_load = v[2];
        bus.q_load = v[3];
        bus.g_shunt = v[4];
        bus.b_shunt = v[5];
        bus.vm_init = v[7];
        bus.va_init = v[8];
        bus.base_kv = v[9] > 0.0 ? v[9] : kDefaultBaseKv;
        if (!(bus.vm_init > 0.0)) {
            malformed(row.line, "Vm must be positive");
        }
        if (!ids.emplace(bus.id, grid.buses.size()).second) {
            malformed(row.line, "duplicate bus id " + std::to_string(bus.id));
        }
        grid.buses.push_back(bus);
    }
    if (slack_count == 0) {
        throw Error(ErrorCode::NoSlack, "case has no slack (type 3) bus");
    }
    if (slack_count > 1) {
        throw Error(ErrorCode::MultipleSlack, std::to_string(slack_count) + " slack buses in case");
    }

    auto check_bus = [&](int id, std::size_t line) {
        if (!ids.contains(id)) {
            throw Error(ErrorCode::DanglingReference,
                        "line " + std::to_string(line) + ": unknown bus " + std::to_string(id));
        }
    };

    for (const auto& row : gen_m.rows) {
        const auto& v = row.values;
        if (v.size() < kGenColumns) {
            malformed(row.line, "gen row has " + std::to_string(v.size()) + " columns, expected " +
                                    std::to_string(kGenColumns));
        }
        Gen gen;
        gen.bus = as_int(v[0], row.line, "gen bus");
        check_bus(gen.bus, row.line);
        gen.p_gen = v[1];
        gen.q_gen = v[2];
        gen.v_setpoint = v[5];
        gen.status = v[7] > 0.0;
        gen.p_max = v[8];
        gen.p_min = v[9];
        if (gen.p_min > gen.p_max) {
            malformed(row.line, "Pmin exceeds Pmax");
        }
        grid.gens.push_back(gen);
    }

    for (const auto& row : branch_m.rows) {
        const auto& v = row.values;
        if (v.size() < kBranchColumns) {
            malformed(row.line, "branch row has " + std::to_string(v.size()) +
                                    " columns, expected " + std::to_string(kBranchColumns));
        }
        Branch br;
        br.from_bus = as_int(v[0], row.line, "from bus");
        br.to_bus = as_int(v[1], row.line, "to bus");
        check_bus(br.from_bus, row.line);
        check_bus(br.to_bus, row.line);
        br.r = v[2];
        br.x = v[3];
        br.b_charging = v[4];
        br.tap = v[8] == 0.0 ? 1.0 : v[8];
        br.shift = v[9];
        br.status = v[10] > 0.0;
        if (br.from_bus == br.to_bus) {
            malformed(row.line, "branch connects a bus to itself");
        }
        if (br.status && br.x == 0.0) {
            malformed(row.line, "in-service branch with zero reactance");
        }
        grid.branches.push_back(br);
    }
    return grid;
}

Grid load_case(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open case file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    Grid grid = parse_case(buffer.str());
    if (grid.name.empty()) {
        grid.name = path.stem().string();
    }
    return grid;
}

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string serialize_case(const Grid& grid) {
    std::ostringstream out;
    out << "function mpc = " << (grid.name.empty() ? "case" : grid.name) << "\n";
    out << "mpc.version = '2';\n\n";
    out << "%% system MVA base\n";
    out << "mpc.baseMVA = " << fmt9(grid.base_mva) << ";\n\n";

    out << "%% bus data\n";
    out << "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n";
    out << "mpc.bus = [\n";
    for (const auto& b : grid.buses) {
        int type = b.kind == BusKind::slack ? 3 : b.kind == BusKind::pv ? 2 : 1;
        out << '\t' << b.id << '\t' << type << '\t' << fmt9(b.p_load) << '\t' << fmt9(b.q_load)
            << '\t' << fmt9(b.g_shunt) << '\t' << fmt9(b.b_shunt) << "\t1\t" << fmt9(b.vm_init)
            << '\t' << fmt9(b.va_init) << '\t' << fmt9(b.base_kv) << "\t1\t1.1\t0.9;\n";
    }
    out << "];\n\n";

    out << "%% generator data\n";
    out << "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n";
    out << "mpc.gen = [\n";
    for (const auto& g : grid.gens) {
        out << '\t' << g.bus << '\t' << fmt9(g.p_gen) << '\t' << fmt9(g.q_gen) << "\t9999\t-9999\t"
            << fmt9(g.v_setpoint) << '\t' << fmt9(grid.base_mva) << '\t' << (g.status ? 1 : 0)
            << '\t' << fmt9(g.p_max) << '\t' << fmt9(g.p_min) << ";\n";
    }
    out << "];\n\n";

    out << "%% branch data\n";
    out << "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n";
    out << "mpc.branch = [\n";
    for (const auto& br : grid.branches) {
        out << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << fmt9(br.r) << '\t' << fmt9(br.x)
            << '\t' << fmt9(br.b_charging) << "\t0\t0\t0\t" << fmt9(br.tap) << '\t'
            << fmt9(br.shift) << '\t' << (br.status ? 1 : 0) << "\t-360\t360;\n";
    }
    out << "];\n";
    return out.str();
}

}  // namespace gdpf
