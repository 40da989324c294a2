// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gdpf/error.hpp"
#include "gdpf/neuralnet.hpp"

namespace gdpf {

namespace {

constexpr int kFormatVersion = 1;

using nlohmann::json;

double round9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
}

json vector_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(round9(v[i]));
    return a;
}

Eigen::VectorXd vector_from(const json& a) {
    const auto values = a.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json dense_json(const Dense& d) {
    json a = json::array();
    for (Eigen::Index r = 0; r < d.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < d.weight.cols(); ++c) a.push_back(round9(d.weight(r, c)));
    }
    return {{"rows", d.weight.rows()}, {"cols", d.weight.cols()}, {"weight", std::move(a)},
            {"bias", vector_json(d.bias)}};
}

Dense dense_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto values = j.at("weight").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
        throw Error(ErrorCode::ShapeMismatch, "weight array does not match its rows x cols");
    }
    Dense d;
    d.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, cols);
    d.bias = vector_from(j.at("bias"));
    if (d.bias.size() != rows) {
        throw Error(ErrorCode::ShapeMismatch, "bias length does not match weight rows");
    }
    return d;
}

}  // namespace

std::string model_to_json(const SurrogateModel& m) {
    json j;
    j["format_version"] = kFormatVersion;
    j["encoding"] = {{"kind", std::string(to_string(m.encoding.kind))},
                     {"topology", m.encoding.bound.disconnected()}};
    j["hyper"] = {{"d_enc", m.hyper.d_enc},
                  {"d_shared", m.hyper.d_shared},
                  {"k", m.hyper.k},
                  {"leaky_slope", m.hyper.leaky_slope}};
    j["dims"] = {{"n_gen", m.n_gen}, {"n_bus", m.n_bus}, {"n_branch", m.n_branch}};
    j["cond_lines"] = m.cond_lines;
    j["scalers"] = {{"x", {{"mean", vector_json(m.scaler_x.mean)}, {"std", vector_json(m.scaler_x.std)}}},
                    {"y", {{"mean", vector_json(m.scaler_y.mean)}, {"std", vector_json(m.scaler_y.std)}}}};
    json weights;
    for (std::size_t g = 0; g < Parameters::kGroups; ++g) {
        weights[std::string(Parameters::kNames[g])] = dense_json(m.params.group(g));
    }
    j["weights"] = std::move(weights);
    return j.dump() + "\n";
}

SurrogateModel model_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        if (j.at("format_version").get<int>() != kFormatVersion) {
            throw Error(ErrorCode::IoError, "unsupported model format_version");
        }
        SurrogateModel m;
        m.encoding.kind = encoding_from_string(j.at("encoding").at("kind").get<std::string>());
        m.encoding.bound = Topology(j.at("encoding").at("topology").get<std::vector<std::size_t>>());
        const json& h = j.at("hyper");
        m.hyper = {h.at("d_enc").get<std::size_t>(), h.at("d_shared").get<std::size_t>(),
                   h.at("k").get<std::size_t>(), h.at("leaky_slope").get<double>()};
        m.n_gen = j.at("dims").at("n_gen").get<std::size_t>();
        m.n_bus = j.at("dims").at("n_bus").get<std::size_t>();
        m.n_branch = j.at("dims").at("n_branch").get<std::size_t>();
        m.cond_lines = j.at("cond_lines").get<std::vector<std::size_t>>();
        m.scaler_x = {vector_from(j.at("scalers").at("x").at("mean")), vector_from(j.at("scalers").at("x").at("std"))};
        m.scaler_y = {vector_from(j.at("scalers").at("y").at("mean")), vector_from(j.at("scalers").at("y").at("std"))};
        for (std::size_t g = 0; g < Parameters::kGroups; ++g) {
            m.params.group(g) = dense_from(j.at("weights").at(std::string(Parameters::kNames[g])));
        }

        const auto d_enc = static_cast<Eigen::Index>(m.hyper.d_enc);
        const auto n_cond = static_cast<Eigen::Index>(m.n_cond_units());
        const Parameters& p = m.params;
        const bool shapes_ok =
            p.enc_prod.weight.rows() == d_enc && p.enc_prod.weight.cols() == static_cast<Eigen::Index>(m.n_gen) &&
            p.enc_load.weight.rows() == d_enc && p.enc_load.weight.cols() == static_cast<Eigen::Index>(m.n_bus) &&
            p.shared.weight.rows() == static_cast<Eigen::Index>(m.hyper.d_shared) &&
            p.shared.weight.cols() == 2 * d_enc + static_cast<Eigen::Index>(m.n_topology_features()) &&
            p.cond.weight.rows() == n_cond && (n_cond == 0 || p.cond.weight.cols() == 2 * d_enc) &&
            p.dec.weight.rows() == static_cast<Eigen::Index>(m.n_branch) &&
            p.dec.weight.cols() == static_cast<Eigen::Index>(m.hyper.d_shared) + n_cond &&
            m.scaler_x.mean.size() == static_cast<Eigen::Index>(m.n_inputs()) &&
            m.scaler_x.std.size() == m.scaler_x.mean.size() &&
            m.scaler_y.mean.size() == static_cast<Eigen::Index>(m.n_branch) &&
            m.scaler_y.std.size() == m.scaler_y.mean.size();
        if (!shapes_ok) {
            throw Error(ErrorCode::ShapeMismatch, "model file tensors do not match its declared dimensions");
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("malformed model file: ") + e.what());
    }
}

void save_model(const SurrogateModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    out << model_to_json(model);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write model file " + path.string());
    }
}

SurrogateModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read model file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return model_from_json(buffer.str());
}

}  // namespace gdpf
