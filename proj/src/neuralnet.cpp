// SPDX-License-Identifier: Apache-2.0
#include "gdpf/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gdpf/error.hpp"
#include "gdpf/rng.hpp"

namespace gdpf {

namespace {

constexpr double kMinStd = 1e-9;
constexpr Eigen::Index kEvalChunk = 4096;

Eigen::MatrixXd leaky(const Eigen::MatrixXd& a, double slope) {
    return a.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& a, double slope) {
    return a.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Eigen::MatrixXd affine(const Dense& layer, const Eigen::MatrixXd& in) {
    Eigen::MatrixXd out = layer.weight * in;
    out.colwise() += layer.bias;
    return out;
}

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            m(r, c) = dist(rng);
        }
    }
}

Dense make_dense(std::size_t rows, std::size_t cols) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)),
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows))};
}

void check_line(const SurrogateModel& model, std::size_t line) {
    if (line >= model.n_branch) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "line " + std::to_string(line) + " >= " + std::to_string(model.n_branch));
    }
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
    return m(Eigen::all, idx);
}

}  // namespace

Eigen::MatrixXd Scaler::transform(const Eigen::MatrixXd& cols) const {
    if (cols.rows() != mean.size()) {
        throw Error(ErrorCode::ShapeMismatch, "scaler expects " + std::to_string(mean.size()) + " features");
    }
    return (cols.colwise() - mean).array().colwise() / std.array();
}

Eigen::MatrixXd Scaler::inverse_transform(const Eigen::MatrixXd& cols) const {
    if (cols.rows() != mean.size()) {
        throw Error(ErrorCode::ShapeMismatch, "scaler expects " + std::to_string(mean.size()) + " features");
    }
    Eigen::MatrixXd out = cols.array().colwise() * std.array();
    out.colwise() += mean;
    return out;
}

Scaler fit_scaler(const Eigen::MatrixXd& rows) {
    if (rows.rows() < 2) {
        throw Error(ErrorCode::TooFewRows, "scaler needs at least 2 rows, got " + std::to_string(rows.rows()));
    }
    Scaler s;
    s.mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
    s.std = (centered.array().square().colwise().sum() / static_cast<double>(rows.rows())).sqrt().transpose();
    for (Eigen::Index i = 0; i < s.std.size(); ++i) {
        if (!(s.std[i] >= kMinStd)) s.std[i] = 1.0;
    }
    return s;
}

std::string_view to_string(EncodingKind kind) {
    switch (kind) {
    case EncodingKind::guided_dropout: return "guided_dropout";
    case EncodingKind::one_hot: return "one_hot";
    case EncodingKind::one_var: return "one_var";
    case EncodingKind::one_model: return "one_model";
    }
    return "unknown";
}

EncodingKind encoding_from_string(std::string_view name) {
    if (name == "guided_dropout" || name == "gd") return EncodingKind::guided_dropout;
    if (name == "one_hot" || name == "oh") return EncodingKind::one_hot;
    if (name == "one_var" || name == "ov") return EncodingKind::one_var;
    if (name == "one_model" || name == "onemodel") return EncodingKind::one_model;
    throw Error(ErrorCode::InvalidConfig, "unknown encoding '" + std::string(name) + "'");
}

Dense& Parameters::group(std::size_t i) {
    return const_cast<Dense&>(std::as_const(*this).group(i));
}

const Dense& Parameters::group(std::size_t i) const {
    switch (i) {
    case 0: return enc_prod;
    case 1: return enc_load;
    case 2: return shared;
    case 3: return cond;
    case 4: return dec;
    default: throw Error(ErrorCode::IndexOutOfRange, "parameter group " + std::to_string(i));
    }
}

Parameters Parameters::zeros_like() const {
    Parameters z;
    for (std::size_t g = 0; g < kGroups; ++g) {
        const Dense& src = group(g);
        z.group(g) = {Eigen::MatrixXd::Zero(src.weight.rows(), src.weight.cols()),
                      Eigen::VectorXd::Zero(src.bias.size())};
    }
    return z;
}

std::size_t SurrogateModel::n_topology_features() const noexcept {
    switch (encoding.kind) {
    case EncodingKind::one_hot: return n_branch;
    case EncodingKind::one_var: return 1;
    default: return 0;
    }
}

SurrogateModel make_model(EncodingKind kind, std::size_t n_gen, std::size_t n_bus, std::size_t n_branch,
                          std::vector<std::size_t> eligible_lines, const Hyper& hyper, std::uint64_t seed,
                          Topology bound) {
    SurrogateModel m;
    m.encoding = {kind, kind == EncodingKind::one_model ? std::move(bound) : Topology{}};
    m.hyper = hyper;
    m.n_gen = n_gen;
    m.n_bus = n_bus;
    m.n_branch = n_branch;
    std::sort(eligible_lines.begin(), eligible_lines.end());
    eligible_lines.erase(std::unique(eligible_lines.begin(), eligible_lines.end()), eligible_lines.end());
    for (std::size_t line : eligible_lines) check_line(m, line);
    for (std::size_t line : m.encoding.bound.disconnected()) check_line(m, line);
    if (kind == EncodingKind::guided_dropout) m.cond_lines = std::move(eligible_lines);

    const std::size_t d_enc = hyper.d_enc;
    const std::size_t enc_out = 2 * d_enc;
    const std::size_t n_cond = m.n_cond_units();
    Parameters& p = m.params;
    p.enc_prod = make_dense(d_enc, n_gen);
    p.enc_load = make_dense(d_enc, n_bus);
    p.shared = make_dense(hyper.d_shared, enc_out + m.n_topology_features());
    p.cond = make_dense(n_cond, enc_out);
    p.dec = make_dense(n_branch, hyper.d_shared + n_cond);

    Rng rng = make_rng(seed, "init");
    fill_uniform(p.enc_prod.weight, n_gen, d_enc, rng);
    fill_uniform(p.enc_load.weight, n_bus, d_enc, rng);
    fill_uniform(p.shared.weight, enc_out + m.n_topology_features(), hyper.d_shared, rng);
    for (std::size_t b = 0; b < m.cond_lines.size(); ++b) {
        fill_uniform(p.cond.weight.middleRows(static_cast<Eigen::Index>(b * hyper.k),
                                              static_cast<Eigen::Index>(hyper.k)),
                     enc_out, hyper.k, rng);
    }
    fill_uniform(p.dec.weight, hyper.d_shared + n_cond, n_branch, rng);

    m.scaler_x = {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.n_inputs())),
                  Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m.n_inputs()))};
    m.scaler_y = {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_branch)),
                  Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_branch))};
    return m;
}

Eigen::VectorXd topology_mask(const Topology& topo, std::size_t n_lines, std::size_t k) {
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_lines * k));
    for (std::size_t line : topo.disconnected()) {
        if (line >= n_lines) {
            throw Error(ErrorCode::IndexOutOfRange,
                        "line " + std::to_string(line) + " >= " + std::to_string(n_lines));
        }
        mask.segment(static_cast<Eigen::Index>(line * k), static_cast<Eigen::Index>(k)).setOnes();
    }
    return mask;
}

Eigen::VectorXd model_mask(const SurrogateModel& model, const Topology& topo) {
    std::vector<std::size_t> blocks;
    for (std::size_t line : topo.disconnected()) {
        check_line(model, line);
        auto it = std::lower_bound(model.cond_lines.begin(), model.cond_lines.end(), line);
        if (it == model.cond_lines.end() || *it != line) {
            throw Error(ErrorCode::UnsupportedTopology,
                        "line " + std::to_string(line) + " has no conditional block");
        }
        blocks.push_back(static_cast<std::size_t>(it - model.cond_lines.begin()));
    }
    return topology_mask(Topology(std::move(blocks)), model.cond_lines.size(), model.hyper.k);
}

Eigen::VectorXd topology_features(const SurrogateModel& model, const Topology& topo) {
    for (std::size_t line : topo.disconnected()) check_line(model, line);
    switch (model.encoding.kind) {
    case EncodingKind::one_hot: {
        Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_branch));
        for (std::size_t line : topo.disconnected()) t[static_cast<Eigen::Index>(line)] = 1.0;
        return t;
    }
    case EncodingKind::one_var: {
        if (topo.size() > 1) {
            throw Error(ErrorCode::UnsupportedTopology, "one_var encodes at most one disconnected line");
        }
        Eigen::VectorXd t(1);
        t[0] = topo.empty() ? 0.0
                            : static_cast<double>(topo.disconnected().front() + 1) /
                                  static_cast<double>(model.n_branch);
        return t;
    }
    case EncodingKind::one_model:
        if (topo != model.encoding.bound) {
            throw Error(ErrorCode::WrongTopologyForOneModel, "topology differs from the model's bound topology");
        }
        return {};
    case EncodingKind::guided_dropout:
        return {};
    }
    return {};
}

ForwardCache forward(const SurrogateModel& model, const Eigen::MatrixXd& x, const std::vector<Topology>& topos) {
    const auto batch = x.cols();
    if (x.rows() != static_cast<Eigen::Index>(model.n_inputs()) || topos.size() != static_cast<std::size_t>(batch)) {
        throw Error(ErrorCode::ShapeMismatch, "forward input has " + std::to_string(x.rows()) + " features x " +
                                                  std::to_string(batch) + " samples for " +
                                                  std::to_string(topos.size()) + " topologies");
    }
    const auto n_gen = static_cast<Eigen::Index>(model.n_gen);
    const auto n_bus = static_cast<Eigen::Index>(model.n_bus);
    const auto d_enc = static_cast<Eigen::Index>(model.hyper.d_enc);
    const auto d_shared = static_cast<Eigen::Index>(model.hyper.d_shared);
    const auto n_topo = static_cast<Eigen::Index>(model.n_topology_features());
    const auto n_cond = static_cast<Eigen::Index>(model.n_cond_units());
    const double slope = model.hyper.leaky_slope;
    const Parameters& p = model.params;

    ForwardCache c;
    c.x = x;
    c.pre_prod = affine(p.enc_prod, x.topRows(n_gen));
    c.pre_load = affine(p.enc_load, x.bottomRows(n_bus));
    c.enc.resize(2 * d_enc, batch);
    c.enc.topRows(d_enc) = leaky(c.pre_prod, slope);
    c.enc.bottomRows(d_enc) = leaky(c.pre_load, slope);

    c.shared_in.resize(2 * d_enc + n_topo, batch);
    c.shared_in.topRows(2 * d_enc) = c.enc;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const Eigen::VectorXd t = topology_features(model, topos[static_cast<std::size_t>(b)]);
        if (n_topo > 0) c.shared_in.col(b).tail(n_topo) = t;
    }
    c.pre_shared = affine(p.shared, c.shared_in);

    c.hidden.resize(d_shared + n_cond, batch);
    c.hidden.topRows(d_shared) = leaky(c.pre_shared, slope);
    if (n_cond > 0) {
        c.pre_cond = affine(p.cond, c.enc);
        c.mask.resize(n_cond, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            c.mask.col(b) = model_mask(model, topos[static_cast<std::size_t>(b)]);
        }
        c.hidden.bottomRows(n_cond) = c.mask.cwiseProduct(leaky(c.pre_cond, slope));
    }
    c.output = affine(p.dec, c.hidden);
    return c;
}

Eigen::VectorXd forward(const SurrogateModel& model, const Eigen::VectorXd& x, const Topology& topo) {
    return forward(model, Eigen::MatrixXd(x), std::vector<Topology>{topo}).output.col(0);
}

LossAndGrads loss_and_grads(const SurrogateModel& model, const Batch& batch) {
    if (batch.x.cols() == 0) {
        throw Error(ErrorCode::ShapeMismatch, "empty batch");
    }
    if (batch.y.rows() != static_cast<Eigen::Index>(model.n_branch) || batch.y.cols() != batch.x.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "target matrix does not match the batch");
    }
    const ForwardCache c = forward(model, batch.x, batch.topos);
    const Parameters& p = model.params;
    const double slope = model.hyper.leaky_slope;
    const auto n_gen = static_cast<Eigen::Index>(model.n_gen);
    const auto n_bus = static_cast<Eigen::Index>(model.n_bus);
    const auto d_enc = static_cast<Eigen::Index>(model.hyper.d_enc);
    const auto d_shared = static_cast<Eigen::Index>(model.hyper.d_shared);
    const auto n_cond = static_cast<Eigen::Index>(model.n_cond_units());
    const double count = static_cast<double>(batch.y.size());

    LossAndGrads out;
    const Eigen::MatrixXd diff = c.output - batch.y;
    out.loss = diff.squaredNorm() / count;
    Parameters& g = out.grads;

    const Eigen::MatrixXd d_out = diff * (2.0 / count);
    g.dec.weight = d_out * c.hidden.transpose();
    g.dec.bias = d_out.rowwise().sum();
    const Eigen::MatrixXd d_hidden = p.dec.weight.transpose() * d_out;

    const Eigen::MatrixXd d_pre_shared =
        d_hidden.topRows(d_shared).cwiseProduct(leaky_grad(c.pre_shared, slope));
    g.shared.weight = d_pre_shared * c.shared_in.transpose();
    g.shared.bias = d_pre_shared.rowwise().sum();
    Eigen::MatrixXd d_enc_out = (p.shared.weight.transpose() * d_pre_shared).topRows(2 * d_enc);

    if (n_cond > 0) {
        const Eigen::MatrixXd d_pre_cond = d_hidden.bottomRows(n_cond)
                                               .cwiseProduct(c.mask)
                                               .cwiseProduct(leaky_grad(c.pre_cond, slope));
        g.cond.weight = d_pre_cond * c.enc.transpose();
        g.cond.bias = d_pre_cond.rowwise().sum();
        d_enc_out += p.cond.weight.transpose() * d_pre_cond;
    } else {
        g.cond = {Eigen::MatrixXd::Zero(p.cond.weight.rows(), p.cond.weight.cols()),
                  Eigen::VectorXd::Zero(p.cond.bias.size())};
    }

    const Eigen::MatrixXd d_pre_prod = d_enc_out.topRows(d_enc).cwiseProduct(leaky_grad(c.pre_prod, slope));
    const Eigen::MatrixXd d_pre_load = d_enc_out.bottomRows(d_enc).cwiseProduct(leaky_grad(c.pre_load, slope));
    g.enc_prod.weight = d_pre_prod * batch.x.topRows(n_gen).transpose();
    g.enc_prod.bias = d_pre_prod.rowwise().sum();
    g.enc_load.weight = d_pre_load * batch.x.bottomRows(n_bus).transpose();
    g.enc_load.bias = d_pre_load.rowwise().sum();
    return out;
}

AdamState make_adam(const Parameters& params, double lr) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.lr = lr;
    return s;
}

void adam_step(AdamState& state, Parameters& params, const Parameters& grads) {
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        const Dense& g = grads.group(i);
        const Dense& p = params.group(i);
        const Dense& m = state.m.group(i);
        const Dense& v = state.v.group(i);
        if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
            g.bias.size() != p.bias.size() || m.weight.rows() != p.weight.rows() ||
            m.weight.cols() != p.weight.cols() || v.bias.size() != p.bias.size()) {
            throw Error(ErrorCode::ShapeMismatch,
                        "Adam shapes disagree for group " + std::string(Parameters::kNames[i]));
        }
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        theta.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    };
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        Dense& p = params.group(i);
        Dense& m = state.m.group(i);
        Dense& v = state.v.group(i);
        const Dense& g = grads.group(i);
        update(p.weight, m.weight, v.weight, g.weight);
        update(p.bias, m.bias, v.bias, g.bias);
    }
}

Eigen::MatrixXd raw_features(const Dataset& ds) {
    if (ds.records.empty()) return {};
    const auto& first = ds.records.front().injections;
    const auto n_gen = static_cast<Eigen::Index>(first.p_gen.size());
    const auto n_bus = static_cast<Eigen::Index>(first.p_load.size());
    Eigen::MatrixXd x(n_gen + n_bus, static_cast<Eigen::Index>(ds.records.size()));
    for (std::size_t r = 0; r < ds.records.size(); ++r) {
        const auto& inj = ds.records[r].injections;
        const auto col = static_cast<Eigen::Index>(r);
        for (Eigen::Index i = 0; i < n_gen; ++i) x(i, col) = inj.p_gen[static_cast<std::size_t>(i)];
        for (Eigen::Index i = 0; i < n_bus; ++i) x(n_gen + i, col) = inj.p_load[static_cast<std::size_t>(i)];
    }
    return x;
}

Eigen::MatrixXd raw_targets(const Dataset& ds) {
    if (ds.records.empty()) return {};
    const auto n_branch = static_cast<Eigen::Index>(ds.records.front().amps.size());
    Eigen::MatrixXd y(n_branch, static_cast<Eigen::Index>(ds.records.size()));
    for (std::size_t r = 0; r < ds.records.size(); ++r) {
        y.col(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::VectorXd>(ds.records[r].amps.data(), n_branch);
    }
    return y;
}

std::vector<Topology> record_topologies(const Dataset& ds) {
    std::vector<Topology> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) out.push_back(ds.topology_of(r));
    return out;
}

void fit_model_scalers(SurrogateModel& model, const Dataset& train) {
    if (train.records.size() < 2) {
        throw Error(ErrorCode::TooFewRecords, "need at least 2 training records to fit scalers");
    }
    model.scaler_x = fit_scaler(raw_features(train).transpose());
    model.scaler_y = fit_scaler(raw_targets(train).transpose());
    if (model.scaler_x.mean.size() != static_cast<Eigen::Index>(model.n_inputs()) ||
        model.scaler_y.mean.size() != static_cast<Eigen::Index>(model.n_branch)) {
        throw Error(ErrorCode::ShapeMismatch, "dataset does not match the model dimensions");
    }
}

TrainingData make_training_data(const SurrogateModel& model, const Dataset& ds) {
    TrainingData d;
    if (ds.records.empty()) return d;
    d.x = model.scaler_x.transform(raw_features(ds));
    d.y = model.scaler_y.transform(raw_targets(ds));
    d.topos = record_topologies(ds);
    return d;
}

double mse(const SurrogateModel& model, const TrainingData& data) {
    if (data.size() == 0) {
        throw Error(ErrorCode::EmptySplit, "MSE over an empty set");
    }
    double sum = 0.0;
    for (Eigen::Index start = 0; start < data.x.cols(); start += kEvalChunk) {
        const Eigen::Index len = std::min(kEvalChunk, data.x.cols() - start);
        std::vector<Topology> topos(data.topos.begin() + start, data.topos.begin() + start + len);
        const ForwardCache c = forward(model, data.x.middleCols(start, len), topos);
        sum += (c.output - data.y.middleCols(start, len)).squaredNorm();
    }
    return sum / static_cast<double>(data.y.size());
}

TrainResult train(SurrogateModel model, const TrainingData& train_set, const TrainingData& val_set,
                  const TrainConfig& cfg, const EpochMonitor& monitor) {
    if (train_set.size() == 0 || val_set.size() == 0) {
        throw Error(ErrorCode::EmptySplit, "training needs non-empty train and validation sets");
    }
    if (cfg.batch_size == 0) {
        throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    }
    TrainResult result{model, {}};
    AdamState adam = make_adam(model.params, cfg.lr);
    std::vector<Eigen::Index> order(train_set.size());
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng = make_rng(cfg.seed, "epoch-shuffle", {epoch});
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + len));
            Batch batch{gather_columns(train_set.x, idx), {}, gather_columns(train_set.y, idx)};
            batch.topos.reserve(len);
            for (Eigen::Index i : idx) batch.topos.push_back(train_set.topos[static_cast<std::size_t>(i)]);
            LossAndGrads lg = loss_and_grads(model, batch);
            loss_sum += lg.loss * static_cast<double>(len);
            adam_step(adam, model.params, lg.grads);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.val_loss = mse(model, val_set);
        if (monitor) stats.monitor = monitor(model);
        result.curve.epochs.push_back(stats);

        if (stats.val_loss < result.curve.best_val_loss) {
            result.curve.best_val_loss = stats.val_loss;
            result.curve.best_epoch = epoch;
            result.model.params = model.params;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return result;
}

Eigen::MatrixXd predict_amps(const SurrogateModel& model, const Eigen::MatrixXd& x_raw,
                             const std::vector<Topology>& topos) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(model.n_branch), x_raw.cols());
    const Eigen::MatrixXd x = model.scaler_x.transform(x_raw);
    for (Eigen::Index start = 0; start < x.cols(); start += kEvalChunk) {
        const Eigen::Index len = std::min(kEvalChunk, x.cols() - start);
        std::vector<Topology> chunk(topos.begin() + start, topos.begin() + start + len);
        out.middleCols(start, len) =
            model.scaler_y.inverse_transform(forward(model, x.middleCols(start, len), chunk).output);
    }
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
        for (std::size_t line : topos[static_cast<std::size_t>(b)].disconnected()) {
            out(static_cast<Eigen::Index>(line), b) = 0.0;
        }
    }
    return out;
}

FlowVector predict_amps(const SurrogateModel& model, const Eigen::VectorXd& x_raw, const Topology& topo) {
    const Eigen::MatrixXd out = predict_amps(model, Eigen::MatrixXd(x_raw), std::vector<Topology>{topo});
    return FlowVector(out.data(), out.data() + out.size());
}

FastInference::FastInference(const SurrogateModel& model)
    : model_(&model), slope_(static_cast<float>(model.hyper.leaky_slope)) {
    x_mean_ = model.scaler_x.mean.cast<float>();
    x_inv_std_ = model.scaler_x.std.cwiseInverse().cast<float>();
    y_mean_ = model.scaler_y.mean.cast<float>();
    y_std_ = model.scaler_y.std.cast<float>();
    auto convert = [](const Dense& d) { return Layer{d.weight.cast<float>(), d.bias.cast<float>()}; };
    enc_prod_ = convert(model.params.enc_prod);
    enc_load_ = convert(model.params.enc_load);
    shared_ = convert(model.params.shared);
    cond_ = convert(model.params.cond);
    dec_ = convert(model.params.dec);
    block_of_line_.assign(model.n_branch, -1);
    for (std::size_t b = 0; b < model.cond_lines.size(); ++b) {
        block_of_line_[model.cond_lines[b]] = static_cast<std::ptrdiff_t>(b);
    }
}

void FastInference::predict(const Eigen::MatrixXf& x_raw, const std::vector<Topology>& topos,
                            Eigen::MatrixXf& out) const {
    const SurrogateModel& m = *model_;
    const auto batch = x_raw.cols();
    if (x_raw.rows() != static_cast<Eigen::Index>(m.n_inputs()) || topos.size() != static_cast<std::size_t>(batch)) {
        throw Error(ErrorCode::ShapeMismatch, "fast inference input shape mismatch");
    }
    const auto n_gen = static_cast<Eigen::Index>(m.n_gen);
    const auto n_bus = static_cast<Eigen::Index>(m.n_bus);
    const auto d_enc = static_cast<Eigen::Index>(m.hyper.d_enc);
    const auto d_shared = static_cast<Eigen::Index>(m.hyper.d_shared);
    const auto k = static_cast<Eigen::Index>(m.hyper.k);
    const auto n_topo = static_cast<Eigen::Index>(m.n_topology_features());
    const float slope = slope_;
    auto act = [slope](float v) { return v > 0.0f ? v : slope * v; };

    const Eigen::MatrixXf x = (x_raw.colwise() - x_mean_).array().colwise() * x_inv_std_.array();
    Eigen::MatrixXf shared_in(2 * d_enc + n_topo, batch);
    shared_in.topRows(d_enc).noalias() = enc_prod_.weight * x.topRows(n_gen);
    shared_in.topRows(d_enc).colwise() += enc_prod_.bias;
    shared_in.middleRows(d_enc, d_enc).noalias() = enc_load_.weight * x.bottomRows(n_bus);
    shared_in.middleRows(d_enc, d_enc).colwise() += enc_load_.bias;
    shared_in.topRows(2 * d_enc) = shared_in.topRows(2 * d_enc).unaryExpr(act);
    if (n_topo > 0) {
        for (Eigen::Index b = 0; b < batch; ++b) {
            shared_in.col(b).tail(n_topo) = topology_features(m, topos[static_cast<std::size_t>(b)]).cast<float>();
        }
    }
    Eigen::MatrixXf hidden = shared_.weight * shared_in;
    hidden.colwise() += shared_.bias;
    hidden = hidden.unaryExpr(act);

    out.resize(static_cast<Eigen::Index>(m.n_branch), batch);
    out.noalias() = dec_.weight.leftCols(d_shared) * hidden;
    out.colwise() += dec_.bias;

    if (!m.cond_lines.empty()) {
        Eigen::VectorXf h(k);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (std::size_t line : topos[static_cast<std::size_t>(b)].disconnected()) {
                const std::ptrdiff_t block = line < block_of_line_.size() ? block_of_line_[line] : -1;
                if (block < 0) {
                    throw Error(ErrorCode::UnsupportedTopology,
                                "line " + std::to_string(line) + " has no conditional block");
                }
                const Eigen::Index row = block * k;
                h.noalias() = cond_.weight.middleRows(row, k) * shared_in.col(b).head(2 * d_enc);
                h += cond_.bias.segment(row, k);
                h = h.unaryExpr(act);
                out.col(b).noalias() += dec_.weight.middleCols(d_shared + row, k) * h;
            }
        }
    }
    out = (out.array().colwise() * y_std_.array()).colwise() + y_mean_.array();
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (std::size_t line : topos[static_cast<std::size_t>(b)].disconnected()) {
            out(static_cast<Eigen::Index>(line), b) = 0.0f;
        }
    }
}

}  // namespace gdpf
