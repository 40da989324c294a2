// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gdpf/error.hpp"
#include "gdpf/neuralnet.hpp"
#include "gdpf/rng.hpp"
#include "support.hpp"

using namespace gdpf;
using namespace gdpf::test;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr std::size_t kGen = 2;
constexpr std::size_t kBus = 3;
constexpr std::size_t kBranch = 4;

Hyper small_hyper() {
    Hyper h;
    h.d_enc = 3;
    h.d_shared = 4;
    h.k = 2;
    return h;
}

SurrogateModel small_model(EncodingKind kind, std::uint64_t seed = 11, Topology bound = {}) {
    SurrogateModel m = make_model(kind, kGen, kBus, kBranch, {0, 2, 3}, small_hyper(), seed, std::move(bound));
    Rng rng = make_rng(seed, "biases");
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        for (Eigen::Index r = 0; r < m.params.group(i).bias.size(); ++r) m.params.group(i).bias[r] = u(rng);
    }
    return m;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng = make_rng(seed, "matrix");
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
    }
    return m;
}

std::vector<Topology> topologies_for(EncodingKind kind, Eigen::Index batch) {
    const std::vector<Topology> pool = kind == EncodingKind::one_var ? std::vector<Topology>{{}, {0}, {2}, {3}}
                                       : kind == EncodingKind::one_model ? std::vector<Topology>{{2}}
                                                                         : std::vector<Topology>{{}, {0}, {2, 3}, {0, 3}};
    std::vector<Topology> out;
    for (Eigen::Index b = 0; b < batch; ++b) out.push_back(pool[static_cast<std::size_t>(b) % pool.size()]);
    return out;
}

double leaky_scalar(double v, double slope) { return v > 0.0 ? v : slope * v; }

// Scalar loops over the documented architecture, one sample at a time.
Eigen::VectorXd reference_forward(const SurrogateModel& m, const Eigen::VectorXd& x, const Topology& topo) {
    const Parameters& p = m.params;
    const double s = m.hyper.leaky_slope;
    const std::size_t d_enc = m.hyper.d_enc;
    std::vector<double> enc(2 * d_enc);
    for (std::size_t i = 0; i < d_enc; ++i) {
        double a = p.enc_prod.bias[i];
        for (std::size_t j = 0; j < m.n_gen; ++j) a += p.enc_prod.weight(i, j) * x[j];
        enc[i] = leaky_scalar(a, s);
        double b = p.enc_load.bias[i];
        for (std::size_t j = 0; j < m.n_bus; ++j) b += p.enc_load.weight(i, j) * x[m.n_gen + j];
        enc[d_enc + i] = leaky_scalar(b, s);
    }
    std::vector<double> shared_in = enc;
    if (m.encoding.kind == EncodingKind::one_hot) {
        for (std::size_t l = 0; l < m.n_branch; ++l) shared_in.push_back(topo.contains(l) ? 1.0 : 0.0);
    } else if (m.encoding.kind == EncodingKind::one_var) {
        shared_in.push_back(topo.empty() ? 0.0 : static_cast<double>(topo.disconnected()[0] + 1) / m.n_branch);
    }
    std::vector<double> hidden;
    for (std::size_t i = 0; i < m.hyper.d_shared; ++i) {
        double a = p.shared.bias[i];
        for (std::size_t j = 0; j < shared_in.size(); ++j) a += p.shared.weight(i, j) * shared_in[j];
        hidden.push_back(leaky_scalar(a, s));
    }
    for (std::size_t b = 0; b < m.cond_lines.size(); ++b) {
        for (std::size_t u = 0; u < m.hyper.k; ++u) {
            const std::size_t row = b * m.hyper.k + u;
            double a = p.cond.bias[row];
            for (std::size_t j = 0; j < enc.size(); ++j) a += p.cond.weight(row, j) * enc[j];
            hidden.push_back(topo.contains(m.cond_lines[b]) ? leaky_scalar(a, s) : 0.0);
        }
    }
    Eigen::VectorXd out(m.n_branch);
    for (std::size_t o = 0; o < m.n_branch; ++o) {
        double a = p.dec.bias[o];
        for (std::size_t j = 0; j < hidden.size(); ++j) a += p.dec.weight(o, j) * hidden[j];
        out[o] = a;
    }
    return out;
}

double batch_loss(const SurrogateModel& m, const Batch& b) {
    const Eigen::MatrixXd out = forward(m, b.x, b.topos).output;
    return (out - b.y).squaredNorm() / static_cast<double>(b.y.size());
}

Dataset dataset_from(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const std::vector<Topology>& topos) {
    Dataset ds;
    std::vector<Topology> seen;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const Topology& t = topos[static_cast<std::size_t>(c)];
        auto it = std::find(seen.begin(), seen.end(), t);
        if (it == seen.end()) {
            ds.manifest.topologies.push_back({seen.size(), t, 0, 0});
            seen.push_back(t);
            it = seen.end() - 1;
        }
        Record r;
        r.topo_id = static_cast<std::size_t>(it - seen.begin());
        for (std::size_t i = 0; i < kGen; ++i) r.injections.p_gen.push_back(x(static_cast<Eigen::Index>(i), c));
        for (std::size_t i = 0; i < kBus; ++i) r.injections.p_load.push_back(x(static_cast<Eigen::Index>(kGen + i), c));
        r.injections.q_load.assign(kBus, 0.0);
        r.injections.gen_on.assign(kGen, 1);
        r.amps.assign(y.col(c).data(), y.col(c).data() + y.rows());
        ds.records.push_back(r);
    }
    return ds;
}

}  // namespace

TEST_CASE("scaler fit, transform and inverse", "[neuralnet]") {
    Eigen::MatrixXd rows(4, 3);
    rows << 1, 5, 7,
            2, 5, 9,
            3, 5, 11,
            4, 5, 13;
    const Scaler s = fit_scaler(rows);
    CHECK_THAT(s.mean[0], WithinAbs(2.5, 1e-15));
    CHECK_THAT(s.std[0], WithinAbs(std::sqrt(1.25), 1e-15));
    CHECK(s.std[1] == 1.0);
    CHECK_THAT(s.std[2], WithinAbs(std::sqrt(5.0), 1e-15));

    const Eigen::MatrixXd z = s.transform(rows.transpose());
    CHECK(z.row(1).isZero());
    CHECK_THAT(z.row(0).mean(), WithinAbs(0.0, 1e-15));
    CHECK_THAT(z.row(0).squaredNorm() / 4.0, WithinAbs(1.0, 1e-14));
    CHECK((s.inverse_transform(z) - rows.transpose()).cwiseAbs().maxCoeff() < 1e-14);

    CHECK_THROWS_MATCHES(fit_scaler(rows.topRows(1)), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::TooFewRows;
                         }));
    CHECK_THROWS_AS(s.transform(Eigen::MatrixXd::Zero(2, 1)), Error);
}

TEST_CASE("topology masks place one block of k ones per line", "[neuralnet]") {
    const std::size_t n = 7, k = 3;
    for (std::size_t line = 0; line < n; ++line) {
        const Eigen::VectorXd m = topology_mask({line}, n, k);
        for (std::size_t i = 0; i < n * k; ++i) CHECK(m[static_cast<Eigen::Index>(i)] == (i / k == line ? 1.0 : 0.0));
    }
    CHECK(topology_mask({}, n, k).isZero());
    const Topology a{1, 4}, b{4, 6};
    const Eigen::VectorXd both = topology_mask(Topology{1, 4, 6}, n, k);
    CHECK(both == topology_mask(a, n, k).cwiseMax(topology_mask(b, n, k)));
    CHECK(both.sum() == 9.0);
    CHECK_THROWS_AS(topology_mask({7}, n, k), Error);

    const SurrogateModel m = small_model(EncodingKind::guided_dropout);
    CHECK(m.cond_lines == std::vector<std::size_t>{0, 2, 3});
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
    expected.segment(2, 2).setOnes();
    CHECK(model_mask(m, {2}) == expected);
    CHECK_THROWS_MATCHES(model_mask(m, {1}), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::UnsupportedTopology;
                         }));
}

TEST_CASE("model shapes per encoding", "[neuralnet]") {
    const SurrogateModel gd = small_model(EncodingKind::guided_dropout);
    CHECK(gd.params.cond.weight.rows() == 6);
    CHECK(gd.params.dec.weight.cols() == 4 + 6);
    CHECK(gd.params.shared.weight.cols() == 6);
    const SurrogateModel oh = small_model(EncodingKind::one_hot);
    CHECK(oh.params.shared.weight.cols() == 6 + 4);
    CHECK(oh.n_cond_units() == 0);
    const SurrogateModel ov = small_model(EncodingKind::one_var);
    CHECK(ov.params.shared.weight.cols() == 6 + 1);
    const SurrogateModel om = small_model(EncodingKind::one_model, 11, {2});
    CHECK(om.encoding.bound == Topology{2});
    CHECK(om.params.dec.weight.cols() == 4);
    CHECK_THROWS_AS(make_model(EncodingKind::guided_dropout, kGen, kBus, kBranch, {9}, small_hyper(), 1), Error);
    CHECK(encoding_from_string("gd") == EncodingKind::guided_dropout);
    CHECK(encoding_from_string("onemodel") == EncodingKind::one_model);
    CHECK_THROWS_AS(encoding_from_string("dropout"), Error);
}

TEST_CASE("forward pass matches a scalar reference implementation", "[neuralnet]") {
    for (EncodingKind kind : {EncodingKind::guided_dropout, EncodingKind::one_hot, EncodingKind::one_var,
                              EncodingKind::one_model}) {
        CAPTURE(to_string(kind));
        const SurrogateModel m = small_model(kind, 3, kind == EncodingKind::one_model ? Topology{2} : Topology{});
        const Eigen::MatrixXd x = random_matrix(kGen + kBus, 8, 21);
        const auto topos = topologies_for(kind, 8);
        const Eigen::MatrixXd out = forward(m, x, topos).output;
        for (Eigen::Index b = 0; b < 8; ++b) {
            const Eigen::VectorXd ref = reference_forward(m, x.col(b), topos[static_cast<std::size_t>(b)]);
            CHECK((out.col(b) - ref).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((forward(m, Eigen::VectorXd(x.col(b)), topos[static_cast<std::size_t>(b)]) - ref)
                      .cwiseAbs()
                      .maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("the reference topology ignores every conditional weight", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const Eigen::MatrixXd x = random_matrix(kGen + kBus, 5, 2);
    const std::vector<Topology> ref(5);
    const Eigen::MatrixXd before = forward(m, x, ref).output;
    m.params.cond.weight = random_matrix(m.params.cond.weight.rows(), m.params.cond.weight.cols(), 99) * 50.0;
    m.params.cond.bias.setConstant(7.0);
    CHECK(forward(m, x, ref).output == before);
    const std::vector<Topology> cut(5, Topology{2});
    CHECK(forward(m, x, cut).output != before);
}

TEST_CASE("all-zero weights give zero output", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        m.params.group(i).weight.setZero();
        m.params.group(i).bias.setZero();
    }
    const Eigen::MatrixXd x = random_matrix(kGen + kBus, 4, 5);
    CHECK(forward(m, x, topologies_for(EncodingKind::guided_dropout, 4)).output.isZero());
}

TEST_CASE("forward rejects bad shapes and foreign topologies", "[neuralnet]") {
    const SurrogateModel m = small_model(EncodingKind::guided_dropout);
    CHECK_THROWS_AS(forward(m, Eigen::MatrixXd::Zero(4, 2), std::vector<Topology>(2)), Error);
    CHECK_THROWS_AS(forward(m, Eigen::MatrixXd::Zero(5, 2), std::vector<Topology>(1)), Error);
    CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(5), Topology{4}), Error);

    const SurrogateModel ov = small_model(EncodingKind::one_var);
    CHECK_THROWS_MATCHES(forward(ov, Eigen::VectorXd::Zero(5), Topology{0, 2}), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::UnsupportedTopology;
                         }));
    const SurrogateModel om = small_model(EncodingKind::one_model, 1, {2});
    CHECK_THROWS_MATCHES(forward(om, Eigen::VectorXd::Zero(5), Topology{}), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::WrongTopologyForOneModel;
                         }));
}

TEST_CASE("analytic gradients agree with central differences", "[neuralnet]") {
    for (EncodingKind kind : {EncodingKind::guided_dropout, EncodingKind::one_hot, EncodingKind::one_var,
                              EncodingKind::one_model}) {
        CAPTURE(to_string(kind));
        SurrogateModel m = small_model(kind, 17, kind == EncodingKind::one_model ? Topology{2} : Topology{});
        Batch batch{random_matrix(kGen + kBus, 6, 8), topologies_for(kind, 6), random_matrix(kBranch, 6, 9)};
        const LossAndGrads lg = loss_and_grads(m, batch);
        CHECK_THAT(lg.loss, WithinRel(batch_loss(m, batch), 1e-12));
        const double h = 1e-6;
        for (std::size_t gi = 0; gi < Parameters::kGroups; ++gi) {
            CAPTURE(Parameters::kNames[gi]);
            Dense& layer = m.params.group(gi);
            const Dense& grad = lg.grads.group(gi);
            REQUIRE(grad.weight.rows() == layer.weight.rows());
            REQUIRE(grad.weight.cols() == layer.weight.cols());
            auto check_entry = [&](double& param, double analytic) {
                const double saved = param;
                param = saved + h;
                const double up = batch_loss(m, batch);
                param = saved - h;
                const double down = batch_loss(m, batch);
                param = saved;
                CHECK_THAT(analytic, WithinAbs((up - down) / (2.0 * h), 1e-7 + 1e-5 * std::abs(analytic)));
            };
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check_entry(layer.weight(r, c), grad.weight(r, c));
                check_entry(layer.bias[r], grad.bias[r]);
            }
        }
    }
}

TEST_CASE("blocks of lines absent from the batch receive zero gradient", "[neuralnet]") {
    const SurrogateModel m = small_model(EncodingKind::guided_dropout);
    Batch batch{random_matrix(kGen + kBus, 4, 3), {{}, {0}, {2}, {0, 2}}, random_matrix(kBranch, 4, 4)};
    const LossAndGrads lg = loss_and_grads(m, batch);
    CHECK(lg.grads.cond.weight.middleRows(4, 2).isZero());
    CHECK(lg.grads.cond.bias.segment(4, 2).isZero());
    CHECK(lg.grads.dec.weight.middleCols(4 + 4, 2).isZero());
    CHECK(!lg.grads.cond.weight.topRows(4).isZero());
}

TEST_CASE("Adam step arithmetic", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const Parameters start = m.params;
    AdamState adam = make_adam(m.params, 0.01);
    adam_step(adam, m.params, m.params.zeros_like());
    CHECK(m.params == start);
    CHECK(adam.t == 1);

    AdamState fresh = make_adam(start, 0.01);
    Parameters p = start;
    Parameters ones = start.zeros_like();
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        ones.group(i).weight.setOnes();
        ones.group(i).bias.setConstant(-1.0);
    }
    adam_step(fresh, p, ones);
    const double step = 0.01 / (1.0 + 1e-8);
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
        const Eigen::MatrixXd dw = p.group(i).weight - start.group(i).weight;
        const Eigen::VectorXd db = p.group(i).bias - start.group(i).bias;
        if (dw.size() > 0) CHECK((dw.array() + step).abs().maxCoeff() < 1e-15);
        if (db.size() > 0) CHECK((db.array() - step).abs().maxCoeff() < 1e-15);
    }

    Parameters wrong = start.zeros_like();
    wrong.dec.weight.resize(1, 1);
    CHECK_THROWS_AS(adam_step(fresh, p, wrong), Error);
}

TEST_CASE("initialization is deterministic per seed", "[neuralnet]") {
    const auto a = make_model(EncodingKind::guided_dropout, kGen, kBus, kBranch, {0, 2}, small_hyper(), 5);
    const auto b = make_model(EncodingKind::guided_dropout, kGen, kBus, kBranch, {0, 2}, small_hyper(), 5);
    const auto c = make_model(EncodingKind::guided_dropout, kGen, kBus, kBranch, {0, 2}, small_hyper(), 6);
    CHECK(a == b);
    CHECK(a.params != c.params);
    for (std::size_t i = 0; i < Parameters::kGroups; ++i) CHECK(a.params.group(i).bias.isZero());
    CHECK(a.scaler_x.std == Eigen::VectorXd::Ones(5));
}

TEST_CASE("training reduces loss and memorizes a single record", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    TrainingData one{random_matrix(kGen + kBus, 1, 30), {Topology{2}}, random_matrix(kBranch, 1, 31)};
    const double before = mse(m, one);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 1;
    cfg.lr = 1e-2;
    cfg.patience = 300;
    const TrainResult r = train(m, one, one, cfg);
    CHECK(mse(r.model, one) < 1e-3 * before);
    CHECK(r.curve.epochs.back().train_loss < r.curve.epochs.front().train_loss);
}

TEST_CASE("a linear toy mapping is learned", "[neuralnet]") {
    Hyper hyper;
    hyper.d_enc = 16;
    hyper.d_shared = 16;
    hyper.k = 2;
    SurrogateModel m = make_model(EncodingKind::guided_dropout, kGen, kBus, kBranch, {}, hyper, 4);
    const Eigen::MatrixXd a = random_matrix(kBranch, kGen + kBus, 40);
    const Eigen::MatrixXd x_train = random_matrix(kGen + kBus, 400, 41);
    const Eigen::MatrixXd x_val = random_matrix(kGen + kBus, 100, 42);
    const TrainingData train_set{x_train, std::vector<Topology>(400), a * x_train};
    const TrainingData val_set{x_val, std::vector<Topology>(100), a * x_val};
    TrainConfig cfg;
    cfg.epochs = 150;
    cfg.batch_size = 32;
    cfg.lr = 3e-3;
    const TrainResult r = train(m, train_set, val_set, cfg);
    const double target_var = (a * x_val).squaredNorm() / static_cast<double>(kBranch * 100);
    CHECK(mse(r.model, val_set) < 1e-2 * target_var);
}

TEST_CASE("learning curve bookkeeping and early stopping", "[neuralnet]") {
    const SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const TrainingData train_set{random_matrix(5, 40, 50), topologies_for(EncodingKind::guided_dropout, 40),
                                 random_matrix(kBranch, 40, 51)};
    const TrainingData val_set{random_matrix(5, 20, 52), topologies_for(EncodingKind::guided_dropout, 20),
                               random_matrix(kBranch, 20, 53)};
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 8;
    cfg.lr = 3e-2;
    cfg.patience = 3;
    std::size_t calls = 0;
    const TrainResult r = train(m, train_set, val_set, cfg, [&](const SurrogateModel&) {
        return static_cast<double>(++calls);
    });
    REQUIRE(!r.curve.epochs.empty());
    CHECK(calls == r.curve.epochs.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    for (std::size_t i = 0; i < r.curve.epochs.size(); ++i) {
        const EpochStats& e = r.curve.epochs[i];
        CHECK(e.epoch == i + 1);
        CHECK(e.monitor == static_cast<double>(i + 1));
        if (e.val_loss < best) {
            best = e.val_loss;
            best_epoch = e.epoch;
        }
    }
    CHECK(r.curve.best_epoch == best_epoch);
    CHECK(r.curve.best_val_loss == best);
    CHECK_THAT(mse(r.model, val_set), WithinRel(best, 1e-12));
    if (r.curve.epochs.size() < cfg.epochs) CHECK(r.curve.epochs.size() == best_epoch + cfg.patience);

    const TrainResult again = train(m, train_set, val_set, cfg);
    CHECK(again.model == r.model);
    CHECK_THROWS_AS(train(m, TrainingData{}, val_set, cfg), Error);
}

TEST_CASE("predictions zero disconnected branches and batch consistently", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const Eigen::MatrixXd x = random_matrix(kGen + kBus, 12, 60) * 10.0;
    const Eigen::MatrixXd y = random_matrix(kBranch, 12, 61).cwiseAbs() * 100.0;
    const auto topos = topologies_for(EncodingKind::guided_dropout, 12);
    fit_model_scalers(m, dataset_from(x, y, topos));
    CHECK(m.scaler_x.mean.size() == 5);

    const Eigen::MatrixXd batch = predict_amps(m, x, topos);
    for (Eigen::Index b = 0; b < x.cols(); ++b) {
        const Topology& t = topos[static_cast<std::size_t>(b)];
        const FlowVector single = predict_amps(m, Eigen::VectorXd(x.col(b)), t);
        for (std::size_t l = 0; l < kBranch; ++l) {
            CHECK_THAT(single[l], WithinAbs(batch(static_cast<Eigen::Index>(l), b), 1e-9));
            if (t.contains(l)) CHECK(single[l] == 0.0);
        }
        const Eigen::VectorXd scaled = m.scaler_x.transform(Eigen::MatrixXd(x.col(b)));
        const Eigen::MatrixXd expected = m.scaler_y.inverse_transform(Eigen::MatrixXd(reference_forward(m, scaled, t)));
        for (std::size_t l = 0; l < kBranch; ++l) {
            if (!t.contains(l)) CHECK_THAT(single[l], WithinAbs(expected(static_cast<Eigen::Index>(l), 0), 1e-9));
        }
    }
}

TEST_CASE("training data uses scalers fitted on the training split", "[neuralnet]") {
    SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const Eigen::MatrixXd x = random_matrix(kGen + kBus, 10, 70) * 3.0;
    const Eigen::MatrixXd y = random_matrix(kBranch, 10, 71);
    const auto topos = topologies_for(EncodingKind::guided_dropout, 10);
    const Dataset ds = dataset_from(x, y, topos);
    fit_model_scalers(m, ds);
    const TrainingData d = make_training_data(m, ds);
    CHECK((d.x.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((d.y - m.scaler_y.transform(y)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(d.topos == topos);

    Dataset one = ds;
    one.records.resize(1);
    CHECK_THROWS_MATCHES(fit_model_scalers(m, one), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::TooFewRecords;
                         }));
}

TEST_CASE("models round-trip through JSON", "[neuralnet]") {
    for (EncodingKind kind : {EncodingKind::guided_dropout, EncodingKind::one_hot, EncodingKind::one_var,
                              EncodingKind::one_model}) {
        CAPTURE(to_string(kind));
        SurrogateModel m = small_model(kind, 8, kind == EncodingKind::one_model ? Topology{3} : Topology{});
        m.scaler_x.mean.setConstant(0.1);
        m.scaler_y.std.setConstant(3.7);
        const SurrogateModel once = model_from_json(model_to_json(m));
        CHECK(model_from_json(model_to_json(once)) == once);
        CHECK(once.encoding == m.encoding);
        CHECK(once.cond_lines == m.cond_lines);
        for (std::size_t i = 0; i < Parameters::kGroups; ++i) {
            const Dense& a = once.params.group(i);
            const Dense& b = m.params.group(i);
            REQUIRE(a.weight.rows() == b.weight.rows());
            REQUIRE(a.weight.cols() == b.weight.cols());
            if (a.weight.size() > 0) CHECK((a.weight - b.weight).cwiseAbs().maxCoeff() <= 5e-9 * b.weight.cwiseAbs().maxCoeff());
            if (a.bias.size() > 0) CHECK((a.bias - b.bias).cwiseAbs().maxCoeff() <= 5e-9);
        }
        const auto dir = scratch_dir("model_io");
        save_model(m, dir / "m.json");
        CHECK(load_model(dir / "m.json") == once);
        CHECK(model_to_json(load_model(dir / "m.json")) == read_text(dir / "m.json"));
        std::filesystem::remove_all(dir);
    }
    CHECK_THROWS_AS(model_from_json("{\"format_version\": 1}"), Error);
    CHECK_THROWS_AS(model_from_json("not json"), Error);
    CHECK_THROWS_AS(load_model("/nonexistent/model.json"), Error);
}

TEST_CASE("single-precision inference tracks the double model", "[neuralnet]") {
    for (EncodingKind kind : {EncodingKind::guided_dropout, EncodingKind::one_hot, EncodingKind::one_var}) {
        CAPTURE(to_string(kind));
        SurrogateModel m = small_model(kind, 12);
        const Eigen::MatrixXd x = random_matrix(kGen + kBus, 16, 80) * 20.0;
        const auto topos = topologies_for(kind, 16);
        fit_model_scalers(m, dataset_from(x, random_matrix(kBranch, 16, 81).cwiseAbs() * 500.0, topos));
        const Eigen::MatrixXd expected = predict_amps(m, x, topos);
        const FastInference fast(m);
        Eigen::MatrixXf out;
        fast.predict(x.cast<float>(), topos, out);
        REQUIRE(out.rows() == static_cast<Eigen::Index>(kBranch));
        REQUIRE(out.cols() == 16);
        const double scale = expected.cwiseAbs().maxCoeff();
        CHECK((out.cast<double>() - expected).cwiseAbs().maxCoeff() < 1e-4 * scale);
    }
    const SurrogateModel m = small_model(EncodingKind::guided_dropout);
    const FastInference fast(m);
    Eigen::MatrixXf out;
    CHECK_THROWS_AS(fast.predict(Eigen::MatrixXf::Zero(5, 1), {Topology{1}}, out), Error);
}
