// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gdpf/powerflow.hpp"
#include "gdpf/scenario.hpp"

namespace gdpf {

struct Scaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    /// Columns are samples.
    Eigen::MatrixXd transform(const Eigen::MatrixXd& cols) const;
    Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& cols) const;

    bool operator==(const Scaler&) const = default;
};

/// Per-feature mean and population std over the rows (samples) of `rows`.
/// Features whose std falls below 1e-9 keep std = 1.
Scaler fit_scaler(const Eigen::MatrixXd& rows);

enum class EncodingKind { guided_dropout, one_hot, one_var, one_model };

std::string_view to_string(EncodingKind kind);
EncodingKind encoding_from_string(std::string_view name);

struct Encoding {
    EncodingKind kind = EncodingKind::guided_dropout;
    Topology bound;  // one_model only

    bool operator==(const Encoding&) const = default;
};

struct Hyper {
    std::size_t d_enc = 64;
    std::size_t d_shared = 64;
    std::size_t k = 5;
    double leaky_slope = 0.01;

    bool operator==(const Hyper&) const = default;
};

struct Dense {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;

    bool operator==(const Dense&) const = default;
};

/// All trainable tensors. Gradients and Adam moments reuse the same layout.
struct Parameters {
    Dense enc_prod;  // d_enc x n_gen
    Dense enc_load;  // d_enc x n_bus
    Dense shared;    // d_shared x (2 d_enc + topology features)
    Dense cond;      // (blocks * k) x (2 d_enc); row block b belongs to line cond_lines[b]
    Dense dec;       // n_branch x (d_shared + blocks * k)

    static constexpr std::size_t kGroups = 5;
    static constexpr std::string_view kNames[kGroups] = {"enc_prod", "enc_load", "shared", "cond", "dec"};

    Dense& group(std::size_t i);
    const Dense& group(std::size_t i) const;
    Parameters zeros_like() const;

    bool operator==(const Parameters&) const = default;
};

struct SurrogateModel {
    Encoding encoding;
    Hyper hyper;
    std::size_t n_gen = 0;
    std::size_t n_bus = 0;
    std::size_t n_branch = 0;
    std::vector<std::size_t> cond_lines;  // guided_dropout: one conditional block per line
    Scaler scaler_x;                      // over [p_gen, p_load]
    Scaler scaler_y;                      // over branch amps
    Parameters params;

    std::size_t n_inputs() const noexcept { return n_gen + n_bus; }
    std::size_t n_topology_features() const noexcept;
    std::size_t n_cond_units() const noexcept { return cond_lines.size() * hyper.k; }

    bool operator==(const SurrogateModel&) const = default;
};

/// Fresh model with fan-scaled uniform weights, zero biases and identity scalers.
/// `eligible_lines` are the branches that may be disconnected (guided_dropout
/// gets one conditional block per entry); `bound` is required for one_model.
SurrogateModel make_model(EncodingKind kind, std::size_t n_gen, std::size_t n_bus, std::size_t n_branch,
                          std::vector<std::size_t> eligible_lines, const Hyper& hyper, std::uint64_t seed,
                          Topology bound = {});

/// Binary mask over n_lines * k conditional units: block l is all ones iff
/// line l is in `topo`.
Eigen::VectorXd topology_mask(const Topology& topo, std::size_t n_lines, std::size_t k);

/// Conditional-unit mask of a guided-dropout model for a topology given in branch indices.
Eigen::VectorXd model_mask(const SurrogateModel& model, const Topology& topo);

/// Topology input features: one_hot bits, the one_var line id, or nothing.
Eigen::VectorXd topology_features(const SurrogateModel& model, const Topology& topo);

struct ForwardCache {
    Eigen::MatrixXd x;       // inputs, columns are samples
    Eigen::MatrixXd pre_prod, pre_load, enc;
    Eigen::MatrixXd shared_in, pre_shared;
    Eigen::MatrixXd pre_cond, mask;
    Eigen::MatrixXd hidden;  // [shared; masked conditional]
    Eigen::MatrixXd output;
};

/// Batched forward pass in standardized space. Columns of `x` are samples.
ForwardCache forward(const SurrogateModel& model, const Eigen::MatrixXd& x, const std::vector<Topology>& topos);

Eigen::VectorXd forward(const SurrogateModel& model, const Eigen::VectorXd& x, const Topology& topo);

struct Batch {
    Eigen::MatrixXd x;  // scaled inputs, n_inputs x B
    std::vector<Topology> topos;
    Eigen::MatrixXd y;  // scaled targets, n_branch x B
};

struct LossAndGrads {
    double loss = 0.0;
    Parameters grads;
};

LossAndGrads loss_and_grads(const SurrogateModel& model, const Batch& batch);

struct AdamState {
    Parameters m;
    Parameters v;
    std::uint64_t t = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam(const Parameters& params, double lr);

void adam_step(AdamState& state, Parameters& params, const Parameters& grads);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr = 3e-4;
    std::uint64_t seed = 1;
    std::size_t patience = 20;

    bool operator==(const TrainConfig&) const = default;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double monitor = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const EpochStats&) const = default;
};

struct LearningCurve {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Scaled training matrices built from dataset records with the model's scalers.
struct TrainingData {
    Eigen::MatrixXd x;
    std::vector<Topology> topos;
    Eigen::MatrixXd y;

    std::size_t size() const noexcept { return static_cast<std::size_t>(x.cols()); }
};

/// Raw [p_gen; p_load] feature columns of the records.
Eigen::MatrixXd raw_features(const Dataset& ds);
/// Raw label columns (amps) of the records.
Eigen::MatrixXd raw_targets(const Dataset& ds);
std::vector<Topology> record_topologies(const Dataset& ds);

/// Fits both scalers of the model on `train` only.
void fit_model_scalers(SurrogateModel& model, const Dataset& train);

TrainingData make_training_data(const SurrogateModel& model, const Dataset& ds);

/// Called after every epoch with the current weights; its value lands in EpochStats::monitor.
using EpochMonitor = std::function<double(const SurrogateModel&)>;

struct TrainResult {
    SurrogateModel model;
    LearningCurve curve;
};

/// Mini-batch Adam on MSE with best-validation weight retention and patience.
TrainResult train(SurrogateModel model, const TrainingData& train_set, const TrainingData& val_set,
                  const TrainConfig& cfg, const EpochMonitor& monitor = {});

double mse(const SurrogateModel& model, const TrainingData& data);

/// Amps per branch for raw (unscaled) injections; disconnected branches are 0.
FlowVector predict_amps(const SurrogateModel& model, const Eigen::VectorXd& x_raw, const Topology& topo);

/// Batched variant: columns of `x_raw` are samples, result is n_branch x B.
Eigen::MatrixXd predict_amps(const SurrogateModel& model, const Eigen::MatrixXd& x_raw,
                             const std::vector<Topology>& topos);

/// Single-precision inference engine. Conditional blocks are evaluated only
/// for the lines a sample actually disconnects.
class FastInference {
public:
    explicit FastInference(const SurrogateModel& model);

    /// Columns of `x_raw` are samples; writes n_branch x B amps into `out`.
    void predict(const Eigen::MatrixXf& x_raw, const std::vector<Topology>& topos, Eigen::MatrixXf& out) const;

private:
    struct Layer {
        Eigen::MatrixXf weight;
        Eigen::VectorXf bias;
    };
    const SurrogateModel* model_;
    Eigen::VectorXf x_mean_, x_inv_std_, y_mean_, y_std_;
    Layer enc_prod_, enc_load_, shared_, cond_, dec_;
    std::vector<std::ptrdiff_t> block_of_line_;
    float slope_;
};

void save_model(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_model(const std::filesystem::path& path);
std::string model_to_json(const SurrogateModel& model);
SurrogateModel model_from_json(std::string_view text);

}  // namespace gdpf
