// SPDX-License-Identifier: Apache-2.0
//
// Initialization, plain SGD and the per-image training loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crrn/backprop.hpp"
#include "crrn/data.hpp"
#include "crrn/metrics.hpp"
#include "crrn/model.hpp"

namespace crrn {

struct TrainConfig {
    double learning_rate = 1e-3;
    double decay_rate = 0.95;
    std::size_t decay_every_epochs = 30;
    /// Apply decay_rate a single time once decay_every_epochs have passed.
    bool decay_once = false;
    std::size_t epochs = 1;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip_norm;
    std::size_t grid_rows = 8;
    std::size_t grid_cols = 8;
    std::size_t hidden_dim = 256;
    std::size_t residual_mid_channels = 4;
    /// 0 takes one more than the largest label found in the training data.
    std::size_t num_classes = 0;
    Connectivity connectivity = Connectivity::Eight;
    bool per_direction_params = false;
    bool fuse_post_residual = false;
    bool eval_running_stats = false;
    /// Keep W at zero so no block sees its neighbours (context ablation).
    bool no_recurrence = false;
    bool flip = false;
    int threads = 1;
    double validation_fraction = 0.1;
    /// When false every log record carries seconds = 0.
    bool record_timing = true;

    /// Throws std::invalid_argument.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Model hyperparameters for images of the given extents.
ModelConfig model_config_for(const TrainConfig& config, std::size_t image_h, std::size_t image_w, std::size_t channels,
                             std::size_t num_classes);

/// Learning rate after `epochs_completed` full epochs.
double scheduled_learning_rate(const TrainConfig& config, std::size_t epochs_completed);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for U, W, V and the
/// convolution kernels, W further scaled by 1/3; biases and BN shifts zero,
/// BN scales one.
CrrnParams init_params(const ModelConfig& config, std::uint64_t seed);

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optionally rescales g to global norm `clip`, then theta -= lr * g.
/// Throws NonFiniteError naming the first non-finite gradient tensor.
void sgd_step(CrrnParams& params, const Gradients& grads, double learning_rate, std::optional<double> clip = {});

struct ImageGradient {
    double loss = 0.0;
    Gradients grads;
    ForwardTape tape;
};

/// Train-mode forward, loss and backward for one image.
ImageGradient image_gradient(const CrrnParams& params, const DagPlans& plans, const LabeledImage& sample, int threads = 1);

struct TrainState {
    CrrnParams params;
    std::size_t epoch = 0;  // completed epochs
    double learning_rate = 0.0;
    std::mt19937_64 rng;
    double best_val_pa = -1.0;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

TrainState initial_state(const TrainConfig& config, const ModelConfig& model);

/// One SGD step on the mean gradient of `batch`. Running statistics are
/// folded in after the step, image by image. Returns the mean batch loss.
/// Throws NonFiniteError naming the image id on a non-finite loss.
double train_step(TrainState& state, std::span<const LabeledImage* const> batch, const TrainConfig& config);

/// Eval-mode confusion matrix over `samples`.
ConfusionMatrix evaluate(const CrrnParams& params, std::span<const LabeledImage> samples, int threads = 1);

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Seeded shuffle; the last `fraction` of it is held out. With fewer than two
/// images nothing is held out and validation reuses the training images.
DataSplit split_dataset(std::size_t n, double fraction, std::uint64_t seed);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;  // rate in force after this epoch
    double train_loss = 0.0;
    double val_pa = 0.0;
    double val_ca = 0.0;
    double seconds = 0.0;
};

void to_json(nlohmann::json& j, const EpochLog& log);

/// Called after every epoch; `improved` marks a new best validation PA.
using EpochCallback = std::function<void(const EpochLog&, const TrainState&, bool improved)>;

/// Trains until state.epoch == config.epochs. Shuffles the training split
/// with state.rng every epoch.
void train_loop(TrainState& state, const std::vector<LabeledImage>& dataset, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

/// Largest label (ignoring kIgnoreLabel) plus one, at least 2.
std::size_t infer_num_classes(const std::vector<LabeledImage>& dataset);

}  // namespace crrn
