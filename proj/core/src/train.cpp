// SPDX-License-Identifier: Apache-2.0

#include "crrn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "crrn/network.hpp"

namespace crrn {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) fail("decay_rate must be in (0, 1]");
    if (decay_every_epochs == 0) fail("decay_every_epochs must be >= 1");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) fail("grad_clip_norm must be > 0");
    if (grid_rows == 0 || grid_cols == 0) fail("grid extents must be >= 1");
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(hidden_dim))));
    if (hidden_dim == 0 || side * side != hidden_dim) fail("hidden_dim must be a perfect square");
    if (residual_mid_channels == 0) fail("residual_mid_channels must be >= 1");
    if (num_classes == 1 || num_classes > 255) fail("num_classes must be 0 (infer) or in [2, 255)");
    if (threads < 1) fail("threads must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"learning_rate", c.learning_rate},
                       {"decay_rate", c.decay_rate},
                       {"decay_every_epochs", c.decay_every_epochs},
                       {"decay_once", c.decay_once},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"grad_clip_norm", c.grad_clip_norm ? nlohmann::json(*c.grad_clip_norm) : nlohmann::json()},
                       {"grid_rows", c.grid_rows},
                       {"grid_cols", c.grid_cols},
                       {"hidden_dim", c.hidden_dim},
                       {"residual_mid_channels", c.residual_mid_channels},
                       {"num_classes", c.num_classes},
                       {"connectivity", static_cast<int>(c.connectivity)},
                       {"per_direction_params", c.per_direction_params},
                       {"fuse_post_residual", c.fuse_post_residual},
                       {"eval_running_stats", c.eval_running_stats},
                       {"no_recurrence", c.no_recurrence},
                       {"flip", c.flip},
                       {"threads", c.threads},
                       {"validation_fraction", c.validation_fraction},
                       {"record_timing", c.record_timing}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay_rate = j.value("decay_rate", c.decay_rate);
    c.decay_every_epochs = j.value("decay_every_epochs", c.decay_every_epochs);
    c.decay_once = j.value("decay_once", c.decay_once);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("grad_clip_norm") && !j.at("grad_clip_norm").is_null()) c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    c.grid_rows = j.value("grid_rows", c.grid_rows);
    c.grid_cols = j.value("grid_cols", c.grid_cols);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.residual_mid_channels = j.value("residual_mid_channels", c.residual_mid_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    const int conn = j.value("connectivity", 8);
    if (conn != 4 && conn != 8) throw std::invalid_argument("train config: connectivity must be 4 or 8");
    c.connectivity = static_cast<Connectivity>(conn);
    c.per_direction_params = j.value("per_direction_params", c.per_direction_params);
    c.fuse_post_residual = j.value("fuse_post_residual", c.fuse_post_residual);
    c.eval_running_stats = j.value("eval_running_stats", c.eval_running_stats);
    c.no_recurrence = j.value("no_recurrence", c.no_recurrence);
    c.flip = j.value("flip", c.flip);
    c.threads = j.value("threads", c.threads);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.record_timing = j.value("record_timing", c.record_timing);
}

ModelConfig model_config_for(const TrainConfig& config, std::size_t image_h, std::size_t image_w, std::size_t channels,
                             std::size_t num_classes) {
    ModelConfig m;
    m.image_h = image_h;
    m.image_w = image_w;
    m.channels = channels;
    m.grid_rows = config.grid_rows;
    m.grid_cols = config.grid_cols;
    m.hidden_dim = config.hidden_dim;
    m.residual_mid_channels = config.residual_mid_channels;
    m.num_classes = num_classes;
    m.connectivity = config.connectivity;
    m.per_direction_params = config.per_direction_params;
    m.fuse_post_residual = config.fuse_post_residual;
    m.eval_running_stats = config.eval_running_stats;
    m.validate();
    return m;
}

double scheduled_learning_rate(const TrainConfig& config, std::size_t epochs_completed) {
    std::size_t decays = epochs_completed / config.decay_every_epochs;
    if (config.decay_once) decays = std::min<std::size_t>(decays, 1);
    return config.learning_rate * std::pow(config.decay_rate, static_cast<double>(decays));
}

CrrnParams init_params(const ModelConfig& config, std::uint64_t seed) {
    CrrnParams params = CrrnParams::zeros(config);
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](Tensor& t, std::size_t fan_in, std::size_t fan_out, double gain) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& v : t.values()) v = gain * dist(rng);
    };
    const std::size_t h = config.hidden_dim, m = config.residual_mid_channels, kk = config.kernel_size * config.kernel_size;
    for (auto& set : params.sets) {
        glorot(set.U, config.input_dim(), h, 1.0);
        glorot(set.W, h, h, 1.0 / 3.0);
        glorot(set.V, h, config.output_dim(), 1.0);
        glorot(set.res.conv1_kernels, kk, m * kk, 1.0);
        glorot(set.res.conv2_kernels, m * kk, kk, 1.0);
    }
    return params;
}

namespace {

struct NamedTensor {
    std::string name;
    const Tensor* tensor;
};

std::vector<NamedTensor> named(const Gradients& grads) {
    std::vector<NamedTensor> out;
    grads.for_each_tensor([&out](const std::string& name, const Tensor& t) { out.push_back({name, &t}); });
    return out;
}

}  // namespace

void sgd_step(CrrnParams& params, const Gradients& grads, double learning_rate, std::optional<double> clip) {
    const auto g = named(grads);
    for (const auto& [name, tensor] : g) {
        if (!tensor->all_finite()) throw NonFiniteError("non-finite gradient in tensor " + name);
    }
    double scale = learning_rate;
    if (clip) {
        const double norm = std::sqrt(grads.squared_norm());
        if (norm > *clip) scale *= *clip / norm;
    }
    std::size_t i = 0;
    params.for_each_tensor([&](const std::string& name, Tensor& t) {
        if (i >= g.size() || g[i].name != name || g[i].tensor->shape() != t.shape()) {
            throw DimensionError("sgd_step: gradient layout does not match parameter " + name);
        }
        t.axpy(-scale, *g[i].tensor);
        ++i;
    });
    if (i != g.size()) throw DimensionError("sgd_step: gradient has extra tensors");
}

ImageGradient image_gradient(const CrrnParams& params, const DagPlans& plans, const LabeledImage& sample, int threads) {
    const ModelConfig& cfg = params.config;
    const BlockGrid grid = partition(sample.image, cfg.grid_rows, cfg.grid_cols);
    ForwardResult fwd = forward_image(grid, plans, params, Mode::Train, threads);
    const LossResult loss = nll_loss(fwd.logits, partition_labels(sample.labels, cfg.grid_rows, cfg.grid_cols));
    if (!std::isfinite(loss.loss)) throw NonFiniteError("non-finite loss on image " + sample.id);
    Gradients grads = backward_image(fwd.tape, plans, params, loss.logit_grads, threads);
    return {loss.loss, std::move(grads), std::move(fwd.tape)};
}

TrainState initial_state(const TrainConfig& config, const ModelConfig& model) {
    config.validate();
    TrainState state{init_params(model, config.seed), 0, config.learning_rate, std::mt19937_64(config.seed), -1.0};
    if (config.no_recurrence) {
        for (auto& set : state.params.sets) set.W.fill(0.0);
    }
    return state;
}

double train_step(TrainState& state, std::span<const LabeledImage* const> batch, const TrainConfig& config) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const DagPlans plans = plans_for(state.params.config);
    Gradients total = Gradients::zeros_like(state.params);
    std::vector<ForwardTape> tapes;
    tapes.reserve(batch.size());
    double loss = 0.0;
    for (const LabeledImage* sample : batch) {
        ImageGradient ig = image_gradient(state.params, plans, *sample, config.threads);
        loss += ig.loss;
        total += ig.grads;
        tapes.push_back(std::move(ig.tape));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total *= inv;
    if (config.no_recurrence) {
        for (auto& set : total.sets) set.W.fill(0.0);
    }
    sgd_step(state.params, total, state.learning_rate, config.grad_clip_norm);
    for (const ForwardTape& tape : tapes) commit_running_stats(tape, plans, state.params);
    return loss * inv;
}

ConfusionMatrix evaluate(const CrrnParams& params, std::span<const LabeledImage> samples, int threads) {
    ConfusionMatrix cm(params.config.num_classes);
    for (const LabeledImage& s : samples) cm.add(s.labels, infer(s.image, params, threads).labels);
    return cm;
}

DataSplit split_dataset(std::size_t n, double fraction, std::uint64_t seed) {
    DataSplit split;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t held = 0;
    if (n >= 2 && fraction > 0.0) {
        held = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))), 1, n - 1);
    }
    split.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(held));
    split.validation.assign(order.end() - static_cast<std::ptrdiff_t>(held), order.end());
    return split;
}

void to_json(nlohmann::json& j, const EpochLog& log) {
    j = nlohmann::json{{"epoch", log.epoch},           {"lr", log.lr},         {"train_loss", log.train_loss},
                       {"val_pa", log.val_pa},         {"val_ca", log.val_ca}, {"seconds", log.seconds}};
}

void train_loop(TrainState& state, const std::vector<LabeledImage>& dataset, const TrainConfig& config,
                const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train_loop: empty dataset");
    const DataSplit split = split_dataset(dataset.size(), config.validation_fraction, config.seed);
    std::vector<LabeledImage> validation;
    for (std::size_t i : split.validation.empty() ? split.train : split.validation) validation.push_back(dataset[i]);

    while (state.epoch < config.epochs) {
        const auto start = std::chrono::steady_clock::now();
        // Each epoch's order depends only on state.rng, so a resumed run replays it.
        std::vector<std::size_t> order = split.train;
        std::shuffle(order.begin(), order.end(), state.rng);
        double loss_sum = 0.0;
        for (std::size_t pos = 0; pos < order.size(); pos += config.batch_size) {
            const std::size_t end = std::min(order.size(), pos + config.batch_size);
            std::vector<LabeledImage> flipped;
            flipped.reserve(end - pos);
            std::vector<const LabeledImage*> batch;
            for (std::size_t k = pos; k < end; ++k) {
                const LabeledImage& sample = dataset[order[k]];
                if (config.flip && std::bernoulli_distribution(0.5)(state.rng)) {
                    flipped.push_back(flip_horizontal(sample));
                    batch.push_back(&flipped.back());
                } else {
                    batch.push_back(&sample);
                }
            }
            loss_sum += train_step(state, batch, config) * static_cast<double>(batch.size());
        }
        ++state.epoch;
        state.learning_rate = scheduled_learning_rate(config, state.epoch);

        const Metrics m = compute_metrics(evaluate(state.params, validation, config.threads));
        EpochLog log{state.epoch, state.learning_rate, loss_sum / static_cast<double>(order.size()), m.pa, m.ca, 0.0};
        if (config.record_timing) {
            log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        const bool improved = m.pa > state.best_val_pa;
        if (improved) state.best_val_pa = m.pa;
        if (on_epoch) on_epoch(log, state, improved);
    }
}

std::size_t infer_num_classes(const std::vector<LabeledImage>& dataset) {
    std::int32_t top = 1;
    for (const auto& s : dataset) {
        for (std::int32_t l : s.labels.data) {
            if (l != kIgnoreLabel) top = std::max(top, l);
        }
    }
    return static_cast<std::size_t>(top) + 1;
}

}  // namespace crrn
