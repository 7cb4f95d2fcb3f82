// SPDX-License-Identifier: Apache-2.0

#include "crrn/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "parallel.hpp"

namespace crrn {

BlockLabels partition_labels(const LabelMap& labels, std::size_t grid_rows, std::size_t grid_cols) {
    if (grid_rows == 0 || grid_cols == 0) throw std::invalid_argument("partition_labels: grid extents must be >= 1");
    const std::size_t bh = block_extent(labels.height, grid_rows);
    const std::size_t bw = block_extent(labels.width, grid_cols);
    BlockLabels blocks(grid_rows * grid_cols, std::vector<std::int32_t>(bh * bw, kIgnoreLabel));
    for (std::size_t r = 0; r < grid_rows; ++r) {
        for (std::size_t c = 0; c < grid_cols; ++c) {
            auto& block = blocks[r * grid_cols + c];
            for (std::size_t y = 0; y < bh; ++y) {
                for (std::size_t x = 0; x < bw; ++x) {
                    const std::size_t iy = r * bh + y, ix = c * bw + x;
                    if (iy < labels.height && ix < labels.width) block[y * bw + x] = labels.at(iy, ix);
                }
            }
        }
    }
    return blocks;
}

ContextResult context_step(const Tensor& x, std::span<const Tensor* const> predecessor_hiddens,
                           const DirectionWeights& weights) {
    const std::size_t hidden = weights.W.dim(0);
    Tensor a = matvec(weights.U, x);
    if (!predecessor_hiddens.empty()) {
        Tensor incoming({hidden});
        for (const Tensor* h : predecessor_hiddens) {
            if (h->size() != hidden) {
                throw DimensionError("context_step: predecessor hidden " + shape_string(h->shape()) + " expected [" +
                                     std::to_string(hidden) + "]");
            }
            incoming += *h;
        }
        a += matvec(weights.W, incoming);
    }
    a += weights.b;
    Tensor hat = relu(a);
    return {std::move(a), std::move(hat)};
}

ResidualResult residual_step(const Tensor& hidden_hat, const ResidualWeights& weights, Mode mode,
                             const ResidualStats* stats) {
    const std::size_t n = hidden_hat.size();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw DimensionError("residual_step: hidden size " + std::to_string(n) + " is not a square");
    const std::size_t mid = weights.conv1_kernels.dim(0);
    if (mode == Mode::Eval && stats == nullptr) throw std::logic_error("residual_step: eval mode needs running statistics");

    ResidualResult out;
    const Tensor map = hidden_hat.reshaped({1, side, side});

    Tensor z1 = conv2d(map, weights.conv1_kernels, weights.conv1_bias);
    z1 = std::move(z1).reshaped({1, mid, side, side});
    auto bn1 = mode == Mode::Eval
                   ? batchnorm_inference(z1, weights.bn1_scale, weights.bn1_shift, stats->bn1)
                   : batchnorm_forward(z1, weights.bn1_scale, weights.bn1_shift, Mode::Train, nullptr);
    out.cache.relu1 = relu(bn1.output).reshaped({mid, side, side});
    out.cache.bn1 = std::move(bn1.cache);

    Tensor z2 = conv2d(out.cache.relu1, weights.conv2_kernels, weights.conv2_bias);
    z2 = std::move(z2).reshaped({1, 1, side, side});
    auto bn2 = mode == Mode::Eval
                   ? batchnorm_inference(z2, weights.bn2_scale, weights.bn2_shift, stats->bn2)
                   : batchnorm_forward(z2, weights.bn2_scale, weights.bn2_shift, Mode::Train, nullptr);
    out.cache.bn2 = std::move(bn2.cache);

    Tensor sum = std::move(bn2.output).reshaped({n});
    sum += hidden_hat;
    out.hidden = relu(sum);
    return out;
}

Tensor fuse_outputs(const std::array<const Tensor*, 4>& hiddens, const CrrnParams& params) {
    const ModelConfig& cfg = params.config;
    Tensor o = params.b_o;
    if (!cfg.per_direction_params) {
        Tensor total({cfg.hidden_dim});
        for (const Tensor* h : hiddens) total += *h;
        o += matvec(params.sets[0].V, total);
    } else {
        for (std::size_t d = 0; d < 4; ++d) o += matvec(params.sets[d].V, *hiddens[d]);
    }
    return std::move(o).reshaped({cfg.block_pixels(), cfg.num_classes});
}

bool ForwardTape::complete() const {
    for (const auto& per_direction : records) {
        if (per_direction.size() != inputs.size()) return false;
        for (const VertexRecord& r : per_direction) {
            if (r.hidden.size() == 0 || r.hidden_hat.size() == 0 || r.pre_activation.size() == 0) return false;
        }
    }
    return !inputs.empty();
}

DagPlans plans_for(const ModelConfig& config) {
    return build_dags(config.grid_rows, config.grid_cols, config.connectivity);
}

namespace {

void check_grid(const BlockGrid& grid, const DagPlans& plans, const ModelConfig& cfg) {
    if (grid.rows != cfg.grid_rows || grid.cols != cfg.grid_cols || grid.block_dim() != cfg.input_dim() ||
        grid.block_pixels() != cfg.block_pixels()) {
        throw DimensionError("forward_image: block grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                             " with block size " + std::to_string(grid.block_dim()) +
                             " does not match the model configuration");
    }
    for (const DagPlan& plan : plans) {
        if (plan.vertex_count() != grid.vertex_count()) throw DimensionError("forward_image: plan built for another grid");
    }
}

}  // namespace

ForwardResult forward_image(const BlockGrid& grid, const DagPlans& plans, const CrrnParams& params, Mode mode,
                            int threads) {
    check_grid(grid, plans, params.config);
    const std::size_t n = grid.vertex_count();

    ForwardResult result;
    result.tape.mode = mode;
    result.tape.inputs = grid.blocks;
    // Per-map normalization is the same computation in both modes.
    const Mode norm_mode = mode == Mode::Eval && params.config.eval_running_stats ? Mode::Eval : Mode::Train;

    for (std::size_t d = 0; d < 4; ++d) {
        const DagPlan& plan = plans[d];
        const DirectionWeights& weights = params.weights(kDirections[d]);
        const ResidualStats& stats = params.residual_stats(kDirections[d]);
        auto& records = result.tape.records[d];
        records.assign(n, VertexRecord{});

        for (const auto& wavefront : plan.wavefronts) {
            detail::parallel_for(wavefront.size(), threads, [&](std::size_t i) {
                const std::size_t v = wavefront[i];
                std::vector<const Tensor*> preds;
                preds.reserve(plan.predecessors[v].size());
                for (std::size_t p : plan.predecessors[v]) preds.push_back(&records[p].hidden);

                ContextResult ctx = context_step(grid.blocks[v], preds, weights);
                ResidualResult res = residual_step(ctx.hidden_hat, weights.res, norm_mode, &stats);
                VertexRecord& rec = records[v];
                rec.pre_activation = std::move(ctx.pre_activation);
                rec.hidden_hat = std::move(ctx.hidden_hat);
                rec.residual = std::move(res.cache);
                rec.hidden = std::move(res.hidden);
            });
        }
    }

    result.logits.resize(n);
    const bool post = params.config.fuse_post_residual;
    detail::parallel_for(n, threads, [&](std::size_t v) {
        std::array<const Tensor*, 4> fused{};
        for (std::size_t d = 0; d < 4; ++d) {
            const VertexRecord& rec = result.tape.records[d][v];
            fused[d] = post ? &rec.hidden : &rec.hidden_hat;
        }
        result.logits[v] = fuse_outputs(fused, params);
    });
    return result;
}

void commit_running_stats(const ForwardTape& tape, const DagPlans& plans, CrrnParams& params) {
    if (tape.mode != Mode::Train) return;
    for (std::size_t d = 0; d < 4; ++d) {
        ResidualStats& stats = params.stats[params.set_index(kDirections[d])];
        for (std::size_t v : plans[d].order) {
            const ResidualCache& cache = tape.records[d].at(v).residual;
            stats.bn1.update(cache.bn1.mean, cache.bn1.var);
            stats.bn2.update(cache.bn2.mean, cache.bn2.var);
        }
    }
}

LossResult nll_loss(const std::vector<Tensor>& logits, const BlockLabels& labels) {
    if (logits.size() != labels.size()) {
        throw DimensionError("nll_loss: " + std::to_string(logits.size()) + " logit blocks vs " +
                             std::to_string(labels.size()) + " label blocks");
    }
    LossResult result;
    result.logit_grads.reserve(logits.size());
    double total = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        const Tensor& o = logits[v];
        if (o.rank() != 2 || o.dim(0) != labels[v].size()) {
            throw DimensionError("nll_loss: block " + std::to_string(v) + " logits " + shape_string(o.shape()) +
                                 " vs " + std::to_string(labels[v].size()) + " labels");
        }
        const std::size_t classes = o.dim(1);
        Tensor probs = softmax_rows(o);
        Tensor grad(o.shape());
        for (std::size_t j = 0; j < labels[v].size(); ++j) {
            const std::int32_t label = labels[v][j];
            if (label == kIgnoreLabel) continue;
            if (label < 0 || static_cast<std::size_t>(label) >= classes) {
                throw std::out_of_range("nll_loss: label " + std::to_string(label) + " outside [0, " +
                                        std::to_string(classes) + ")");
            }
            // log-softmax computed directly to keep large margins exact.
            const double* row = o.data() + j * classes;
            double top = row[0];
            for (std::size_t c = 1; c < classes; ++c) top = std::max(top, row[c]);
            double denom = 0.0;
            for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - top);
            total -= row[label] - top - std::log(denom);
            for (std::size_t c = 0; c < classes; ++c) grad.at(j, c) = probs.at(j, c);
            grad.at(j, static_cast<std::size_t>(label)) -= 1.0;
            ++result.labeled_pixels;
        }
        result.logit_grads.push_back(std::move(grad));
    }
    if (result.labeled_pixels > 0) {
        const double scale = 1.0 / static_cast<double>(result.labeled_pixels);
        result.loss = total * scale;
        for (Tensor& g : result.logit_grads) g *= scale;
    }
    return result;
}

PredictionMap infer(const Tensor& image, const CrrnParams& params, int threads) {
    const ModelConfig& cfg = params.config;
    if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_h || image.dim(2) != cfg.image_w) {
        throw DimensionError("infer: image " + shape_string(image.shape()) + " does not match the model's [" +
                             std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_h) + "x" +
                             std::to_string(cfg.image_w) + "]");
    }
    const BlockGrid grid = partition(image, cfg.grid_rows, cfg.grid_cols);
    const ForwardResult fwd = forward_image(grid, plans_for(cfg), params, Mode::Eval, threads);

    const std::size_t classes = cfg.num_classes;
    PredictionMap map{Tensor({classes, cfg.image_h, cfg.image_w}), LabelMap(cfg.image_h, cfg.image_w)};
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const Tensor probs = softmax_rows(fwd.logits[r * grid.cols + c]);
            for (std::size_t y = 0; y < grid.block_h; ++y) {
                for (std::size_t x = 0; x < grid.block_w; ++x) {
                    const std::size_t iy = r * grid.block_h + y, ix = c * grid.block_w + x;
                    if (iy >= cfg.image_h || ix >= cfg.image_w) continue;
                    const std::size_t row = y * grid.block_w + x;
                    std::size_t best = 0;
                    for (std::size_t k = 0; k < classes; ++k) {
                        map.probabilities.at(k, iy, ix) = probs.at(row, k);
                        if (probs.at(row, k) > probs.at(row, best)) best = k;
                    }
                    map.labels.at(iy, ix) = static_cast<std::int32_t>(best);
                }
            }
        }
    }
    return map;
}

}  // namespace crrn
