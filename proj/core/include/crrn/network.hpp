// SPDX-License-Identifier: Apache-2.0
//
// Forward computation of the contextual recurrent residual network.
//
// For every direction d the vertices are visited in topological order:
//
//   a_d(v)    = U x(v) + sum_{p in pred_d(v)} W h_d(p) + b
//   hhat_d(v) = relu(a_d(v))
//   h_d(v)    = relu(F(hhat_d(v)) + hhat_d(v))
//
// where F is conv -> BN -> ReLU -> conv -> BN on the hidden vector reshaped
// to a single-channel square map. The four directions are fused per vertex:
//
//   o(v) = sum_d V hhat_d(v) + b_o
//
// and o(v) is read as one row of C logits per pixel of the block.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "crrn/graph.hpp"
#include "crrn/labels.hpp"
#include "crrn/model.hpp"
#include "crrn/tensor.hpp"

namespace crrn {

struct ContextResult {
    Tensor pre_activation;  // a
    Tensor hidden_hat;      // relu(a)
};

/// An empty predecessor list contributes the zero vector.
ContextResult context_step(const Tensor& x, std::span<const Tensor* const> predecessor_hiddens,
                           const DirectionWeights& weights);

struct ResidualCache {
    BatchNormCache bn1;
    Tensor relu1;  // [m x s x s], post-activation of the first BN
    BatchNormCache bn2;
};

struct ResidualResult {
    Tensor hidden;  // [s*s]
    ResidualCache cache;
};

/// Train mode normalizes with the statistics of this one map and leaves
/// `stats` untouched (see commit_running_stats). Eval mode needs `stats`.
ResidualResult residual_step(const Tensor& hidden_hat, const ResidualWeights& weights, Mode mode,
                             const ResidualStats* stats);

/// `hiddens` are indexed like kDirections. Returns [block_pixels x C] logits.
Tensor fuse_outputs(const std::array<const Tensor*, 4>& hiddens, const CrrnParams& params);

struct VertexRecord {
    Tensor pre_activation;
    Tensor hidden_hat;
    ResidualCache residual;
    Tensor hidden;
};

/// Everything the backward pass needs from one forward pass.
struct ForwardTape {
    Mode mode = Mode::Train;
    std::vector<Tensor> inputs;                         // x(v)
    std::array<std::vector<VertexRecord>, 4> records;  // [direction][vertex]

    bool complete() const;
};

struct ForwardResult {
    ForwardTape tape;
    std::vector<Tensor> logits;  // per vertex, [block_pixels x C]
};

DagPlans plans_for(const ModelConfig& config);

/// `threads` > 1 evaluates the vertices of each wavefront concurrently; the
/// result is bit-identical for every thread count. Eval mode differs from
/// train mode only when config.eval_running_stats is set.
ForwardResult forward_image(const BlockGrid& grid, const DagPlans& plans, const CrrnParams& params, Mode mode,
                            int threads = 1);

/// Folds the per-vertex batch statistics of a train-mode tape into the
/// running statistics, in direction order then topological order.
void commit_running_stats(const ForwardTape& tape, const DagPlans& plans, CrrnParams& params);

struct LossResult {
    double loss = 0.0;
    std::vector<Tensor> logit_grads;  // shaped like the logits
    std::size_t labeled_pixels = 0;
};

/// Mean negative log-likelihood over the non-ignored pixels of one image.
/// Throws std::out_of_range on labels outside [0, C) other than kIgnoreLabel.
LossResult nll_loss(const std::vector<Tensor>& logits, const BlockLabels& labels);

struct PredictionMap {
    Tensor probabilities;  // [C x H x W]
    LabelMap labels;       // argmax, lowest class index on ties
};

/// Eval-mode forward pass over a whole image, cropped back to its original extents.
PredictionMap infer(const Tensor& image, const CrrnParams& params, int threads = 1);

}  // namespace crrn
