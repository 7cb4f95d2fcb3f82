// SPDX-License-Identifier: Apache-2.0
//
// Model hyperparameters and learnable state.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crrn/graph.hpp"
#include "crrn/tensor.hpp"

namespace crrn {

struct ModelConfig {
    std::size_t image_h = 64;
    std::size_t image_w = 64;
    std::size_t channels = 1;
    std::size_t grid_rows = 8;
    std::size_t grid_cols = 8;
    std::size_t hidden_dim = 256;
    std::size_t residual_mid_channels = 4;
    std::size_t kernel_size = 3;
    std::size_t num_classes = 2;
    Connectivity connectivity = Connectivity::Eight;
    /// Four independent parameter sets instead of one shared set.
    bool per_direction_params = false;
    /// Fuse the residual outputs h instead of the intermediate hiddens.
    bool fuse_post_residual = false;
    /// Eval-mode batch norm reads the running statistics. Off by default:
    /// eval then normalizes each vertex map with its own statistics, exactly
    /// as training does.
    bool eval_running_stats = false;

    std::size_t block_h() const { return block_extent(image_h, grid_rows); }
    std::size_t block_w() const { return block_extent(image_w, grid_cols); }
    std::size_t block_pixels() const { return block_h() * block_w(); }
    std::size_t input_dim() const { return block_pixels() * channels; }
    std::size_t output_dim() const { return block_pixels() * num_classes; }
    /// Side of the square map the hidden vector is reshaped to.
    std::size_t hidden_side() const;
    std::size_t direction_sets() const { return per_direction_params ? 4 : 1; }

    /// Throws std::invalid_argument on any inconsistent field.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// conv(1 -> m) -> BN -> ReLU -> conv(m -> 1) -> BN
struct ResidualWeights {
    Tensor conv1_kernels;  // [m x 1 x k x k]
    Tensor conv1_bias;     // [m]
    Tensor bn1_scale;      // [m]
    Tensor bn1_shift;      // [m]
    Tensor conv2_kernels;  // [1 x m x k x k]
    Tensor conv2_bias;     // [1]
    Tensor bn2_scale;      // [1]
    Tensor bn2_shift;      // [1]

    friend bool operator==(const ResidualWeights&, const ResidualWeights&) = default;
};

struct ResidualStats {
    RunningStats bn1;
    RunningStats bn2;

    friend bool operator==(const ResidualStats&, const ResidualStats&) = default;
};

/// theta_1 = {U, W, V, b} and theta_2 for one direction set.
struct DirectionWeights {
    Tensor U;  // [hidden x input]
    Tensor W;  // [hidden x hidden]
    Tensor V;  // [output x hidden]
    Tensor b;  // [hidden]
    ResidualWeights res;

    friend bool operator==(const DirectionWeights&, const DirectionWeights&) = default;
};

/// Zero-valued weights of the right shapes (BN scales are zero too).
DirectionWeights zero_direction_weights(const ModelConfig& config);

/// Visits each tensor of a direction set with a stable name.
template <class Weights, class Fn>
void visit_direction(Weights& w, const std::string& prefix, Fn&& fn) {
    fn(prefix + "U", w.U);
    fn(prefix + "W", w.W);
    fn(prefix + "V", w.V);
    fn(prefix + "b", w.b);
    fn(prefix + "res.conv1.kernels", w.res.conv1_kernels);
    fn(prefix + "res.conv1.bias", w.res.conv1_bias);
    fn(prefix + "res.bn1.scale", w.res.bn1_scale);
    fn(prefix + "res.bn1.shift", w.res.bn1_shift);
    fn(prefix + "res.conv2.kernels", w.res.conv2_kernels);
    fn(prefix + "res.conv2.bias", w.res.conv2_bias);
    fn(prefix + "res.bn2.scale", w.res.bn2_scale);
    fn(prefix + "res.bn2.shift", w.res.bn2_shift);
}

std::string direction_prefix(std::size_t set_index, std::size_t set_count);

struct CrrnParams {
    ModelConfig config;
    std::vector<DirectionWeights> sets;  // 1 shared, or one per direction in kDirections order
    Tensor b_o;                          // [output]
    std::vector<ResidualStats> stats;    // parallel to `sets`

    /// Zero weights, BN scales one, uninitialized running statistics.
    static CrrnParams zeros(const ModelConfig& config);

    std::size_t set_index(Direction d) const {
        return config.per_direction_params ? static_cast<std::size_t>(d) : 0;
    }
    const DirectionWeights& weights(Direction d) const { return sets[set_index(d)]; }
    const ResidualStats& residual_stats(Direction d) const { return stats[set_index(d)]; }

    /// Learnable tensors in a fixed order: every set's tensors, then "b_o".
    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        for (std::size_t i = 0; i < sets.size(); ++i) visit_direction(sets[i], direction_prefix(i, sets.size()), fn);
        fn(std::string("b_o"), b_o);
    }
    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        for (std::size_t i = 0; i < sets.size(); ++i) visit_direction(sets[i], direction_prefix(i, sets.size()), fn);
        fn(std::string("b_o"), b_o);
    }

    bool all_finite() const;
    std::size_t scalar_count() const;

    friend bool operator==(const CrrnParams&, const CrrnParams&) = default;
};

}  // namespace crrn
