// SPDX-License-Identifier: Apache-2.0

#include "crrn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace crrn {

std::size_t ModelConfig::hidden_side() const {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(hidden_dim))));
    return side;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (image_h == 0 || image_w == 0 || channels == 0) fail("image extents and channels must be >= 1");
    if (grid_rows == 0 || grid_cols == 0) fail("grid extents must be >= 1");
    if (grid_rows > image_h || grid_cols > image_w) fail("grid is finer than the image");
    if (hidden_dim == 0 || hidden_side() * hidden_side() != hidden_dim) {
        fail("hidden_dim must be a perfect square, got " + std::to_string(hidden_dim));
    }
    if (residual_mid_channels == 0) fail("residual_mid_channels must be >= 1");
    if (kernel_size % 2 == 0) fail("kernel_size must be odd");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (num_classes > 255) fail("num_classes must be < 255 (255 is the ignore label)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"image_h", c.image_h},
                       {"image_w", c.image_w},
                       {"channels", c.channels},
                       {"grid_rows", c.grid_rows},
                       {"grid_cols", c.grid_cols},
                       {"hidden_dim", c.hidden_dim},
                       {"residual_mid_channels", c.residual_mid_channels},
                       {"kernel_size", c.kernel_size},
                       {"num_classes", c.num_classes},
                       {"connectivity", static_cast<int>(c.connectivity)},
                       {"per_direction_params", c.per_direction_params},
                       {"fuse_post_residual", c.fuse_post_residual},
                       {"eval_running_stats", c.eval_running_stats}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("image_h").get_to(c.image_h);
    j.at("image_w").get_to(c.image_w);
    j.at("channels").get_to(c.channels);
    j.at("grid_rows").get_to(c.grid_rows);
    j.at("grid_cols").get_to(c.grid_cols);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("residual_mid_channels").get_to(c.residual_mid_channels);
    j.at("kernel_size").get_to(c.kernel_size);
    j.at("num_classes").get_to(c.num_classes);
    const int conn = j.at("connectivity").get<int>();
    if (conn != 4 && conn != 8) throw std::invalid_argument("model config: connectivity must be 4 or 8");
    c.connectivity = conn == 4 ? Connectivity::Four : Connectivity::Eight;
    j.at("per_direction_params").get_to(c.per_direction_params);
    j.at("fuse_post_residual").get_to(c.fuse_post_residual);
    c.eval_running_stats = j.value("eval_running_stats", false);
}

DirectionWeights zero_direction_weights(const ModelConfig& config) {
    const std::size_t h = config.hidden_dim, m = config.residual_mid_channels, k = config.kernel_size;
    DirectionWeights w;
    w.U = Tensor({h, config.input_dim()});
    w.W = Tensor({h, h});
    w.V = Tensor({config.output_dim(), h});
    w.b = Tensor({h});
    w.res.conv1_kernels = Tensor({m, 1, k, k});
    w.res.conv1_bias = Tensor({m});
    w.res.bn1_scale = Tensor({m});
    w.res.bn1_shift = Tensor({m});
    w.res.conv2_kernels = Tensor({1, m, k, k});
    w.res.conv2_bias = Tensor({1});
    w.res.bn2_scale = Tensor({1});
    w.res.bn2_shift = Tensor({1});
    return w;
}

std::string direction_prefix(std::size_t set_index, std::size_t set_count) {
    if (set_count == 1) return "";
    return std::string(to_string(kDirections.at(set_index))) + ".";
}

CrrnParams CrrnParams::zeros(const ModelConfig& config) {
    config.validate();
    CrrnParams p;
    p.config = config;
    for (std::size_t i = 0; i < config.direction_sets(); ++i) {
        DirectionWeights w = zero_direction_weights(config);
        w.res.bn1_scale.fill(1.0);
        w.res.bn2_scale.fill(1.0);
        p.sets.push_back(std::move(w));
        p.stats.push_back(ResidualStats{RunningStats(config.residual_mid_channels), RunningStats(1)});
    }
    p.b_o = Tensor({config.output_dim()});
    return p;
}

bool CrrnParams::all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
}

std::size_t CrrnParams::scalar_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

}  // namespace crrn
