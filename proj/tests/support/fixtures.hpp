// SPDX-License-Identifier: Apache-2.0
//
// Glue between the plain-loop oracles and library types.

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "crrn/model.hpp"
#include "crrn/tensor.hpp"
#include "oracles.hpp"

namespace fixtures {

inline crrn::Tensor tensor_from(const oracle::Vec& v, crrn::Shape shape) { return crrn::Tensor(std::move(shape), v); }

inline oracle::Vec vec_of(const crrn::Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline crrn::Tensor random_tensor(crrn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = crrn::shape_volume(shape);
    return crrn::Tensor(std::move(shape), oracle::random_vec(n, rng, lo, hi));
}

inline crrn::ModelConfig tiny_config(std::size_t mid = 2) {
    crrn::ModelConfig c;
    c.image_h = 2;
    c.image_w = 2;
    c.channels = 1;
    c.grid_rows = 2;
    c.grid_cols = 2;
    c.hidden_dim = 4;
    c.residual_mid_channels = mid;
    c.num_classes = 2;
    return c;
}

inline crrn::CrrnParams to_params(const oracle::TinyParams& p) {
    crrn::CrrnParams params = crrn::CrrnParams::zeros(tiny_config(p.mid));
    auto& w = params.sets[0];
    const std::size_t m = p.mid;
    w.U = tensor_from(p.U, {4, 1});
    w.W = tensor_from(p.W, {4, 4});
    w.V = tensor_from(p.V, {2, 4});
    w.b = tensor_from(p.b, {4});
    w.res.conv1_kernels = tensor_from(p.conv1_k, {m, 1, 3, 3});
    w.res.conv1_bias = tensor_from(p.conv1_b, {m});
    w.res.bn1_scale = tensor_from(p.bn1_scale, {m});
    w.res.bn1_shift = tensor_from(p.bn1_shift, {m});
    w.res.conv2_kernels = tensor_from(p.conv2_k, {1, m, 3, 3});
    w.res.conv2_bias = tensor_from(p.conv2_b, {1});
    w.res.bn2_scale = tensor_from(p.bn2_scale, {1});
    w.res.bn2_shift = tensor_from(p.bn2_shift, {1});
    params.b_o = tensor_from(p.b_o, {2});
    return params;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("crrn_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
