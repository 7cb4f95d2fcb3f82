// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace crrn {

/// Pixels carrying this label take no part in the loss or the metrics.
inline constexpr std::int32_t kIgnoreLabel = 255;

/// Row-major H x W map of class indices.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), data(h * w, fill) {}

    std::int32_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::int32_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Labels of each block's pixels (row-major within the block), in vertex order.
using BlockLabels = std::vector<std::vector<std::int32_t>>;

/// Splits labels the same way `partition` splits the image; padding is ignored.
BlockLabels partition_labels(const LabelMap& labels, std::size_t grid_rows, std::size_t grid_cols);

}  // namespace crrn
