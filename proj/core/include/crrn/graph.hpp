// SPDX-License-Identifier: Apache-2.0
//
// Block partitioning of an image and the four directed sweeps over the
// block-neighbourhood graph.

#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "crrn/tensor.hpp"

namespace crrn {

enum class Direction { SE = 0, SW = 1, NW = 2, NE = 3 };

/// Fixed processing order used everywhere directions are iterated.
inline constexpr std::array<Direction, 4> kDirections{Direction::SE, Direction::SW, Direction::NW, Direction::NE};

std::string_view to_string(Direction d);

enum class Connectivity { Four = 4, Eight = 8 };

/// An image cut into rows x cols non-overlapping blocks. Block `r * cols + c`
/// holds its pixels channel-major, then row-major.
struct BlockGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t block_h = 0;
    std::size_t block_w = 0;
    std::size_t channels = 0;
    std::size_t image_h = 0;  // before padding
    std::size_t image_w = 0;
    std::vector<Tensor> blocks;

    std::size_t vertex_count() const noexcept { return rows * cols; }
    std::size_t block_dim() const noexcept { return block_h * block_w * channels; }
    std::size_t block_pixels() const noexcept { return block_h * block_w; }
    std::size_t padded_h() const noexcept { return rows * block_h; }
    std::size_t padded_w() const noexcept { return cols * block_w; }
};

/// Zero-pads `image` [c x H x W] on the bottom/right to multiples of the grid
/// extents, then splits it into blocks.
BlockGrid partition(const Tensor& image, std::size_t grid_rows, std::size_t grid_cols);

/// Inverse of partition: the padded image [c x rows*block_h x cols*block_w].
Tensor reassemble(const BlockGrid& grid);

/// Block extent needed to cover `extent` pixels with `parts` blocks.
std::size_t block_extent(std::size_t extent, std::size_t parts);

/// One orientation of the block graph. Vertex indices are `r * cols + c`.
struct DagPlan {
    Direction direction = Direction::SE;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> order;                      // topological
    std::vector<std::vector<std::size_t>> predecessors;  // per vertex
    std::vector<std::vector<std::size_t>> successors;    // per vertex
    std::vector<std::vector<std::size_t>> wavefronts;    // anti-chains, in dependency order

    std::size_t vertex_count() const noexcept { return predecessors.size(); }
    std::size_t edge_count() const noexcept;

    /// ancestors(v)[u] is true when there is a directed path u -> ... -> v.
    std::vector<bool> ancestors(std::size_t v) const;
};

using DagPlans = std::array<DagPlan, 4>;

/// For SE the predecessors of (r, c) are the in-bounds members of
/// {(r-1, c-1), (r-1, c), (r, c-1)}; SW mirrors columns, NW mirrors both
/// axes and NE mirrors rows. Four-connectivity drops the diagonal.
DagPlan build_dag(std::size_t rows, std::size_t cols, Direction direction,
                  Connectivity connectivity = Connectivity::Eight);

DagPlans build_dags(std::size_t rows, std::size_t cols, Connectivity connectivity = Connectivity::Eight);

/// Throws std::logic_error if the plan's order is not topological, the
/// predecessor/successor sets disagree, or the wavefronts are not anti-chains
/// covering every vertex once.
void validate(const DagPlan& plan);

}  // namespace crrn
