// SPDX-License-Identifier: Apache-2.0

#include "crrn/graph.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace crrn {

std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::SE: return "SE";
        case Direction::SW: return "SW";
        case Direction::NW: return "NW";
        case Direction::NE: return "NE";
    }
    return "?";
}

std::size_t block_extent(std::size_t extent, std::size_t parts) {
    return (extent + parts - 1) / parts;
}

BlockGrid partition(const Tensor& image, std::size_t grid_rows, std::size_t grid_cols) {
    if (grid_rows == 0 || grid_cols == 0) throw std::invalid_argument("partition: grid extents must be >= 1");
    if (image.rank() != 3 || image.size() == 0) {
        throw DimensionError("partition: expected a non-empty [c x H x W] image, got " + shape_string(image.shape()));
    }
    BlockGrid grid;
    grid.rows = grid_rows;
    grid.cols = grid_cols;
    grid.channels = image.dim(0);
    grid.image_h = image.dim(1);
    grid.image_w = image.dim(2);
    grid.block_h = block_extent(grid.image_h, grid_rows);
    grid.block_w = block_extent(grid.image_w, grid_cols);
    grid.blocks.reserve(grid.vertex_count());

    for (std::size_t r = 0; r < grid_rows; ++r) {
        for (std::size_t c = 0; c < grid_cols; ++c) {
            Tensor block({grid.block_dim()});
            std::size_t idx = 0;
            for (std::size_t ch = 0; ch < grid.channels; ++ch) {
                for (std::size_t y = 0; y < grid.block_h; ++y) {
                    for (std::size_t x = 0; x < grid.block_w; ++x, ++idx) {
                        const std::size_t iy = r * grid.block_h + y;
                        const std::size_t ix = c * grid.block_w + x;
                        if (iy < grid.image_h && ix < grid.image_w) block[idx] = image.at(ch, iy, ix);
                    }
                }
            }
            grid.blocks.push_back(std::move(block));
        }
    }
    return grid;
}

Tensor reassemble(const BlockGrid& grid) {
    Tensor image({grid.channels, grid.padded_h(), grid.padded_w()});
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const Tensor& block = grid.blocks.at(r * grid.cols + c);
            std::size_t idx = 0;
            for (std::size_t ch = 0; ch < grid.channels; ++ch) {
                for (std::size_t y = 0; y < grid.block_h; ++y) {
                    for (std::size_t x = 0; x < grid.block_w; ++x, ++idx) {
                        image.at(ch, r * grid.block_h + y, c * grid.block_w + x) = block[idx];
                    }
                }
            }
        }
    }
    return image;
}

// ---------------------------------------------------------------------------

std::size_t DagPlan::edge_count() const noexcept {
    std::size_t n = 0;
    for (const auto& preds : predecessors) n += preds.size();
    return n;
}

std::vector<bool> DagPlan::ancestors(std::size_t v) const {
    std::vector<bool> seen(vertex_count(), false);
    std::vector<std::size_t> stack(predecessors.at(v).begin(), predecessors.at(v).end());
    while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        if (seen[u]) continue;
        seen[u] = true;
        for (std::size_t p : predecessors[u]) {
            if (!seen[p]) stack.push_back(p);
        }
    }
    return seen;
}

DagPlan build_dag(std::size_t rows, std::size_t cols, Direction direction, Connectivity connectivity) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("build_dag: grid extents must be >= 1");

    // Sweep signs: +1 walks top->bottom / left->right.
    const int row_step = (direction == Direction::SE || direction == Direction::SW) ? 1 : -1;
    const int col_step = (direction == Direction::SE || direction == Direction::NE) ? 1 : -1;
    const auto irows = static_cast<long>(rows);
    const auto icols = static_cast<long>(cols);

    DagPlan plan;
    plan.direction = direction;
    plan.rows = rows;
    plan.cols = cols;
    plan.predecessors.resize(rows * cols);
    plan.successors.resize(rows * cols);
    plan.wavefronts.resize(rows + cols - 1);

    const auto index = [cols](long r, long c) { return static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c); };

    for (long i = 0; i < irows; ++i) {
        const long r = row_step > 0 ? i : irows - 1 - i;
        for (long j = 0; j < icols; ++j) {
            const long c = col_step > 0 ? j : icols - 1 - j;
            const std::size_t v = index(r, c);
            plan.order.push_back(v);
            plan.wavefronts[static_cast<std::size_t>(i + j)].push_back(v);

            const long pr = r - row_step;
            const long pc = c - col_step;
            const bool row_ok = pr >= 0 && pr < irows;
            const bool col_ok = pc >= 0 && pc < icols;
            auto& preds = plan.predecessors[v];
            if (connectivity == Connectivity::Eight && row_ok && col_ok) preds.push_back(index(pr, pc));
            if (row_ok) preds.push_back(index(pr, c));
            if (col_ok) preds.push_back(index(r, pc));
        }
    }
    for (std::size_t v : plan.order) {
        for (std::size_t p : plan.predecessors[v]) plan.successors[p].push_back(v);
    }
    return plan;
}

DagPlans build_dags(std::size_t rows, std::size_t cols, Connectivity connectivity) {
    return {build_dag(rows, cols, Direction::SE, connectivity), build_dag(rows, cols, Direction::SW, connectivity),
            build_dag(rows, cols, Direction::NW, connectivity), build_dag(rows, cols, Direction::NE, connectivity)};
}

void validate(const DagPlan& plan) {
    const std::size_t n = plan.vertex_count();
    if (plan.successors.size() != n || plan.order.size() != n) throw std::logic_error("DagPlan: inconsistent sizes");

    std::vector<std::size_t> position(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = plan.order[i];
        if (v >= n || position[v] != n) throw std::logic_error("DagPlan: order is not a permutation");
        position[v] = i;
    }
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t p : plan.predecessors[v]) {
            if (position[p] >= position[v]) {
                throw std::logic_error("DagPlan: predecessor " + std::to_string(p) + " does not precede " + std::to_string(v));
            }
            const auto& succ = plan.successors[p];
            if (std::find(succ.begin(), succ.end(), v) == succ.end()) {
                throw std::logic_error("DagPlan: edge " + std::to_string(p) + "->" + std::to_string(v) + " missing from successors");
            }
        }
        for (std::size_t s : plan.successors[v]) {
            const auto& preds = plan.predecessors[s];
            if (std::find(preds.begin(), preds.end(), v) == preds.end()) {
                throw std::logic_error("DagPlan: edge " + std::to_string(v) + "->" + std::to_string(s) + " missing from predecessors");
            }
        }
    }

    std::vector<std::size_t> level(n, n);
    std::size_t covered = 0;
    for (std::size_t w = 0; w < plan.wavefronts.size(); ++w) {
        for (std::size_t v : plan.wavefronts[w]) {
            if (v >= n || level[v] != n) throw std::logic_error("DagPlan: wavefronts do not partition the vertices");
            level[v] = w;
            ++covered;
        }
    }
    if (covered != n) throw std::logic_error("DagPlan: wavefronts do not cover every vertex");
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t p : plan.predecessors[v]) {
            if (level[p] >= level[v]) throw std::logic_error("DagPlan: wavefront " + std::to_string(level[v]) + " is not an anti-chain");
        }
    }
}

}  // namespace crrn
