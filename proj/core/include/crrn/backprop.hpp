// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode pass over the four direction DAGs and a central-difference
// gradient checker for the whole network.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crrn/graph.hpp"
#include "crrn/labels.hpp"
#include "crrn/model.hpp"
#include "crrn/network.hpp"

namespace crrn {

/// One gradient tensor per learnable tensor of CrrnParams, same names and shapes.
struct Gradients {
    std::vector<DirectionWeights> sets;
    Tensor b_o;

    static Gradients zeros_like(const CrrnParams& params);

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

    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double factor);
    bool all_finite() const;
    double squared_norm() const;
};

/// Optional per-vertex view into the backward pass, indexed [direction][vertex].
struct BackwardTrace {
    std::array<std::vector<Tensor>, 4> hidden_grads;      // dL/dh
    std::array<std::vector<Tensor>, 4> hidden_hat_grads;  // dL/dhhat
    std::array<std::vector<std::size_t>, 4> successor_contributions;
};

/// Processes each direction's vertices in reverse topological order.
///   dhhat(v) = V^T do(v) + (dh/dhhat)^T dh(v)
///   dh(v)    = sum_{k in succ(v)} W^T (dhhat(k) * relu'(a(k)))
/// Directions are accumulated SE, SW, NW, NE; vertices in reverse order.
/// The result does not depend on `threads`.
Gradients backward_image(const ForwardTape& tape, const DagPlans& plans, const CrrnParams& params,
                         const std::vector<Tensor>& logit_grads, int threads = 1, BackwardTrace* trace = nullptr);

struct TensorCheck {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose perturbation crossed a ReLU kink
    bool pass = false;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double tolerance = 0.0;
    double epsilon = 0.0;

    bool passed() const;
    std::string to_text() const;
    /// One JSON object per line: {name, max_rel_err, pass, checked, skipped}.
    std::string to_jsonl() const;
};

inline constexpr double kGradCheckEpsilon = 1e-6;
/// Relative errors are taken against max(|analytic|, |numeric|, this floor).
inline constexpr double kGradCheckFloor = 1e-3;

/// One labelled image used as the scalar objective of a gradient check.
struct GradCheckSample {
    Tensor image;
    LabelMap labels;
};

/// Random image in [0, 1) and random labels (a few ignored) for `config`.
GradCheckSample make_grad_check_sample(const ModelConfig& config, std::uint64_t seed);

/// Compares backward_image against (L(theta + eps) - L(theta - eps)) / (2 eps)
/// for every scalar, using train-mode batch norm. Coordinates whose
/// perturbation flips any ReLU are skipped and counted.
GradCheckReport grad_check(const CrrnParams& params, const GradCheckSample& sample, double tolerance,
                           double epsilon = kGradCheckEpsilon);

/// Fresh initialization from `seed` plus a random sample.
GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, double tolerance);

}  // namespace crrn
