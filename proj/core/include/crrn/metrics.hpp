// SPDX-License-Identifier: Apache-2.0
//
// Per-pixel accuracy (PA) and average per-class accuracy (CA):
//
//   PA = sum_i n_ii / sum_i t_i
//   CA = mean over classes with t_i > 0 of n_ii / t_i
//
// where n_ij counts pixels of true class i predicted as j and t_i = sum_j n_ij.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "crrn/labels.hpp"

namespace crrn {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);
    /// Row-major C x C counts.
    static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& counts);

    std::size_t num_classes() const { return classes_; }
    std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
    std::uint64_t row_total(std::size_t truth) const;
    std::uint64_t total() const;

    void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
    /// Skips pixels whose truth is kIgnoreLabel; throws on any other out-of-range label.
    void add(const LabelMap& truth, const LabelMap& predicted);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct ClassAccuracy {
    std::size_t label = 0;
    double accuracy = 0.0;
    std::uint64_t pixels = 0;
};

struct Metrics {
    double pa = 0.0;
    double ca = 0.0;
    std::vector<ClassAccuracy> per_class;  // present classes only
};

/// Throws std::invalid_argument on a matrix without any counted pixel.
Metrics compute_metrics(const ConfusionMatrix& cm);

/// {pa, ca, per_class: [{class, accuracy, pixels}], confusion_matrix}
nlohmann::json metrics_report(const ConfusionMatrix& cm);

}  // namespace crrn
