// SPDX-License-Identifier: Apache-2.0

#include "crrn/metrics.hpp"

#include <stdexcept>
#include <string>

namespace crrn {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : classes_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::vector<std::vector<std::uint64_t>>& counts) {
    ConfusionMatrix cm(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != counts.size()) throw std::invalid_argument("ConfusionMatrix: counts must be square");
        for (std::size_t j = 0; j < counts.size(); ++j) cm.add(i, j, counts[i][j]);
    }
    return cm;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
    std::uint64_t sum = 0;
    for (std::size_t j = 0; j < classes_; ++j) sum += count(truth, j);
    return sum;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t sum = 0;
    for (auto c : counts_) sum += c;
    return sum;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
    if (truth >= classes_ || predicted >= classes_) {
        throw std::out_of_range("ConfusionMatrix: class pair (" + std::to_string(truth) + ", " +
                                std::to_string(predicted) + ") outside [0, " + std::to_string(classes_) + ")");
    }
    counts_[truth * classes_ + predicted] += n;
}

void ConfusionMatrix::add(const LabelMap& truth, const LabelMap& predicted) {
    if (truth.height != predicted.height || truth.width != predicted.width) {
        throw std::invalid_argument("ConfusionMatrix: truth and prediction extents differ");
    }
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        if (truth.data[i] == kIgnoreLabel) continue;
        if (truth.data[i] < 0 || predicted.data[i] < 0) throw std::out_of_range("ConfusionMatrix: negative label");
        add(static_cast<std::size_t>(truth.data[i]), static_cast<std::size_t>(predicted.data[i]));
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: confusion matrix has no evaluated pixels");
    Metrics m;
    std::uint64_t correct = 0;
    double class_sum = 0.0;
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        correct += cm.count(i, i);
        const std::uint64_t t = cm.row_total(i);
        if (t == 0) continue;
        const double acc = static_cast<double>(cm.count(i, i)) / static_cast<double>(t);
        m.per_class.push_back({i, acc, t});
        class_sum += acc;
    }
    m.pa = static_cast<double>(correct) / static_cast<double>(total);
    m.ca = class_sum / static_cast<double>(m.per_class.size());
    return m;
}

nlohmann::json metrics_report(const ConfusionMatrix& cm) {
    const Metrics m = compute_metrics(cm);
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& c : m.per_class) per_class.push_back({{"class", c.label}, {"accuracy", c.accuracy}, {"pixels", c.pixels}});
    nlohmann::json matrix = nlohmann::json::array();
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < cm.num_classes(); ++j) row.push_back(cm.count(i, j));
        matrix.push_back(std::move(row));
    }
    return {{"pa", m.pa}, {"ca", m.ca}, {"per_class", std::move(per_class)}, {"confusion_matrix", std::move(matrix)}};
}

}  // namespace crrn
