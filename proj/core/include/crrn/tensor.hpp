// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors and the small set of numeric kernels the network needs.
// Every kernel with learnable inputs has an explicit backward counterpart.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crrn {

/// Raised whenever operand shapes do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Row-major dense array of doubles. All extents are >= 1 and the element
/// count always equals the product of the extents.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    /// Same data viewed under a different shape of equal volume.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double value);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double factor);
    /// this += alpha * other
    void axpy(double alpha, const Tensor& other);

    bool all_finite() const noexcept;
    double max_abs() const noexcept;
    double squared_norm() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor lhs, const Tensor& rhs);
Tensor operator-(Tensor lhs, const Tensor& rhs);
Tensor operator*(double factor, Tensor t);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * x[k] -> [m]
Tensor matvec(const Tensor& a, const Tensor& x);
/// a[m x k]^T * y[m] -> [k]
Tensor matvec_transposed(const Tensor& a, const Tensor& y);
/// acc[m x k] += alpha * u[m] v[k]^T
void add_outer(Tensor& acc, const Tensor& u, const Tensor& v, double alpha = 1.0);

// ---------------------------------------------------------------------------
// Activations

Tensor relu(const Tensor& x);
/// Passes upstream where x > 0; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

/// Row-wise softmax of an [n x C] matrix, C >= 2, with max subtraction.
Tensor softmax_rows(const Tensor& logits);

// ---------------------------------------------------------------------------
// Convolution: stride 1, zero "same" padding, cross-correlation.

/// input [c_in x H x W], kernels [c_out x c_in x k x k] (k odd), bias [c_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

struct Conv2dGrads {
    Tensor input;
    Tensor kernels;
    Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Batch normalization over (B, H, W) per channel of a [B x c x H x W] tensor.

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class Mode { Train, Eval };

struct RunningStats {
    RunningStats() = default;
    explicit RunningStats(std::size_t channels);

    Tensor mean;
    Tensor var;
    bool initialized = false;

    /// The first update copies the batch statistics; later ones blend with momentum 0.9.
    void update(const Tensor& batch_mean, const Tensor& batch_var);

    friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

struct BatchNormCache {
    Mode mode = Mode::Train;
    Tensor normalized;  // x_hat
    Tensor mean;        // statistics actually used
    Tensor var;
    Tensor inv_std;
    Tensor scale;
};

struct BatchNormResult {
    Tensor output;
    BatchNormCache cache;
};

/// Train mode normalizes with batch statistics and, if `stats` is non-null,
/// folds them into the running estimates. Eval mode requires initialized `stats`.
BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& scale, const Tensor& shift,
                                  Mode mode, RunningStats* stats);

/// Eval-mode normalization with fixed running statistics.
BatchNormResult batchnorm_inference(const Tensor& x, const Tensor& scale, const Tensor& shift,
                                    const RunningStats& stats);

struct BatchNormGrads {
    Tensor input;
    Tensor scale;
    Tensor shift;
};

/// Train-mode caches differentiate through the batch statistics.
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& upstream);

}  // namespace crrn
