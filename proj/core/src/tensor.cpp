// SPDX-License-Identifier: Apache-2.0

#include "crrn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crrn {

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_volume(const Shape& shape) {
    if (shape.empty()) return 0;
    std::size_t volume = 1;
    for (std::size_t extent : shape) volume *= extent;
    return volume;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape(shape_);
    if (data_.size() != shape_volume(shape_)) {
        throw DimensionError("tensor of shape " + shape_string(shape_) + " cannot hold " +
                             std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const& {
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape(*this, other, "subtract");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double factor) {
    for (double& v : data_) v *= factor;
    return *this;
}

void Tensor::axpy(double alpha, const Tensor& other) {
    require_same_shape(*this, other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Tensor::squared_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
}

Tensor operator+(Tensor lhs, const Tensor& rhs) {
    lhs += rhs;
    return lhs;
}

Tensor operator-(Tensor lhs, const Tensor& rhs) {
    lhs -= rhs;
    return lhs;
}

Tensor operator*(double factor, Tensor t) {
    t *= factor;
    return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || a.dim(1) != x.size()) {
        throw DimensionError("matvec: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(x.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1);
    Tensor out({m});
    const double* pa = a.data();
    const double* px = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = pa + i * k;
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += row[j] * px[j];
        out[i] = s;
    }
    return out;
}

Tensor matvec_transposed(const Tensor& a, const Tensor& y) {
    if (a.rank() != 2 || a.dim(0) != y.size()) {
        throw DimensionError("matvec_transposed: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(y.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1);
    Tensor out({k});
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double yi = y[i];
        if (yi == 0.0) continue;
        const double* row = pa + i * k;
        for (std::size_t j = 0; j < k; ++j) po[j] += row[j] * yi;
    }
    return out;
}

void add_outer(Tensor& acc, const Tensor& u, const Tensor& v, double alpha) {
    if (acc.rank() != 2 || acc.dim(0) != u.size() || acc.dim(1) != v.size()) {
        throw DimensionError("add_outer: accumulator " + shape_string(acc.shape()) + " does not match " +
                             shape_string(u.shape()) + " x " + shape_string(v.shape()));
    }
    const std::size_t m = u.size(), k = v.size();
    double* pacc = acc.data();
    const double* pv = v.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double ui = alpha * u[i];
        if (ui == 0.0) continue;
        double* row = pacc + i * k;
        for (std::size_t j = 0; j < k; ++j) row[j] += ui * pv[j];
    }
}

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    require_same_shape(x, upstream, "relu_backward");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("softmax_rows: expected a matrix, got " + shape_string(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (c < 2) throw DimensionError("softmax_rows: need at least two classes");
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * c;
        double* dst = out.data() + i * c;
        const double top = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            dst[j] = std::exp(row[j] - top);
            total += dst[j];
        }
        for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
    std::size_t c_in, c_out, height, width, k, pad;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels) {
    if (input.rank() != 3) throw DimensionError("conv2d: input must be [c x H x W], got " + shape_string(input.shape()));
    if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
        throw DimensionError("conv2d: kernels must be [c_out x c_in x k x k], got " + shape_string(kernels.shape()));
    }
    if (kernels.dim(2) % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(kernels.dim(2)));
    if (kernels.dim(1) != input.dim(0)) {
        throw DimensionError("conv2d: kernel channels " + shape_string(kernels.shape()) + " do not match input " +
                             shape_string(input.shape()));
    }
    return {input.dim(0), kernels.dim(0), input.dim(1), input.dim(2), kernels.dim(2), kernels.dim(2) / 2};
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    const ConvGeometry g = conv_geometry(input, kernels);
    if (bias.size() != g.c_out) {
        throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(g.c_out) +
                             " output channels");
    }
    Tensor out({g.c_out, g.height, g.width});
    const auto h = static_cast<std::ptrdiff_t>(g.height);
    const auto w = static_cast<std::ptrdiff_t>(g.width);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t o = 0; o < g.c_out; ++o) {
        for (std::ptrdiff_t y = 0; y < h; ++y) {
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                double s = bias[o];
                for (std::size_t i = 0; i < g.c_in; ++i) {
                    const double* kern = kernels.data() + (o * g.c_in + i) * g.k * g.k;
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(ky) - pad;
                        if (yy < 0 || yy >= h) continue;
                        for (std::size_t kx = 0; kx < g.k; ++kx) {
                            const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(kx) - pad;
                            if (xx < 0 || xx >= w) continue;
                            s += kern[ky * g.k + kx] * input.at(i, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        }
                    }
                }
                out.at(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s;
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream) {
    const ConvGeometry g = conv_geometry(input, kernels);
    const Shape expected{g.c_out, g.height, g.width};
    if (upstream.shape() != expected) {
        throw DimensionError("conv2d_backward: upstream " + shape_string(upstream.shape()) + " expected " +
                             shape_string(expected));
    }
    Conv2dGrads grads{Tensor(input.shape()), Tensor(kernels.shape()), Tensor({g.c_out})};
    const auto h = static_cast<std::ptrdiff_t>(g.height);
    const auto w = static_cast<std::ptrdiff_t>(g.width);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t o = 0; o < g.c_out; ++o) {
        for (std::ptrdiff_t y = 0; y < h; ++y) {
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                const double up = upstream.at(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                grads.bias[o] += up;
                if (up == 0.0) continue;
                for (std::size_t i = 0; i < g.c_in; ++i) {
                    const std::size_t kbase = (o * g.c_in + i) * g.k * g.k;
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(ky) - pad;
                        if (yy < 0 || yy >= h) continue;
                        for (std::size_t kx = 0; kx < g.k; ++kx) {
                            const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(kx) - pad;
                            if (xx < 0 || xx >= w) continue;
                            const auto uy = static_cast<std::size_t>(yy);
                            const auto ux = static_cast<std::size_t>(xx);
                            grads.kernels[kbase + ky * g.k + kx] += up * input.at(i, uy, ux);
                            grads.input.at(i, uy, ux) += up * kernels[kbase + ky * g.k + kx];
                        }
                    }
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------

RunningStats::RunningStats(std::size_t channels) : mean({channels}, 0.0), var({channels}, 1.0) {}

void RunningStats::update(const Tensor& batch_mean, const Tensor& batch_var) {
    require_same_shape(mean, batch_mean, "running mean update");
    require_same_shape(var, batch_var, "running variance update");
    if (!initialized) {
        mean = batch_mean;
        var = batch_var;
        initialized = true;
        return;
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] = kBatchNormMomentum * mean[i] + (1.0 - kBatchNormMomentum) * batch_mean[i];
        var[i] = kBatchNormMomentum * var[i] + (1.0 - kBatchNormMomentum) * batch_var[i];
    }
}

namespace {

std::size_t batchnorm_channels(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    if (x.rank() != 4) throw DimensionError("batchnorm: expected [B x c x H x W], got " + shape_string(x.shape()));
    const std::size_t channels = x.dim(1);
    if (scale.size() != channels || shift.size() != channels) {
        throw DimensionError("batchnorm: scale/shift " + shape_string(scale.shape()) + "/" + shape_string(shift.shape()) +
                             " do not match " + std::to_string(channels) + " channels");
    }
    return channels;
}

BatchNormResult normalize(const Tensor& x, const Tensor& scale, const Tensor& shift, Mode mode, Tensor mean,
                          Tensor var) {
    const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    BatchNormResult result;
    BatchNormCache& cache = result.cache;
    cache.mode = mode;
    cache.scale = scale;
    cache.mean = std::move(mean);
    cache.var = std::move(var);
    cache.inv_std = Tensor({channels});
    for (std::size_t c = 0; c < channels; ++c) cache.inv_std[c] = 1.0 / std::sqrt(cache.var[c] + kBatchNormEpsilon);

    cache.normalized = Tensor(x.shape());
    result.output = Tensor(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (x[base + i] - cache.mean[c]) * cache.inv_std[c];
                cache.normalized[base + i] = xh;
                result.output[base + i] = scale[c] * xh + shift[c];
            }
        }
    }
    return result;
}

}  // namespace

BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& scale, const Tensor& shift, Mode mode,
                                  RunningStats* stats) {
    const std::size_t channels = batchnorm_channels(x, scale, shift);
    if (mode == Mode::Eval) {
        if (stats == nullptr) throw std::logic_error("batchnorm: eval mode requires running statistics");
        return batchnorm_inference(x, scale, shift, *stats);
    }

    const std::size_t batch = x.dim(0), plane = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(batch * plane);
    Tensor mean({channels}), var({channels});
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* p = x.data() + (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double m = sum / count;
        double sq = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* p = x.data() + (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    if (stats != nullptr) stats->update(mean, var);
    return normalize(x, scale, shift, Mode::Train, std::move(mean), std::move(var));
}

BatchNormResult batchnorm_inference(const Tensor& x, const Tensor& scale, const Tensor& shift,
                                    const RunningStats& stats) {
    const std::size_t channels = batchnorm_channels(x, scale, shift);
    if (!stats.initialized) throw std::logic_error("batchnorm: eval mode requires initialized running statistics");
    if (stats.mean.size() != channels || stats.var.size() != channels) {
        throw DimensionError("batchnorm: running statistics " + shape_string(stats.mean.shape()) + " do not match " +
                             std::to_string(channels) + " channels");
    }
    return normalize(x, scale, shift, Mode::Eval, stats.mean, stats.var);
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& upstream) {
    require_same_shape(cache.normalized, upstream, "batchnorm_backward");
    const Shape& shape = upstream.shape();
    const std::size_t batch = shape[0], channels = shape[1], plane = shape[2] * shape[3];
    const double count = static_cast<double>(batch * plane);

    BatchNormGrads grads{Tensor(shape), Tensor({channels}), Tensor({channels})};
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += upstream[base + i];
                sum_dy_xh += upstream[base + i] * cache.normalized[base + i];
            }
        }
        grads.shift[c] = sum_dy;
        grads.scale[c] = sum_dy_xh;

        const double gamma = cache.scale[c];
        const double inv_std = cache.inv_std[c];
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                if (cache.mode == Mode::Train) {
                    // d x = gamma / sigma * (dy - mean(dy) - x_hat * mean(dy * x_hat))
                    grads.input[base + i] = gamma * inv_std *
                                            (upstream[base + i] - sum_dy / count -
                                             cache.normalized[base + i] * sum_dy_xh / count);
                } else {
                    grads.input[base + i] = gamma * inv_std * upstream[base + i];
                }
            }
        }
    }
    return grads;
}

}  // namespace crrn
