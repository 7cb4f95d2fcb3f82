// SPDX-License-Identifier: Apache-2.0
//
// Reference computations written with plain loops over std::vector so they
// share no code with the library under test.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Vec v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// a[m x k] * b[k x n]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
    Vec c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

// Cross-correlation, zero padding, stride 1, odd k.
inline Vec conv2d(const Vec& in, std::size_t ci, std::size_t h, std::size_t w, const Vec& kern, std::size_t co,
                  std::size_t k, const Vec& bias) {
    const long r = static_cast<long>(k / 2);
    Vec out(co * h * w, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = bias[o];
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = static_cast<long>(y) + static_cast<long>(ky) - r;
                            const long ix = static_cast<long>(x) + static_cast<long>(kx) - r;
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            acc += in[(c * h + iy) * w + ix] * kern[((o * ci + c) * k + ky) * k + kx];
                        }
                out[(o * h + y) * w + x] = acc;
            }
    return out;
}

// Per-channel normalization of [b x c x hw] with biased variance.
inline Vec batchnorm(const Vec& in, std::size_t b, std::size_t c, std::size_t hw, const Vec& scale, const Vec& shift,
                     double eps = 1e-5) {
    Vec out(in.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t i = 0; i < hw; ++i) mean += in[(n * c + ch) * hw + i];
        mean /= static_cast<double>(b * hw);
        double var = 0.0;
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = in[(n * c + ch) * hw + i] - mean;
                var += d * d;
            }
        var /= static_cast<double>(b * hw);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t at = (n * c + ch) * hw + i;
                out[at] = scale[ch] * (in[at] - mean) * inv + shift[ch];
            }
    }
    return out;
}

// d f / d x_i by central differences, for every i.
inline Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double eps = 1e-6) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double plus = f(x);
        x[i] = keep - eps;
        const double minus = f(x);
        x[i] = keep;
        g[i] = (plus - minus) / (2.0 * eps);
    }
    return g;
}

inline double max_rel_err(const Vec& a, const Vec& b, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Hand-unrolled network: 2x2 grid of 1x1x1 blocks, hidden 4 (2x2 map), C = 2,
// one shared parameter set, ReLU(F(hhat) + hhat) residual with m mid channels.

struct TinyParams {
    static constexpr std::size_t kHidden = 4;
    static constexpr std::size_t kClasses = 2;
    std::size_t mid = 2;
    Vec U;  // [4 x 1]
    Vec W;  // [4 x 4]
    Vec V;  // [2 x 4]
    Vec b;  // [4]
    Vec b_o;  // [2]
    Vec conv1_k, conv1_b, bn1_scale, bn1_shift;  // [m x 1 x 3 x 3], [m], [m], [m]
    Vec conv2_k, conv2_b, bn2_scale, bn2_shift;  // [1 x m x 3 x 3], [1], [1], [1]
};

inline TinyParams random_tiny_params(std::mt19937_64& rng, std::size_t mid = 2) {
    TinyParams p;
    p.mid = mid;
    p.U = random_vec(4, rng);
    p.W = random_vec(16, rng, -0.5, 0.5);
    p.V = random_vec(8, rng);
    p.b = random_vec(4, rng, 0.0, 0.5);
    p.b_o = random_vec(2, rng);
    p.conv1_k = random_vec(mid * 9, rng);
    p.conv1_b = random_vec(mid, rng);
    p.bn1_scale = random_vec(mid, rng, 0.5, 1.5);
    p.bn1_shift = random_vec(mid, rng);
    p.conv2_k = random_vec(mid * 9, rng);
    p.conv2_b = random_vec(1, rng);
    p.bn2_scale = random_vec(1, rng, 0.5, 1.5);
    p.bn2_shift = random_vec(1, rng);
    return p;
}

struct TinyResult {
    std::array<std::array<double, 2>, 4> logits;  // [vertex][class]
    double loss;                                  // mean NLL over the 4 pixels
    std::array<std::array<Vec, 4>, 4> hidden_hat;  // [direction SE,SW,NW,NE][vertex]
};

inline Vec tiny_residual(const Vec& hhat, const TinyParams& p) {
    // Map is 2x2; a 3x3 same-padded window centred on (y, x) touches (y+dy, x+dx).
    const std::size_t m = p.mid;
    Vec z1(m * 4);
    for (std::size_t o = 0; o < m; ++o)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                double acc = p.conv1_b[o];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int iy = y + dy, ix = x + dx;
                        if (iy < 0 || iy > 1 || ix < 0 || ix > 1) continue;
                        acc += hhat[iy * 2 + ix] * p.conv1_k[o * 9 + (dy + 1) * 3 + (dx + 1)];
                    }
                z1[o * 4 + y * 2 + x] = acc;
            }
    Vec r1(m * 4);
    for (std::size_t o = 0; o < m; ++o) {
        const double mean = (z1[o * 4] + z1[o * 4 + 1] + z1[o * 4 + 2] + z1[o * 4 + 3]) / 4.0;
        double var = 0.0;
        for (int i = 0; i < 4; ++i) var += (z1[o * 4 + i] - mean) * (z1[o * 4 + i] - mean);
        var /= 4.0;
        for (int i = 0; i < 4; ++i) {
            const double v = p.bn1_scale[o] * (z1[o * 4 + i] - mean) / std::sqrt(var + 1e-5) + p.bn1_shift[o];
            r1[o * 4 + i] = v > 0.0 ? v : 0.0;
        }
    }
    Vec z2(4);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            double acc = p.conv2_b[0];
            for (std::size_t c = 0; c < m; ++c)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int iy = y + dy, ix = x + dx;
                        if (iy < 0 || iy > 1 || ix < 0 || ix > 1) continue;
                        acc += r1[c * 4 + iy * 2 + ix] * p.conv2_k[c * 9 + (dy + 1) * 3 + (dx + 1)];
                    }
            z2[y * 2 + x] = acc;
        }
    const double mean = (z2[0] + z2[1] + z2[2] + z2[3]) / 4.0;
    double var = 0.0;
    for (int i = 0; i < 4; ++i) var += (z2[i] - mean) * (z2[i] - mean);
    var /= 4.0;
    Vec h(4);
    for (int i = 0; i < 4; ++i) {
        const double f = p.bn2_scale[0] * (z2[i] - mean) / std::sqrt(var + 1e-5) + p.bn2_shift[0];
        h[i] = std::max(0.0, f + hhat[i]);
    }
    return h;
}

inline Vec tiny_context(double x, const std::vector<const Vec*>& preds, const TinyParams& p) {
    Vec a(4);
    for (int i = 0; i < 4; ++i) {
        a[i] = p.U[i] * x + p.b[i];
        for (const Vec* h : preds)
            for (int j = 0; j < 4; ++j) a[i] += p.W[i * 4 + j] * (*h)[j];
    }
    for (auto& v : a) v = std::max(0.0, v);
    return a;
}

// Vertices: 0 = (0,0), 1 = (0,1), 2 = (1,0), 3 = (1,1). labels[v] in {0, 1}.
inline TinyResult tiny_forward(const std::array<double, 4>& x, const std::array<int, 4>& labels, const TinyParams& p) {
    TinyResult r{};
    // Each direction: sources first, then the predecessors written out by hand.
    struct Step {
        int v;
        std::vector<int> preds;
    };
    const std::array<std::vector<Step>, 4> schedule = {{
        {{0, {}}, {1, {0}}, {2, {0}}, {3, {0, 1, 2}}},  // SE
        {{1, {}}, {0, {1}}, {3, {1}}, {2, {1, 0, 3}}},  // SW
        {{3, {}}, {2, {3}}, {1, {3}}, {0, {3, 2, 1}}},  // NW
        {{2, {}}, {3, {2}}, {0, {2}}, {1, {2, 3, 0}}},  // NE
    }};
    for (int d = 0; d < 4; ++d) {
        std::array<Vec, 4> h;
        for (const Step& s : schedule[d]) {
            std::vector<const Vec*> preds;
            for (int q : s.preds) preds.push_back(&h[q]);
            Vec hhat = tiny_context(x[s.v], preds, p);
            h[s.v] = tiny_residual(hhat, p);
            r.hidden_hat[d][s.v] = std::move(hhat);
        }
    }
    double loss = 0.0;
    for (int v = 0; v < 4; ++v) {
        for (int c = 0; c < 2; ++c) {
            double acc = p.b_o[c];
            for (int d = 0; d < 4; ++d)
                for (int j = 0; j < 4; ++j) acc += p.V[c * 4 + j] * r.hidden_hat[d][v][j];
            r.logits[v][c] = acc;
        }
        const double top = std::max(r.logits[v][0], r.logits[v][1]);
        const double lse = top + std::log(std::exp(r.logits[v][0] - top) + std::exp(r.logits[v][1] - top));
        loss += lse - r.logits[v][labels[v]];
    }
    r.loss = loss / 4.0;
    return r;
}

}  // namespace oracle
