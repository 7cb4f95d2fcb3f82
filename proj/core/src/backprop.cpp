// SPDX-License-Identifier: Apache-2.0

#include "crrn/backprop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "crrn/train.hpp"
#include "parallel.hpp"

namespace crrn {

Gradients Gradients::zeros_like(const CrrnParams& params) {
    Gradients g;
    for (std::size_t i = 0; i < params.sets.size(); ++i) g.sets.push_back(zero_direction_weights(params.config));
    g.b_o = Tensor(params.b_o.shape());
    return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
    if (sets.size() != other.sets.size()) throw DimensionError("Gradients: mismatched direction sets");
    std::vector<const Tensor*> rhs;
    other.for_each_tensor([&](const std::string&, const Tensor& t) { rhs.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor([&](const std::string&, Tensor& t) { t += *rhs[i++]; });
    return *this;
}

Gradients& Gradients::operator*=(double factor) {
    for_each_tensor([&](const std::string&, Tensor& t) { t *= factor; });
    return *this;
}

bool Gradients::all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
}

double Gradients::squared_norm() const {
    double s = 0.0;
    for_each_tensor([&](const std::string&, const Tensor& t) { s += t.squared_norm(); });
    return s;
}

namespace {

void add_residual(ResidualWeights& acc, const ResidualWeights& g) {
    acc.conv1_kernels += g.conv1_kernels;
    acc.conv1_bias += g.conv1_bias;
    acc.bn1_scale += g.bn1_scale;
    acc.bn1_shift += g.bn1_shift;
    acc.conv2_kernels += g.conv2_kernels;
    acc.conv2_bias += g.conv2_bias;
    acc.bn2_scale += g.bn2_scale;
    acc.bn2_shift += g.bn2_shift;
}

struct VertexGrads {
    Tensor gated;  // dhhat * relu'(a)
    ResidualWeights residual;
};

}  // namespace

Gradients backward_image(const ForwardTape& tape, const DagPlans& plans, const CrrnParams& params,
                         const std::vector<Tensor>& logit_grads, int threads, BackwardTrace* trace) {
    if (!tape.complete()) throw std::logic_error("backward_image: forward tape is incomplete");
    const ModelConfig& cfg = params.config;
    const std::size_t n = tape.inputs.size();
    if (logit_grads.size() != n) {
        throw DimensionError("backward_image: " + std::to_string(logit_grads.size()) + " logit gradients for " +
                             std::to_string(n) + " vertices");
    }
    const std::size_t hidden = cfg.hidden_dim, side = cfg.hidden_side(), mid = cfg.residual_mid_channels;
    const bool post = cfg.fuse_post_residual;

    std::vector<Tensor> d_out(n);
    for (std::size_t v = 0; v < n; ++v) {
        if (logit_grads[v].size() != cfg.output_dim()) {
            throw DimensionError("backward_image: logit gradient " + shape_string(logit_grads[v].shape()) +
                                 " does not match output size " + std::to_string(cfg.output_dim()));
        }
        d_out[v] = logit_grads[v].reshaped({cfg.output_dim()});
    }

    Gradients grads = Gradients::zeros_like(params);
    for (std::size_t v = 0; v < n; ++v) grads.b_o += d_out[v];

    for (std::size_t d = 0; d < 4; ++d) {
        const DagPlan& plan = plans[d];
        const DirectionWeights& w = params.weights(kDirections[d]);
        DirectionWeights& g = grads.sets[params.set_index(kDirections[d])];
        const auto& records = tape.records[d];
        std::vector<VertexGrads> local(n);
        if (trace != nullptr) {
            trace->hidden_grads[d].assign(n, Tensor());
            trace->hidden_hat_grads[d].assign(n, Tensor());
            trace->successor_contributions[d].assign(n, 0);
        }

        for (auto wf = plan.wavefronts.rbegin(); wf != plan.wavefronts.rend(); ++wf) {
            const auto& wavefront = *wf;
            detail::parallel_for(wavefront.size(), threads, [&](std::size_t i) {
                const std::size_t v = wavefront[i];
                const VertexRecord& rec = records[v];

                Tensor dh({hidden});
                for (std::size_t k : plan.successors[v]) dh += matvec_transposed(w.W, local[k].gated);
                if (post) dh += matvec_transposed(w.V, d_out[v]);

                // Residual block, last layer first.
                const Tensor ds = relu_backward(rec.hidden, dh);
                const BatchNormGrads bn2 = batchnorm_backward(rec.residual.bn2, ds.reshaped({1, 1, side, side}));
                const Conv2dGrads conv2 =
                    conv2d_backward(rec.residual.relu1, w.res.conv2_kernels, bn2.input.reshaped({1, side, side}));
                const Tensor dy1 = relu_backward(rec.residual.relu1, conv2.input);
                const BatchNormGrads bn1 = batchnorm_backward(rec.residual.bn1, dy1.reshaped({1, mid, side, side}));
                const Conv2dGrads conv1 = conv2d_backward(rec.hidden_hat.reshaped({1, side, side}), w.res.conv1_kernels,
                                                          bn1.input.reshaped({mid, side, side}));

                Tensor dhat = ds;
                dhat += conv1.input.reshaped({hidden});
                if (!post) dhat += matvec_transposed(w.V, d_out[v]);

                VertexGrads& out = local[v];
                out.gated = relu_backward(rec.pre_activation, dhat);
                out.residual = ResidualWeights{conv1.kernels, conv1.bias, bn1.scale,   bn1.shift,
                                               conv2.kernels, conv2.bias, bn2.scale, bn2.shift};
                if (trace != nullptr) {
                    trace->successor_contributions[d][v] = plan.successors[v].size();
                    trace->hidden_grads[d][v] = std::move(dh);
                    trace->hidden_hat_grads[d][v] = std::move(dhat);
                }
            });
        }

        // Parameter accumulation: each row owns its slice, vertices in reverse topological order.
        const std::size_t input_dim = cfg.input_dim();
        detail::parallel_for(hidden, threads, [&](std::size_t row) {
            double* u_row = g.U.data() + row * input_dim;
            double* w_row = g.W.data() + row * hidden;
            for (auto it = plan.order.rbegin(); it != plan.order.rend(); ++it) {
                const std::size_t v = *it;
                const double gi = local[v].gated[row];
                if (gi == 0.0) continue;
                g.b[row] += gi;
                const double* x = tape.inputs[v].data();
                for (std::size_t j = 0; j < input_dim; ++j) u_row[j] += gi * x[j];
                for (std::size_t p : plan.predecessors[v]) {
                    const double* hp = records[p].hidden.data();
                    for (std::size_t j = 0; j < hidden; ++j) w_row[j] += gi * hp[j];
                }
            }
        });
        detail::parallel_for(cfg.output_dim(), threads, [&](std::size_t row) {
            double* v_row = g.V.data() + row * hidden;
            for (auto it = plan.order.rbegin(); it != plan.order.rend(); ++it) {
                const std::size_t v = *it;
                const double go = d_out[v][row];
                if (go == 0.0) continue;
                const double* fused = post ? records[v].hidden.data() : records[v].hidden_hat.data();
                for (std::size_t j = 0; j < hidden; ++j) v_row[j] += go * fused[j];
            }
        });
        for (auto it = plan.order.rbegin(); it != plan.order.rend(); ++it) add_residual(g.res, local[*it].residual);
    }
    return grads;
}

// ---------------------------------------------------------------------------

bool GradCheckReport::passed() const {
    return !tensors.empty() && std::all_of(tensors.begin(), tensors.end(), [](const TensorCheck& t) { return t.pass; });
}

std::string GradCheckReport::to_text() const {
    std::ostringstream out;
    std::size_t width = 4;
    for (const auto& t : tensors) width = std::max(width, t.name.size());
    char line[256];
    std::snprintf(line, sizeof line, "gradient check: eps=%.1e tol=%.1e\n", epsilon, tolerance);
    out << line;
    for (const auto& t : tensors) {
        std::snprintf(line, sizeof line, "  %-*s  max_rel_err=%.3e  checked=%zu  skipped=%zu  %s\n",
                      static_cast<int>(width), t.name.c_str(), t.max_rel_err, t.checked, t.skipped,
                      t.pass ? "PASS" : "FAIL");
        out << line;
    }
    out << (passed() ? "result: PASS\n" : "result: FAIL\n");
    return out.str();
}

std::string GradCheckReport::to_jsonl() const {
    std::string out;
    for (const auto& t : tensors) {
        nlohmann::json j{{"name", t.name},
                         {"max_rel_err", t.max_rel_err},
                         {"pass", t.pass},
                         {"checked", t.checked},
                         {"skipped", t.skipped}};
        out += j.dump() + "\n";
    }
    return out;
}

GradCheckSample make_grad_check_sample(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::int32_t> label(0, static_cast<std::int32_t>(config.num_classes) - 1);
    std::uniform_int_distribution<int> ignore(0, 15);

    GradCheckSample sample{Tensor({config.channels, config.image_h, config.image_w}),
                           LabelMap(config.image_h, config.image_w)};
    for (double& v : sample.image.values()) v = unit(rng);
    for (auto& l : sample.labels.data) l = ignore(rng) == 0 ? kIgnoreLabel : label(rng);
    return sample;
}

namespace {

struct Objective {
    const GradCheckSample& sample;
    BlockGrid grid;
    DagPlans plans;
    BlockLabels labels;

    Objective(const GradCheckSample& s, const ModelConfig& cfg)
        : sample(s),
          grid(partition(s.image, cfg.grid_rows, cfg.grid_cols)),
          plans(plans_for(cfg)),
          labels(partition_labels(s.labels, cfg.grid_rows, cfg.grid_cols)) {}

    /// Loss plus the on/off pattern of every ReLU input in the network.
    double evaluate(const CrrnParams& params, std::vector<char>& pattern) const {
        const ForwardResult fwd = forward_image(grid, plans, params, Mode::Train);
        pattern.clear();
        for (const auto& per_direction : fwd.tape.records) {
            for (const VertexRecord& rec : per_direction) {
                for (double a : rec.pre_activation.values()) pattern.push_back(a > 0.0);
                for (double r : rec.residual.relu1.values()) pattern.push_back(r > 0.0);
                for (double h : rec.hidden.values()) pattern.push_back(h > 0.0);
            }
        }
        return nll_loss(fwd.logits, labels).loss;
    }
};

}  // namespace

GradCheckReport grad_check(const CrrnParams& params, const GradCheckSample& sample, double tolerance, double epsilon) {
    const ModelConfig& cfg = params.config;
    const Objective objective(sample, cfg);

    const ForwardResult fwd = forward_image(objective.grid, objective.plans, params, Mode::Train);
    const LossResult loss = nll_loss(fwd.logits, objective.labels);
    const Gradients analytic = backward_image(fwd.tape, objective.plans, params, loss.logit_grads);

    std::vector<char> base_pattern, pattern;
    objective.evaluate(params, base_pattern);

    CrrnParams probe = params;
    std::vector<std::pair<std::string, Tensor*>> targets;
    probe.for_each_tensor([&](const std::string& name, Tensor& t) { targets.emplace_back(name, &t); });
    std::vector<const Tensor*> expected;
    analytic.for_each_tensor([&](const std::string&, const Tensor& t) { expected.push_back(&t); });

    GradCheckReport report;
    report.tolerance = tolerance;
    report.epsilon = epsilon;
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        Tensor& tensor = *targets[ti].second;
        TensorCheck check;
        check.name = targets[ti].first;
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double original = tensor[i];
            tensor[i] = original + epsilon;
            const double plus = objective.evaluate(probe, pattern);
            const bool plus_smooth = pattern == base_pattern;
            tensor[i] = original - epsilon;
            const double minus = objective.evaluate(probe, pattern);
            const bool minus_smooth = pattern == base_pattern;
            tensor[i] = original;
            if (!plus_smooth || !minus_smooth) {
                ++check.skipped;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double exact = (*expected[ti])[i];
            const double denom = std::max({std::abs(exact), std::abs(numeric), kGradCheckFloor});
            check.max_rel_err = std::max(check.max_rel_err, std::abs(exact - numeric) / denom);
            ++check.checked;
        }
        check.pass = check.checked > 0 && check.max_rel_err < tolerance;
        report.tensors.push_back(std::move(check));
    }
    return report;
}

GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, double tolerance) {
    const CrrnParams params = init_params(config, seed);
    const GradCheckSample sample = make_grad_check_sample(config, seed + 1);
    return grad_check(params, sample, tolerance);
}

}  // namespace crrn
