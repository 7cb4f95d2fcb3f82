// SPDX-License-Identifier: Apache-2.0

#include "crrn/backprop.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <set>

#include "crrn/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using crrn::Mode;
using crrn::Tensor;
using fixtures::random_tensor;
using fixtures::vec_of;

namespace {

crrn::ModelConfig check_config() {
    crrn::ModelConfig c;
    c.image_h = 8;
    c.image_w = 8;
    c.grid_rows = 2;
    c.grid_cols = 2;
    c.hidden_dim = 16;
    c.residual_mid_channels = 2;
    c.num_classes = 3;
    return c;
}

struct Pass {
    crrn::ForwardResult fwd;
    crrn::LossResult loss;
    crrn::DagPlans plans;
};

Pass forward(const crrn::CrrnParams& p, const crrn::GradCheckSample& s) {
    Pass out;
    out.plans = crrn::plans_for(p.config);
    out.fwd = crrn::forward_image(crrn::partition(s.image, p.config.grid_rows, p.config.grid_cols), out.plans, p,
                                  Mode::Train);
    out.loss = crrn::nll_loss(out.fwd.logits, crrn::partition_labels(s.labels, p.config.grid_rows, p.config.grid_cols));
    return out;
}

double max_abs(const crrn::Gradients& g) {
    double m = 0.0;
    g.for_each_tensor([&](const std::string&, const Tensor& t) { m = std::max(m, t.max_abs()); });
    return m;
}

}  // namespace

TEST(BackwardImage, ZeroUpstreamGivesZeroGradients) {
    const auto p = crrn::init_params(check_config(), 1);
    const auto s = crrn::make_grad_check_sample(p.config, 2);
    const auto pass = forward(p, s);
    std::vector<Tensor> zeros;
    for (const auto& o : pass.fwd.logits) zeros.emplace_back(o.shape());
    EXPECT_EQ(max_abs(crrn::backward_image(pass.fwd.tape, pass.plans, p, zeros)), 0.0);
}

TEST(BackwardImage, SingleVertexHasNoRecurrentGradient) {
    auto c = check_config();
    c.grid_rows = 1;
    c.grid_cols = 1;
    c.image_h = 4;
    c.image_w = 4;
    const auto p = crrn::init_params(c, 3);
    const auto s = crrn::make_grad_check_sample(c, 4);
    const auto pass = forward(p, s);
    const auto g = crrn::backward_image(pass.fwd.tape, pass.plans, p, pass.loss.logit_grads);
    EXPECT_EQ(g.sets[0].W.max_abs(), 0.0);
    EXPECT_GT(g.sets[0].U.max_abs(), 0.0);
}

TEST(BackwardImage, LinearInUpstream) {
    const auto p = crrn::init_params(check_config(), 5);
    const auto pass = forward(p, crrn::make_grad_check_sample(p.config, 6));
    auto g1 = crrn::backward_image(pass.fwd.tape, pass.plans, p, pass.loss.logit_grads);
    std::vector<Tensor> scaled;
    for (const auto& t : pass.loss.logit_grads) scaled.push_back(-2.5 * t);
    const auto g2 = crrn::backward_image(pass.fwd.tape, pass.plans, p, scaled);
    std::vector<Tensor> a, b;
    g1 *= -2.5;
    g1.for_each_tensor([&](const std::string&, const Tensor& t) { a.push_back(t); });
    g2.for_each_tensor([&](const std::string&, const Tensor& t) { b.push_back(t); });
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) EXPECT_NEAR(a[i][k], b[i][k], 1e-12 * (1.0 + std::abs(a[i][k])));
}

TEST(BackwardImage, HiddenGradientSumsOverSuccessors) {
    auto c = check_config();
    c.grid_rows = 3;
    c.grid_cols = 3;
    c.image_h = 6;
    c.image_w = 6;
    c.hidden_dim = 9;
    const auto p = crrn::init_params(c, 7);
    const auto pass = forward(p, crrn::make_grad_check_sample(c, 8));
    crrn::BackwardTrace trace;
    crrn::backward_image(pass.fwd.tape, pass.plans, p, pass.loss.logit_grads, 1, &trace);

    const auto& W = p.sets[0].W;
    for (std::size_t d = 0; d < 4; ++d) {
        const auto& plan = pass.plans[d];
        for (std::size_t v = 0; v < 9; ++v) {
            EXPECT_EQ(trace.successor_contributions[d][v], plan.successors[v].size());
            oracle::Vec expected(9, 0.0);
            for (std::size_t k : plan.successors[v]) {
                const auto& a = pass.fwd.tape.records[d][k].pre_activation;
                const auto& dhat = trace.hidden_hat_grads[d][k];
                for (std::size_t j = 0; j < 9; ++j) {
                    const double gated = a[j] > 0.0 ? dhat[j] : 0.0;
                    for (std::size_t i = 0; i < 9; ++i) expected[i] += W.at(j, i) * gated;
                }
            }
            for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(trace.hidden_grads[d][v][i], expected[i], 1e-12);
            if (plan.successors[v].empty()) {
                EXPECT_EQ(trace.hidden_grads[d][v].max_abs(), 0.0);
            }
        }
    }
}

TEST(BackwardImage, MatchesDifferencesOfTheHandUnrolledNetwork) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const auto tp = oracle::random_tiny_params(rng);
        const std::array<double, 4> x = {0.5, -0.2, 0.8, 0.3};
        const std::array<int, 4> labels = {1, 0, 1, 1};
        const auto params = fixtures::to_params(tp);
        crrn::GradCheckSample s{Tensor({1, 2, 2}, std::vector<double>(x.begin(), x.end())), crrn::LabelMap(2, 2)};
        s.labels.data = {1, 0, 1, 1};
        const auto pass = forward(params, s);
        const auto g = crrn::backward_image(pass.fwd.tape, pass.plans, params, pass.loss.logit_grads);

        auto numeric = [&](oracle::Vec oracle::TinyParams::*field) {
            return oracle::central_difference(
                [&](const oracle::Vec& v) {
                    auto q = tp;
                    q.*field = v;
                    return oracle::tiny_forward(x, labels, q).loss;
                },
                tp.*field);
        };
        const auto& gs = g.sets[0];
        const std::vector<std::pair<const Tensor*, oracle::Vec oracle::TinyParams::*>> pairs = {
            {&gs.U, &oracle::TinyParams::U},
            {&gs.W, &oracle::TinyParams::W},
            {&gs.V, &oracle::TinyParams::V},
            {&gs.b, &oracle::TinyParams::b},
            {&gs.res.conv1_kernels, &oracle::TinyParams::conv1_k},
            {&gs.res.conv1_bias, &oracle::TinyParams::conv1_b},
            {&gs.res.bn1_scale, &oracle::TinyParams::bn1_scale},
            {&gs.res.bn1_shift, &oracle::TinyParams::bn1_shift},
            {&gs.res.conv2_kernels, &oracle::TinyParams::conv2_k},
            {&gs.res.conv2_bias, &oracle::TinyParams::conv2_b},
            {&gs.res.bn2_scale, &oracle::TinyParams::bn2_scale},
            {&gs.res.bn2_shift, &oracle::TinyParams::bn2_shift},
            {&g.b_o, &oracle::TinyParams::b_o},
        };
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            // Absolute floor: conv biases feeding a BN have zero true gradient.
            EXPECT_LT(oracle::max_rel_err(vec_of(*pairs[i].first), numeric(pairs[i].second), 1e-4), 1e-5)
                << "seed " << seed << " tensor " << i;
        }
    }
}

TEST(BackwardImage, IndependentOfThreadCount) {
    auto c = check_config();
    c.grid_rows = 4;
    c.grid_cols = 4;
    const auto p = crrn::init_params(c, 9);
    const auto pass = forward(p, crrn::make_grad_check_sample(c, 10));
    const auto one = crrn::backward_image(pass.fwd.tape, pass.plans, p, pass.loss.logit_grads, 1);
    for (int threads : {2, 4}) {
        const auto many = crrn::backward_image(pass.fwd.tape, pass.plans, p, pass.loss.logit_grads, threads);
        std::vector<Tensor> a, b;
        one.for_each_tensor([&](const std::string&, const Tensor& t) { a.push_back(t); });
        many.for_each_tensor([&](const std::string&, const Tensor& t) { b.push_back(t); });
        EXPECT_EQ(a, b);
    }
}

TEST(GradCheck, PassesOnSmallConfigurations) {
    auto base = check_config();
    std::vector<crrn::ModelConfig> configs = {base};
    auto four = base;
    four.connectivity = crrn::Connectivity::Four;
    configs.push_back(four);
    auto per_dir = base;
    per_dir.per_direction_params = true;
    configs.push_back(per_dir);
    auto post = base;
    post.fuse_post_residual = true;
    configs.push_back(post);
    auto rgb = base;
    rgb.channels = 3;
    rgb.image_h = 6;
    rgb.image_w = 5;
    configs.push_back(rgb);

    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto report = crrn::grad_check(configs[i], 11 + i, 1e-5);
        EXPECT_TRUE(report.passed()) << "config " << i << "\n" << report.to_text();
        std::set<std::string> names;
        for (const auto& t : report.tensors) {
            EXPECT_TRUE(names.insert(t.name).second) << t.name;
            EXPECT_GT(t.checked, 0u) << t.name;
        }
        std::size_t expected = 0;
        crrn::init_params(configs[i], 0).for_each_tensor([&](const std::string&, const Tensor&) { ++expected; });
        EXPECT_EQ(report.tensors.size(), expected);
    }
}

TEST(GradCheck, ZeroToleranceFails) {
    EXPECT_FALSE(crrn::grad_check(check_config(), 12, 0.0).passed());
}

TEST(GradCheck, ZeroOutputWeightsStillCheckOutputBias) {
    auto p = crrn::init_params(check_config(), 13);
    p.sets[0].V.fill(0.0);
    const auto report = crrn::grad_check(p, crrn::make_grad_check_sample(p.config, 14), 1e-5);
    EXPECT_TRUE(report.passed()) << report.to_text();
    bool saw_bias = false;
    for (const auto& t : report.tensors)
        if (t.name == "b_o") saw_bias = t.checked == p.b_o.size();
    EXPECT_TRUE(saw_bias);
}

TEST(GradCheck, JsonLinesCarryEveryField) {
    const auto report = crrn::grad_check(check_config(), 15, 1e-5);
    std::istringstream in(report.to_jsonl());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"name", "max_rel_err", "pass", "checked", "skipped"}) EXPECT_TRUE(j.contains(key)) << key;
        ++lines;
    }
    EXPECT_EQ(lines, report.tensors.size());
}

TEST(Gradients, ArithmeticAndNorm) {
    const auto p = crrn::init_params(check_config(), 16);
    auto g = crrn::Gradients::zeros_like(p);
    EXPECT_EQ(g.squared_norm(), 0.0);
    g.b_o.fill(2.0);
    auto h = g;
    h += g;
    EXPECT_EQ(h.squared_norm(), 16.0 * static_cast<double>(p.b_o.size()));
    h *= 0.5;
    EXPECT_EQ(h.squared_norm(), g.squared_norm());
    EXPECT_TRUE(h.all_finite());
    h.b_o[0] = std::nan("");
    EXPECT_FALSE(h.all_finite());
}
