// SPDX-License-Identifier: Apache-2.0

#include "crrn/synthetic.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

using crrn::SynthSpec;

namespace {

double patch_mean(const crrn::LabeledImage& s, const SynthSpec& spec) {
    double sum = 0.0;
    for (std::size_t y = spec.patch_begin(); y < spec.patch_end(); ++y)
        for (std::size_t x = spec.patch_begin(); x < spec.patch_end(); ++x) sum += s.image.at(0, y, x);
    const double side = static_cast<double>(spec.patch_end() - spec.patch_begin());
    return sum / (side * side);
}

}  // namespace

TEST(Synthetic, Deterministic) {
    const SynthSpec spec;
    const auto a = crrn::gen_synthetic(6, 42, spec), b = crrn::gen_synthetic(6, 42, spec);
    const auto c = crrn::gen_synthetic(6, 43, spec);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].labels, b[i].labels);
        EXPECT_EQ(a[i].id, b[i].id);
    }
    EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synthetic, GeometryAndLabels) {
    for (std::size_t classes : {3u, 4u}) {
        SynthSpec spec;
        spec.num_classes = classes;
        const auto set = crrn::gen_synthetic(40, 7, spec);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto& s = set[i];
            ASSERT_EQ(s.image.shape(), (crrn::Shape{1, 32, 32}));
            std::map<std::int32_t, std::size_t> hist;
            double my = 0, mx = 0;
            std::size_t marker = 0;
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x) {
                    const auto l = s.labels.at(y, x);
                    ASSERT_GE(l, 0);
                    ASSERT_LT(l, static_cast<std::int32_t>(classes));
                    ++hist[l];
                    const bool in_patch = y >= 8 && y < 24 && x >= 8 && x < 24;
                    EXPECT_EQ(crrn::is_ambiguous_label(l), in_patch);
                    if (in_patch) {
                        EXPECT_EQ(l, i % 2 == 0 ? crrn::kPatchWithSolidMarker : crrn::kPatchWithCheckerMarker);
                    }
                    if (s.image.at(0, y, x) >= 0.85 && !in_patch) {
                        ++marker;
                        my += static_cast<double>(y);
                        mx += static_cast<double>(x);
                    }
                }
            EXPECT_EQ(hist[i % 2 == 0 ? 1 : 2], 256u);
            if (classes == 4) {
                EXPECT_EQ(hist[crrn::kMarkerClass], 36u);
            }
            // Marker sits in a corner, far from the patch centre.
            ASSERT_GT(marker, 0u);
            my /= static_cast<double>(marker);
            mx /= static_cast<double>(marker);
            EXPECT_GE(std::hypot(my - 15.5, mx - 15.5), spec.min_distance());
        }
    }
}

TEST(Synthetic, MarkerTypesAlternateAndAreBalanced) {
    const SynthSpec spec;
    const auto set = crrn::gen_synthetic(100, 3, spec);
    std::size_t solid = 0;
    for (const auto& s : set) solid += s.labels.at(16, 16) == crrn::kPatchWithSolidMarker;
    EXPECT_EQ(solid, 50u);
}

TEST(Synthetic, ValuesAreQuantized) {
    const auto set = crrn::gen_synthetic(4, 9, SynthSpec{});
    for (const auto& s : set)
        for (double v : s.image.values()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            EXPECT_EQ(std::round(v * 255.0) / 255.0, v);
        }
}

TEST(Synthetic, PatchAloneDoesNotRevealItsLabel) {
    // Best single-threshold rule on the patch mean, fitted on half the set and
    // scored on the other half, stays near chance.
    const SynthSpec spec;
    const auto set = crrn::gen_synthetic(500, 21, spec);
    std::vector<std::pair<double, bool>> fit, held;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const bool checker = set[i].labels.at(16, 16) == crrn::kPatchWithCheckerMarker;
        (i < 250 ? fit : held).emplace_back(patch_mean(set[i], spec), checker);
    }
    double best_acc = 0.0, best_t = 0.0;
    bool best_above = true;
    for (const auto& [t, unused] : fit) {
        for (bool above : {true, false}) {
            std::size_t ok = 0;
            for (const auto& [m, c] : fit) ok += ((m > t) == above) == c;
            const double acc = static_cast<double>(ok) / static_cast<double>(fit.size());
            if (acc > best_acc) {
                best_acc = acc;
                best_t = t;
                best_above = above;
            }
        }
    }
    std::size_t ok = 0;
    for (const auto& [m, c] : held) ok += ((m > best_t) == best_above) == c;
    EXPECT_LE(static_cast<double>(ok) / static_cast<double>(held.size()), 0.6);
}

TEST(SynthSpec, ValidationAndJson) {
    SynthSpec spec;
    spec.size = 12;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.num_classes = 2;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.marker_distance_min = 100.0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.texture.patch_low = 0.7;
    EXPECT_THROW(spec.validate(), std::invalid_argument);

    SynthSpec custom;
    custom.size = 48;
    custom.num_classes = 3;
    custom.marker_distance_min = 10.0;
    custom.texture.checker_level = 0.1;
    const nlohmann::json j = custom;
    EXPECT_EQ(j.get<SynthSpec>(), custom);
    EXPECT_TRUE(j.contains("texture_seed_params"));
}
