// SPDX-License-Identifier: Apache-2.0

#include "crrn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace crrn {

std::size_t SynthSpec::marker_side() const { return std::max<std::size_t>(3, 3 * size / 16); }
std::size_t SynthSpec::marker_inset() const { return std::max<std::size_t>(1, size / 32); }

void SynthSpec::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("synthetic spec: " + msg); };
    if (size < 16 || size % 4 != 0) fail("size must be a multiple of 4 and at least 16");
    if (num_classes < 3 || num_classes > 254) fail("num_classes must be in [3, 254]");
    const auto& t = texture;
    for (double v : {t.background_low, t.background_high, t.patch_low, t.patch_high, t.marker_level, t.checker_level}) {
        if (!(v >= 0.0 && v <= 1.0)) fail("texture levels must lie in [0, 1]");
    }
    if (t.background_low > t.background_high || t.patch_low > t.patch_high) fail("texture ranges must be ordered");
    if (marker_inset() + marker_side() > patch_begin()) fail("marker would overlap the patch");
    const double marker_centre = static_cast<double>(marker_inset()) + static_cast<double>(marker_side()) / 2.0;
    const double distance = (static_cast<double>(size) / 2.0 - marker_centre) * std::sqrt(2.0);
    if (distance < min_distance()) {
        fail("marker_distance_min " + std::to_string(min_distance()) + " unreachable at size " + std::to_string(size));
    }
}

void to_json(nlohmann::json& j, const SynthSpec& spec) {
    const auto& t = spec.texture;
    j = nlohmann::json{{"size", spec.size},
                       {"num_classes", spec.num_classes},
                       {"marker_distance_min", spec.min_distance()},
                       {"texture_seed_params",
                        {{"background", {t.background_low, t.background_high}},
                         {"patch", {t.patch_low, t.patch_high}},
                         {"marker_level", t.marker_level},
                         {"checker_level", t.checker_level}}}};
}

void from_json(const nlohmann::json& j, SynthSpec& spec) {
    spec = SynthSpec{};
    spec.size = j.value("size", spec.size);
    spec.num_classes = j.value("num_classes", spec.num_classes);
    if (j.contains("marker_distance_min")) spec.marker_distance_min = j.at("marker_distance_min").get<double>();
    if (j.contains("texture_seed_params")) {
        const auto& p = j.at("texture_seed_params");
        auto& t = spec.texture;
        if (p.contains("background")) {
            t.background_low = p.at("background").at(0).get<double>();
            t.background_high = p.at("background").at(1).get<double>();
        }
        if (p.contains("patch")) {
            t.patch_low = p.at("patch").at(0).get<double>();
            t.patch_high = p.at("patch").at(1).get<double>();
        }
        t.marker_level = p.value("marker_level", t.marker_level);
        t.checker_level = p.value("checker_level", t.checker_level);
    }
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

std::vector<LabeledImage> gen_synthetic(std::size_t n_images, std::uint64_t seed, const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const auto& t = spec.texture;
    std::uniform_real_distribution<double> background(t.background_low, t.background_high);
    std::uniform_real_distribution<double> patch(t.patch_low, t.patch_high);
    std::uniform_int_distribution<int> corner_pick(0, 3);

    const std::size_t s = spec.size, side = spec.marker_side(), inset = spec.marker_inset();
    const std::size_t p0 = spec.patch_begin(), p1 = spec.patch_end();
    const std::int32_t marker_label = spec.num_classes >= 4 ? kMarkerClass : kBackgroundClass;

    std::vector<LabeledImage> out;
    out.reserve(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
        const bool checker = i % 2 == 1;
        const int corner = corner_pick(rng);
        const std::size_t my = (corner & 2) ? s - inset - side : inset;
        const std::size_t mx = (corner & 1) ? s - inset - side : inset;

        LabeledImage sample{Tensor({1, s, s}), LabelMap(s, s, kBackgroundClass), {}};
        char id[32];
        std::snprintf(id, sizeof id, "synth_%05zu", i);
        sample.id = id;
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                double v;
                std::int32_t label;
                if (y >= p0 && y < p1 && x >= p0 && x < p1) {
                    v = patch(rng);
                    label = checker ? kPatchWithCheckerMarker : kPatchWithSolidMarker;
                } else if (y >= my && y < my + side && x >= mx && x < mx + side) {
                    v = (!checker || (y + x) % 2 == 0) ? t.marker_level : t.checker_level;
                    label = marker_label;
                } else {
                    v = background(rng);
                    label = kBackgroundClass;
                }
                sample.image.at(0, y, x) = quantize(v);
                sample.labels.at(y, x) = label;
            }
        }
        out.push_back(std::move(sample));
    }
    return out;
}

bool is_ambiguous_label(std::int32_t label) {
    return label == kPatchWithSolidMarker || label == kPatchWithCheckerMarker;
}

}  // namespace crrn
