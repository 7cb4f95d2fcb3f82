// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dataset whose central patch can only be labelled with context.
//
// Every image is a single-channel size x size map: a noisy background, a
// noisy square patch in the middle (side size/2) and a small marker in one
// randomly chosen corner. The patch texture is drawn from the same
// distribution in every image, yet its label is kPatchWithSolidMarker when
// the marker is solid and kPatchWithCheckerMarker when the marker is a
// checkerboard. Marker types alternate with the image index.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "crrn/data.hpp"

namespace crrn {

inline constexpr std::int32_t kBackgroundClass = 0;
inline constexpr std::int32_t kPatchWithSolidMarker = 1;
inline constexpr std::int32_t kPatchWithCheckerMarker = 2;
/// Marker pixels get this class when num_classes >= 4, background otherwise.
inline constexpr std::int32_t kMarkerClass = 3;

struct TextureParams {
    double background_low = 0.0;
    double background_high = 0.2;
    double patch_low = 0.4;
    double patch_high = 0.6;
    double marker_level = 0.9;
    double checker_level = 0.3;  // the checkerboard alternates marker_level and this

    friend bool operator==(const TextureParams&, const TextureParams&) = default;
};

struct SynthSpec {
    std::size_t size = 32;
    std::size_t num_classes = 4;
    /// Minimum Euclidean distance between marker and patch centres; size/2 when unset.
    std::optional<double> marker_distance_min;
    TextureParams texture;

    double min_distance() const { return marker_distance_min.value_or(static_cast<double>(size) / 2.0); }
    std::size_t patch_begin() const { return size / 4; }
    std::size_t patch_end() const { return size / 4 + size / 2; }
    std::size_t marker_side() const;
    std::size_t marker_inset() const;

    /// Throws std::invalid_argument when the geometry cannot honour the spec.
    void validate() const;

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// {size, num_classes, marker_distance_min, texture_seed_params}
void to_json(nlohmann::json& j, const SynthSpec& spec);
void from_json(const nlohmann::json& j, SynthSpec& spec);

std::vector<LabeledImage> gen_synthetic(std::size_t n_images, std::uint64_t seed, const SynthSpec& spec);

bool is_ambiguous_label(std::int32_t label);

}  // namespace crrn
