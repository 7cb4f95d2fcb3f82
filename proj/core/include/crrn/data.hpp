// SPDX-License-Identifier: Apache-2.0
//
// Labelled images on disk. Images: binary PPM (P6), PGM (P5) or 8-bit PNG
// (gray or RGB), values scaled to [0, 1]. Labels: 8-bit PNG or PGM (P5)
// where the pixel value is the class index and 255 means "ignore".

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crrn/labels.hpp"
#include "crrn/tensor.hpp"

namespace crrn {

class ImageFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LabeledImage {
    Tensor image;  // [c x H x W], values in [0, 1]
    LabelMap labels;
    std::string id;
};

Tensor load_image(const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);

/// Throws ImageFormatError naming both files when their extents differ.
LabeledImage load_labeled_image(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Values are clamped to [0, 1] and rounded to k/255. The format follows the
/// extension: .png, .ppm (3 channels) or .pgm (1 channel).
void save_image(const std::filesystem::path& path, const Tensor& image);
/// .png or .pgm; every label must be in [0, 255].
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
/// Writes an 8-bit RGB PNG from row-major interleaved bytes.
void save_rgb_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                  const std::vector<unsigned char>& rgb);

struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path labels;
};

/// One `<image-path>\t<label-path>` per line; relative paths resolve against
/// the manifest's directory. Blank lines are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<LabeledImage> load_dataset(const std::filesystem::path& manifest);

/// Mirrors image and labels left-to-right.
LabeledImage flip_horizontal(const LabeledImage& sample);

}  // namespace crrn
