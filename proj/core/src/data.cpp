// SPDX-License-Identifier: Apache-2.0

#include "crrn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace crrn {

namespace fs = std::filesystem;

namespace {

struct RawImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<unsigned char> pixels;  // interleaved
};

std::string lower_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

std::vector<unsigned char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageFormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png(const std::vector<unsigned char>& bytes) {
    static constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return bytes.size() >= 8 && std::memcmp(bytes.data(), kSignature, 8) == 0;
}

RawImage decode_png(const std::vector<unsigned char>& bytes, const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw ImageFormatError("malformed PNG " + path.string() + ": " + image.message);
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    RawImage raw{image.height, image.width, color ? 3u : 1u, {}};
    raw.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raw.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ImageFormatError("malformed PNG " + path.string() + ": " + msg);
    }
    return raw;
}

// Netpbm header token reader that skips whitespace and comments.
std::size_t netpbm_number(const std::vector<unsigned char>& bytes, std::size_t& pos, const fs::path& path) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ImageFormatError("malformed header in " + path.string());
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
        if (value > (1u << 24)) throw ImageFormatError("malformed header in " + path.string());
        ++pos;
    }
    return value;
}

RawImage decode_netpbm(const std::vector<unsigned char>& bytes, const fs::path& path) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw ImageFormatError("unsupported or malformed image " + path.string() + " (expected PNG, P5 or P6)");
    }
    std::size_t pos = 2;
    RawImage raw;
    raw.channels = bytes[1] == '6' ? 3 : 1;
    raw.width = netpbm_number(bytes, pos, path);
    raw.height = netpbm_number(bytes, pos, path);
    const std::size_t maxval = netpbm_number(bytes, pos, path);
    if (raw.width == 0 || raw.height == 0) throw ImageFormatError("zero-sized image " + path.string());
    if (maxval != 255) throw ImageFormatError("only 8-bit netpbm (maxval 255) is supported: " + path.string());
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageFormatError("malformed header in " + path.string());
    ++pos;
    const std::size_t count = raw.width * raw.height * raw.channels;
    if (bytes.size() - pos < count) throw ImageFormatError("truncated pixel data in " + path.string());
    raw.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
    return raw;
}

RawImage decode(const fs::path& path) {
    const auto bytes = read_file(path);
    return is_png(bytes) ? decode_png(bytes, path) : decode_netpbm(bytes, path);
}

void write_netpbm(const fs::path& path, const RawImage& raw) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << (raw.channels == 3 ? "P6" : "P5") << '\n' << raw.width << ' ' << raw.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raw.pixels.data()), static_cast<std::streamsize>(raw.pixels.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_png(const fs::path& path, const RawImage& raw) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raw.width);
    image.height = static_cast<png_uint_32>(raw.height);
    image.format = raw.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, raw.pixels.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write " + path.string() + ": " + image.message);
    }
}

void encode(const fs::path& path, const RawImage& raw) {
    const std::string ext = lower_extension(path);
    if (ext == ".png") {
        write_png(path, raw);
    } else if ((ext == ".ppm" && raw.channels == 3) || (ext == ".pgm" && raw.channels == 1)) {
        write_netpbm(path, raw);
    } else {
        throw std::invalid_argument("cannot encode a " + std::to_string(raw.channels) + "-channel image as " + path.string());
    }
}

}  // namespace

Tensor load_image(const fs::path& path) {
    const RawImage raw = decode(path);
    Tensor image({raw.channels, raw.height, raw.width});
    for (std::size_t y = 0; y < raw.height; ++y) {
        for (std::size_t x = 0; x < raw.width; ++x) {
            for (std::size_t c = 0; c < raw.channels; ++c) {
                image.at(c, y, x) = raw.pixels[(y * raw.width + x) * raw.channels + c] / 255.0;
            }
        }
    }
    return image;
}

LabelMap load_labels(const fs::path& path) {
    const RawImage raw = decode(path);
    if (raw.channels != 1) throw ImageFormatError("label image must be single-channel: " + path.string());
    LabelMap labels(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) labels.data[i] = raw.pixels[i];
    return labels;
}

LabeledImage load_labeled_image(const fs::path& image_path, const fs::path& label_path) {
    LabeledImage sample{load_image(image_path), load_labels(label_path), image_path.stem().string()};
    if (sample.image.dim(1) != sample.labels.height || sample.image.dim(2) != sample.labels.width) {
        throw ImageFormatError("extent mismatch: " + image_path.string() + " is " + std::to_string(sample.image.dim(2)) +
                               "x" + std::to_string(sample.image.dim(1)) + " but " + label_path.string() + " is " +
                               std::to_string(sample.labels.width) + "x" + std::to_string(sample.labels.height));
    }
    return sample;
}

void save_image(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
        throw DimensionError("save_image: expected [1 or 3 x H x W], got " + shape_string(image.shape()));
    }
    RawImage raw{image.dim(1), image.dim(2), image.dim(0), {}};
    raw.pixels.resize(raw.height * raw.width * raw.channels);
    for (std::size_t y = 0; y < raw.height; ++y) {
        for (std::size_t x = 0; x < raw.width; ++x) {
            for (std::size_t c = 0; c < raw.channels; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                raw.pixels[(y * raw.width + x) * raw.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    encode(path, raw);
}

void save_labels(const fs::path& path, const LabelMap& labels) {
    RawImage raw{labels.height, labels.width, 1, {}};
    raw.pixels.reserve(labels.data.size());
    for (std::int32_t l : labels.data) {
        if (l < 0 || l > 255) throw std::out_of_range("save_labels: label " + std::to_string(l) + " does not fit 8 bits");
        raw.pixels.push_back(static_cast<unsigned char>(l));
    }
    encode(path, raw);
}

void save_rgb_png(const fs::path& path, std::size_t height, std::size_t width, const std::vector<unsigned char>& rgb) {
    if (rgb.size() != height * width * 3) throw DimensionError("save_rgb_png: buffer size does not match extents");
    write_png(path, RawImage{height, width, 3, rgb});
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    const fs::path base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected <image-path>\\t<label-path>");
        }
        fs::path image = line.substr(0, tab), labels = line.substr(tab + 1);
        if (image.is_relative()) image = base / image;
        if (labels.is_relative()) labels = base / labels;
        entries.push_back({std::move(image), std::move(labels)});
    }
    return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    for (const auto& e : entries) out << e.image.generic_string() << '\t' << e.labels.generic_string() << '\n';
    if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

std::vector<LabeledImage> load_dataset(const fs::path& manifest) {
    std::vector<LabeledImage> samples;
    for (const auto& entry : read_manifest(manifest)) samples.push_back(load_labeled_image(entry.image, entry.labels));
    return samples;
}

LabeledImage flip_horizontal(const LabeledImage& sample) {
    LabeledImage out = sample;
    const std::size_t channels = sample.image.dim(0), h = sample.image.dim(1), w = sample.image.dim(2);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) out.image.at(c, y, x) = sample.image.at(c, y, w - 1 - x);
        }
    }
    for (std::size_t y = 0; y < sample.labels.height; ++y) {
        for (std::size_t x = 0; x < sample.labels.width; ++x) {
            out.labels.at(y, x) = sample.labels.at(y, sample.labels.width - 1 - x);
        }
    }
    return out;
}

}  // namespace crrn
