// SPDX-License-Identifier: Apache-2.0

#include "crrn/data.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"

using crrn::Tensor;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& header, const std::vector<unsigned char>& body) {
    std::ofstream out(p, std::ios::binary);
    out << header;
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
}

crrn::LabelMap labels_of(std::size_t h, std::size_t w, std::vector<std::int32_t> v) {
    crrn::LabelMap m(h, w);
    m.data = std::move(v);
    return m;
}

}  // namespace

TEST(LoadImage, BinaryPpmScalesBytes) {
    fixtures::TempDir dir("data");
    write_bytes(dir / "a.ppm", "P6\n# comment\n2 2\n255\n", {0, 51, 102, 153, 204, 255, 1, 2, 3, 10, 20, 30});
    const Tensor img = crrn::load_image(dir / "a.ppm");
    ASSERT_EQ(img.shape(), (crrn::Shape{3, 2, 2}));
    EXPECT_EQ(img.at(0, 0, 0), 0.0);
    EXPECT_EQ(img.at(1, 0, 0), 51.0 / 255.0);
    EXPECT_EQ(img.at(2, 0, 0), 102.0 / 255.0);
    EXPECT_EQ(img.at(0, 0, 1), 153.0 / 255.0);
    EXPECT_EQ(img.at(2, 0, 1), 1.0);
    EXPECT_EQ(img.at(1, 1, 0), 2.0 / 255.0);
    EXPECT_EQ(img.at(2, 1, 1), 30.0 / 255.0);
}

TEST(LoadImage, BinaryPgm) {
    fixtures::TempDir dir("data");
    write_bytes(dir / "a.pgm", "P5 3 1 255\n", {7, 0, 255});
    const Tensor img = crrn::load_image(dir / "a.pgm");
    ASSERT_EQ(img.shape(), (crrn::Shape{1, 1, 3}));
    EXPECT_EQ(img[0], 7.0 / 255.0);
    EXPECT_EQ(img[2], 1.0);
}

TEST(LoadImage, RejectsGarbage) {
    fixtures::TempDir dir("data");
    write_bytes(dir / "bad.ppm", "P3\n1 1\n255\n", {1, 2, 3});
    EXPECT_THROW(crrn::load_image(dir / "bad.ppm"), crrn::ImageFormatError);
    write_bytes(dir / "short.pgm", "P5\n4 4\n255\n", {1, 2});
    EXPECT_THROW(crrn::load_image(dir / "short.pgm"), crrn::ImageFormatError);
    EXPECT_THROW(crrn::load_image(dir / "missing.png"), crrn::ImageFormatError);
}

TEST(SaveImage, RoundTripsQuantizedValues) {
    fixtures::TempDir dir("data");
    Tensor gray({1, 3, 4});
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<double>(i * 20) / 255.0;
    Tensor rgb({3, 2, 3});
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<double>(255 - i * 13) / 255.0;
    for (const char* name : {"g.png", "g.pgm"}) {
        crrn::save_image(dir / name, gray);
        EXPECT_EQ(crrn::load_image(dir / name), gray) << name;
    }
    for (const char* name : {"c.png", "c.ppm"}) {
        crrn::save_image(dir / name, rgb);
        EXPECT_EQ(crrn::load_image(dir / name), rgb) << name;
    }
}

TEST(SaveImage, ClampsAndRounds) {
    fixtures::TempDir dir("data");
    Tensor t({1, 1, 3}, std::vector<double>{-0.5, 0.5, 2.0});
    crrn::save_image(dir / "c.pgm", t);
    const Tensor back = crrn::load_image(dir / "c.pgm");
    EXPECT_EQ(back[0], 0.0);
    EXPECT_EQ(back[1], 128.0 / 255.0);
    EXPECT_EQ(back[2], 1.0);
}

TEST(Labels, RoundTripAndRange) {
    fixtures::TempDir dir("data");
    const auto l = labels_of(2, 3, {0, 1, 2, 3, crrn::kIgnoreLabel, 0});
    for (const char* name : {"l.png", "l.pgm"}) {
        crrn::save_labels(dir / name, l);
        EXPECT_EQ(crrn::load_labels(dir / name), l) << name;
    }
    EXPECT_THROW(crrn::save_labels(dir / "x.png", labels_of(1, 1, {300})), std::out_of_range);
}

TEST(Labels, ExtentMismatchNamesBothFiles) {
    fixtures::TempDir dir("data");
    crrn::save_image(dir / "img.png", Tensor({1, 4, 4}));
    crrn::save_labels(dir / "lab.png", crrn::LabelMap(4, 5));
    try {
        crrn::load_labeled_image(dir / "img.png", dir / "lab.png");
        FAIL();
    } catch (const crrn::ImageFormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("img.png"), std::string::npos) << msg;
        EXPECT_NE(msg.find("lab.png"), std::string::npos) << msg;
    }
}

TEST(Manifest, RelativePathsResolveAgainstTheManifest) {
    fixtures::TempDir dir("data");
    std::filesystem::create_directories(dir / "sub/images");
    crrn::save_image(dir / "sub/images/a.png", Tensor({1, 2, 2}, 0.5));
    crrn::save_labels(dir / "sub/images/a_l.png", labels_of(2, 2, {0, 1, 1, 0}));
    {
        std::ofstream m(dir / "sub/list.tsv");
        m << "images/a.png\timages/a_l.png\n\n";
    }
    const auto entries = crrn::read_manifest(dir / "sub/list.tsv");
    ASSERT_EQ(entries.size(), 1u);
    EXPECT_EQ(entries[0].image, dir / "sub/images/a.png");

    const auto set = crrn::load_dataset(dir / "sub/list.tsv");
    ASSERT_EQ(set.size(), 1u);
    EXPECT_EQ(set[0].labels, labels_of(2, 2, {0, 1, 1, 0}));
    EXPECT_FALSE(set[0].id.empty());

    crrn::write_manifest(dir / "copy.tsv", entries);
    EXPECT_EQ(crrn::read_manifest(dir / "copy.tsv")[0].labels, entries[0].labels);
}

TEST(Manifest, MalformedLineIsAnError) {
    fixtures::TempDir dir("data");
    {
        std::ofstream m(dir / "bad.tsv");
        m << "only-one-column\n";
    }
    EXPECT_ANY_THROW(crrn::read_manifest(dir / "bad.tsv"));
}

TEST(Flip, MirrorsImageAndLabels) {
    crrn::LabeledImage s{Tensor({2, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), labels_of(1, 3, {0, 1, 2}), "x"};
    const auto f = crrn::flip_horizontal(s);
    EXPECT_EQ(f.image, Tensor({2, 1, 3}, std::vector<double>{3, 2, 1, 6, 5, 4}));
    EXPECT_EQ(f.labels, labels_of(1, 3, {2, 1, 0}));
    const auto back = crrn::flip_horizontal(f);
    EXPECT_EQ(back.image, s.image);
    EXPECT_EQ(back.labels, s.labels);
}
