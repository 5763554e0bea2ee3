#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "diffseg/dataset.hpp"
#include "diffseg/png_io.hpp"
#include "diffseg/sampler.hpp"

using namespace diffseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("diffseg_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("one_hot_encode") {
    SECTION("single pixel class 2 of 4") {
        IndexMap m(1, 1);
        m.at(0, 0) = 2;
        Tensor<double> t = one_hot_encode<double>(m, 4);
        REQUIRE(t.at(0, 0, 0) == 0.0);
        REQUIRE(t.at(1, 0, 0) == 0.0);
        REQUIRE(t.at(2, 0, 0) == 1.0);
        REQUIRE(t.at(3, 0, 0) == 0.0);
    }
    SECTION("decode(encode(x)) round trip and per-pixel sums") {
        Rng rng(21);
        IndexMap m(6, 5);
        for (auto& v : m.data) v = rng.uniform_int(0, 3);
        Tensor<float> t = one_hot_encode<float>(m, 4);
        REQUIRE(argmax_decode(t) == m);
        for (int y = 0; y < t.height; ++y) {
            for (int x = 0; x < t.width; ++x) {
                float sum = 0;
                for (int c = 0; c < 4; ++c) {
                    const float v = t.at(c, y, x);
                    REQUIRE((v == 0.0f || v == 1.0f));
                    sum += v;
                }
                REQUIRE(sum == 1.0f);
            }
        }
        REQUIRE(is_one_hot(t));
    }
    SECTION("out-of-range label rejected") {
        IndexMap m(1, 1);
        m.at(0, 0) = 4;
        REQUIRE_THROWS_AS(one_hot_encode<float>(m, 4), ValidationError);
    }
}

TEST_CASE("resize_image bilinear with half-pixel centers") {
    SECTION("identity size is bit-identical") {
        Rng rng(22);
        Tensor<float> img = normal_like<float>(3, 5, 7, rng);
        REQUIRE(resize_image(img, 7, 5).data == img.data);
    }
    SECTION("constants stay constant") {
        Tensor<double> img(3, 4, 4);
        img.fill(0.37);
        Tensor<double> out = resize_image(img, 9, 3);
        for (double v : out.data) REQUIRE(v == Catch::Approx(0.37).margin(1e-12));
    }
    SECTION("2x1 row [0,1] upsampled to 4x1") {
        Tensor<double> img(1, 1, 2);
        img.at(0, 0, 1) = 1.0;
        Tensor<double> out = resize_image(img, 4, 1);
        REQUIRE(out.at(0, 0, 0) == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(out.at(0, 0, 1) == Catch::Approx(0.25).margin(1e-12));
        REQUIRE(out.at(0, 0, 2) == Catch::Approx(0.75).margin(1e-12));
        REQUIRE(out.at(0, 0, 3) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("values stay inside the input range") {
        Rng rng(23);
        Tensor<double> img = normal_like<double>(2, 6, 6, rng);
        const double lo = *std::min_element(img.data.begin(), img.data.end());
        const double hi = *std::max_element(img.data.begin(), img.data.end());
        for (auto [w, h] : std::vector<std::pair<int, int>>{{3, 3}, {12, 12}, {5, 9}}) {
            Tensor<double> out = resize_image(img, w, h);
            for (double v : out.data) {
                REQUIRE(v >= lo - 1e-12);
                REQUIRE(v <= hi + 1e-12);
            }
        }
    }
    SECTION("zero target rejected") {
        Tensor<double> img(1, 2, 2);
        REQUIRE_THROWS_AS(resize_image(img, 0, 2), InvalidParameterError);
    }
}

TEST_CASE("resize_labels nearest with half-pixel centers") {
    SECTION("identity and constants") {
        Rng rng(24);
        IndexMap m(4, 3);
        for (auto& v : m.data) v = rng.uniform_int(0, 5);
        REQUIRE(resize_labels(m, 3, 4) == m);
        IndexMap c(3, 3);
        for (auto& v : c.data) v = 2;
        IndexMap out = resize_labels(c, 7, 2);
        for (auto v : out.data) REQUIRE(v == 2);
    }
    SECTION("2x2 map to 4x4 in 2x2 blocks") {
        IndexMap m(2, 2);
        m.at(0, 0) = 0;
        m.at(0, 1) = 1;
        m.at(1, 0) = 2;
        m.at(1, 1) = 3;
        IndexMap out = resize_labels(m, 4, 4);
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                REQUIRE(out.at(y, x) == m.at(y / 2, x / 2));
            }
        }
    }
    SECTION("never introduces a new class") {
        Rng rng(25);
        for (int trial = 0; trial < 30; ++trial) {
            IndexMap m(5, 6);
            for (auto& v : m.data) v = rng.uniform_int(0, 4);
            std::set<int> in_classes(m.data.begin(), m.data.end());
            const int w = rng.uniform_int(1, 13);
            const int h = rng.uniform_int(1, 13);
            IndexMap out = resize_labels(m, w, h);
            for (auto v : out.data) REQUIRE(in_classes.count(v) == 1);
        }
    }
    SECTION("zero target rejected") {
        IndexMap m(2, 2);
        REQUIRE_THROWS_AS(resize_labels(m, 2, 0), InvalidParameterError);
    }
}

TEST_CASE("augment") {
    Rng gen_rng(26);
    Sample<float> s;
    s.image = Tensor<float>(3, 8, 8);
    for (auto& v : s.image.data) v = static_cast<float>(gen_rng.uniform());
    s.labels = IndexMap(8, 8);
    for (auto& v : s.labels.data) v = gen_rng.uniform_int(0, 2);

    SECTION("all probabilities zero is the identity") {
        AugmentConfig cfg;
        cfg.hflip_p = cfg.vflip_p = cfg.contrast_p = cfg.saturation_p = cfg.hue_p = 0.0;
        Rng rng(1);
        Sample<float> out = augment(s, cfg, rng);
        REQUIRE(out.image.data == s.image.data);
        REQUIRE(out.labels == s.labels);
    }
    SECTION("forced horizontal flip is an involution") {
        AugmentConfig cfg;
        cfg.hflip_p = 1.0;
        cfg.vflip_p = cfg.contrast_p = cfg.saturation_p = cfg.hue_p = 0.0;
        Rng r1(1), r2(2);
        Sample<float> twice = augment(augment(s, cfg, r1), cfg, r2);
        REQUIRE(twice.image.data == s.image.data);
        REQUIRE(twice.labels == s.labels);
    }
    SECTION("flips permute pixels, so label histograms are invariant") {
        AugmentConfig cfg;
        cfg.hflip_p = 1.0;
        cfg.vflip_p = 1.0;
        cfg.contrast_p = cfg.saturation_p = cfg.hue_p = 0.0;
        Rng rng(3);
        Sample<float> out = augment(s, cfg, rng);
        std::array<int, 3> before{}, after{};
        for (auto v : s.labels.data) ++before[static_cast<std::size_t>(v)];
        for (auto v : out.labels.data) ++after[static_cast<std::size_t>(v)];
        REQUIRE(before == after);
        REQUIRE(out.labels.at(0, 0) == s.labels.at(7, 7));
    }
    SECTION("color jitter leaves labels untouched and values in range") {
        AugmentConfig cfg;
        cfg.hflip_p = cfg.vflip_p = 0.0;
        cfg.contrast_p = cfg.saturation_p = cfg.hue_p = 1.0;
        Rng rng(4);
        Sample<float> out = augment(s, cfg, rng);
        REQUIRE(out.labels == s.labels);
        for (float v : out.image.data) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    SECTION("same stream, same result") {
        AugmentConfig cfg;  // defaults: everything at its paper probability
        Rng r1(5), r2(5);
        Sample<float> a = augment(s, cfg, r1);
        Sample<float> b = augment(s, cfg, r2);
        REQUIRE(a.image.data == b.image.data);
        REQUIRE(a.labels == b.labels);
    }
}

TEST_CASE("generate_shapes_dataset") {
    SECTION("same seed reproduces byte-identical samples") {
        auto a = generate_shapes_dataset<float>(5, 32, 32, 3, 99);
        auto b = generate_shapes_dataset<float>(5, 32, 32, 3, 99);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].image.data == b[i].image.data);
            REQUIRE(a[i].labels == b[i].labels);
        }
    }
    SECTION("labels stay below the class count") {
        for (int classes : {2, 3, 4}) {
            auto ds = generate_shapes_dataset<float>(8, 24, 24, classes, 1);
            for (const auto& s : ds) {
                for (auto v : s.labels.data) {
                    REQUIRE(v >= 0);
                    REQUIRE(v < classes);
                }
            }
        }
    }
    SECTION("every class appears in at least 90 of 100 samples") {
        auto ds = generate_shapes_dataset<float>(100, 64, 64, 3, 7);
        std::array<int, 3> present_count{};
        for (const auto& s : ds) {
            std::set<int> classes(s.labels.data.begin(), s.labels.data.end());
            for (int c : classes) ++present_count[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < 3; ++c) REQUIRE(present_count[static_cast<std::size_t>(c)] >= 90);
    }
    SECTION("rejects fewer than two classes") {
        REQUIRE_THROWS_AS(generate_shapes_dataset<float>(1, 16, 16, 1, 0), InvalidParameterError);
    }
}

TEST_CASE("png round trips") {
    const fs::path dir = temp_dir("png");
    const ClassPalette pal = shapes_palette(4);

    SECTION("label maps survive save/load bit-identically") {
        Rng rng(30);
        IndexMap m(9, 7);
        for (auto& v : m.data) v = rng.uniform_int(0, 3);
        const std::string path = (dir / "labels.png").string();
        save_label_png(path, m, pal);
        REQUIRE(load_label_png(path, pal) == m);
    }
    SECTION("8-bit-quantized images survive save/load bit-identically") {
        Rng rng(31);
        Tensor<float> img(3, 6, 6);
        for (auto& v : img.data) v = static_cast<float>(rng.uniform());
        quantize_to_8bit(img);
        const std::string path = (dir / "img.png").string();
        save_image_png(path, img);
        Tensor<float> back = load_image_png<float>(path);
        REQUIRE(back.data == img.data);
    }
    SECTION("palette image with classes 0 and 3 maps to indices {0,3}") {
        IndexMap m(2, 2);
        m.at(0, 0) = 0;
        m.at(0, 1) = 3;
        m.at(1, 0) = 3;
        m.at(1, 1) = 0;
        const std::string path = (dir / "two.png").string();
        save_label_png(path, m, pal);
        IndexMap back = load_label_png(path, pal);
        REQUIRE(back == m);
        const std::set<int> classes(back.data.begin(), back.data.end());
        REQUIRE(classes == std::set<int>{0, 3});
    }
    SECTION("unknown color names the color and pixel") {
        Tensor<float> img(3, 2, 2);
        img.fill(0.5f);  // (128,128,128) is not a shapes palette color
        const std::string path = (dir / "bad.png").string();
        save_image_png(path, img);
        try {
            load_label_png(path, pal);
            FAIL("expected IngestionError");
        } catch (const IngestionError& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("128") != std::string::npos);
            REQUIRE(msg.find("(0,0)") != std::string::npos);
        }
    }
    SECTION("missing file raises an I/O error") {
        REQUIRE_THROWS_AS(load_image_png<float>((dir / "nope.png").string()), IoError);
        REQUIRE_THROWS_AS(load_label_png((dir / "nope.png").string(), pal), IoError);
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset directory round trip") {
    const fs::path dir = temp_dir("ds");
    const ClassPalette pal = shapes_palette(3);
    auto ds = generate_shapes_dataset<float>(4, 16, 16, 3, 5);
    for (auto& s : ds) quantize_to_8bit(s.image);
    save_dataset_dir(dir.string(), ds, pal);

    REQUIRE(fs::exists(dir / "manifest.txt"));
    REQUIRE(read_manifest(dir.string()).size() == 4);

    auto back = load_dataset_dir<float>(dir.string(), pal);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        REQUIRE(back[i].image.data == ds[i].image.data);
        REQUIRE(back[i].labels == ds[i].labels);
    }
    fs::remove_all(dir);
}
