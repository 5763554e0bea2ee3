#pragma once

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/dataset.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {
namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

struct RawPng {
    int width = 0;
    int height = 0;
    bool paletted = false;
    std::vector<std::uint8_t> pixels;  // RGB triples, or palette indices when paletted
    std::vector<Rgb> palette;          // file palette when paletted
};

/// Reads a PNG. Paletted files keep their index plane and palette; anything
/// else is expanded to 8-bit RGB.
inline RawPng read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);

    PngRead ctx;
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IngestionError("not a valid PNG: " + path);

    png_init_io(ctx.png, f.get());
    png_read_info(ctx.png, ctx.info);

    RawPng out;
    out.width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    out.height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    const int color_type = png_get_color_type(ctx.png, ctx.info);
    const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);

    out.paletted = color_type == PNG_COLOR_TYPE_PALETTE;
    if (out.paletted) {
        if (bit_depth < 8) png_set_packing(ctx.png);
        png_colorp plte = nullptr;
        int n = 0;
        png_get_PLTE(ctx.png, ctx.info, &plte, &n);
        for (int i = 0; i < n; ++i) {
            out.palette.push_back({plte[i].red, plte[i].green, plte[i].blue});
        }
    } else {
        if (bit_depth == 16) png_set_strip_16(ctx.png);
        if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
            png_set_gray_to_rgb(ctx.png);
        }
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
        if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png), png_set_strip_alpha(ctx.png);
    }
    png_read_update_info(ctx.png, ctx.info);

    const std::size_t row_bytes = png_get_rowbytes(ctx.png, ctx.info);
    out.pixels.resize(row_bytes * out.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.pixels.data() + row_bytes * y;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return out;
}

inline void write_png(const std::string& path, int width, int height, int color_type,
                      const std::uint8_t* pixels, std::size_t row_bytes, const std::vector<Rgb>* palette) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path);

    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG write failed: " + path);

    png_init_io(ctx.png, f.get());
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> plte;
    if (palette) {
        for (const Rgb& c : *palette) plte.push_back({c.r, c.g, c.b});
        png_set_PLTE(ctx.png, ctx.info, plte.data(), static_cast<int>(plte.size()));
    }
    png_write_info(ctx.png, ctx.info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(pixels + row_bytes * y);
    }
    png_write_image(ctx.png, rows.data());
    png_write_end(ctx.png, nullptr);
}

}  // namespace detail

/// Loads an RGB image as 3 x H x W with values in [0, 1].
template <typename T>
inline Tensor<T> load_image_png(const std::string& path) {
    detail::RawPng raw = detail::read_png(path);
    Tensor<T> img(3, raw.height, raw.width);
    if (raw.paletted) {
        for (int y = 0; y < raw.height; ++y) {
            for (int x = 0; x < raw.width; ++x) {
                const std::uint8_t i = raw.pixels[static_cast<std::size_t>(y) * raw.width + x];
                if (i >= raw.palette.size()) throw IngestionError("palette index out of range in " + path);
                const Rgb c = raw.palette[i];
                img.at(0, y, x) = static_cast<T>(c.r / 255.0);
                img.at(1, y, x) = static_cast<T>(c.g / 255.0);
                img.at(2, y, x) = static_cast<T>(c.b / 255.0);
            }
        }
    } else {
        for (int y = 0; y < raw.height; ++y) {
            for (int x = 0; x < raw.width; ++x) {
                const std::uint8_t* p = raw.pixels.data() + (static_cast<std::size_t>(y) * raw.width + x) * 3;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<T>(p[c] / 255.0);
            }
        }
    }
    return img;
}

/// Saves an RGB image; values are clamped to [0, 1] and quantized to 8 bits.
template <typename T>
inline void save_image_png(const std::string& path, const Tensor<T>& img) {
    if (img.channels != 3) throw ShapeError("save_image_png: expected 3 channels, got " + std::to_string(img.channels));
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.height) * img.width * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
                bytes[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, bytes.data(),
                      static_cast<std::size_t>(img.width) * 3, nullptr);
}

/// Saves a label map as a palette PNG whose PLTE holds the class colors in
/// class order, so indices round-trip exactly.
inline void save_label_png(const std::string& path, const IndexMap& labels, const ClassPalette& palette) {
    std::vector<std::uint8_t> bytes(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const std::int32_t c = labels.data[i];
        if (c < 0 || c >= palette.num_classes()) {
            throw ValidationError("save_label_png: label " + std::to_string(c) + " has no palette entry");
        }
        bytes[i] = static_cast<std::uint8_t>(c);
    }
    detail::write_png(path, labels.width, labels.height, PNG_COLOR_TYPE_PALETTE, bytes.data(),
                      static_cast<std::size_t>(labels.width), &palette.colors);
}

/// Loads a label map, mapping colors to class indices through the palette.
/// Works for palette PNGs (entry colors looked up) and plain RGB PNGs
/// (per-pixel lookup). A color missing from the palette is an ingestion
/// error naming the color and the first offending pixel.
inline IndexMap load_label_png(const std::string& path, const ClassPalette& palette) {
    detail::RawPng raw = detail::read_png(path);
    IndexMap out(raw.height, raw.width);
    if (raw.paletted) {
        // Map file palette entries to class indices once, then translate.
        std::vector<int> entry_to_class(raw.palette.size(), -1);
        for (std::size_t i = 0; i < raw.palette.size(); ++i) {
            entry_to_class[i] = palette.find_color(raw.palette[i]);
        }
        for (int y = 0; y < raw.height; ++y) {
            for (int x = 0; x < raw.width; ++x) {
                const std::uint8_t e = raw.pixels[static_cast<std::size_t>(y) * raw.width + x];
                if (e >= raw.palette.size()) throw IngestionError("palette index out of range in " + path);
                const int cls = entry_to_class[e];
                if (cls < 0) {
                    const Rgb c = raw.palette[e];
                    throw IngestionError("unknown color (" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
                                         std::to_string(c.b) + ") at pixel (" + std::to_string(x) + "," +
                                         std::to_string(y) + ") in " + path);
                }
                out.at(y, x) = cls;
            }
        }
    } else {
        for (int y = 0; y < raw.height; ++y) {
            for (int x = 0; x < raw.width; ++x) {
                const std::uint8_t* p = raw.pixels.data() + (static_cast<std::size_t>(y) * raw.width + x) * 3;
                const Rgb c{p[0], p[1], p[2]};
                const int cls = palette.find_color(c);
                if (cls < 0) {
                    throw IngestionError("unknown color (" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
                                         std::to_string(c.b) + ") at pixel (" + std::to_string(x) + "," +
                                         std::to_string(y) + ") in " + path);
                }
                out.at(y, x) = cls;
            }
        }
    }
    return out;
}

template <typename T>
inline Sample<T> load_png_pair(const std::string& image_path, const std::string& label_path,
                               const ClassPalette& palette) {
    Sample<T> s;
    s.image = load_image_png<T>(image_path);
    s.labels = load_label_png(label_path, palette);
    if (s.image.height != s.labels.height || s.image.width != s.labels.width) {
        throw ShapeError("load_png_pair: image and label dims differ for " + image_path);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: <dir>/images/*.png, <dir>/labels/*.png and a
// plain-text manifest listing one "images/<f> labels/<f>" pair per line.
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& dir, const std::vector<std::string>& basenames) {
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw IoError("cannot write manifest in " + dir);
    for (const auto& b : basenames) os << "images/" << b << " labels/" << b << "\n";
}

inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw IoError("missing manifest.txt in " + dir);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!(ls >> a >> b)) throw IngestionError("malformed manifest line: " + line);
        out.emplace_back(a, b);
    }
    return out;
}

/// Writes a full split: images/, labels/, manifest.txt.
template <typename T>
inline void save_dataset_dir(const std::string& dir, const std::vector<Sample<T>>& samples,
                             const ClassPalette& palette) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    std::vector<std::string> basenames;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        basenames.emplace_back(name);
        save_image_png(dir + "/images/" + name, samples[i].image);
        save_label_png(dir + "/labels/" + name, samples[i].labels, palette);
    }
    write_manifest(dir, basenames);
}

template <typename T>
inline std::vector<Sample<T>> load_dataset_dir(const std::string& dir, const ClassPalette& palette) {
    std::vector<Sample<T>> out;
    for (const auto& [img_rel, lbl_rel] : read_manifest(dir)) {
        out.push_back(load_png_pair<T>(dir + "/" + img_rel, dir + "/" + lbl_rel, palette));
    }
    return out;
}

}  // namespace diffseg
