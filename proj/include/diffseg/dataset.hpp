#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

template <typename T>
struct Sample {
    Tensor<T> image;  // 3 x H x W, values in [0, 1]
    IndexMap labels;  // H x W class indices
};

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb& o) const { return r == o.r && g == o.g && b == o.b; }
};

struct ClassPalette {
    std::vector<std::string> names;
    std::vector<Rgb> colors;

    int num_classes() const { return static_cast<int>(names.size()); }

    /// Index of an exact color match, or -1.
    int find_color(Rgb c) const {
        for (std::size_t i = 0; i < colors.size(); ++i) {
            if (colors[i] == c) return static_cast<int>(i);
        }
        return -1;
    }
};

/// The eight UAVid class names with artifact-defined colors (the dataset
/// publishes names only; these colors are this project's constants).
inline ClassPalette uavid_palette() {
    return ClassPalette{
        {"Building", "Tree", "Clutter", "Road", "LowVegetation", "StaticCar", "MovingCar", "Human"},
        {{128, 0, 0}, {0, 128, 0}, {128, 64, 128}, {128, 128, 128}, {0, 255, 0}, {192, 0, 192}, {64, 0, 128}, {255, 224, 0}},
    };
}

/// Palette for the synthetic shapes data: background plus up to three shape
/// classes.
inline ClassPalette shapes_palette(int num_classes) {
    if (num_classes < 2 || num_classes > 4) {
        throw InvalidParameterError("shapes_palette: supported class counts are 2..4");
    }
    ClassPalette full{
        {"background", "rectangle", "disc", "triangle"},
        {{32, 96, 32}, {224, 48, 48}, {48, 80, 224}, {224, 208, 48}},
    };
    full.names.resize(static_cast<std::size_t>(num_classes));
    full.colors.resize(static_cast<std::size_t>(num_classes));
    return full;
}

// ---------------------------------------------------------------------------
// One-hot encoding
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> one_hot_encode(const IndexMap& labels, int num_classes) {
    Tensor<T> out(num_classes, labels.height, labels.width);
    for (int y = 0; y < labels.height; ++y) {
        for (int x = 0; x < labels.width; ++x) {
            const std::int32_t c = labels.at(y, x);
            if (c < 0 || c >= num_classes) {
                throw ValidationError("one_hot_encode: label " + std::to_string(c) + " out of range at (" +
                                      std::to_string(x) + ", " + std::to_string(y) + ")");
            }
            out.at(c, y, x) = T(1);
        }
    }
    return out;
}

/// Exactly one channel equal to 1 and the rest 0 at every pixel.
template <typename T>
inline bool is_one_hot(const Tensor<T>& seg) {
    for (int y = 0; y < seg.height; ++y) {
        for (int x = 0; x < seg.width; ++x) {
            int ones = 0;
            for (int c = 0; c < seg.channels; ++c) {
                const T v = seg.at(c, y, x);
                if (v == T(1)) {
                    ++ones;
                } else if (v != T(0)) {
                    return false;
                }
            }
            if (ones != 1) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Resizing. Both interpolators use the half-pixel-center convention:
// src = (dst + 0.5) * (src_size / dst_size) - 0.5 for bilinear and
// src = floor((dst + 0.5) * src_size / dst_size) for nearest.
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> resize_image(const Tensor<T>& image, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw InvalidParameterError("resize_image: target dims must be >= 1");
    if (new_w == image.width && new_h == image.height) return image;

    Tensor<T> out(image.channels, new_h, new_w);
    const double sx = static_cast<double>(image.width) / new_w;
    const double sy = static_cast<double>(image.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::clamp(y0 + 1, 0, image.height - 1);
        y0 = std::clamp(y0, 0, image.height - 1);
        for (int x = 0; x < new_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x1 = std::clamp(x0 + 1, 0, image.width - 1);
            x0 = std::clamp(x0, 0, image.width - 1);
            for (int c = 0; c < image.channels; ++c) {
                const double top = (1.0 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
                const double bot = (1.0 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
                out.at(c, y, x) = static_cast<T>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

inline IndexMap resize_labels(const IndexMap& labels, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw InvalidParameterError("resize_labels: target dims must be >= 1");
    if (new_w == labels.width && new_h == labels.height) return labels;

    IndexMap out(new_h, new_w);
    const double sx = static_cast<double>(labels.width) / new_w;
    const double sy = static_cast<double>(labels.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const int py = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, labels.height - 1);
        for (int x = 0; x < new_w; ++x) {
            const int px = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, labels.width - 1);
            out.at(y, x) = labels.at(py, px);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double hflip_p = 0.5;
    double vflip_p = 0.0;  // 0.5 for Vaihingen-style tasks
    double contrast_p = 0.5;
    double saturation_p = 0.5;
    double hue_p = 0.5;
    double contrast_factor = 0.5;
    double saturation_factor = 0.5;
    double hue_factor = 0.05;
};

namespace detail {

template <typename T>
inline void flip_horizontal(Tensor<T>& img) {
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width / 2; ++x) {
                std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
            }
        }
    }
}

inline void flip_horizontal(IndexMap& m) {
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width / 2; ++x) std::swap(m.at(y, x), m.at(y, m.width - 1 - x));
    }
}

template <typename T>
inline void flip_vertical(Tensor<T>& img) {
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height / 2; ++y) {
            for (int x = 0; x < img.width; ++x) {
                std::swap(img.at(c, y, x), img.at(c, img.height - 1 - y, x));
            }
        }
    }
}

inline void flip_vertical(IndexMap& m) {
    for (int y = 0; y < m.height / 2; ++y) {
        for (int x = 0; x < m.width; ++x) std::swap(m.at(y, x), m.at(m.height - 1 - y, x));
    }
}

template <typename T>
inline double luma(const Tensor<T>& img, int y, int x) {
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

// RGB <-> HSV on [0,1] floats; hue in [0,1).
inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx <= 0.0 ? 0.0 : d / mx;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) {
        h = (g - b) / d;
    } else if (mx == g) {
        h = 2.0 + (b - r) / d;
    } else {
        h = 4.0 + (r - g) / d;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    if (s <= 0.0) {
        r = g = b = v;
        return;
    }
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int i = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace detail

/// Applies each transform independently with its configured probability.
/// Flips act on image and labels jointly; color jitter touches the image
/// only. The rng is consumed in a fixed order (decision then factor) so a
/// given stream always produces the same augmentation.
template <typename T>
inline Sample<T> augment(const Sample<T>& sample, const AugmentConfig& cfg, Rng& rng) {
    Sample<T> out = sample;

    if (rng.uniform() < cfg.hflip_p) {
        detail::flip_horizontal(out.image);
        detail::flip_horizontal(out.labels);
    }
    if (rng.uniform() < cfg.vflip_p) {
        detail::flip_vertical(out.image);
        detail::flip_vertical(out.labels);
    }

    if (rng.uniform() < cfg.contrast_p) {
        const double f = rng.uniform(1.0 - cfg.contrast_factor, 1.0 + cfg.contrast_factor);
        double mean = 0.0;
        for (int y = 0; y < out.image.height; ++y) {
            for (int x = 0; x < out.image.width; ++x) mean += detail::luma(out.image, y, x);
        }
        mean /= static_cast<double>(out.image.plane_size());
        for (auto& v : out.image.data) {
            v = static_cast<T>(std::clamp(mean + f * (static_cast<double>(v) - mean), 0.0, 1.0));
        }
    }

    if (rng.uniform() < cfg.saturation_p) {
        const double f = rng.uniform(1.0 - cfg.saturation_factor, 1.0 + cfg.saturation_factor);
        for (int y = 0; y < out.image.height; ++y) {
            for (int x = 0; x < out.image.width; ++x) {
                const double l = detail::luma(out.image, y, x);
                for (int c = 0; c < 3; ++c) {
                    const double v = l + f * (out.image.at(c, y, x) - l);
                    out.image.at(c, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }

    if (rng.uniform() < cfg.hue_p) {
        const double shift = rng.uniform(-cfg.hue_factor, cfg.hue_factor);  // fraction of a full cycle
        for (int y = 0; y < out.image.height; ++y) {
            for (int x = 0; x < out.image.width; ++x) {
                double h, s, v, r, g, b;
                detail::rgb_to_hsv(out.image.at(0, y, x), out.image.at(1, y, x), out.image.at(2, y, x), h, s, v);
                detail::hsv_to_rgb(h + shift, s, v, r, g, b);
                out.image.at(0, y, x) = static_cast<T>(std::clamp(r, 0.0, 1.0));
                out.image.at(1, y, x) = static_cast<T>(std::clamp(g, 0.0, 1.0));
                out.image.at(2, y, x) = static_cast<T>(std::clamp(b, 0.0, 1.0));
            }
        }
    }

    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes generator: a desk-scale stand-in for aerial data. Each
// sample is a textured background (class 0) plus non-occluding shapes with
// class-correlated colors: rectangles (1), discs (2), triangles (3 when the
// class count allows). Labels are exact rasterizations over pixel centers.
// ---------------------------------------------------------------------------

namespace detail {

struct ShapeMask {
    std::vector<std::uint8_t> in;  // h*w flags
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

inline bool overlaps(const ShapeMask& a, const std::vector<std::uint8_t>& occupied, int w) {
    for (int y = a.y0; y <= a.y1; ++y) {
        for (int x = a.x0; x <= a.x1; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (a.in[i] && occupied[i]) return true;
        }
    }
    return false;
}

}  // namespace detail

template <typename T>
inline std::vector<Sample<T>> generate_shapes_dataset(int n, int w, int h, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw InvalidParameterError("generate_shapes_dataset: need at least 2 classes");
    const int shape_kinds = std::min(num_classes - 1, 3);
    const ClassPalette palette = shapes_palette(std::min(num_classes, 4));

    std::vector<Sample<T>> out;
    out.reserve(static_cast<std::size_t>(n));

    for (int idx = 0; idx < n; ++idx) {
        Rng rng = make_stream(seed, {kStreamData, static_cast<std::uint64_t>(idx)});
        Sample<T> s;
        s.image = Tensor<T>(3, h, w);
        s.labels = IndexMap(h, w);

        // Textured background: base color, a soft diagonal ramp, pixel noise.
        const double ramp = rng.uniform(-0.08, 0.08);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double t = ramp * (static_cast<double>(x + y) / (w + h) - 0.5);
                for (int c = 0; c < 3; ++c) {
                    const double base = palette.colors[0].r / 255.0 * (c == 0) +
                                        palette.colors[0].g / 255.0 * (c == 1) +
                                        palette.colors[0].b / 255.0 * (c == 2);
                    const double v = base + t + rng.uniform(-0.05, 0.05);
                    s.image.at(c, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
                }
            }
        }

        // Shape count is biased toward >= 2 so that with three classes both
        // shape kinds appear in nearly every sample.
        const double u = rng.uniform();
        const int count = u < 0.1 ? 1 : (u < 0.4 ? 2 : (u < 0.7 ? 3 : 4));

        std::vector<std::uint8_t> occupied(static_cast<std::size_t>(w) * h, 0);
        const int min_dim = std::min(w, h);

        for (int k = 0; k < count; ++k) {
            // The first `shape_kinds` shapes cycle through all kinds (rotated
            // per sample); later ones are uniform draws.
            int kind;
            if (k < shape_kinds) {
                kind = (k + idx) % shape_kinds;
            } else {
                kind = rng.uniform_int(0, shape_kinds - 1);
            }
            const int cls = kind + 1;

            detail::ShapeMask mask;
            bool placed = false;
            for (int tries = 0; tries < 40 && !placed; ++tries) {
                mask.in.assign(static_cast<std::size_t>(w) * h, 0);
                if (kind == 0) {  // rectangle
                    const int rw = rng.uniform_int(min_dim / 8, min_dim / 3);
                    const int rh = rng.uniform_int(min_dim / 8, min_dim / 3);
                    const int rx = rng.uniform_int(1, w - rw - 2);
                    const int ry = rng.uniform_int(1, h - rh - 2);
                    mask.x0 = rx;
                    mask.y0 = ry;
                    mask.x1 = rx + rw - 1;
                    mask.y1 = ry + rh - 1;
                    for (int y = mask.y0; y <= mask.y1; ++y) {
                        for (int x = mask.x0; x <= mask.x1; ++x) {
                            mask.in[static_cast<std::size_t>(y) * w + x] = 1;
                        }
                    }
                } else if (kind == 1) {  // disc
                    const int r = rng.uniform_int(min_dim / 12, min_dim / 5);
                    const int cx = rng.uniform_int(r + 1, w - r - 2);
                    const int cy = rng.uniform_int(r + 1, h - r - 2);
                    mask.x0 = cx - r;
                    mask.y0 = cy - r;
                    mask.x1 = cx + r;
                    mask.y1 = cy + r;
                    for (int y = mask.y0; y <= mask.y1; ++y) {
                        for (int x = mask.x0; x <= mask.x1; ++x) {
                            const int dx = x - cx;
                            const int dy = y - cy;
                            if (dx * dx + dy * dy <= r * r) mask.in[static_cast<std::size_t>(y) * w + x] = 1;
                        }
                    }
                } else {  // triangle: isoceles with random apex direction
                    const int half = rng.uniform_int(min_dim / 10, min_dim / 4);
                    const int cx = rng.uniform_int(half + 1, w - half - 2);
                    const int cy = rng.uniform_int(half + 1, h - half - 2);
                    const double a0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                    double px[3], py[3];
                    for (int v = 0; v < 3; ++v) {
                        const double a = a0 + v * 2.0 * 3.14159265358979323846 / 3.0;
                        px[v] = cx + half * std::cos(a);
                        py[v] = cy + half * std::sin(a);
                    }
                    mask.x0 = std::max(0, static_cast<int>(std::floor(std::min({px[0], px[1], px[2]}))));
                    mask.x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({px[0], px[1], px[2]}))));
                    mask.y0 = std::max(0, static_cast<int>(std::floor(std::min({py[0], py[1], py[2]}))));
                    mask.y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({py[0], py[1], py[2]}))));
                    auto edge = [](double ax, double ay, double bx, double by, double x, double y) {
                        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                    };
                    for (int y = mask.y0; y <= mask.y1; ++y) {
                        for (int x = mask.x0; x <= mask.x1; ++x) {
                            const double e0 = edge(px[0], py[0], px[1], py[1], x, y);
                            const double e1 = edge(px[1], py[1], px[2], py[2], x, y);
                            const double e2 = edge(px[2], py[2], px[0], py[0], x, y);
                            const bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
                            if (inside) mask.in[static_cast<std::size_t>(y) * w + x] = 1;
                        }
                    }
                }
                placed = !detail::overlaps(mask, occupied, w);
            }
            if (!placed) continue;

            const Rgb base = palette.colors[static_cast<std::size_t>(cls)];
            const double jr = rng.uniform(-0.1, 0.1);
            const double jg = rng.uniform(-0.1, 0.1);
            const double jb = rng.uniform(-0.1, 0.1);
            for (int y = mask.y0; y <= mask.y1; ++y) {
                for (int x = mask.x0; x <= mask.x1; ++x) {
                    if (!mask.in[static_cast<std::size_t>(y) * w + x]) continue;
                    occupied[static_cast<std::size_t>(y) * w + x] = 1;
                    s.labels.at(y, x) = cls;
                    const double noise = rng.uniform(-0.05, 0.05);
                    s.image.at(0, y, x) = static_cast<T>(std::clamp(base.r / 255.0 + jr + noise, 0.0, 1.0));
                    s.image.at(1, y, x) = static_cast<T>(std::clamp(base.g / 255.0 + jg + noise, 0.0, 1.0));
                    s.image.at(2, y, x) = static_cast<T>(std::clamp(base.b / 255.0 + jb + noise, 0.0, 1.0));
                }
            }
        }

        out.push_back(std::move(s));
    }
    return out;
}

/// Rounds image values to the 8-bit grid used by the PNG pipeline, so
/// in-memory datasets match what a save/load round trip would produce.
template <typename T>
inline void quantize_to_8bit(Tensor<T>& image) {
    for (auto& v : image.data) {
        const double q = std::round(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0) / 255.0;
        v = static_cast<T>(q);
    }
}

}  // namespace diffseg
