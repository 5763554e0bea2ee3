#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "diffseg/common.hpp"

namespace diffseg {

/// Dense rank-3 tensor stored channel-major: index (c, y, x) maps to
/// data[(c * height + y) * width + x]. Segmentation maps use channels =
/// class count, images use channels = 3.
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T(0)) {}

    T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    const T& at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    std::size_t size() const { return data.size(); }
    int plane_size() const { return height * width; }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    T* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
    const T* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * height * width; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(channels, height, width);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

/// Per-pixel class indices, row-major.
struct IndexMap {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> data;

    IndexMap() = default;
    IndexMap(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

    std::int32_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::int32_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const IndexMap& o) const { return height == o.height && width == o.width; }

    bool operator==(const IndexMap& o) const {
        return height == o.height && width == o.width && data == o.data;
    }
};

template <typename T>
inline std::string shape_string(const Tensor<T>& t) {
    return std::to_string(t.channels) + "x" + std::to_string(t.height) + "x" + std::to_string(t.width);
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

/// Fills every element with an independent standard normal draw.
template <typename T>
inline void fill_normal(Tensor<T>& t, Rng& rng) {
    for (auto& v : t.data) v = static_cast<T>(rng.normal());
}

template <typename T>
inline Tensor<T> normal_like(int c, int h, int w, Rng& rng) {
    Tensor<T> t(c, h, w);
    fill_normal(t, rng);
    return t;
}

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
    for (const T& v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

}  // namespace diffseg
