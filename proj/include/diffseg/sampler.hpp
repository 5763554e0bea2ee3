#pragma once

#include <utility>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/dataset.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

struct SampleConfig {
    int stride = 1;          // step-list stride when no explicit list is given
    std::vector<int> steps;  // explicit executed steps, strictly decreasing in [1, T]
    int scales = 1;          // M
    int ensemble = 1;
    std::uint64_t seed = 0;
};

/// Executed-step list T, T - stride, ... down to 1 (always >= 1 entries).
inline std::vector<int> make_step_list(int total_steps, int stride) {
    if (total_steps < 1) throw InvalidParameterError("make_step_list: T must be >= 1");
    if (stride < 1) throw InvalidParameterError("make_step_list: stride must be >= 1");
    std::vector<int> out;
    for (int t = total_steps; t >= 1; t -= stride) out.push_back(t);
    return out;
}

inline void validate_step_list(const std::vector<int>& steps, int total_steps) {
    if (steps.empty()) throw InvalidParameterError("step list is empty");
    int prev = total_steps + 1;
    for (int t : steps) {
        if (t < 1 || t > total_steps) {
            throw InvalidParameterError("step " + std::to_string(t) + " outside [1, " + std::to_string(total_steps) +
                                        "]");
        }
        if (t >= prev) throw InvalidParameterError("step list must be strictly decreasing");
        prev = t;
    }
}

/// Per-pixel argmax over channels; ties resolve to the lowest class index.
template <typename T>
inline IndexMap argmax_decode(const Tensor<T>& soft) {
    IndexMap out(soft.height, soft.width);
    for (int y = 0; y < soft.height; ++y) {
        for (int x = 0; x < soft.width; ++x) {
            int best = 0;
            T best_v = soft.at(0, y, x);
            for (int c = 1; c < soft.channels; ++c) {
                const T v = soft.at(c, y, x);
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            out.at(y, x) = best;
        }
    }
    return out;
}

template <typename T>
struct SampleResult {
    Tensor<T> soft;   // final continuous estimate, full resolution
    IndexMap labels;  // its argmax
};

namespace detail {

/// The shared inference recursion. Net is any type exposing num_classes()
/// and forward(seg, image, t); tests substitute doubles for the trained
/// network here.
template <typename T, typename Net>
inline Tensor<T> run_denoise_loop(Net& net, const Tensor<T>& image, const NoiseSchedule& schedule,
                                  const std::vector<int>& steps, int num_scales, Rng& rng) {
    const int w = image.width;
    const int h = image.height;
    const int div = 1 << (num_scales - 1);
    if (w % div != 0 || h % div != 0) {
        throw ShapeError("sample: dims must be divisible by 2^(M-1) = " + std::to_string(div));
    }

    std::vector<Tensor<T>> image_at(static_cast<std::size_t>(num_scales));
    for (int m = 1; m <= num_scales; ++m) {
        const int f = 1 << (m - 1);
        image_at[static_cast<std::size_t>(m - 1)] = resize_image(image, w / f, h / f);
    }

    Tensor<T> estimate = normal_like<T>(net.num_classes(), h, w, rng);
    for (int t : steps) {
        for (int m = num_scales; m >= 1; --m) {
            const int f = 1 << (m - 1);
            if (estimate.width != w / f || estimate.height != h / f) {
                estimate = resize_image(estimate, w / f, h / f);
            }
            auto [noisy, z] = diffuse(estimate, t, schedule, rng);
            Tensor<T> predicted = net.forward(noisy, image_at[static_cast<std::size_t>(m - 1)], t);
            estimate = recover_clean(noisy, predicted);
        }
    }
    return estimate;
}

}  // namespace detail

/// Recursive denoising inference: start from pure noise and execute the
/// chosen step list in decreasing order (all steps by default, a strided
/// subset when skipping). Each executed step keeps its original t, so noise
/// magnitude and time embedding stay consistent; the clean-estimate jump
/// carries over skipped steps.
template <typename T, typename Net>
inline SampleResult<T> sample(Net& net, const Tensor<T>& image, const NoiseSchedule& schedule,
                              const SampleConfig& cfg) {
    std::vector<int> steps = cfg.steps.empty() ? make_step_list(schedule.steps, cfg.stride) : cfg.steps;
    validate_step_list(steps, schedule.steps);
    if (cfg.scales < 1) throw InvalidParameterError("sample: scales must be >= 1");

    Rng rng = make_stream(cfg.seed, {kStreamSample, 0});
    SampleResult<T> r;
    r.soft = detail::run_denoise_loop(net, image, schedule, steps, cfg.scales, rng);
    r.labels = argmax_decode(r.soft);
    return r;
}

/// Fixed-order mean of soft maps (ensemble combination happens in
/// continuous space, before any argmax).
template <typename T>
inline Tensor<T> average_soft(const std::vector<Tensor<T>>& members) {
    if (members.empty()) throw InvalidParameterError("average_soft: no members");
    Tensor<T> out(members[0].channels, members[0].height, members[0].width);
    for (const Tensor<T>& m : members) require_same_shape(out, m, "average_soft");
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double acc = 0.0;
        for (const Tensor<T>& m : members) acc += static_cast<double>(m.data[i]);
        out.data[i] = static_cast<T>(acc * inv);
    }
    return out;
}

/// Runs cfg.ensemble independent denoising passes (member j draws its noise
/// from the (seed, j) stream; member 0 matches plain sample()) and averages
/// the continuous outputs before decoding.
template <typename T, typename Net>
inline SampleResult<T> sample_ensemble(Net& net, const Tensor<T>& image, const NoiseSchedule& schedule,
                                       const SampleConfig& cfg) {
    if (cfg.ensemble < 1) throw InvalidParameterError("sample_ensemble: ensemble must be >= 1");
    std::vector<int> steps = cfg.steps.empty() ? make_step_list(schedule.steps, cfg.stride) : cfg.steps;
    validate_step_list(steps, schedule.steps);
    if (cfg.scales < 1) throw InvalidParameterError("sample: scales must be >= 1");

    std::vector<Tensor<T>> members;
    members.reserve(static_cast<std::size_t>(cfg.ensemble));
    for (int j = 0; j < cfg.ensemble; ++j) {
        Rng rng = make_stream(cfg.seed, {kStreamSample, static_cast<std::uint64_t>(j)});
        members.push_back(detail::run_denoise_loop(net, image, schedule, steps, cfg.scales, rng));
    }
    SampleResult<T> r;
    r.soft = average_soft(members);
    r.labels = argmax_decode(r.soft);
    return r;
}

}  // namespace diffseg
