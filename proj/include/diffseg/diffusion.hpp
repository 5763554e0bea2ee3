#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// Linear noise schedule beta_t = t / T, t in [0, T]. beta_t is the standard
/// deviation of the noise added to the running estimate at step t.
struct NoiseSchedule {
    int steps = 0;                // T
    std::vector<double> betas;    // length T + 1, betas[t] = t / T

    double beta(int t) const { return betas[static_cast<std::size_t>(t)]; }
};

inline NoiseSchedule make_schedule(int steps) {
    if (steps < 1) throw InvalidParameterError("make_schedule: T must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps) + 1);
    for (int t = 0; t <= steps; ++t) {
        s.betas[static_cast<std::size_t>(t)] = static_cast<double>(t) / static_cast<double>(steps);
    }
    return s;
}

/// One diffuse step: noisy = seg + z * (t/T) with z drawn elementwise from
/// the standard normal. Returns the draw as well so callers can form
/// training targets.
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> diffuse(const Tensor<T>& seg, int t, const NoiseSchedule& schedule, Rng& rng) {
    if (t < 0 || t > schedule.steps) {
        throw InvalidParameterError("diffuse: t = " + std::to_string(t) + " outside [0, " +
                                    std::to_string(schedule.steps) + "]");
    }
    Tensor<T> z = normal_like<T>(seg.channels, seg.height, seg.width, rng);
    Tensor<T> noisy = seg;
    const T scale = static_cast<T>(schedule.beta(t));
    for (std::size_t i = 0; i < noisy.data.size(); ++i) noisy.data[i] += z.data[i] * scale;
    return {std::move(noisy), std::move(z)};
}

/// Total noise accumulated in a noisy map: eps_t = s_t - s_0.
template <typename T>
inline Tensor<T> total_noise(const Tensor<T>& noisy, const Tensor<T>& clean) {
    require_same_shape(noisy, clean, "total_noise");
    Tensor<T> eps(noisy.channels, noisy.height, noisy.width);
    for (std::size_t i = 0; i < eps.data.size(); ++i) eps.data[i] = noisy.data[i] - clean.data[i];
    return eps;
}

/// Clean-map estimate from a noise prediction: s_0 ~= s_t - eps.
template <typename T>
inline Tensor<T> recover_clean(const Tensor<T>& noisy, const Tensor<T>& predicted_noise) {
    require_same_shape(noisy, predicted_noise, "recover_clean");
    Tensor<T> clean(noisy.channels, noisy.height, noisy.width);
    for (std::size_t i = 0; i < clean.data.size(); ++i) clean.data[i] = noisy.data[i] - predicted_noise.data[i];
    return clean;
}

template <typename T>
struct MseResult {
    double loss = 0.0;
    Tensor<T> gradient;  // d loss / d predicted
};

/// Mean squared error over all elements plus its gradient w.r.t. the
/// prediction, 2 (predicted - target) / N.
template <typename T>
inline MseResult<T> mse_loss(const Tensor<T>& predicted, const Tensor<T>& target) {
    require_same_shape(predicted, target, "mse_loss");
    if (predicted.data.empty()) throw InvalidParameterError("mse_loss: empty tensor");
    MseResult<T> r;
    r.gradient = Tensor<T>(predicted.channels, predicted.height, predicted.width);
    const double inv_n = 1.0 / static_cast<double>(predicted.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < predicted.data.size(); ++i) {
        const double d = static_cast<double>(predicted.data[i]) - static_cast<double>(target.data[i]);
        acc += d * d;
        r.gradient.data[i] = static_cast<T>(2.0 * d * inv_n);
    }
    r.loss = acc * inv_n;
    return r;
}

}  // namespace diffseg
