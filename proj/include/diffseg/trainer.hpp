#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/dataset.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/optimizer.hpp"
#include "diffseg/serialize.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

struct TrainConfig {
    int time_steps = 25;           // T
    int scales = 1;                // M; 1 = plain recursive denoising
    double lr = 5e-5;
    double lr_decay_gamma = 0.95;  // applied per epoch
    double weight_decay = 1e-3;
    double clip_norm = 1.0;
    int epochs = 70;
    std::uint64_t seed = 0;
    AugmentConfig augment;
    bool augment_enabled = true;
    bool record_step_losses = false;

    void validate() const {
        if (time_steps < 1) throw InvalidParameterError("TrainConfig: time_steps must be >= 1");
        if (scales < 1) throw InvalidParameterError("TrainConfig: scales must be >= 1");
        if (lr < 0.0) throw InvalidParameterError("TrainConfig: lr must be >= 0");  // 0 freezes updates
        if (lr_decay_gamma <= 0.0 || lr_decay_gamma > 1.0) {
            throw InvalidParameterError("TrainConfig: lr_decay_gamma must be in (0, 1]");
        }
        if (clip_norm <= 0.0) throw InvalidParameterError("TrainConfig: clip_norm must be > 0");
        if (epochs < 0) throw InvalidParameterError("TrainConfig: epochs must be >= 0");
    }

    /// lr at a given epoch index: lr * gamma^epoch.
    double lr_at_epoch(int epoch) const { return lr * std::pow(lr_decay_gamma, static_cast<double>(epoch)); }
};

struct StepLoss {
    int t = 0;
    int scale = 1;
    double loss = 0.0;
};

struct TrainReport {
    std::vector<double> epoch_mean_loss;
    std::vector<StepLoss> step_losses;  // populated when record_step_losses is set
    double wall_seconds = 0.0;
    std::uint32_t param_checksum = 0;
};

namespace detail {

/// One-hot nearest resize via the index map, so discreteness survives.
template <typename T>
inline Tensor<T> resize_onehot_nearest(const Tensor<T>& onehot, int new_w, int new_h) {
    IndexMap idx(onehot.height, onehot.width);
    for (int y = 0; y < onehot.height; ++y) {
        for (int x = 0; x < onehot.width; ++x) {
            for (int c = 0; c < onehot.channels; ++c) {
                if (onehot.at(c, y, x) == T(1)) {
                    idx.at(y, x) = c;
                    break;
                }
            }
        }
    }
    return one_hot_encode<T>(resize_labels(idx, new_w, new_h), onehot.channels);
}

}  // namespace detail

/// Shared walk for Algorithm-style training on one sample: for each time
/// step T..1 and each scale M..1, diffuse the running estimate, predict the
/// noise, update parameters against the loss | eps_hat - (s' - labels) |,
/// and carry the denoised estimate forward as data (no gradient flows
/// through the recursion). With scales = 1 the inner loop degenerates and
/// this is exactly recursive denoising.
template <typename T>
inline std::vector<StepLoss> train_sample_scales(DenoiserNetwork<T>& net, AdamW<T>& opt, const Tensor<T>& image,
                                                 const Tensor<T>& labels, const TrainConfig& cfg, int num_scales,
                                                 double lr, Rng& rng) {
    if (!is_one_hot(labels)) throw ValidationError("train sample: labels are not strictly one-hot");
    if (image.height != labels.height || image.width != labels.width) {
        throw ShapeError("train sample: image and label dims differ");
    }
    const int div = (1 << (num_scales - 1)) * (1 << net.config().depth);
    if (labels.width % div != 0 || labels.height % div != 0) {
        throw ShapeError("train sample: dims must be divisible by 2^(M-1) * 2^depth = " + std::to_string(div));
    }

    const NoiseSchedule schedule = make_schedule(cfg.time_steps);

    // Per-scale conditioning: bilinear for the image, nearest for labels.
    std::vector<Tensor<T>> image_at(static_cast<std::size_t>(num_scales));
    std::vector<Tensor<T>> labels_at(static_cast<std::size_t>(num_scales));
    for (int m = 1; m <= num_scales; ++m) {
        const int f = 1 << (m - 1);
        image_at[static_cast<std::size_t>(m - 1)] = resize_image(image, image.width / f, image.height / f);
        labels_at[static_cast<std::size_t>(m - 1)] =
            detail::resize_onehot_nearest(labels, labels.width / f, labels.height / f);
    }

    std::vector<StepLoss> out;
    out.reserve(static_cast<std::size_t>(cfg.time_steps) * num_scales);

    Tensor<T> estimate = normal_like<T>(labels.channels, labels.height, labels.width, rng);

    for (int t = cfg.time_steps; t >= 1; --t) {
        for (int m = num_scales; m >= 1; --m) {
            const int f = 1 << (m - 1);
            const int sw = labels.width / f;
            const int sh = labels.height / f;
            if (estimate.width != sw || estimate.height != sh) {
                estimate = resize_image(estimate, sw, sh);
            }

            auto [noisy, z] = diffuse(estimate, t, schedule, rng);
            Tensor<T> predicted = net.forward(noisy, image_at[static_cast<std::size_t>(m - 1)], t);
            Tensor<T> target = total_noise(noisy, labels_at[static_cast<std::size_t>(m - 1)]);

            MseResult<T> mse = mse_loss(predicted, target);
            if (!std::isfinite(mse.loss)) {
                throw DivergedError("training diverged: non-finite loss at t=" + std::to_string(t));
            }

            net.zero_grads();
            net.backward(mse.gradient);
            opt.step(lr, cfg.clip_norm);

            estimate = recover_clean(noisy, predicted);
            out.push_back({t, m, mse.loss});
        }
    }
    return out;
}

/// Algorithm 1: recursive denoising over all time steps of one sample.
template <typename T>
inline std::vector<StepLoss> train_sample_recursive(DenoiserNetwork<T>& net, AdamW<T>& opt, const Tensor<T>& image,
                                                    const Tensor<T>& labels, const TrainConfig& cfg, double lr,
                                                    Rng& rng) {
    return train_sample_scales(net, opt, image, labels, cfg, 1, lr, rng);
}

/// Algorithm 2: hierarchical scales; cfg.scales levels per time step,
/// coarsest first, the running estimate resized between levels.
template <typename T>
inline std::vector<StepLoss> train_sample_multiscale(DenoiserNetwork<T>& net, AdamW<T>& opt, const Tensor<T>& image,
                                                     const Tensor<T>& labels, const TrainConfig& cfg, double lr,
                                                     Rng& rng) {
    return train_sample_scales(net, opt, image, labels, cfg, cfg.scales, lr, rng);
}

template <typename T>
struct TrainHooks {
    std::function<void(int epoch, int sample_index, const StepLoss&)> on_step;
    std::function<void(int epochs_done, const TrainReport&)> on_epoch;
};

/// Epoch loop over a dataset starting at start_epoch (supports resume).
/// Sample order is reshuffled and augmentation re-drawn per epoch; every
/// random stream derives from (seed, epoch, sample), so a resumed run
/// replays exactly what an uninterrupted one would do.
template <typename T>
inline TrainReport train_loop(DenoiserNetwork<T>& net, AdamW<T>& opt, const std::vector<Sample<T>>& dataset,
                              const TrainConfig& cfg, int start_epoch = 0, const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    if (dataset.empty()) throw InvalidParameterError("train: dataset is empty");

    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at_epoch(epoch);

        std::vector<int> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = make_stream(cfg.seed, {kStreamOrder, static_cast<std::uint64_t>(epoch)});
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);
        }

        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        for (int idx : order) {
            const Sample<T>* sample = &dataset[static_cast<std::size_t>(idx)];
            Sample<T> augmented;
            if (cfg.augment_enabled) {
                Rng aug_rng = make_stream(
                    cfg.seed, {kStreamAugment, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)});
                augmented = augment(*sample, cfg.augment, aug_rng);
                sample = &augmented;
            }
            const Tensor<T> onehot = one_hot_encode<T>(sample->labels, net.config().num_classes);

            Rng step_rng = make_stream(
                cfg.seed, {kStreamTrain, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)});
            const std::vector<StepLoss> steps =
                train_sample_scales(net, opt, sample->image, onehot, cfg, cfg.scales, lr, step_rng);

            for (const StepLoss& s : steps) {
                loss_sum += s.loss;
                ++loss_n;
                if (cfg.record_step_losses) report.step_losses.push_back(s);
                if (hooks.on_step) hooks.on_step(epoch, idx, s);
            }
        }

        report.epoch_mean_loss.push_back(loss_n == 0 ? 0.0 : loss_sum / static_cast<double>(loss_n));
        if (hooks.on_epoch) hooks.on_epoch(epoch + 1, report);
    }

    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.param_checksum = param_checksum(net.params());
    return report;
}

/// Fresh-network convenience: initializes from cfg.seed and trains from
/// epoch zero.
template <typename T>
inline std::pair<std::unique_ptr<DenoiserNetwork<T>>, TrainReport> train(const std::vector<Sample<T>>& dataset,
                                                                         const DenoiserConfig& dcfg,
                                                                         const TrainConfig& cfg,
                                                                         const TrainHooks<T>& hooks = {}) {
    auto net = std::make_unique<DenoiserNetwork<T>>(dcfg);
    net->init(cfg.seed);
    AdamW<T> opt(net->params(), typename AdamW<T>::Hyper{0.9, 0.999, 1e-8, cfg.weight_decay});
    TrainReport report = train_loop(*net, opt, dataset, cfg, 0, hooks);
    return {std::move(net), report};
}

}  // namespace diffseg
