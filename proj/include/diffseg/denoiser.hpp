#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/layers.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// Sinusoidal step embedding: sin(t w_k) in the first half, cos(t w_k) in
/// the second, w_k = 10000^(-2k / embed_dim).
template <typename T>
inline std::vector<T> time_embed(int t, int embed_dim) {
    if (embed_dim < 2 || embed_dim % 2 != 0) {
        throw InvalidParameterError("time_embed: embed_dim must be even and >= 2, got " + std::to_string(embed_dim));
    }
    const int half = embed_dim / 2;
    std::vector<T> out(static_cast<std::size_t>(embed_dim));
    for (int k = 0; k < half; ++k) {
        const double omega = std::pow(10000.0, -2.0 * k / static_cast<double>(embed_dim));
        out[static_cast<std::size_t>(k)] = static_cast<T>(std::sin(t * omega));
        out[static_cast<std::size_t>(half + k)] = static_cast<T>(std::cos(t * omega));
    }
    return out;
}

struct DenoiserConfig {
    int base_channels = 32;  // width of the image/segmentation encoders and the first U stage
    int depth = 3;           // number of down/up stages
    int embed_dim = 64;      // sinusoidal embedding width
    int num_classes = 8;
    bool attention_at_bottleneck = true;

    void validate() const {
        if (base_channels < 4) throw InvalidParameterError("DenoiserConfig: base_channels must be >= 4");
        if (depth < 1) throw InvalidParameterError("DenoiserConfig: depth must be >= 1");
        if (embed_dim < 2 || embed_dim % 2 != 0) {
            throw InvalidParameterError("DenoiserConfig: embed_dim must be even and >= 2");
        }
        if (num_classes < 1) throw InvalidParameterError("DenoiserConfig: num_classes must be >= 1");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

/// The conditional noise predictor. Two time-free ResNetBlock encoders lift
/// the RGB image and the noisy segmentation to a common width; their sum
/// feeds a U-shaped encoder-decoder whose blocks are conditioned on the step
/// embedding, with optional efficient attention at the bottleneck. The
/// output convolution starts at zero so a fresh network predicts zero noise.
template <typename T>
class DenoiserNetwork {
public:
    static constexpr int kNormGroups = 8;

    explicit DenoiserNetwork(const DenoiserConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int base = cfg_.base_channels;

        f_blocks_.emplace_back("F.block0", 3, base, 0, kNormGroups);
        f_blocks_.emplace_back("F.block1", base, base, 0, kNormGroups);
        g_blocks_.emplace_back("G.block0", cfg_.num_classes, base, 0, kNormGroups);
        g_blocks_.emplace_back("G.block1", base, base, 0, kNormGroups);

        for (int i = 0; i < cfg_.depth; ++i) {
            const int ch = base << i;
            const std::string p = "H.enc" + std::to_string(i);
            encoder_.push_back(EncoderStage{
                ResNetBlock<T>(p + ".rb0", ch, ch, cfg_.embed_dim, kNormGroups),
                ResNetBlock<T>(p + ".rb1", ch, ch, cfg_.embed_dim, kNormGroups),
                Conv2d<T>(p + ".down", ch, ch << 1, 3, 2),
            });
        }

        const int mid = base << cfg_.depth;
        mid_rb0_ = std::make_unique<ResNetBlock<T>>("H.mid.rb0", mid, mid, cfg_.embed_dim, kNormGroups);
        if (cfg_.attention_at_bottleneck) {
            mid_attn_ = std::make_unique<AttentionBlock<T>>("H.mid.attn", mid,
                                                            ResNetBlock<T>::norm_groups_for(mid, kNormGroups));
        }
        mid_rb1_ = std::make_unique<ResNetBlock<T>>("H.mid.rb1", mid, mid, cfg_.embed_dim, kNormGroups);

        for (int i = cfg_.depth - 1; i >= 0; --i) {
            const int ch = base << i;
            const std::string p = "H.dec" + std::to_string(i);
            decoder_.push_back(DecoderStage{
                Upsample2x<T>{},
                Conv2d<T>(p + ".upconv", ch << 1, ch, 3),
                ResNetBlock<T>(p + ".rb0", ch * 2, ch, cfg_.embed_dim, kNormGroups),
                ResNetBlock<T>(p + ".rb1", ch, ch, cfg_.embed_dim, kNormGroups),
            });
        }

        head_norm_ = std::make_unique<GroupNorm<T>>("H.head.norm", base,
                                                    ResNetBlock<T>::norm_groups_for(base, kNormGroups));
        head_conv_ = std::make_unique<Conv2d<T>>("H.head.conv", base, cfg_.num_classes, 3);

        collect_all();
    }

    DenoiserNetwork(const DenoiserNetwork&) = delete;
    DenoiserNetwork& operator=(const DenoiserNetwork&) = delete;

    const DenoiserConfig& config() const { return cfg_; }
    int num_classes() const { return cfg_.num_classes; }

    /// Deterministic initialization: Kaiming fan-in convolutions, unit norms,
    /// zeroed output head.
    void init(std::uint64_t seed) {
        Rng rng = make_stream(seed, {kStreamInit});
        for (auto& b : f_blocks_) b.init(rng);
        for (auto& b : g_blocks_) b.init(rng);
        for (auto& s : encoder_) {
            s.rb0.init(rng);
            s.rb1.init(rng);
            s.down.init(rng);
        }
        mid_rb0_->init(rng);
        if (mid_attn_) mid_attn_->init(rng);
        mid_rb1_->init(rng);
        for (auto& s : decoder_) {
            s.upconv.init(rng);
            s.rb0.init(rng);
            s.rb1.init(rng);
        }
        head_norm_->init(rng);
        head_conv_->init(rng);
        head_conv_->zero_init();
    }

    const std::vector<Param<T>*>& params() { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Param<T>* p : params_) n += p->size();
        return n;
    }

    void zero_grads() {
        for (Param<T>* p : params_) p->zero_grad();
    }

    /// Predicted noise for (noisy segmentation, image, step). Records the
    /// pass so backward() can run afterwards.
    Tensor<T> forward(const Tensor<T>& noisy_seg, const Tensor<T>& image, int t) {
        if (image.channels != 3) throw ShapeError("forward: image must have 3 channels");
        if (noisy_seg.channels != cfg_.num_classes) {
            throw ShapeError("forward: segmentation has " + std::to_string(noisy_seg.channels) +
                             " channels, network expects " + std::to_string(cfg_.num_classes));
        }
        if (noisy_seg.height != image.height || noisy_seg.width != image.width) {
            throw ShapeError("forward: image and segmentation dims differ");
        }
        const int div = 1 << cfg_.depth;
        if (noisy_seg.height % div != 0 || noisy_seg.width % div != 0) {
            throw ShapeError("forward: spatial dims must be divisible by " + std::to_string(div));
        }

        emb_ = time_embed<T>(t, cfg_.embed_dim);

        Tensor<T> f = f_blocks_[1].forward(f_blocks_[0].forward(image, nullptr), nullptr);
        Tensor<T> g = g_blocks_[1].forward(g_blocks_[0].forward(noisy_seg, nullptr), nullptr);
        for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] += g.data[i];

        std::vector<Tensor<T>> skips;
        Tensor<T> h = std::move(f);
        for (auto& s : encoder_) {
            h = s.rb1.forward(s.rb0.forward(h, &emb_), &emb_);
            skips.push_back(h);
            h = s.down.forward(h);
        }

        h = mid_rb0_->forward(h, &emb_);
        if (mid_attn_) h = mid_attn_->forward(h);
        h = mid_rb1_->forward(h, &emb_);

        for (auto& s : decoder_) {
            h = s.upconv.forward(s.up.forward(h));
            h = concat_channels(h, skips.back());
            skips.pop_back();
            h = s.rb1.forward(s.rb0.forward(h, &emb_), &emb_);
        }

        Tensor<T> out = head_conv_->forward(head_act_.forward(head_norm_->forward(h)));
        forwarded_ = true;
        return out;
    }

    /// Accumulates d loss / d theta for every parameter given the loss
    /// gradient at the network output. Input gradients are propagated
    /// internally but not returned: the diffusion estimate is data.
    void backward(const Tensor<T>& loss_grad_at_output) {
        if (!forwarded_) throw StateError("backward: no recorded forward pass");
        forwarded_ = false;

        Tensor<T> dh = head_norm_->backward(head_act_.backward(head_conv_->backward(loss_grad_at_output)));

        std::vector<Tensor<T>> skip_grads;
        for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
            Tensor<T> dcat = it->rb0.backward(it->rb1.backward(dh));
            auto [dup, dskip] = split_channels(dcat, dcat.channels / 2);
            skip_grads.push_back(std::move(dskip));
            dh = it->up.backward(it->upconv.backward(dup));
        }

        dh = mid_rb0_->backward(mid_attn_ ? mid_attn_->backward(mid_rb1_->backward(dh))
                                          : mid_rb1_->backward(dh));

        for (auto it = encoder_.rbegin(); it != encoder_.rend(); ++it) {
            Tensor<T> dskip = it->down.backward(dh);
            const Tensor<T>& extra = skip_grads.back();
            for (std::size_t i = 0; i < dskip.data.size(); ++i) dskip.data[i] += extra.data[i];
            skip_grads.pop_back();
            dh = it->rb0.backward(it->rb1.backward(dskip));
        }

        // The fused feature was F(image) + G(seg): the same gradient flows
        // into both encoders; their input gradients are discarded.
        f_blocks_[0].backward(f_blocks_[1].backward(dh));
        g_blocks_[0].backward(g_blocks_[1].backward(dh));
    }

private:
    struct EncoderStage {
        ResNetBlock<T> rb0, rb1;
        Conv2d<T> down;
    };
    struct DecoderStage {
        Upsample2x<T> up;
        Conv2d<T> upconv;
        ResNetBlock<T> rb0, rb1;
    };

    static Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
        Tensor<T> out(a.channels + b.channels, a.height, a.width);
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
        return out;
    }

    static std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first) {
        Tensor<T> a(first, x.height, x.width);
        Tensor<T> b(x.channels - first, x.height, x.width);
        std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), a.data.begin());
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), x.data.end(), b.data.begin());
        return {std::move(a), std::move(b)};
    }

    void collect_all() {
        for (auto& b : f_blocks_) b.collect(params_);
        for (auto& b : g_blocks_) b.collect(params_);
        for (auto& s : encoder_) {
            s.rb0.collect(params_);
            s.rb1.collect(params_);
            s.down.collect(params_);
        }
        mid_rb0_->collect(params_);
        if (mid_attn_) mid_attn_->collect(params_);
        mid_rb1_->collect(params_);
        for (auto& s : decoder_) {
            s.upconv.collect(params_);
            s.rb0.collect(params_);
            s.rb1.collect(params_);
        }
        head_norm_->collect(params_);
        head_conv_->collect(params_);
    }

    DenoiserConfig cfg_;
    std::vector<ResNetBlock<T>> f_blocks_, g_blocks_;
    std::vector<EncoderStage> encoder_;
    std::unique_ptr<ResNetBlock<T>> mid_rb0_, mid_rb1_;
    std::unique_ptr<AttentionBlock<T>> mid_attn_;
    std::vector<DecoderStage> decoder_;
    std::unique_ptr<GroupNorm<T>> head_norm_;
    Silu<T> head_act_;
    std::unique_ptr<Conv2d<T>> head_conv_;

    std::vector<Param<T>*> params_;
    std::vector<T> emb_;
    bool forwarded_ = false;
};

}  // namespace diffseg
