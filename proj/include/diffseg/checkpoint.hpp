#pragma once

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/optimizer.hpp"
#include "diffseg/serialize.hpp"
#include "diffseg/trainer.hpp"

namespace diffseg {

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint layout: a line-oriented text header (magic+version, config
/// key-values, ordered tensor manifest, payload byte count and CRC32),
/// a "---" separator, then the raw payload: every tensor as little-endian
/// 32-bit floats at its manifest offset. Parameters come first in registry
/// order, then per-parameter AdamW moments (<name>.adam_m / .adam_v).
/// Reals in the header are hexfloats so a resumed run sees bit-identical
/// configuration.
template <typename T>
struct Checkpoint {
    DenoiserConfig denoiser;
    TrainConfig train;
    int epochs_done = 0;
    std::unique_ptr<DenoiserNetwork<T>> net;
    std::unique_ptr<AdamW<T>> opt;
};

namespace detail {

inline std::string hexf(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_real(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

struct ManifestEntry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

template <typename T>
inline void append_tensor_line(std::ostringstream& os, const std::string& name, const std::vector<int>& shape,
                               std::size_t offset) {
    os << "tensor " << name << " " << shape.size();
    for (int d : shape) os << " " << d;
    os << " " << offset << "\n";
}

}  // namespace detail

template <typename T>
inline void save_checkpoint(DenoiserNetwork<T>& net, const AdamW<T>& opt, const TrainConfig& tcfg, int epochs_done,
                            const std::string& path) {
    const DenoiserConfig& d = net.config();
    std::ostringstream head;
    head << "diffseg-checkpoint " << kCheckpointVersion << "\n";
    head << "denoiser.base_channels " << d.base_channels << "\n";
    head << "denoiser.depth " << d.depth << "\n";
    head << "denoiser.embed_dim " << d.embed_dim << "\n";
    head << "denoiser.num_classes " << d.num_classes << "\n";
    head << "denoiser.attention " << (d.attention_at_bottleneck ? 1 : 0) << "\n";
    head << "train.time_steps " << tcfg.time_steps << "\n";
    head << "train.scales " << tcfg.scales << "\n";
    head << "train.lr " << detail::hexf(tcfg.lr) << "\n";
    head << "train.lr_decay_gamma " << detail::hexf(tcfg.lr_decay_gamma) << "\n";
    head << "train.weight_decay " << detail::hexf(tcfg.weight_decay) << "\n";
    head << "train.clip_norm " << detail::hexf(tcfg.clip_norm) << "\n";
    head << "train.epochs " << tcfg.epochs << "\n";
    head << "train.seed " << tcfg.seed << "\n";
    head << "train.augment_enabled " << (tcfg.augment_enabled ? 1 : 0) << "\n";
    head << "train.record_step_losses " << (tcfg.record_step_losses ? 1 : 0) << "\n";
    head << "augment.hflip_p " << detail::hexf(tcfg.augment.hflip_p) << "\n";
    head << "augment.vflip_p " << detail::hexf(tcfg.augment.vflip_p) << "\n";
    head << "augment.contrast_p " << detail::hexf(tcfg.augment.contrast_p) << "\n";
    head << "augment.saturation_p " << detail::hexf(tcfg.augment.saturation_p) << "\n";
    head << "augment.hue_p " << detail::hexf(tcfg.augment.hue_p) << "\n";
    head << "augment.contrast_factor " << detail::hexf(tcfg.augment.contrast_factor) << "\n";
    head << "augment.saturation_factor " << detail::hexf(tcfg.augment.saturation_factor) << "\n";
    head << "augment.hue_factor " << detail::hexf(tcfg.augment.hue_factor) << "\n";
    head << "opt.beta1 " << detail::hexf(opt.hyper().beta1) << "\n";
    head << "opt.beta2 " << detail::hexf(opt.hyper().beta2) << "\n";
    head << "opt.eps " << detail::hexf(opt.hyper().eps) << "\n";
    head << "opt.weight_decay " << detail::hexf(opt.hyper().weight_decay) << "\n";
    head << "state.epochs_done " << epochs_done << "\n";
    head << "state.opt_step " << opt.step_count() << "\n";

    std::vector<std::uint8_t> payload;
    const auto& params = net.params();
    {
        std::size_t total = 0;
        for (const Param<T>* p : params) total += p->size();
        payload.reserve(total * 12);
    }
    std::ostringstream manifest;
    for (const Param<T>* p : params) {
        detail::append_tensor_line<T>(manifest, p->name, p->shape, payload.size());
        for (const T v : p->value) append_f32_le(payload, static_cast<float>(v));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Param<T>* p = params[i];
        detail::append_tensor_line<T>(manifest, p->name + ".adam_m", p->shape, payload.size());
        for (const T v : opt.moments1()[i]) append_f32_le(payload, static_cast<float>(v));
        detail::append_tensor_line<T>(manifest, p->name + ".adam_v", p->shape, payload.size());
        for (const T v : opt.moments2()[i]) append_f32_le(payload, static_cast<float>(v));
    }

    head << manifest.str();
    head << "payload_bytes " << payload.size() << "\n";
    head << "payload_crc32 " << crc32_bytes(payload) << "\n";
    head << "---\n";

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    const std::string h = head.str();
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
inline Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    const std::string sep = "\n---\n";
    const std::size_t sep_pos = blob.find(sep);
    if (sep_pos == std::string::npos) throw CorruptionError("not a checkpoint file (missing separator): " + path);
    const std::string header = blob.substr(0, sep_pos + 1);
    const std::size_t payload_start = sep_pos + sep.size();

    std::istringstream hs(header);
    std::string magic;
    int version = -1;
    hs >> magic >> version;
    if (magic != "diffseg-checkpoint") throw CorruptionError("not a checkpoint file: " + path);
    if (version != kCheckpointVersion) {
        throw UnsupportedVersionError("checkpoint version " + std::to_string(version) + ", this build supports version " +
                                      std::to_string(kCheckpointVersion));
    }

    std::unordered_map<std::string, std::string> kv;
    std::vector<detail::ManifestEntry> manifest;
    std::string line;
    std::getline(hs, line);  // rest of magic line
    while (std::getline(hs, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "tensor") {
            detail::ManifestEntry e;
            std::size_t rank = 0;
            ls >> e.name >> rank;
            e.count = 1;
            for (std::size_t i = 0; i < rank; ++i) {
                int d = 0;
                ls >> d;
                e.shape.push_back(d);
                e.count *= static_cast<std::size_t>(d);
            }
            ls >> e.offset;
            if (!ls) throw CorruptionError("malformed manifest line: " + line);
            manifest.push_back(std::move(e));
        } else {
            std::string value;
            ls >> value;
            kv[key] = value;
        }
    }

    auto want = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw CorruptionError("checkpoint missing key: " + key);
        return it->second;
    };

    const std::size_t payload_bytes = static_cast<std::size_t>(std::stoull(want("payload_bytes")));
    if (blob.size() - payload_start != payload_bytes) {
        throw CorruptionError("payload size mismatch in " + path);
    }
    std::vector<std::uint8_t> payload(blob.begin() + static_cast<std::ptrdiff_t>(payload_start), blob.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(std::stoull(want("payload_crc32")));
    if (crc32_bytes(payload) != crc) throw CorruptionError("payload checksum failure in " + path);

    Checkpoint<T> ck;
    ck.denoiser.base_channels = std::stoi(want("denoiser.base_channels"));
    ck.denoiser.depth = std::stoi(want("denoiser.depth"));
    ck.denoiser.embed_dim = std::stoi(want("denoiser.embed_dim"));
    ck.denoiser.num_classes = std::stoi(want("denoiser.num_classes"));
    ck.denoiser.attention_at_bottleneck = std::stoi(want("denoiser.attention")) != 0;

    ck.train.time_steps = std::stoi(want("train.time_steps"));
    ck.train.scales = std::stoi(want("train.scales"));
    ck.train.lr = detail::parse_real(want("train.lr"));
    ck.train.lr_decay_gamma = detail::parse_real(want("train.lr_decay_gamma"));
    ck.train.weight_decay = detail::parse_real(want("train.weight_decay"));
    ck.train.clip_norm = detail::parse_real(want("train.clip_norm"));
    ck.train.epochs = std::stoi(want("train.epochs"));
    ck.train.seed = std::stoull(want("train.seed"));
    ck.train.augment_enabled = std::stoi(want("train.augment_enabled")) != 0;
    ck.train.record_step_losses = std::stoi(want("train.record_step_losses")) != 0;
    ck.train.augment.hflip_p = detail::parse_real(want("augment.hflip_p"));
    ck.train.augment.vflip_p = detail::parse_real(want("augment.vflip_p"));
    ck.train.augment.contrast_p = detail::parse_real(want("augment.contrast_p"));
    ck.train.augment.saturation_p = detail::parse_real(want("augment.saturation_p"));
    ck.train.augment.hue_p = detail::parse_real(want("augment.hue_p"));
    ck.train.augment.contrast_factor = detail::parse_real(want("augment.contrast_factor"));
    ck.train.augment.saturation_factor = detail::parse_real(want("augment.saturation_factor"));
    ck.train.augment.hue_factor = detail::parse_real(want("augment.hue_factor"));
    ck.epochs_done = std::stoi(want("state.epochs_done"));

    ck.net = std::make_unique<DenoiserNetwork<T>>(ck.denoiser);
    typename AdamW<T>::Hyper hyper;
    hyper.beta1 = detail::parse_real(want("opt.beta1"));
    hyper.beta2 = detail::parse_real(want("opt.beta2"));
    hyper.eps = detail::parse_real(want("opt.eps"));
    hyper.weight_decay = detail::parse_real(want("opt.weight_decay"));
    ck.opt = std::make_unique<AdamW<T>>(ck.net->params(), hyper);
    ck.opt->set_step_count(std::stoll(want("state.opt_step")));

    std::unordered_map<std::string, const detail::ManifestEntry*> by_name;
    std::size_t cursor = 0;
    for (const auto& e : manifest) {
        if (e.offset != cursor) throw ManifestError("manifest offsets out of order at " + e.name);
        cursor += e.count * 4;
        if (!by_name.emplace(e.name, &e).second) throw ManifestError("duplicate tensor in manifest: " + e.name);
    }
    if (cursor != payload.size()) throw ManifestError("manifest does not cover the payload");

    auto read_into = [&](const std::string& name, const std::vector<int>& shape, auto& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ManifestError("tensor missing from checkpoint: " + name);
        const detail::ManifestEntry& e = *it->second;
        if (e.shape != shape) throw ManifestError("tensor shape mismatch for " + name);
        if (e.offset + e.count * 4 > payload.size()) throw ManifestError("tensor out of payload bounds: " + name);
        if (e.count != dst.size()) throw ManifestError("tensor size mismatch for " + name);
        for (std::size_t i = 0; i < e.count; ++i) {
            dst[i] = static_cast<T>(read_f32_le(payload.data() + e.offset + i * 4));
        }
        by_name.erase(it);
    };

    const auto& params = ck.net->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        read_into(params[i]->name, params[i]->shape, params[i]->value);
        read_into(params[i]->name + ".adam_m", params[i]->shape, ck.opt->moments1()[i]);
        read_into(params[i]->name + ".adam_v", params[i]->shape, ck.opt->moments2()[i]);
    }
    if (!by_name.empty()) {
        throw ManifestError("checkpoint has " + std::to_string(by_name.size()) +
                            " tensors unknown to this configuration, first: " + by_name.begin()->first);
    }
    return ck;
}

}  // namespace diffseg
