#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "astromae/mae.hpp"

namespace astromae {

// ---------------------------------------------------------------------------
// inception stack
// ---------------------------------------------------------------------------

// Branch widths split the block's output channels 4:8:2:2 between the 1x1,
// 3x3, 5x5 and pooled branches; the last block redistributes the 5x5 share to
// the 3x3 branch. 1x1 reduction widths ahead of the 3x3/5x5 convolutions are
// an eighth / sixteenth of the output (floor 4).
struct InceptionConfig {
    std::array<std::int64_t, 5> block_channels{64, 96, 128, 192, 256};

    struct Split {
        std::int64_t c1, c3, c5, cp;  // branch output widths (c5 == 0 -> omitted)
        std::int64_t r3, r5;          // 1x1 reduction widths
    };
    static Split split_for(std::int64_t out, bool include_5x5) {
        Split s;
        s.c1 = out / 4;
        s.c5 = include_5x5 ? out / 8 : 0;
        s.cp = out / 8;
        s.c3 = out - s.c1 - s.c5 - s.cp;
        s.r3 = std::max<std::int64_t>(4, out / 8);
        s.r5 = include_5x5 ? std::max<std::int64_t>(4, out / 16) : 0;
        return s;
    }
};

// Four parallel branches, every convolution followed by ReLU, spatial size
// preserved; channel concatenation order is 1x1, 3x3, 5x5, pool.
template <typename T>
struct InceptionModule {
    InceptionConfig::Split split;
    Conv2dLayer<T> b1;
    Conv2dLayer<T> b2_reduce, b2_conv;
    Conv2dLayer<T> b3_reduce, b3_conv;
    Conv2dLayer<T> b4_proj;
    bool include_5x5 = true;

    InceptionModule() = default;
    InceptionModule(std::int64_t c_in, std::int64_t c_out, bool with_5x5, Rng& rng)
        : split(InceptionConfig::split_for(c_out, with_5x5)), include_5x5(with_5x5) {
        b1 = Conv2dLayer<T>(c_in, split.c1, 1, 1, 0, 1, rng);
        b2_reduce = Conv2dLayer<T>(c_in, split.r3, 1, 1, 0, 1, rng);
        b2_conv = Conv2dLayer<T>(split.r3, split.c3, 3, 1, 1, 1, rng);
        if (with_5x5) {
            b3_reduce = Conv2dLayer<T>(c_in, split.r5, 1, 1, 0, 1, rng);
            b3_conv = Conv2dLayer<T>(split.r5, split.c5, 5, 1, 2, 1, rng);
        }
        b4_proj = Conv2dLayer<T>(c_in, split.cp, 1, 1, 0, 1, rng);
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        std::vector<TensorPtr<T>> branches;
        branches.push_back(relu(b1.forward(x)));
        branches.push_back(relu(b2_conv.forward(relu(b2_reduce.forward(x)))));
        if (include_5x5) {
            branches.push_back(relu(b3_conv.forward(relu(b3_reduce.forward(x)))));
        }
        branches.push_back(relu(b4_proj.forward(max_pool2d(x, 3, 1, 1))));
        return concat(branches, 1);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        b1.collect(prefix + ".b1", out);
        b2_reduce.collect(prefix + ".b2_reduce", out);
        b2_conv.collect(prefix + ".b2_conv", out);
        if (include_5x5) {
            b3_reduce.collect(prefix + ".b3_reduce", out);
            b3_conv.collect(prefix + ".b3_conv", out);
        }
        b4_proj.collect(prefix + ".b4_proj", out);
    }
};

// Five inception blocks at spatial sizes 32 -> 16 -> 8 -> 4 -> 2 (2x2 stride-2
// max-pool after blocks 1-4); the last block omits its 5x5 branch. The 2x2
// map is flattened into the feature vector.
template <typename T>
struct InceptionStack {
    InceptionConfig cfg;
    std::vector<InceptionModule<T>> blocks;

    InceptionStack() = default;
    InceptionStack(std::int64_t in_chans, Rng& rng) {
        std::int64_t c = in_chans;
        for (int i = 0; i < 5; ++i) {
            blocks.emplace_back(c, cfg.block_channels[i], /*with_5x5=*/i < 4, rng);
            c = cfg.block_channels[i];
        }
    }

    std::int64_t feature_dim() const { return cfg.block_channels[4] * 2 * 2; }

    TensorPtr<T> forward(const TensorPtr<T>& images) const {
        auto x = images;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            x = blocks[i].forward(x);
            if (i + 1 < blocks.size()) x = max_pool2d(x, 2, 2);
        }
        return reshape(x, {x->shape[0], x->shape[1] * x->shape[2] * x->shape[3]});
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect(prefix + ".block" + std::to_string(i + 1), out);
        }
    }
};

// ---------------------------------------------------------------------------
// magnitude block / encoder head
// ---------------------------------------------------------------------------

// Five linear layers 5 -> 64 -> 128 -> 128 -> 64 -> 32 with ReLU between them.
template <typename T>
struct MagnitudeMlp {
    std::vector<LinearLayer<T>> layers;

    MagnitudeMlp() = default;
    explicit MagnitudeMlp(Rng& rng) {
        const std::int64_t widths[] = {5, 64, 128, 128, 64, 32};
        for (int i = 0; i < 5; ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
    }

    static constexpr std::int64_t output_dim = 32;

    TensorPtr<T> forward(const TensorPtr<T>& mags) const {
        if (mags->shape.back() != 5) {
            throw ShapeError("magnitude block expects 5 input features, got " + shape_str(mags->shape));
        }
        auto x = mags;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(x);
            if (i + 1 < layers.size()) x = relu(x);
        }
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].collect(prefix + ".fc" + std::to_string(i + 1), out);
        }
    }
};

// Two linear layers with a ReLU between them on the class-token features.
template <typename T>
struct EncoderHead {
    LinearLayer<T> fc1, fc2;

    EncoderHead() = default;
    EncoderHead(std::int64_t in_dim, Rng& rng) : fc1(in_dim, 128, rng), fc2(128, 128, rng) {}

    static constexpr std::int64_t output_dim = 128;

    TensorPtr<T> forward(const TensorPtr<T>& cls_features) const {
        return fc2.forward(relu(fc1.forward(cls_features)));
    }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }
};

// ---------------------------------------------------------------------------
// variants
// ---------------------------------------------------------------------------

enum class VariantId {
    FromScratchPlainVit,
    FromScratchPcmVit,
    PlainVit,
    PcmVit,
    FromScratchPlainVitMagnitude,
    FromScratchPcmVitMagnitude,
    PlainVitMagnitude,
    PcmVitMagnitude,
    PlainVitInception,
    PcmVitInception,
    InceptionOnly,
    HenghesBaseline,
    PlainAstroMae,
    PcmAstroMae,
};

inline const std::vector<std::pair<VariantId, std::string>>& variant_names() {
    static const std::vector<std::pair<VariantId, std::string>> table = {
        {VariantId::FromScratchPlainVit, "from-scratch-plain-vit"},
        {VariantId::FromScratchPcmVit, "from-scratch-pcm-vit"},
        {VariantId::PlainVit, "plain-vit"},
        {VariantId::PcmVit, "pcm-vit"},
        {VariantId::FromScratchPlainVitMagnitude, "from-scratch-plain-vit-magnitude"},
        {VariantId::FromScratchPcmVitMagnitude, "from-scratch-pcm-vit-magnitude"},
        {VariantId::PlainVitMagnitude, "plain-vit-magnitude"},
        {VariantId::PcmVitMagnitude, "pcm-vit-magnitude"},
        {VariantId::PlainVitInception, "plain-vit-inception"},
        {VariantId::PcmVitInception, "pcm-vit-inception"},
        {VariantId::InceptionOnly, "inception-only"},
        {VariantId::HenghesBaseline, "henghes-baseline"},
        {VariantId::PlainAstroMae, "plain-astromae"},
        {VariantId::PcmAstroMae, "pcm-astromae"},
    };
    return table;
}

inline std::string variant_to_string(VariantId id) {
    for (const auto& [vid, name] : variant_names()) {
        if (vid == id) return name;
    }
    throw ConfigError("unknown variant id");
}

inline VariantId variant_from_string(const std::string& name) {
    for (const auto& [vid, vname] : variant_names()) {
        if (vname == name) return vid;
    }
    std::string known;
    for (const auto& [vid, vname] : variant_names()) known += vname + " ";
    throw ConfigError("unknown variant '" + name + "'; known: " + known);
}

inline bool variant_has_encoder(VariantId id) {
    return id != VariantId::InceptionOnly && id != VariantId::HenghesBaseline;
}

inline bool variant_uses_pretrained(VariantId id) {
    switch (id) {
        case VariantId::PlainVit:
        case VariantId::PcmVit:
        case VariantId::PlainVitMagnitude:
        case VariantId::PcmVitMagnitude:
        case VariantId::PlainVitInception:
        case VariantId::PcmVitInception:
        case VariantId::PlainAstroMae:
        case VariantId::PcmAstroMae:
            return true;
        default:
            return false;
    }
}

inline bool variant_has_inception(VariantId id) {
    switch (id) {
        case VariantId::PlainVitInception:
        case VariantId::PcmVitInception:
        case VariantId::InceptionOnly:
        case VariantId::HenghesBaseline:
        case VariantId::PlainAstroMae:
        case VariantId::PcmAstroMae:
            return true;
        default:
            return false;
    }
}

inline bool variant_has_magnitude(VariantId id) {
    switch (id) {
        case VariantId::FromScratchPlainVitMagnitude:
        case VariantId::FromScratchPcmVitMagnitude:
        case VariantId::PlainVitMagnitude:
        case VariantId::PcmVitMagnitude:
        case VariantId::HenghesBaseline:
        case VariantId::PlainAstroMae:
        case VariantId::PcmAstroMae:
            return true;
        default:
            return false;
    }
}

inline BlockKind variant_block_kind(VariantId id) {
    switch (id) {
        case VariantId::FromScratchPcmVit:
        case VariantId::PcmVit:
        case VariantId::FromScratchPcmVitMagnitude:
        case VariantId::PcmVitMagnitude:
        case VariantId::PcmVitInception:
        case VariantId::PcmAstroMae:
            return BlockKind::Pcm;
        default:
            return BlockKind::Plain;
    }
}

// ---------------------------------------------------------------------------
// fusion model
// ---------------------------------------------------------------------------

// One container for all fourteen architectures: any subset of
// {inception stack, magnitude block, encoder + head} feeding a small linear
// trunk. Feature concatenation order is inception || magnitude || encoder.
template <typename T>
struct FusionModel {
    VariantId variant = VariantId::InceptionOnly;
    VitConfig vit_cfg;

    std::optional<VitEncoder<T>> encoder;
    std::optional<EncoderHead<T>> head;
    std::optional<InceptionStack<T>> inception;
    std::optional<MagnitudeMlp<T>> magnitude;
    std::vector<LinearLayer<T>> trunk;  // 2 linears (3 for inception-only), ReLU between

    FusionModel() = default;
    FusionModel(VariantId id, const VitConfig& base_cfg, Rng& rng) : variant(id), vit_cfg(base_cfg) {
        vit_cfg.kind = variant_block_kind(id);
        std::int64_t feat = 0;
        if (variant_has_encoder(id)) {
            encoder.emplace(vit_cfg, rng);
            head.emplace(vit_cfg.embed_dim, rng);
            feat += EncoderHead<T>::output_dim;
        }
        if (variant_has_inception(id)) {
            inception.emplace(vit_cfg.in_chans, rng);
            feat += inception->feature_dim();
        }
        if (variant_has_magnitude(id)) {
            magnitude.emplace(rng);
            feat += MagnitudeMlp<T>::output_dim;
        }
        if (id == VariantId::InceptionOnly) {
            trunk.emplace_back(feat, 256, rng);
            trunk.emplace_back(256, 64, rng);
            trunk.emplace_back(64, 1, rng);
        } else {
            trunk.emplace_back(feat, 256, rng);
            trunk.emplace_back(256, 1, rng);
        }
    }

    // images: [N x C x H x W]; mags: [N x 5]; returns [N x 1].
    TensorPtr<T> forward(const TensorPtr<T>& images, const TensorPtr<T>& mags, bool training) const {
        std::vector<TensorPtr<T>> feats;
        if (inception) feats.push_back(inception->forward(images));
        if (magnitude) feats.push_back(magnitude->forward(mags));
        if (encoder) {
            auto tokens = encoder->encode_full(images, /*with_cls=*/true, training);
            auto cls = reshape(gather_rows(tokens, {0}), {tokens->shape[0], tokens->shape[2]});
            feats.push_back(head->forward(cls));
        }
        auto x = feats.size() == 1 ? feats[0] : concat(feats, 1);
        for (std::size_t i = 0; i < trunk.size(); ++i) {
            x = trunk[i].forward(x);
            if (i + 1 < trunk.size()) x = relu(x);
        }
        return x;
    }

    void collect(ParamList<T>& out) const {
        if (encoder) encoder->collect("encoder", out);
        if (head) head->collect("head", out);
        if (inception) inception->collect("inception", out);
        if (magnitude) magnitude->collect("magnitude", out);
        for (std::size_t i = 0; i < trunk.size(); ++i) {
            trunk[i].collect("trunk.fc" + std::to_string(i + 1), out);
        }
    }
};

// Pretrained-encoder variants freeze everything inside the encoder except its
// final layer norm and the last block's FFN output projection (the last
// linear ahead of the head); batch-norm running statistics inside a frozen
// encoder stay fixed in eval mode. Everything outside the encoder trains.
template <typename T>
void apply_freeze_policy(FusionModel<T>& model) {
    if (!variant_uses_pretrained(model.variant) || !model.encoder) return;
    ParamList<T> enc_params;
    model.encoder->collect("encoder", enc_params);
    const std::string last_block_proj =
        "encoder.blocks." + std::to_string(model.encoder->blocks.size() - 1) + ".ffn.fc2";
    for (auto& p : enc_params) {
        if (p.buffer) continue;
        const bool trainable = p.name.rfind("encoder.norm.", 0) == 0 ||
                               p.name.rfind(last_block_proj, 0) == 0;
        p.tensor->requires_grad = trainable;
    }
    for (auto& block : model.encoder->blocks) {
        for (auto& stage : block.pcm) stage.bn.frozen_stats = true;
    }
}

template <typename T>
double trainable_fraction(const FusionModel<T>& model) {
    ParamList<T> params;
    model.collect(params);
    std::int64_t total = 0, trainable = 0;
    for (const auto& p : params) {
        if (p.buffer) continue;
        total += p.tensor->numel();
        if (p.tensor->requires_grad) trainable += p.tensor->numel();
    }
    return total ? double(trainable) / double(total) : 0.0;
}

}  // namespace astromae
