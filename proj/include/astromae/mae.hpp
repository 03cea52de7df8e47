#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "astromae/vit.hpp"

namespace astromae {

// Random masking plan for one sample. visible_idx/masked_idx are sorted;
// restore_perm maps each original patch position to its slot in the
// (visible || masked) concatenation.
struct MaskPlan {
    std::int64_t total = 0;
    std::vector<std::int64_t> visible_idx;
    std::vector<std::int64_t> masked_idx;
    std::vector<std::int64_t> restore_perm;
    double mask_ratio = 0.0;
};

// Uniform subset without replacement: shuffle 0..T-1, masked count is
// round(ratio * T) (half-up), the first T - masked entries are visible.
inline MaskPlan make_mask(std::int64_t total, double ratio, Rng& rng) {
    if (total < 2) throw ConfigError("make_mask: need at least 2 patches");
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError("make_mask: mask ratio must lie in (0, 1), got " + std::to_string(ratio));
    }
    const std::int64_t n_masked = static_cast<std::int64_t>(std::floor(ratio * double(total) + 0.5));
    const std::int64_t n_visible = total - n_masked;
    if (n_masked == 0 || n_visible == 0) {
        throw ConfigError("make_mask: ratio " + std::to_string(ratio) + " leaves no masked or no visible patches for T=" +
                          std::to_string(total));
    }
    std::vector<std::int64_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    MaskPlan plan;
    plan.total = total;
    plan.mask_ratio = ratio;
    plan.visible_idx.assign(order.begin(), order.begin() + n_visible);
    plan.masked_idx.assign(order.begin() + n_visible, order.end());
    std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
    std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
    plan.restore_perm.assign(total, -1);
    for (std::int64_t s = 0; s < n_visible; ++s) plan.restore_perm[plan.visible_idx[s]] = s;
    for (std::int64_t s = 0; s < n_masked; ++s) {
        plan.restore_perm[plan.masked_idx[s]] = n_visible + s;
    }
    return plan;
}

// Rebuild the full-length sequence in original patch order: position t holds
// the encoded visible token when t is visible, the (shared) mask token row
// otherwise. Inputs are the per-sample concatenations [N x Tvis x D] and
// [N x Tmask x D].
template <typename T>
TensorPtr<T> restore_order(const TensorPtr<T>& encoded_visible, const TensorPtr<T>& mask_tokens,
                           const std::vector<MaskPlan>& plans) {
    if (encoded_visible->rank() != 3 || mask_tokens->rank() != 3) {
        throw ShapeError("restore_order: expected batched token tensors");
    }
    const std::int64_t n = encoded_visible->shape[0];
    const std::int64_t nv = encoded_visible->shape[1];
    const std::int64_t nm = mask_tokens->shape[1];
    if (static_cast<std::int64_t>(plans.size()) != n ||
        nv != static_cast<std::int64_t>(plans[0].visible_idx.size()) ||
        nm != static_cast<std::int64_t>(plans[0].masked_idx.size())) {
        throw ShapeError("restore_order: token counts do not match the mask plans");
    }
    auto seq = concat<T>({encoded_visible, mask_tokens}, 1);  // (visible || masked)
    std::vector<std::vector<std::int64_t>> perm(n);
    for (std::int64_t b = 0; b < n; ++b) perm[b] = plans[b].restore_perm;
    return gather_rows_per_sample(seq, perm);
}

struct MaeConfig {
    VitConfig encoder;
    std::int64_t decoder_depth = 4;
    std::int64_t decoder_heads = 3;
    double mask_ratio = 0.75;
};

// Asymmetric autoencoder: ViT encoder on visible patches (plus class token),
// plain-transformer decoder over the restored full sequence, per-patch linear
// head back to pixel space.
template <typename T>
struct MaeModel {
    MaeConfig cfg;
    VitEncoder<T> encoder;
    std::vector<TransformerBlock<T>> decoder_blocks;
    LayerNormLayer<T> decoder_norm;
    LinearLayer<T> decoder_head;
    TensorPtr<T> mask_token;
    TensorPtr<T> decoder_pos;  // constant sincos table

    MaeModel() = default;
    MaeModel(const MaeConfig& cfg_, Rng& rng)
        : cfg(cfg_),
          encoder(cfg_.encoder, rng),
          decoder_norm(cfg_.encoder.embed_dim),
          decoder_head(cfg_.encoder.embed_dim, cfg_.encoder.token_dim(), rng),
          mask_token(normal_init<T>({cfg_.encoder.embed_dim}, 0.02, rng)),
          decoder_pos(sincos_pos_embed<T>(cfg_.encoder.tokens(), cfg_.encoder.embed_dim)) {
        BlockConfig bc;
        bc.embed_dim = cfg.encoder.embed_dim;
        bc.heads = cfg.decoder_heads;
        bc.kind = BlockKind::Plain;
        for (std::int64_t i = 0; i < cfg.decoder_depth; ++i) decoder_blocks.emplace_back(bc, rng);
    }

    // images: [N x C x H x W] constant; one plan per sample.
    // Returns per-patch pixel predictions [N x T x p^2*C] in original order.
    TensorPtr<T> forward(const TensorPtr<T>& images, const std::vector<MaskPlan>& plans,
                         bool training) const {
        const std::int64_t n = images->shape[0];
        std::vector<std::vector<std::int64_t>> visible(n);
        for (std::int64_t b = 0; b < n; ++b) visible[b] = plans[b].visible_idx;
        auto enc = encoder.encode_visible(images, visible, /*with_cls=*/true, training);

        const std::int64_t nv = static_cast<std::int64_t>(plans[0].visible_idx.size());
        std::vector<std::int64_t> spatial_rows(nv);
        for (std::int64_t i = 0; i < nv; ++i) spatial_rows[i] = i + 1;  // drop class token
        auto enc_vis = gather_rows(enc, spatial_rows);

        const std::int64_t nm = static_cast<std::int64_t>(plans[0].masked_idx.size());
        auto mask_rows = broadcast_token(mask_token, n, nm);
        auto x = restore_order(enc_vis, mask_rows, plans);
        x = add_broadcast(x, decoder_pos);
        for (const auto& block : decoder_blocks) x = block.forward(x, training, /*has_cls=*/false);
        x = decoder_norm.forward(x);
        return decoder_head.forward(x);
    }

    void collect(ParamList<T>& out) const {
        encoder.collect("encoder", out);
        out.push_back({"mask_token", mask_token});
        for (std::size_t i = 0; i < decoder_blocks.size(); ++i) {
            decoder_blocks[i].collect("decoder.blocks." + std::to_string(i), out);
        }
        decoder_norm.collect("decoder.norm", out);
        decoder_head.collect("decoder.head", out);
    }
};

// Mean squared error over masked patches only, averaged over
// batch x masked-patch count x patch dimension.
template <typename T>
TensorPtr<T> reconstruction_loss(const TensorPtr<T>& recon, const TensorPtr<T>& original_patches,
                                 const std::vector<MaskPlan>& plans) {
    if (recon->shape != original_patches->shape) {
        throw ShapeError("reconstruction_loss: shape mismatch " + shape_str(recon->shape) + " vs " +
                         shape_str(original_patches->shape));
    }
    const std::int64_t n = recon->shape[0];
    std::vector<std::vector<std::int64_t>> masked(n);
    for (std::int64_t b = 0; b < n; ++b) masked[b] = plans[b].masked_idx;
    auto pred = gather_rows_per_sample(recon, masked);
    auto target = gather_rows_per_sample(original_patches, masked);
    return mse(pred, target);
}

}  // namespace astromae
