#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "astromae/layers.hpp"

namespace astromae {

// Tokenized image patches, row-major over the patch grid. Each raw token is
// the flattened p x p window of every channel (channel-major), dimension p^2*C.
template <typename T>
struct PatchSet {
    TensorPtr<T> tokens;  // [T x D_tok] or [N x T x D_tok]
    std::int64_t patch = 0;
    std::int64_t grid_h = 0, grid_w = 0;

    std::int64_t count() const { return grid_h * grid_w; }
};

template <typename T>
PatchSet<T> patchify(const TensorPtr<T>& image, std::int64_t p) {
    const bool batched = image->rank() == 4;
    if (!batched && image->rank() != 3) {
        throw ShapeError("patchify: expected CxHxW or NxCxHxW, got " + shape_str(image->shape));
    }
    const std::int64_t n = batched ? image->shape[0] : 1;
    const std::int64_t c = image->shape[batched ? 1 : 0];
    const std::int64_t h = image->shape[batched ? 2 : 1];
    const std::int64_t w = image->shape[batched ? 3 : 2];
    if (h % p != 0 || w % p != 0) {
        throw ShapeError("patchify: image " + shape_str(image->shape) + " not divisible by patch " +
                         std::to_string(p));
    }
    const std::int64_t gh = h / p, gw = w / p;
    const std::int64_t t = gh * gw, d = p * p * c;
    std::vector<T> out(static_cast<std::size_t>(n) * t * d);
    const T* px = image->ptr();
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t gy = 0; gy < gh; ++gy) {
            for (std::int64_t gx = 0; gx < gw; ++gx) {
                T* tok = out.data() + ((ni * t) + gy * gw + gx) * d;
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    for (std::int64_t py = 0; py < p; ++py) {
                        const T* src = px + ((ni * c + ci) * h + gy * p + py) * w + gx * p;
                        std::copy(src, src + p, tok + (ci * p + py) * p);
                    }
                }
            }
        }
    }
    PatchSet<T> ps;
    ps.tokens = batched ? Tensor<T>::from({n, t, d}, std::move(out))
                        : Tensor<T>::from({t, d}, std::move(out));
    ps.patch = p;
    ps.grid_h = gh;
    ps.grid_w = gw;
    return ps;
}

template <typename T>
TensorPtr<T> unpatchify(const PatchSet<T>& ps, std::int64_t channels) {
    const auto& tk = ps.tokens;
    const bool batched = tk->rank() == 3;
    const std::int64_t n = batched ? tk->shape[0] : 1;
    const std::int64_t t = tk->shape[batched ? 1 : 0];
    const std::int64_t d = tk->shape.back();
    const std::int64_t p = ps.patch;
    if (t != ps.count() || d != p * p * channels) {
        throw ShapeError("unpatchify: inconsistent patch set");
    }
    const std::int64_t h = ps.grid_h * p, w = ps.grid_w * p;
    std::vector<T> out(static_cast<std::size_t>(n) * channels * h * w);
    const T* ptk = tk->ptr();
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t gy = 0; gy < ps.grid_h; ++gy) {
            for (std::int64_t gx = 0; gx < ps.grid_w; ++gx) {
                const T* tok = ptk + ((ni * t) + gy * ps.grid_w + gx) * d;
                for (std::int64_t ci = 0; ci < channels; ++ci) {
                    for (std::int64_t py = 0; py < p; ++py) {
                        T* dst = out.data() + ((ni * channels + ci) * h + gy * p + py) * w + gx * p;
                        std::copy(tok + (ci * p + py) * p, tok + (ci * p + py) * p + p, dst);
                    }
                }
            }
        }
    }
    return batched ? Tensor<T>::from({n, channels, h, w}, std::move(out))
                   : Tensor<T>::from({channels, h, w}, std::move(out));
}

// Fixed sine-cosine table: row t, columns 2i / 2i+1 = sin / cos(t / 10000^(2i/D)).
template <typename T>
TensorPtr<T> sincos_pos_embed(std::int64_t count, std::int64_t d) {
    if (d % 2 != 0) {
        throw ConfigError("sincos_pos_embed: embedding dim must be even, got " + std::to_string(d));
    }
    std::vector<T> out(static_cast<std::size_t>(count) * d);
    for (std::int64_t t = 0; t < count; ++t) {
        for (std::int64_t i = 0; i < d / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
            const double angle = double(t) * freq;
            out[t * d + 2 * i] = static_cast<T>(std::sin(angle));
            out[t * d + 2 * i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>::from({count, d}, std::move(out));
}

struct VitConfig {
    std::int64_t img_size = 32;
    std::int64_t in_chans = 5;
    std::int64_t patch = 8;
    std::int64_t embed_dim = 192;
    std::int64_t depth = 12;
    std::int64_t heads = 3;
    BlockKind kind = BlockKind::Plain;

    std::int64_t grid() const { return img_size / patch; }
    std::int64_t tokens() const { return grid() * grid(); }
    std::int64_t token_dim() const { return patch * patch * in_chans; }
};

// ViT encoder: linear patch embedding, optional class token, fixed sine-cosine
// positions indexed by original patch position, `depth` blocks, final norm.
template <typename T>
struct VitEncoder {
    VitConfig cfg;
    LinearLayer<T> patch_embed;
    TensorPtr<T> cls_token;
    std::vector<TransformerBlock<T>> blocks;
    LayerNormLayer<T> norm;
    TensorPtr<T> pos_table;  // [T x D], constant

    VitEncoder() = default;
    VitEncoder(const VitConfig& cfg_, Rng& rng)
        : cfg(cfg_),
          patch_embed(cfg_.token_dim(), cfg_.embed_dim, rng),
          cls_token(normal_init<T>({cfg_.embed_dim}, 0.02, rng)),
          norm(cfg_.embed_dim),
          pos_table(sincos_pos_embed<T>(cfg_.tokens(), cfg_.embed_dim)) {
        if (cfg.img_size % cfg.patch != 0) {
            throw ConfigError("vit: image size not divisible by patch size");
        }
        BlockConfig bc;
        bc.embed_dim = cfg.embed_dim;
        bc.heads = cfg.heads;
        bc.kind = cfg.kind;
        for (std::int64_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(bc, rng);
    }

    // raw_tokens: [N x Tsel x p^2*C] constant; pos: positions table rows for the
    // selected tokens, [Tsel x D] shared or [N x Tsel x D] per sample.
    TensorPtr<T> forward_embedded(const TensorPtr<T>& raw_tokens, const TensorPtr<T>& pos,
                                  bool with_cls, bool training) const {
        auto x = patch_embed.forward(raw_tokens);
        x = pos->rank() == x->rank() ? add(x, pos) : add_broadcast(x, pos);
        if (with_cls) {
            x = concat<T>({broadcast_token(cls_token, x->shape[0], 1), x}, 1);
        }
        for (const auto& block : blocks) x = block.forward(x, training, with_cls);
        return norm.forward(x);
    }

    // Full grid; returns [N x (T+1) x D] with the class token at row 0, or
    // [N x T x D] without it.
    TensorPtr<T> encode_full(const TensorPtr<T>& images, bool with_cls, bool training) const {
        auto ps = patchify(images->rank() == 3
                               ? reshape(images, {1, images->shape[0], images->shape[1], images->shape[2]})
                               : images,
                           cfg.patch);
        return forward_embedded(ps.tokens, pos_table, with_cls, training);
    }

    // Visible subset per sample (masked-autoencoder mode); positions are looked
    // up by original patch index.
    TensorPtr<T> encode_visible(const TensorPtr<T>& images,
                                const std::vector<std::vector<std::int64_t>>& visible_idx,
                                bool with_cls, bool training) const {
        auto ps = patchify(images, cfg.patch);
        const std::int64_t n = ps.tokens->shape[0];
        const std::int64_t nv = static_cast<std::int64_t>(visible_idx[0].size());
        const std::int64_t td = cfg.token_dim(), d = cfg.embed_dim;
        std::vector<T> sel(static_cast<std::size_t>(n) * nv * td);
        std::vector<T> pos(static_cast<std::size_t>(n) * nv * d);
        const T* pt = ps.tokens->ptr();
        const T* pp = pos_table->ptr();
        for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t s = 0; s < nv; ++s) {
                const std::int64_t src = visible_idx[b][s];
                std::copy(pt + (b * ps.count() + src) * td, pt + (b * ps.count() + src) * td + td,
                          sel.data() + (b * nv + s) * td);
                std::copy(pp + src * d, pp + src * d + d, pos.data() + (b * nv + s) * d);
            }
        }
        auto tokens = Tensor<T>::from({n, nv, td}, std::move(sel));
        auto pos_t = Tensor<T>::from({n, nv, d}, std::move(pos));
        return forward_embedded(tokens, pos_t, with_cls, training);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        patch_embed.collect(prefix + ".patch_embed", out);
        out.push_back({prefix + ".cls_token", cls_token});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
        }
        norm.collect(prefix + ".norm", out);
    }
};

}  // namespace astromae
