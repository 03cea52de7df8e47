#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "astromae/ops.hpp"
#include "astromae/rng.hpp"

namespace astromae {

// Named view over a model's tensors. Trainability is carried by the tensor's
// requires_grad flag so frozen subgraphs drop off the tape entirely; buffers
// (batch-norm running statistics) are never trainable but are checkpointed.
template <typename T>
struct Param {
    std::string name;
    TensorPtr<T> tensor;
    bool buffer = false;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

template <typename T>
TensorPtr<T> uniform_init(std::vector<std::int64_t> shape, double limit, Rng& rng) {
    const auto n = shape_numel(shape);
    std::vector<T> data(n);
    for (std::int64_t i = 0; i < n; ++i) data[i] = static_cast<T>(rng.uniform(-limit, limit));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
}

template <typename T>
TensorPtr<T> normal_init(std::vector<std::int64_t> shape, double stddev, Rng& rng) {
    const auto n = shape_numel(shape);
    std::vector<T> data(n);
    for (std::int64_t i = 0; i < n; ++i) data[i] = static_cast<T>(stddev * rng.normal());
    return Tensor<T>::from(std::move(shape), std::move(data), true);
}

template <typename T>
struct LinearLayer {
    TensorPtr<T> weight;  // [in x out]
    TensorPtr<T> bias;    // [out]

    LinearLayer() = default;
    LinearLayer(std::int64_t in, std::int64_t out, Rng& rng)
        : weight(uniform_init<T>({in, out}, std::sqrt(6.0 / double(in + out)), rng)),
          bias(Tensor<T>::zeros({out}, true)) {}

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        return add_broadcast(matmul(x, weight), bias);
    }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct LayerNormLayer {
    TensorPtr<T> gamma;
    TensorPtr<T> beta;
    T eps = T(1e-6);

    LayerNormLayer() = default;
    explicit LayerNormLayer(std::int64_t d)
        : gamma(Tensor<T>::full({d}, T(1), true)), beta(Tensor<T>::zeros({d}, true)) {}

    TensorPtr<T> forward(const TensorPtr<T>& x) const { return layer_norm(x, gamma, beta, eps); }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

template <typename T>
struct BatchNorm2dLayer {
    TensorPtr<T> gamma;
    TensorPtr<T> beta;
    TensorPtr<T> running_mean;
    TensorPtr<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    bool frozen_stats = false;  // frozen encoders keep running stats fixed

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(std::int64_t c)
        : gamma(Tensor<T>::full({c}, T(1), true)),
          beta(Tensor<T>::zeros({c}, true)),
          running_mean(Tensor<T>::zeros({c}, false)),
          running_var(Tensor<T>::full({c}, T(1), false)) {}

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        return batch_norm(x, gamma, beta, running_mean, running_var, training && !frozen_stats,
                          momentum, eps);
    }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
        out.push_back({prefix + ".running_mean", running_mean, true});
        out.push_back({prefix + ".running_var", running_var, true});
    }
};

template <typename T>
struct Conv2dLayer {
    TensorPtr<T> weight;  // [c_out x c_in/groups x k x k]
    TensorPtr<T> bias;    // [c_out]
    std::int64_t stride = 1, pad = 0, groups = 1;

    Conv2dLayer() = default;
    Conv2dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride_,
                std::int64_t pad_, std::int64_t groups_, Rng& rng)
        : stride(stride_), pad(pad_), groups(groups_) {
        const double fan_in = double(c_in / groups_) * k * k;
        const double fan_out = double(c_out / groups_) * k * k;
        weight = uniform_init<T>({c_out, c_in / groups_, k, k}, std::sqrt(6.0 / (fan_in + fan_out)), rng);
        bias = Tensor<T>::zeros({c_out}, true);
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        return conv2d(x, weight, bias, stride, pad, groups);
    }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

// Multi-head self-attention with per-head scaling 1/sqrt(D/h); projection
// matrices are [D x D] without biases, head outputs are concatenated along
// channels and projected by wo.
template <typename T>
struct AttentionLayer {
    TensorPtr<T> wq, wk, wv, wo;
    std::int64_t heads = 1;

    AttentionLayer() = default;
    AttentionLayer(std::int64_t d, std::int64_t h, Rng& rng) : heads(h) {
        if (d % h != 0) {
            throw ConfigError("attention: embed dim " + std::to_string(d) +
                              " not divisible by heads " + std::to_string(h));
        }
        const double lim = std::sqrt(6.0 / double(2 * d));
        wq = uniform_init<T>({d, d}, lim, rng);
        wk = uniform_init<T>({d, d}, lim, rng);
        wv = uniform_init<T>({d, d}, lim, rng);
        wo = uniform_init<T>({d, d}, lim, rng);
    }

    // tokens: [N x T x D] or [T x D]
    TensorPtr<T> forward(const TensorPtr<T>& tokens) const {
        const bool batched = tokens->rank() == 3;
        auto x = batched ? tokens : reshape(tokens, {1, tokens->shape[0], tokens->shape[1]});
        const std::int64_t n = x->shape[0], t = x->shape[1], d = x->shape[2];
        const std::int64_t dh = d / heads;

        auto split = [&](const TensorPtr<T>& proj) {
            return permute(reshape(proj, {n, t, heads, dh}), {0, 2, 1, 3});  // N x h x T x dh
        };
        auto q = split(matmul(x, wq));
        auto k = split(matmul(x, wk));
        auto v = split(matmul(x, wv));

        auto att = matmul(q, permute(k, {0, 1, 3, 2}));                    // N x h x T x T
        att = softmax(scale(att, T(1) / std::sqrt(T(dh))), 3);
        auto ctx = matmul(att, v);                                         // N x h x T x dh
        ctx = reshape(permute(ctx, {0, 2, 1, 3}), {n, t, d});
        auto out = matmul(ctx, wo);
        return batched ? out : reshape(out, {t, d});
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".wq", wq});
        out.push_back({prefix + ".wk", wk});
        out.push_back({prefix + ".wv", wv});
        out.push_back({prefix + ".wo", wo});
    }
};

template <typename T>
struct FfnLayer {
    LinearLayer<T> fc1, fc2;

    FfnLayer() = default;
    FfnLayer(std::int64_t d, std::int64_t hidden, Rng& rng)
        : fc1(d, hidden, rng), fc2(hidden, d, rng) {}

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        return fc2.forward(gelu(fc1.forward(x)));
    }
    void collect(const std::string& prefix, ParamList<T>& out) const {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }
};

enum class BlockKind { Plain, Pcm };

struct BlockConfig {
    std::int64_t embed_dim = 192;
    std::int64_t heads = 3;
    std::int64_t ffn_hidden = 0;  // 0 -> 4 * embed_dim
    BlockKind kind = BlockKind::Plain;
    std::int64_t pcm_groups = 4;
    std::int64_t pcm_stages = 3;

    std::int64_t ffn_width() const { return ffn_hidden ? ffn_hidden : 4 * embed_dim; }
};

// Pre-norm transformer block. The pcm variant adds a grouped-conv branch
// computed from the raw block input (class token excluded) to the attention
// output before the residual add.
template <typename T>
struct TransformerBlock {
    BlockConfig cfg;
    LayerNormLayer<T> ln1, ln2;
    AttentionLayer<T> attn;
    FfnLayer<T> ffn;
    struct PcmStage {
        Conv2dLayer<T> conv;
        BatchNorm2dLayer<T> bn;
    };
    std::vector<PcmStage> pcm;

    TransformerBlock() = default;
    TransformerBlock(const BlockConfig& cfg_, Rng& rng)
        : cfg(cfg_),
          ln1(cfg_.embed_dim),
          ln2(cfg_.embed_dim),
          attn(cfg_.embed_dim, cfg_.heads, rng),
          ffn(cfg_.embed_dim, cfg_.ffn_width(), rng) {
        if (cfg.kind == BlockKind::Pcm) {
            if (cfg.embed_dim % cfg.pcm_groups != 0) {
                throw ConfigError("pcm block: embed dim not divisible by conv groups");
            }
            for (std::int64_t i = 0; i < cfg.pcm_stages; ++i) {
                pcm.push_back({Conv2dLayer<T>(cfg.embed_dim, cfg.embed_dim, 3, 1, 1, cfg.pcm_groups, rng),
                               BatchNorm2dLayer<T>(cfg.embed_dim)});
            }
        }
    }

    // tokens: [N x T x D]; when has_cls, row 0 of every sample bypasses the
    // conv branch and the remaining T-1 rows must form a square grid.
    TensorPtr<T> forward(const TensorPtr<T>& tokens, bool training, bool has_cls) const {
        auto attn_out = attn.forward(ln1.forward(tokens));
        auto branch = attn_out;
        if (cfg.kind == BlockKind::Pcm) {
            const std::int64_t n = tokens->shape[0], t = tokens->shape[1], d = tokens->shape[2];
            const std::int64_t ts = has_cls ? t - 1 : t;
            const std::int64_t side = static_cast<std::int64_t>(std::llround(std::sqrt(double(ts))));
            if (side * side != ts) {
                throw ShapeError("pcm block: token count " + std::to_string(ts) +
                                 " does not form a square grid");
            }
            TensorPtr<T> spatial = tokens;
            if (has_cls) {
                std::vector<std::int64_t> rows(ts);
                for (std::int64_t i = 0; i < ts; ++i) rows[i] = i + 1;
                spatial = gather_rows(tokens, rows);
            }
            auto img = reshape(permute(spatial, {0, 2, 1}), {n, d, side, side});
            for (const auto& stage : pcm) {
                img = silu(stage.bn.forward(stage.conv.forward(img), training));
            }
            auto seq = permute(reshape(img, {n, d, ts}), {0, 2, 1});
            if (has_cls) {
                seq = concat<T>({Tensor<T>::zeros({n, 1, d}), seq}, 1);
            }
            branch = add(attn_out, seq);
        }
        auto y = add(tokens, branch);
        return add(y, ffn.forward(ln2.forward(y)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        ln1.collect(prefix + ".ln1", out);
        attn.collect(prefix + ".attn", out);
        for (std::size_t i = 0; i < pcm.size(); ++i) {
            pcm[i].conv.collect(prefix + ".pcm." + std::to_string(i) + ".conv", out);
            pcm[i].bn.collect(prefix + ".pcm." + std::to_string(i) + ".bn", out);
        }
        ln2.collect(prefix + ".ln2", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

}  // namespace astromae
