#include <chrono>
#include <cstdio>

#include "astromae/gradcheck.hpp"
#include "astromae/train.hpp"
#include "astromae/zoo.hpp"

namespace astromae {

namespace {

using D = double;
constexpr double kTol = 1e-4;

TensorPtr<D> rand_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
    const auto n = shape_numel(shape);
    std::vector<D> data(n);
    for (std::int64_t i = 0; i < n; ++i) data[i] = scale * rng.uniform(-1.0, 1.0);
    return Tensor<D>::from(std::move(shape), std::move(data));
}

// Max grad_check error over the input and every parameter of a component.
GradCheckResult check_component(const std::string& name,
                                const std::vector<TensorPtr<D>>& targets,
                                const std::function<TensorPtr<D>()>& objective) {
    GradCheckResult res;
    res.component = name;
    for (const auto& t : targets) {
        res.max_error = std::max(res.max_error, grad_check(objective, t));
    }
    res.pass = res.max_error < kTol;
    return res;
}

std::vector<TensorPtr<D>> with_params(const TensorPtr<D>& input, const ParamList<D>& params) {
    std::vector<TensorPtr<D>> targets{input};
    for (const auto& p : params) {
        if (!p.buffer) targets.push_back(p.tensor);
    }
    return targets;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite() {
    std::vector<GradCheckResult> results;
    Rng rng(20240901);

    {  // linear
        LinearLayer<D> layer(5, 4, rng);
        auto x = rand_tensor({2, 5}, rng);
        auto w = rand_tensor({2, 4}, rng);
        ParamList<D> params;
        layer.collect("linear", params);
        results.push_back(check_component("linear", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // conv2d, groups = 1
        Conv2dLayer<D> layer(3, 4, 3, 1, 1, 1, rng);
        auto x = rand_tensor({2, 3, 5, 5}, rng);
        auto w = rand_tensor({2, 4, 5, 5}, rng);
        ParamList<D> params;
        layer.collect("conv", params);
        results.push_back(check_component("conv2d", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // conv2d, groups = 4
        Conv2dLayer<D> layer(8, 8, 3, 1, 1, 4, rng);
        auto x = rand_tensor({2, 8, 4, 4}, rng);
        auto w = rand_tensor({2, 8, 4, 4}, rng);
        ParamList<D> params;
        layer.collect("gconv", params);
        results.push_back(check_component("conv2d_groups4", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // layer_norm
        LayerNormLayer<D> layer(7);
        Rng r2(7);
        for (auto& g : layer.gamma->data) g = 0.5 + r2.uniform();
        for (auto& b : layer.beta->data) b = r2.uniform(-0.5, 0.5);
        auto x = rand_tensor({3, 7}, rng);
        auto w = rand_tensor({3, 7}, rng);
        ParamList<D> params;
        layer.collect("ln", params);
        results.push_back(check_component("layer_norm", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // batch_norm, training and eval
        BatchNorm2dLayer<D> layer(4);
        Rng r2(11);
        for (auto& g : layer.gamma->data) g = 0.5 + r2.uniform();
        for (auto& b : layer.beta->data) b = r2.uniform(-0.5, 0.5);
        auto x = rand_tensor({3, 4, 2, 2}, rng);
        auto w = rand_tensor({3, 4, 2, 2}, rng);
        ParamList<D> params;
        layer.collect("bn", params);
        results.push_back(check_component("batch_norm_train", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x, true), w); }));
        for (auto& m : layer.running_mean->data) m = r2.uniform(-0.5, 0.5);
        for (auto& v : layer.running_var->data) v = 0.5 + r2.uniform();
        results.push_back(check_component("batch_norm_eval", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x, false), w); }));
    }
    {  // softmax
        auto x = rand_tensor({4, 6}, rng, 2.0);
        auto w = rand_tensor({4, 6}, rng);
        results.push_back(check_component("softmax", {x},
                                          [&] { return weighted_sum(softmax(x, 1), w); }));
    }
    {  // activations
        auto x = rand_tensor({3, 6}, rng, 2.0);
        auto w = rand_tensor({3, 6}, rng);
        results.push_back(check_component("gelu", {x}, [&] { return weighted_sum(gelu(x), w); }));
        results.push_back(check_component("silu", {x}, [&] { return weighted_sum(silu(x), w); }));
        results.push_back(check_component("relu", {x}, [&] { return weighted_sum(relu(x), w); }));
    }
    {  // max_pool
        auto x = rand_tensor({1, 2, 6, 6}, rng);
        auto w = rand_tensor({1, 2, 3, 3}, rng);
        results.push_back(check_component("max_pool", {x},
                                          [&] { return weighted_sum(max_pool2d(x, 2, 2), w); }));
    }
    {  // multi-head self-attention
        AttentionLayer<D> layer(8, 2, rng);
        auto x = rand_tensor({1, 3, 8}, rng);
        auto w = rand_tensor({1, 3, 8}, rng);
        ParamList<D> params;
        layer.collect("attn", params);
        results.push_back(check_component("mhsa", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // feed-forward network
        FfnLayer<D> layer(6, 24, rng);
        auto x = rand_tensor({2, 6}, rng);
        auto w = rand_tensor({2, 6}, rng);
        ParamList<D> params;
        layer.collect("ffn", params);
        results.push_back(check_component("ffn", with_params(x, params),
                                          [&] { return weighted_sum(layer.forward(x), w); }));
    }
    {  // plain transformer block
        BlockConfig bc;
        bc.embed_dim = 8;
        bc.heads = 2;
        bc.kind = BlockKind::Plain;
        TransformerBlock<D> block(bc, rng);
        auto x = rand_tensor({1, 3, 8}, rng);
        auto w = rand_tensor({1, 3, 8}, rng);
        ParamList<D> params;
        block.collect("plain", params);
        results.push_back(check_component("plain_block", with_params(x, params), [&] {
            return weighted_sum(block.forward(x, true, false), w);
        }));
    }
    {  // pcm transformer block (class token + 2x2 grid, batch-norm in training)
        BlockConfig bc;
        bc.embed_dim = 8;
        bc.heads = 2;
        bc.kind = BlockKind::Pcm;
        TransformerBlock<D> block(bc, rng);
        auto x = rand_tensor({2, 5, 8}, rng);
        auto w = rand_tensor({2, 5, 8}, rng);
        ParamList<D> params;
        block.collect("pcm", params);
        results.push_back(check_component("pcm_block", with_params(x, params), [&] {
            return weighted_sum(block.forward(x, true, true), w);
        }));
    }
    {  // inception module
        InceptionModule<D> module(4, 16, true, rng);
        auto x = rand_tensor({2, 4, 6, 6}, rng);
        auto w = rand_tensor({2, 16, 6, 6}, rng);
        ParamList<D> params;
        module.collect("inception", params);
        results.push_back(check_component("inception_module", with_params(x, params),
                                          [&] { return weighted_sum(module.forward(x), w); }));
    }
    {  // magnitude block
        MagnitudeMlp<D> mlp(rng);
        auto x = rand_tensor({2, 5}, rng);
        auto w = rand_tensor({2, 32}, rng);
        ParamList<D> params;
        mlp.collect("magnitude", params);
        results.push_back(check_component("magnitude_block", with_params(x, params),
                                          [&] { return weighted_sum(mlp.forward(x), w); }));
    }
    {  // fusion trunk: two linears with ReLU between
        LinearLayer<D> fc1(16, 8, rng), fc2(8, 1, rng);
        auto x = rand_tensor({2, 16}, rng);
        auto w = rand_tensor({2, 1}, rng);
        ParamList<D> params;
        fc1.collect("trunk.fc1", params);
        fc2.collect("trunk.fc2", params);
        results.push_back(check_component("fusion_trunk", with_params(x, params), [&] {
            return weighted_sum(fc2.forward(relu(fc1.forward(x))), w);
        }));
    }
    return results;
}

int cmd_gradcheck(const RunConfig&) {
    const auto start = std::chrono::steady_clock::now();
    auto results = run_gradcheck_suite();
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-18s max_rel_error=%.3e %s\n", r.component.c_str(), r.max_error,
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("gradcheck: %zu components in %.1fs -> %s\n", results.size(), secs,
                all_pass ? "PASS" : "FAIL");
    return all_pass ? 0 : 3;
}

}  // namespace astromae
