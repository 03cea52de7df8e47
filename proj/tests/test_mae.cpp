#include <cstring>
#include <fstream>
#include <set>

#include "astromae/checkpoint.hpp"
#include "doctest.h"

using namespace astromae;

namespace {

template <typename T>
TensorPtr<T> rand_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
    const auto n = shape_numel(shape);
    std::vector<T> data(n);
    for (std::int64_t i = 0; i < n; ++i) data[i] = static_cast<T>(scale * rng.uniform(-1.0, 1.0));
    return Tensor<T>::from(std::move(shape), std::move(data));
}

MaeConfig tiny_mae(std::int64_t embed = 16, std::int64_t depth = 1) {
    MaeConfig mc;
    mc.encoder.img_size = 32;
    mc.encoder.in_chans = 5;
    mc.encoder.patch = 8;
    mc.encoder.embed_dim = embed;
    mc.encoder.depth = depth;
    mc.encoder.heads = 2;
    mc.decoder_depth = 1;
    mc.decoder_heads = 2;
    return mc;
}

}  // namespace

TEST_CASE("make_mask: counts at the paper ratio and the binary edge") {
    Rng rng(3);
    auto plan = make_mask(16, 0.75, rng);
    CHECK(plan.masked_idx.size() == 12);
    CHECK(plan.visible_idx.size() == 4);

    auto two = make_mask(2, 0.5, rng);
    CHECK(two.masked_idx.size() == 1);
    CHECK(two.visible_idx.size() == 1);

    CHECK_THROWS_AS(make_mask(4, 0.05, rng), ConfigError);  // rounds to zero masked
    CHECK_THROWS_AS(make_mask(4, 0.95, rng), ConfigError);  // rounds to zero visible
    CHECK_THROWS_AS(make_mask(1, 0.5, rng), ConfigError);
}

TEST_CASE("make_mask: per-index masking frequency is the ratio") {
    Rng rng(5);
    const int draws = 10000;
    std::vector<int> masked_count(16, 0);
    for (int d = 0; d < draws; ++d) {
        auto plan = make_mask(16, 0.75, rng);
        // partition invariant, checked exhaustively
        std::set<std::int64_t> all(plan.visible_idx.begin(), plan.visible_idx.end());
        all.insert(plan.masked_idx.begin(), plan.masked_idx.end());
        REQUIRE(all.size() == 16);
        for (auto m : plan.masked_idx) ++masked_count[m];
    }
    for (int i = 0; i < 16; ++i) {
        CHECK(double(masked_count[i]) / draws == doctest::Approx(0.75).epsilon(0.027));
    }
}

TEST_CASE("restore_order: direct placement and shuffle round-trip") {
    // T=4, visible [1, 3]: rows come out [mask, v1, mask, v3]
    MaskPlan plan;
    plan.total = 4;
    plan.mask_ratio = 0.5;
    plan.visible_idx = {1, 3};
    plan.masked_idx = {0, 2};
    plan.restore_perm = {2, 0, 3, 1};
    auto vis = Tensor<float>::from({1, 2, 2}, {10, 11, 30, 31});
    auto mask = Tensor<float>::from({1, 2, 2}, {-1, -1, -1, -1});
    auto out = restore_order(vis, mask, {plan});
    const std::vector<float> expect{-1, -1, 10, 11, -1, -1, 30, 31};
    REQUIRE(out->shape == std::vector<std::int64_t>{1, 4, 2});
    for (int i = 0; i < 8; ++i) CHECK(out->data[i] == expect[i]);

    auto bad_mask = Tensor<float>::from({1, 1, 2}, {-1, -1});
    CHECK_THROWS_AS(restore_order(vis, bad_mask, {plan}), ShapeError);

    // restore_order inverts the shuffle for random plans, T in [2, 8]
    Rng rng(7);
    for (int round = 0; round < 500; ++round) {
        const std::int64_t t = 2 + static_cast<std::int64_t>(rng.uniform_int(7));
        const double ratio = t == 2 ? 0.5 : 0.4;
        MaskPlan p = make_mask(t, ratio, rng);
        const std::int64_t nv = static_cast<std::int64_t>(p.visible_idx.size());
        const std::int64_t nm = static_cast<std::int64_t>(p.masked_idx.size());
        std::vector<float> vis_rows;
        for (std::int64_t s = 0; s < nv; ++s) {
            vis_rows.push_back(static_cast<float>(p.visible_idx[s]));  // row value = patch id
        }
        auto v2 = Tensor<float>::from({1, nv, 1}, std::move(vis_rows));
        auto m2 = Tensor<float>::from({1, nm, 1}, std::vector<float>(nm, -1.0f));
        auto restored = restore_order(v2, m2, {p});
        for (std::int64_t pos = 0; pos < t; ++pos) {
            const bool visible =
                std::find(p.visible_idx.begin(), p.visible_idx.end(), pos) != p.visible_idx.end();
            CHECK(restored->data[pos] == (visible ? float(pos) : -1.0f));
        }
    }

    // one mask slot only: all visible tokens keep their original positions
    Rng rng2(11);
    auto near_full = make_mask(4, 0.25, rng2);
    REQUIRE(near_full.masked_idx.size() == 1);
    std::vector<float> rows;
    for (auto vi : near_full.visible_idx) rows.push_back(float(vi));
    auto v3 = Tensor<float>::from({1, 3, 1}, std::move(rows));
    auto m3 = Tensor<float>::from({1, 1, 1}, {-1.0f});
    auto r3 = restore_order(v3, m3, {near_full});
    for (std::int64_t pos = 0; pos < 4; ++pos) {
        if (pos == near_full.masked_idx[0]) {
            CHECK(r3->data[pos] == -1.0f);
        } else {
            CHECK(r3->data[pos] == float(pos));
        }
    }
}

TEST_CASE("mae forward: paper-shape output and zero decoder head") {
    Rng rng(13);
    MaeConfig mc = tiny_mae(192, 1);
    mc.decoder_heads = 3;
    mc.encoder.heads = 3;
    Rng init(17);
    MaeModel<float> model(mc, init);

    auto images = rand_tensor<float>({2, 5, 32, 32}, rng);
    std::vector<MaskPlan> plans;
    for (int i = 0; i < 2; ++i) plans.push_back(make_mask(16, 0.75, rng));
    auto recon = model.forward(images, plans, false);
    CHECK(recon->shape == std::vector<std::int64_t>{2, 16, 320});

    std::fill(model.decoder_head.weight->data.begin(), model.decoder_head.weight->data.end(), 0.0f);
    std::fill(model.decoder_head.bias->data.begin(), model.decoder_head.bias->data.end(), 0.0f);
    auto zero_recon = model.forward(images, plans, false);
    for (auto v : zero_recon->data) CHECK(v == 0.0f);
}

TEST_CASE("mask token receives gradient through the decoder") {
    Rng init(19);
    MaeModel<double> model(tiny_mae(), init);
    Rng rng(23);
    auto images = rand_tensor<double>({2, 5, 32, 32}, rng);
    std::vector<MaskPlan> plans;
    for (int i = 0; i < 2; ++i) plans.push_back(make_mask(16, 0.75, rng));

    Tape<double> tape;
    {
        Tape<double>::Scope scope(tape);
        auto recon = model.forward(images, plans, true);
        auto orig = patchify(images, 8).tokens;
        tape.backward(reconstruction_loss(recon, orig, plans));
    }
    REQUIRE(model.mask_token->grad.size() == model.mask_token->data.size());
    bool nonzero = false;
    for (double g : model.mask_token->grad) nonzero = nonzero || g != 0.0;
    CHECK(nonzero);
}

TEST_CASE("reconstruction loss: masked positions only") {
    Rng rng(29);
    MaskPlan plan;
    plan.total = 4;
    plan.mask_ratio = 0.5;
    plan.visible_idx = {0, 2};
    plan.masked_idx = {1, 3};
    plan.restore_perm = {0, 2, 1, 3};

    auto orig = rand_tensor<float>({1, 4, 3}, rng);
    auto recon = Tensor<float>::from(orig->shape, orig->data);
    CHECK(reconstruction_loss(recon, orig, {plan})->data[0] == 0.0f);

    // garbage at visible rows leaves the loss bit-identical
    auto recon2 = Tensor<float>::from(orig->shape, orig->data);
    recon2->data[0] = 1e6f;
    recon2->data[2 * 3 + 1] = -42.0f;
    CHECK(reconstruction_loss(recon2, orig, {plan})->data[0] == 0.0f);

    // constant residual of 2 on one masked patch -> mse 4
    MaskPlan single;
    single.total = 2;
    single.mask_ratio = 0.5;
    single.visible_idx = {0};
    single.masked_idx = {1};
    single.restore_perm = {0, 1};
    auto o = Tensor<float>::from({1, 2, 3}, {0, 0, 0, 1, 1, 1});
    auto r = Tensor<float>::from({1, 2, 3}, {0, 0, 0, 3, 3, 3});
    CHECK(reconstruction_loss(r, o, {single})->data[0] == doctest::Approx(4.0f));

    auto wrong = Tensor<float>::zeros({1, 3, 3});
    CHECK_THROWS_AS(reconstruction_loss(wrong, orig, {plan}), ShapeError);
}

TEST_CASE("encoder export: round-trip, no decoder params, closed-form count") {
    Rng init(31);
    MaeConfig mc = tiny_mae(16, 2);
    MaeModel<float> model(mc, init);
    Checkpoint ckpt = export_encoder(model);
    CHECK(ckpt.metadata.at("block_kind") == "plain");
    for (const auto& [name, entry] : ckpt.entries) {
        CHECK(name.rfind("encoder.", 0) == 0);
        CHECK(name.find("decoder") == std::string::npos);
        CHECK(name.find("mask_token") == std::string::npos);
    }

    // import into a freshly initialized encoder: forward outputs bit-identical
    Rng init2(999);
    MaeModel<float> other(mc, init2);
    ParamList<float> other_params;
    other.encoder.collect("encoder", other_params);
    restore_params(ckpt, other_params);
    Rng rng(37);
    auto img = rand_tensor<float>({1, 5, 32, 32}, rng);
    auto a = model.encoder.encode_full(img, true, false);
    auto b = other.encoder.encode_full(img, true, false);
    CHECK(std::memcmp(a->ptr(), b->ptr(), a->numel() * sizeof(float)) == 0);

    // independently computed parameter count for the paper-scale plain encoder
    MaeConfig paper = tiny_mae(192, 12);
    paper.encoder.heads = 3;
    Rng init3(41);
    MaeModel<float> full(paper, init3);
    Checkpoint pc = export_encoder(full);
    std::int64_t total = 0;
    for (const auto& [name, entry] : pc.entries) {
        std::int64_t n = 1;
        for (auto d : entry.shape) n *= d;
        total += n;
    }
    const std::int64_t d = 192, tok = 320, hidden = 4 * 192;
    const std::int64_t per_block =
        2 * d + 4 * d * d + 2 * d + (d * hidden + hidden) + (hidden * d + d);
    const std::int64_t expect = (tok * d + d) + d + 12 * per_block + 2 * d;
    CHECK(total == expect);
}

TEST_CASE("AMCK checkpoint file round-trip and corruption errors") {
    Checkpoint ckpt;
    ckpt.entries.push_back({"w", {{2, 3}, {1.5f, -2.25f, 0.125f, 3.0f, -0.5f, 9.75f}}});
    ckpt.entries.push_back({"b", {{3}, {0.1f, 0.2f, 0.3f}}});
    ckpt.metadata["block_kind"] = "plain";
    const std::string path = "/tmp/astromae_test_ckpt.amck";
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);
    REQUIRE(loaded.entries.size() == 2);
    CHECK(loaded.entries[0].first == "w");
    CHECK(std::memcmp(loaded.entries[0].second.data.data(), ckpt.entries[0].second.data.data(),
                      6 * sizeof(float)) == 0);
    CHECK(loaded.metadata.at("block_kind") == "plain");

    auto corrupt = [&](std::size_t offset, char byte, const std::string& out) {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes[offset] = byte;
        std::ofstream os(out, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    corrupt(0, 'X', "/tmp/astromae_bad_magic.amck");
    CHECK_THROWS_AS(load_checkpoint("/tmp/astromae_bad_magic.amck"), FileMagicError);
    corrupt(4, 9, "/tmp/astromae_bad_version.amck");
    CHECK_THROWS_AS(load_checkpoint("/tmp/astromae_bad_version.amck"), FileVersionError);
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream os("/tmp/astromae_truncated.amck", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    }
    CHECK_THROWS_AS(load_checkpoint("/tmp/astromae_truncated.amck"), FileTruncationError);
}
