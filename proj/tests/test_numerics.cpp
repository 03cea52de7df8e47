#include <cmath>
#include <cstring>

#include "astromae/gradcheck.hpp"
#include "astromae/kernels.hpp"
#include "astromae/ops.hpp"
#include "astromae/rng.hpp"
#include "astromae/train.hpp"
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

}  // namespace

TEST_CASE("matmul identity and forced products") {
    auto eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<float>::from({2, 2}, {3.5f, -1.0f, 2.0f, 7.25f});
    auto out = matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(out->data[i] == m->data[i]);

    auto a = Tensor<float>::from({1, 2}, {1, 2});
    auto b = Tensor<float>::from({2, 1}, {3, 4});
    CHECK(matmul(a, b)->data[0] == doctest::Approx(11.0f));
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(101);
    auto a = rand_tensor<float>({4, 5}, rng);
    auto b = rand_tensor<float>({5, 3}, rng);
    auto out = matmul(a, b);
    std::vector<float> expect(4 * 3);
    reference::matmul<float>(4, 3, 5, a->ptr(), b->ptr(), expect.data());
    for (int i = 0; i < 12; ++i) CHECK(out->data[i] == doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("matmul shape error names both shapes") {
    auto a = Tensor<float>::zeros({4, 5});
    auto b = Tensor<float>::zeros({3, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[4x5]") != std::string::npos);
        CHECK(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("matmul batched forms agree with flattened gemm") {
    Rng rng(7);
    auto a = rand_tensor<float>({3, 4, 6}, rng);
    auto w = rand_tensor<float>({6, 5}, rng);
    auto out = matmul(a, w);
    REQUIRE(out->shape == std::vector<std::int64_t>{3, 4, 5});
    for (int bi = 0; bi < 3; ++bi) {
        std::vector<float> expect(4 * 5);
        reference::matmul<float>(4, 5, 6, a->ptr() + bi * 24, w->ptr(), expect.data());
        for (int i = 0; i < 20; ++i) {
            CHECK(out->data[bi * 20 + i] == doctest::Approx(expect[i]).epsilon(1e-6));
        }
    }

    auto b = rand_tensor<float>({3, 6, 5}, rng);
    auto out2 = matmul(a, b);
    for (int bi = 0; bi < 3; ++bi) {
        std::vector<float> expect(4 * 5);
        reference::matmul<float>(4, 5, 6, a->ptr() + bi * 24, b->ptr() + bi * 30, expect.data());
        for (int i = 0; i < 20; ++i) {
            CHECK(out2->data[bi * 20 + i] == doctest::Approx(expect[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("conv2d pointwise scaling and padding shape") {
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto k = Tensor<float>::from({1, 1, 1, 1}, {2.0f});
    auto out = conv2d<float>(x, k, nullptr, 1, 0, 1);
    REQUIRE(out->shape == std::vector<std::int64_t>{1, 1, 3, 3});
    for (auto v : out->data) CHECK(v == doctest::Approx(2.0f));

    Rng rng(5);
    auto x2 = rand_tensor<float>({1, 1, 4, 4}, rng);
    auto k2 = rand_tensor<float>({1, 1, 3, 3}, rng);
    CHECK(conv2d<float>(x2, k2, nullptr, 1, 1, 1)->shape == std::vector<std::int64_t>{1, 1, 4, 4});
}

TEST_CASE("grouped conv2d matches the direct-loop oracle") {
    Rng rng(11);
    auto x = rand_tensor<float>({2, 4, 6, 6}, rng);
    auto w = rand_tensor<float>({6, 2, 3, 3}, rng);  // groups=2: 4 in, 6 out
    auto bias = rand_tensor<float>({6}, rng);
    auto out = conv2d(x, w, bias, 1, 1, 2);
    kernels::Conv2dDims d{2, 4, 6, 6, 6, 3, 3, 1, 1, 2};
    std::vector<float> expect(2 * 6 * 6 * 6);
    reference::conv2d<float>(d, x->ptr(), w->ptr(), bias->ptr(), expect.data());
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(out->data[i] == doctest::Approx(expect[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d rejects bad group divisibility and oversized kernels") {
    auto x = Tensor<float>::zeros({1, 3, 4, 4});
    auto w = Tensor<float>::zeros({4, 1, 3, 3});
    CHECK_THROWS_AS(conv2d<float>(x, w, nullptr, 1, 1, 2), ShapeError);
    auto w2 = Tensor<float>::zeros({4, 3, 7, 7});
    CHECK_THROWS_AS(conv2d<float>(x, w2, nullptr, 1, 1, 1), ShapeError);
}

TEST_CASE("depthwise consistency: block-diagonal dense kernel equals grouped kernel") {
    Rng rng(13);
    const std::int64_t c = 3, k = 3;
    auto x = rand_tensor<float>({2, c, 5, 5}, rng);
    auto dw = rand_tensor<float>({c, 1, k, k}, rng);
    std::vector<float> dense(static_cast<std::size_t>(c) * c * k * k, 0.0f);
    for (std::int64_t o = 0; o < c; ++o) {
        for (std::int64_t i = 0; i < k * k; ++i) {
            dense[(o * c + o) * k * k + i] = dw->data[o * k * k + i];
        }
    }
    auto wd = Tensor<float>::from({c, c, k, k}, std::move(dense));
    auto grouped = conv2d<float>(x, dw, nullptr, 1, 1, c);
    auto full = conv2d<float>(x, wd, nullptr, 1, 1, 1);
    CHECK(std::memcmp(grouped->ptr(), full->ptr(), grouped->numel() * sizeof(float)) == 0);
}

TEST_CASE("softmax values, symmetry and stability") {
    auto x = Tensor<float>::from({3}, {0, 0, 0});
    auto out = softmax(x, 0);
    for (auto v : out->data) CHECK(v == doctest::Approx(1.0f / 3.0f));

    auto big = Tensor<double>::from({2}, {1000.0, 0.0});
    auto sb = softmax(big, 0);
    CHECK(sb->data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sb->data[1] == doctest::Approx(0.0).epsilon(1e-12));

    // direct exp/sum evaluation at high precision
    auto t = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
    auto st = softmax(t, 0);
    double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(st->data[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
    CHECK(st->data[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(st->data[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(st->data[2] == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax slices sum to one for magnitudes up to 1e4") {
    Rng rng(17);
    auto x = rand_tensor<float>({8, 12}, rng, 1e4);
    auto out = softmax(x, 1);
    for (int r = 0; r < 8; ++r) {
        float s = 0.0f;
        for (int j = 0; j < 12; ++j) s += out->data[r * 12 + j];
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
    }
    CHECK_THROWS_AS(softmax(x, 2), ShapeError);
}

TEST_CASE("layer_norm hand cases") {
    auto gamma = Tensor<float>::full({4}, 1.0f);
    auto beta = Tensor<float>::zeros({4});
    auto constant = Tensor<float>::full({4}, 3.25f);
    auto out = layer_norm(constant, gamma, beta);
    for (auto v : out->data) CHECK(v == doctest::Approx(0.0f).epsilon(1e-5));

    auto g2 = Tensor<float>::full({2}, 1.0f);
    auto b2 = Tensor<float>::zeros({2});
    auto x = Tensor<float>::from({2}, {1.0f, 3.0f});
    auto o2 = layer_norm(x, g2, b2);
    CHECK(o2->data[0] == doctest::Approx(-1.0f).epsilon(1e-5));
    CHECK(o2->data[1] == doctest::Approx(1.0f).epsilon(1e-5));

    Rng rng(23);
    auto any = rand_tensor<float>({3, 4}, rng);
    auto g0 = Tensor<float>::zeros({4});
    auto bb = Tensor<float>::full({4}, 0.75f);
    auto o3 = layer_norm(any, g0, bb);
    for (auto v : o3->data) CHECK(v == doctest::Approx(0.75f));
}

TEST_CASE("batch_norm training, eval and statistics") {
    auto gamma = Tensor<float>::full({2}, 1.0f);
    auto beta = Tensor<float>::from({2}, {0.5f, -0.25f});
    auto rm = Tensor<float>::zeros({2});
    auto rv = Tensor<float>::full({2}, 1.0f);

    // per-channel constant batch -> beta exactly
    std::vector<float> cdata;
    for (int n = 0; n < 2; ++n) {
        for (int c = 0; c < 2; ++c) {
            for (int p = 0; p < 4; ++p) cdata.push_back(c == 0 ? 2.0f : -3.0f);
        }
    }
    auto cx = Tensor<float>::from({2, 2, 2, 2}, std::move(cdata));
    auto out = batch_norm(cx, gamma, beta, rm, rv, true);
    for (int n = 0; n < 2; ++n) {
        for (int c = 0; c < 2; ++c) {
            for (int p = 0; p < 4; ++p) {
                CHECK(out->data[(n * 2 + c) * 4 + p] == beta->data[c]);
            }
        }
    }

    // eval with running (0, 1) and identity affine
    auto g1 = Tensor<float>::full({2}, 1.0f);
    auto b0 = Tensor<float>::zeros({2});
    auto rm0 = Tensor<float>::zeros({2});
    auto rv1 = Tensor<float>::full({2}, 1.0f);
    Rng rng(29);
    auto x = rand_tensor<float>({2, 2, 3, 3}, rng);
    auto oe = batch_norm(x, g1, b0, rm0, rv1, false);
    for (std::int64_t i = 0; i < x->numel(); ++i) {
        CHECK(oe->data[i] == doctest::Approx(x->data[i]).epsilon(1e-4));
    }

    // recompute statistics on the training-mode output (before affine)
    auto rmean = Tensor<float>::zeros({2});
    auto rvar = Tensor<float>::full({2}, 1.0f);
    auto big = rand_tensor<float>({8, 2, 4, 4}, rng, 3.0);
    auto ot = batch_norm(big, g1, b0, rmean, rvar, true);
    for (int c = 0; c < 2; ++c) {
        double sum = 0.0, sq = 0.0;
        int count = 0;
        for (int n = 0; n < 8; ++n) {
            for (int p = 0; p < 16; ++p) {
                const double v = ot->data[(n * 2 + c) * 16 + p];
                sum += v;
                ++count;
            }
        }
        const double mean = sum / count;
        for (int n = 0; n < 8; ++n) {
            for (int p = 0; p < 16; ++p) {
                const double v = ot->data[(n * 2 + c) * 16 + p];
                sq += (v - mean) * (v - mean);
            }
        }
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(sq / count == doctest::Approx(1.0).epsilon(1e-4));
    }

    auto single = Tensor<float>::zeros({1, 2, 2, 2});
    CHECK_THROWS_AS(batch_norm(single, g1, b0, rm0, rv1, true), ShapeError);
}

TEST_CASE("activations: hand values against the erf oracle") {
    auto x = Tensor<float>::from({3}, {-1.0f, 0.0f, 2.0f});
    auto r = relu(x);
    CHECK(r->data[0] == 0.0f);
    CHECK(r->data[1] == 0.0f);
    CHECK(r->data[2] == 2.0f);

    auto zero = Tensor<double>::from({1}, {0.0});
    CHECK(silu(zero)->data[0] == 0.0);
    CHECK(gelu(zero)->data[0] == 0.0);

    auto one = Tensor<double>::from({1}, {1.0});
    const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(gelu(one)->data[0] == doctest::Approx(1.0 * phi1).epsilon(1e-12));
    CHECK(gelu(one)->data[0] == doctest::Approx(0.8413447).epsilon(1e-6));
}

TEST_CASE("max_pool2d values, ties and the sliding-window oracle") {
    auto x = Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool2d(x, 2, 2)->data[0] == 4.0f);

    auto c = Tensor<float>::full({1, 2, 4, 4}, 0.5f);
    auto oc = max_pool2d(c, 2, 2);
    for (auto v : oc->data) CHECK(v == 0.5f);

    Rng rng(31);
    auto r = rand_tensor<float>({1, 1, 6, 6}, rng);
    auto out = max_pool2d(r, 2, 2);
    kernels::Pool2dDims d{1, 1, 6, 6, 2, 2, 0};
    std::vector<float> expect(9);
    reference::max_pool2d<float>(d, r->ptr(), expect.data());
    for (int i = 0; i < 9; ++i) CHECK(out->data[i] == expect[i]);

    CHECK_THROWS_AS(max_pool2d(x, 3, 1), ShapeError);

    // ties route the gradient to the first element in row-major order
    auto ones = Tensor<double>::full({1, 1, 2, 2}, 1.0, true);
    Tape<double> tape;
    {
        Tape<double>::Scope scope(tape);
        auto loss = sum(max_pool2d(ones, 2, 2));
        tape.backward(loss);
    }
    CHECK(ones->grad[0] == 1.0);
    CHECK(ones->grad[1] == 0.0);
    CHECK(ones->grad[2] == 0.0);
    CHECK(ones->grad[3] == 0.0);
}

TEST_CASE("backward: linear and quadratic leaves") {
    Rng rng(37);
    auto x = rand_tensor<double>({6}, rng);
    auto w = rand_tensor<double>({6}, rng);
    w->requires_grad = true;

    Tape<double> tape;
    {
        Tape<double>::Scope scope(tape);
        auto loss = sum(mul(w, x));
        tape.backward(loss);
    }
    for (int i = 0; i < 6; ++i) CHECK(w->grad[i] == doctest::Approx(x->data[i]).epsilon(1e-12));

    w->zero_grad();
    Tape<double> tape2;
    {
        Tape<double>::Scope scope(tape2);
        auto loss = scale(sum(mul(w, w)), 0.5);
        tape2.backward(loss);
    }
    for (int i = 0; i < 6; ++i) CHECK(w->grad[i] == doctest::Approx(w->data[i]).epsilon(1e-12));
}

TEST_CASE("backward twice without clearing doubles the grads exactly") {
    Rng rng(41);
    auto w = rand_tensor<double>({5}, rng);
    w->requires_grad = true;
    auto x = rand_tensor<double>({5}, rng);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto loss = sum(mul(gelu(w), x));
    tape.backward(loss);
    const std::vector<double> once = w->grad;
    tape.backward(loss);
    for (int i = 0; i < 5; ++i) CHECK(w->grad[i] == 2.0 * once[i]);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto w = Tensor<double>::full({3}, 1.0, true);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto y = mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), RankError);
}

TEST_CASE("forward ops are bit-deterministic") {
    Rng rng(43);
    auto a = rand_tensor<float>({37, 19}, rng);
    auto b = rand_tensor<float>({19, 23}, rng);
    auto o1 = matmul(a, b);
    auto o2 = matmul(a, b);
    CHECK(std::memcmp(o1->ptr(), o2->ptr(), o1->numel() * sizeof(float)) == 0);

    auto x = rand_tensor<float>({3, 4, 8, 8}, rng);
    auto w = rand_tensor<float>({8, 4, 3, 3}, rng);
    auto c1 = conv2d<float>(x, w, nullptr, 1, 1, 1);
    auto c2 = conv2d<float>(x, w, nullptr, 1, 1, 1);
    CHECK(std::memcmp(c1->ptr(), c2->ptr(), c1->numel() * sizeof(float)) == 0);
}

TEST_CASE("grad_check on simple objectives") {
    Rng rng(47);
    auto x = rand_tensor<double>({7}, rng);
    CHECK(grad_check([&] { return sum(x); }, x) < 1e-10);

    auto y = rand_tensor<double>({7}, rng);
    CHECK(grad_check([&] { return sum(mul(y, y)); }, y) < 1e-8);
}

TEST_CASE("grad_check catches a corrupted gradient rule") {
    // test fixture: correct forward x^2, backward deliberately off by 10%
    auto bad_square = [](const TensorPtr<double>& x) {
        auto out = Tensor<double>::zeros(x->shape);
        for (std::int64_t i = 0; i < x->numel(); ++i) out->data[i] = x->data[i] * x->data[i];
        detail::record_op<double>(out, {x}, [x, out] {
            for (std::int64_t i = 0; i < x->numel(); ++i) {
                x->adj[i] += out->adj[i] * 2.2 * x->data[i];
            }
        });
        return out;
    };
    Rng rng(53);
    auto x = rand_tensor<double>({5}, rng);
    CHECK(grad_check([&] { return sum(bad_square(x)); }, x) > 1e-4);
}

TEST_CASE("gradient suite passes on every component") {
    auto results = run_gradcheck_suite();
    CHECK(results.size() >= 16);
    for (const auto& r : results) {
        INFO(r.component, " max_error=", r.max_error);
        CHECK(r.pass);
    }
}

TEST_CASE("parallel kernels match serial reference on larger shapes") {
    Rng rng(59);
    const std::int64_t m = 70, n = 330, k = 96;
    auto a = rand_tensor<float>({m, k}, rng);
    auto b = rand_tensor<float>({k, n}, rng);
    std::vector<float> fast(m * n, 0.0f), slow(m * n);
    kernels::gemm_nn<float>(m, n, k, a->ptr(), b->ptr(), fast.data());
    reference::matmul<float>(m, n, k, a->ptr(), b->ptr(), slow.data());
    for (std::int64_t i = 0; i < m * n; ++i) {
        CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(2e-5));
    }
}
