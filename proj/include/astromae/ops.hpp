#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "astromae/kernels.hpp"
#include "astromae/tensor.hpp"

namespace astromae {

enum class Activation { GELU, ReLU, SiLU };

namespace detail {

template <typename T>
void record_op(TensorPtr<T> out, std::vector<TensorPtr<T>> ins, std::function<void()> pull) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) return;
    std::vector<TensorPtr<T>> rg;
    for (auto& t : ins) {
        if (t && t->requires_grad) rg.push_back(t);
    }
    if (rg.empty()) return;
    out->requires_grad = true;
    tape->record(std::move(out), std::move(rg), std::move(pull));
}

inline std::vector<std::int64_t> drop_last(const std::vector<std::int64_t>& s, std::size_t n) {
    return std::vector<std::int64_t>(s.begin(), s.end() - static_cast<std::ptrdiff_t>(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) {
        throw ShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    const std::int64_t n = a->numel();
    auto out = Tensor<T>::zeros(a->shape);
    const T* pa = a->ptr();
    const T* pb = b->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    detail::record_op<T>(out, {a, b}, [a, b, out, n] {
        const T* g = out->adj.data();
        if (a->requires_grad) {
            T* ga = a->adj.data();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            T* gb = b->adj.data();
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) {
        throw ShapeError("sub: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    const std::int64_t n = a->numel();
    auto out = Tensor<T>::zeros(a->shape);
    const T* pa = a->ptr();
    const T* pb = b->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    detail::record_op<T>(out, {a, b}, [a, b, out, n] {
        const T* g = out->adj.data();
        if (a->requires_grad) {
            T* ga = a->adj.data();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            T* gb = b->adj.data();
            for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) {
        throw ShapeError("mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    const std::int64_t n = a->numel();
    auto out = Tensor<T>::zeros(a->shape);
    const T* pa = a->ptr();
    const T* pb = b->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    detail::record_op<T>(out, {a, b}, [a, b, out, n] {
        const T* g = out->adj.data();
        if (a->requires_grad) {
            T* ga = a->adj.data();
            const T* pb2 = b->ptr();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
        }
        if (b->requires_grad) {
            T* gb = b->adj.data();
            const T* pa2 = a->ptr();
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T s) {
    const std::int64_t n = a->numel();
    auto out = Tensor<T>::zeros(a->shape);
    const T* pa = a->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    detail::record_op<T>(out, {a}, [a, out, s, n] {
        const T* g = out->adj.data();
        T* ga = a->adj.data();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
    });
    return out;
}

// a + b where b's shape is a suffix of a's shape (bias / positional tables).
template <typename T>
TensorPtr<T> add_broadcast(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    const std::int64_t nb = b->numel();
    const std::int64_t na = a->numel();
    if (nb == 0 || na % nb != 0 || b->rank() > a->rank()) {
        throw ShapeError("add_broadcast: " + shape_str(b->shape) + " is not a suffix of " +
                         shape_str(a->shape));
    }
    for (std::size_t i = 0; i < b->rank(); ++i) {
        if (b->shape[i] != a->shape[a->rank() - b->rank() + i]) {
            throw ShapeError("add_broadcast: " + shape_str(b->shape) + " is not a suffix of " +
                             shape_str(a->shape));
        }
    }
    const std::int64_t rows = na / nb;
    auto out = Tensor<T>::zeros(a->shape);
    const T* pa = a->ptr();
    const T* pb = b->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (rows > 1 && na > 32768)
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < nb; ++j) po[r * nb + j] = pa[r * nb + j] + pb[j];
    }
    detail::record_op<T>(out, {a, b}, [a, b, out, rows, nb] {
        const T* g = out->adj.data();
        if (a->requires_grad) {
            T* ga = a->adj.data();
            for (std::int64_t i = 0; i < rows * nb; ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            T* gb = b->adj.data();
            for (std::int64_t j = 0; j < nb; ++j) {
                T sum = T(0);
                for (std::int64_t r = 0; r < rows; ++r) sum += g[r * nb + j];
                gb[j] += sum;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// Supports [m x k]*[k x n], [... x m x k]*[k x n] (shared rhs) and fully
// batched [B... x m x k]*[B... x k x n] with equal leading dims.
template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->rank() < 2 || b->rank() < 2) {
        throw ShapeError("matmul: need rank >= 2 operands, got " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    }
    const std::int64_t m = a->shape[a->rank() - 2];
    const std::int64_t k = a->shape[a->rank() - 1];
    const std::int64_t kb = b->shape[b->rank() - 2];
    const std::int64_t n = b->shape[b->rank() - 1];
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    }

    if (b->rank() == 2) {
        // Collapse leading dims of a into rows.
        const std::int64_t rows = a->numel() / k;
        auto out_shape = detail::drop_last(a->shape, 1);
        out_shape.push_back(n);
        auto out = Tensor<T>::zeros(out_shape);
        kernels::gemm_nn(rows, n, k, a->ptr(), b->ptr(), out->ptr());
        detail::record_op<T>(out, {a, b}, [a, b, out, rows, n, k] {
            if (a->requires_grad) {
                kernels::gemm_nt(rows, k, n, out->adj.data(), b->ptr(), a->adj.data());
            }
            if (b->requires_grad) {
                kernels::gemm_tn(k, n, rows, a->ptr(), out->adj.data(), b->adj.data());
            }
        });
        return out;
    }

    if (detail::drop_last(a->shape, 2) != detail::drop_last(b->shape, 2)) {
        throw ShapeError("matmul: leading dimensions disagree: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    }
    const std::int64_t batch = a->numel() / (m * k);
    auto out_shape = detail::drop_last(a->shape, 1);
    out_shape.push_back(n);
    auto out = Tensor<T>::zeros(out_shape);
    kernels::gemm_nn_batched(batch, m, n, k, a->ptr(), b->ptr(), out->ptr());
    detail::record_op<T>(out, {a, b}, [a, b, out, batch, m, n, k] {
        const T* g = out->adj.data();
        if (a->requires_grad) {
            T* ga = a->adj.data();
#pragma omp parallel for schedule(static) if (batch > 1)
            for (std::int64_t bi = 0; bi < batch; ++bi) {
                kernels::gemm_nt(m, k, n, g + bi * m * n, b->ptr() + bi * k * n, ga + bi * m * k);
            }
        }
        if (b->requires_grad) {
            T* gb = b->adj.data();
#pragma omp parallel for schedule(static) if (batch > 1)
            for (std::int64_t bi = 0; bi < batch; ++bi) {
                kernels::gemm_tn(k, n, m, a->ptr() + bi * m * k, g + bi * m * n, gb + bi * k * n);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> activation(const TensorPtr<T>& x, Activation kind) {
    const std::int64_t n = x->numel();
    auto out = Tensor<T>::zeros(x->shape);
    const T* px = x->ptr();
    T* po = out->ptr();
    constexpr T kInvSqrt2 = T(0.7071067811865475244);
    constexpr T kInvSqrt2Pi = T(0.3989422804014326779);
    switch (kind) {
        case Activation::ReLU:
#pragma omp parallel for schedule(static) if (n > 32768)
            for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
            break;
        case Activation::GELU:
            // exact Gaussian-CDF form: x * Phi(x)
#pragma omp parallel for schedule(static) if (n > 8192)
            for (std::int64_t i = 0; i < n; ++i) {
                po[i] = px[i] * T(0.5) * (T(1) + std::erf(px[i] * kInvSqrt2));
            }
            break;
        case Activation::SiLU:
#pragma omp parallel for schedule(static) if (n > 8192)
            for (std::int64_t i = 0; i < n; ++i) {
                po[i] = px[i] / (T(1) + std::exp(-px[i]));
            }
            break;
    }
    detail::record_op<T>(out, {x}, [x, out, kind, n, kInvSqrt2, kInvSqrt2Pi] {
        const T* g = out->adj.data();
        const T* px2 = x->ptr();
        T* gx = x->adj.data();
        switch (kind) {
            case Activation::ReLU:
                for (std::int64_t i = 0; i < n; ++i) {
                    if (px2[i] > T(0)) gx[i] += g[i];
                }
                break;
            case Activation::GELU:
                for (std::int64_t i = 0; i < n; ++i) {
                    const T phi = T(0.5) * (T(1) + std::erf(px2[i] * kInvSqrt2));
                    const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * px2[i] * px2[i]);
                    gx[i] += g[i] * (phi + px2[i] * pdf);
                }
                break;
            case Activation::SiLU:
                for (std::int64_t i = 0; i < n; ++i) {
                    const T s = T(1) / (T(1) + std::exp(-px2[i]));
                    gx[i] += g[i] * s * (T(1) + px2[i] * (T(1) - s));
                }
                break;
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) { return activation(x, Activation::ReLU); }
template <typename T>
TensorPtr<T> gelu(const TensorPtr<T>& x) { return activation(x, Activation::GELU); }
template <typename T>
TensorPtr<T> silu(const TensorPtr<T>& x) { return activation(x, Activation::SiLU); }

// ---------------------------------------------------------------------------
// softmax / normalization
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& x, int axis) {
    const int r = static_cast<int>(x->rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x->shape));
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x->shape[i];
    const std::int64_t len = x->shape[axis];
    for (int i = axis + 1; i < r; ++i) inner *= x->shape[i];

    auto out = Tensor<T>::zeros(x->shape);
    const T* px = x->ptr();
    T* po = out->ptr();
#pragma omp parallel for schedule(static) if (outer * inner > 64)
    for (std::int64_t oi = 0; oi < outer * inner; ++oi) {
        const std::int64_t o = oi / inner;
        const std::int64_t in = oi % inner;
        const std::int64_t base = o * len * inner + in;
        T mx = px[base];
        for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
        T denom = T(0);
        for (std::int64_t l = 0; l < len; ++l) {
            const T e = std::exp(px[base + l * inner] - mx);
            po[base + l * inner] = e;
            denom += e;
        }
        const T inv = T(1) / denom;
        for (std::int64_t l = 0; l < len; ++l) po[base + l * inner] *= inv;
    }
    detail::record_op<T>(out, {x}, [x, out, outer, len, inner] {
        const T* y = out->ptr();
        const T* g = out->adj.data();
        T* gx = x->adj.data();
        for (std::int64_t oi = 0; oi < outer * inner; ++oi) {
            const std::int64_t o = oi / inner;
            const std::int64_t in = oi % inner;
            const std::int64_t base = o * len * inner + in;
            T dot = T(0);
            for (std::int64_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
            for (std::int64_t l = 0; l < len; ++l) {
                gx[base + l * inner] += y[base + l * inner] * (g[base + l * inner] - dot);
            }
        }
    });
    return out;
}

// Zero-mean unit-variance over the last dimension, then affine.
template <typename T>
TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        T eps = T(1e-6)) {
    const std::int64_t d = x->shape.back();
    if (gamma->numel() != d || beta->numel() != d) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
    }
    const std::int64_t rows = x->numel() / d;
    auto out = Tensor<T>::zeros(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(x->numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* px = x->ptr();
    const T* pg = gamma->ptr();
    const T* pb = beta->ptr();
    T* po = out->ptr();
    T* ph = xhat->data();
#pragma omp parallel for schedule(static) if (rows > 8)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * d;
        T mean = T(0);
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= T(d);
        T var = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * is;
            ph[r * d + j] = h;
            po[r * d + j] = pg[j] * h + pb[j];
        }
    }
    detail::record_op<T>(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, rows, d] {
        const T* g = out->adj.data();
        const T* h = xhat->data();
        if (gamma->requires_grad) {
            T* gg = gamma->adj.data();
            for (std::int64_t j = 0; j < d; ++j) {
                T sum = T(0);
                for (std::int64_t r = 0; r < rows; ++r) sum += g[r * d + j] * h[r * d + j];
                gg[j] += sum;
            }
        }
        if (beta->requires_grad) {
            T* gb = beta->adj.data();
            for (std::int64_t j = 0; j < d; ++j) {
                T sum = T(0);
                for (std::int64_t r = 0; r < rows; ++r) sum += g[r * d + j];
                gb[j] += sum;
            }
        }
        if (x->requires_grad) {
            const T* pg2 = gamma->ptr();
            T* gx = x->adj.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                T m1 = T(0), m2 = T(0);
                for (std::int64_t j = 0; j < d; ++j) {
                    const T t = g[r * d + j] * pg2[j];
                    m1 += t;
                    m2 += t * h[r * d + j];
                }
                m1 /= T(d);
                m2 /= T(d);
                const T is = (*inv_std)[r];
                for (std::int64_t j = 0; j < d; ++j) {
                    const T t = g[r * d + j] * pg2[j];
                    gx[r * d + j] += is * (t - m1 - h[r * d + j] * m2);
                }
            }
        }
    });
    return out;
}

// Per-channel normalization over (N, H, W). Training mode uses batch
// statistics and updates the running buffers in place (they are plain
// buffers, exempt from the write-once rule); eval mode uses the running
// statistics.
template <typename T>
TensorPtr<T> batch_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var,
                        bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    if (x->rank() != 4) {
        throw ShapeError("batch_norm: expected NxCxHxW input, got " + shape_str(x->shape));
    }
    const std::int64_t n = x->shape[0], c = x->shape[1], plane = x->shape[2] * x->shape[3];
    if (training && n < 2) {
        throw ShapeError("batch_norm: training requires batch size >= 2, got " + std::to_string(n));
    }
    const std::int64_t m = n * plane;
    auto out = Tensor<T>::zeros(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(x->numel());
    auto inv_std = std::make_shared<std::vector<T>>(c);
    const T* px = x->ptr();
    const T* pg = gamma->ptr();
    const T* pb = beta->ptr();
    T* po = out->ptr();
    T* ph = xhat->data();
#pragma omp parallel for schedule(static) if (c > 1)
    for (std::int64_t ch = 0; ch < c; ++ch) {
        T mean, var;
        if (training) {
            T sum = T(0);
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* s = px + (ni * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) sum += s[p];
            }
            mean = sum / T(m);
            T sq = T(0);
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* s = px + (ni * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const T cdiff = s[p] - mean;
                    sq += cdiff * cdiff;
                }
            }
            var = sq / T(m);
            running_mean->data[ch] = (T(1) - momentum) * running_mean->data[ch] + momentum * mean;
            running_var->data[ch] = (T(1) - momentum) * running_var->data[ch] + momentum * var;
        } else {
            mean = running_mean->data[ch];
            var = running_var->data[ch];
        }
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[ch] = is;
        for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* s = px + (ni * c + ch) * plane;
            T* h = ph + (ni * c + ch) * plane;
            T* o = po + (ni * c + ch) * plane;
            for (std::int64_t p = 0; p < plane; ++p) {
                h[p] = (s[p] - mean) * is;
                o[p] = pg[ch] * h[p] + pb[ch];
            }
        }
    }
    detail::record_op<T>(out, {x, gamma, beta},
                         [x, gamma, beta, out, xhat, inv_std, n, c, plane, m, training] {
        const T* g = out->adj.data();
        const T* h = xhat->data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            T sum_g = T(0), sum_gh = T(0);
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const std::int64_t base = (ni * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    sum_g += g[base + p];
                    sum_gh += g[base + p] * h[base + p];
                }
            }
            if (gamma->requires_grad) gamma->adj[ch] += sum_gh;
            if (beta->requires_grad) beta->adj[ch] += sum_g;
            if (x->requires_grad) {
                const T gam = gamma->ptr()[ch];
                const T is = (*inv_std)[ch];
                T* gx = x->adj.data();
                if (training) {
                    const T mg = sum_g / T(m), mgh = sum_gh / T(m);
                    for (std::int64_t ni = 0; ni < n; ++ni) {
                        const std::int64_t base = (ni * c + ch) * plane;
                        for (std::int64_t p = 0; p < plane; ++p) {
                            gx[base + p] += gam * is * (g[base + p] - mg - h[base + p] * mgh);
                        }
                    }
                } else {
                    for (std::int64_t ni = 0; ni < n; ++ni) {
                        const std::int64_t base = (ni * c + ch) * plane;
                        for (std::int64_t p = 0; p < plane; ++p) gx[base + p] += gam * is * g[base + p];
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    std::int64_t stride, std::int64_t pad, std::int64_t groups) {
    if (x->rank() != 4 || weight->rank() != 4) {
        throw ShapeError("conv2d: expected NxCxHxW input and OxCgxKhxKw kernel, got " +
                         shape_str(x->shape) + " and " + shape_str(weight->shape));
    }
    kernels::Conv2dDims d{x->shape[0], x->shape[1], x->shape[2], x->shape[3],
                          weight->shape[0], weight->shape[2], weight->shape[3],
                          stride, pad, groups};
    if (groups < 1 || d.c_in % groups != 0 || d.c_out % groups != 0) {
        throw ShapeError("conv2d: channels " + std::to_string(d.c_in) + "->" + std::to_string(d.c_out) +
                         " not divisible by groups " + std::to_string(groups));
    }
    if (weight->shape[1] != d.c_in / groups) {
        throw ShapeError("conv2d: kernel " + shape_str(weight->shape) + " inconsistent with input " +
                         shape_str(x->shape) + " at groups " + std::to_string(groups));
    }
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
        throw ShapeError("conv2d: kernel " + shape_str(weight->shape) + " does not fit padded input " +
                         shape_str(x->shape));
    }
    if (bias && bias->numel() != d.c_out) {
        throw ShapeError("conv2d: bias size must equal output channels");
    }
    auto out = Tensor<T>::zeros({d.batch, d.c_out, d.oh(), d.ow()});
    kernels::conv2d_forward(d, x->ptr(), weight->ptr(), bias ? bias->ptr() : nullptr, out->ptr());
    detail::record_op<T>(out, {x, weight, bias}, [x, weight, bias, out, d] {
        const T* g = out->adj.data();
        if (x->requires_grad) kernels::conv2d_backward_input(d, weight->ptr(), g, x->adj.data());
        if (weight->requires_grad) kernels::conv2d_backward_weight(d, x->ptr(), g, weight->adj.data());
        if (bias && bias->requires_grad) kernels::conv2d_backward_bias(d, g, bias->adj.data());
    });
    return out;
}

template <typename T>
TensorPtr<T> max_pool2d(const TensorPtr<T>& x, std::int64_t k, std::int64_t stride,
                        std::int64_t pad = 0) {
    if (x->rank() != 4) {
        throw ShapeError("max_pool2d: expected NxCxHxW input, got " + shape_str(x->shape));
    }
    if (k > x->shape[2] + 2 * pad || k > x->shape[3] + 2 * pad) {
        throw ShapeError("max_pool2d: window " + std::to_string(k) + " exceeds input " +
                         shape_str(x->shape));
    }
    kernels::Pool2dDims d{x->shape[0], x->shape[1], x->shape[2], x->shape[3], k, stride, pad};
    auto out = Tensor<T>::zeros({d.batch, d.c, d.oh(), d.ow()});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out->numel());
    kernels::max_pool2d_forward(d, x->ptr(), out->ptr(), argmax->data());
    detail::record_op<T>(out, {x}, [x, out, argmax, d] {
        kernels::max_pool2d_backward(d, argmax->data(), out->adj.data(), x->adj.data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& x, std::vector<std::int64_t> new_shape) {
    if (shape_numel(new_shape) != x->numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(new_shape));
    }
    auto out = Tensor<T>::from(std::move(new_shape), x->data);
    const std::int64_t n = x->numel();
    detail::record_op<T>(out, {x}, [x, out, n] {
        const T* g = out->adj.data();
        T* gx = x->adj.data();
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> permute(const TensorPtr<T>& x, const std::vector<int>& axes) {
    const std::size_t r = x->rank();
    if (axes.size() != r) throw ShapeError("permute: axes rank mismatch for " + shape_str(x->shape));
    std::vector<std::int64_t> out_shape(r), x_strides(r), src_stride(r);
    std::int64_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
        x_strides[i] = s;
        s *= x->shape[i];
    }
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x->shape[axes[i]];
        src_stride[i] = x_strides[axes[i]];
    }
    const std::int64_t n = x->numel();
    auto out = Tensor<T>::zeros(out_shape);
    auto src_index = std::make_shared<std::vector<std::int64_t>>(n);
    std::vector<std::int64_t> out_strides(r);
    std::int64_t os = 1;
    for (std::size_t i = r; i-- > 0;) {
        out_strides[i] = os;
        os *= out_shape[i];
    }
    const T* px = x->ptr();
    T* po = out->ptr();
    std::int64_t* si = src_index->data();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (std::int64_t o = 0; o < n; ++o) {
        std::int64_t rem = o, src = 0;
        for (std::size_t i = 0; i < r; ++i) {
            src += (rem / out_strides[i]) * src_stride[i];
            rem %= out_strides[i];
        }
        si[o] = src;
        po[o] = px[src];
    }
    detail::record_op<T>(out, {x}, [x, out, src_index, n] {
        const T* g = out->adj.data();
        T* gx = x->adj.data();
        const std::int64_t* si2 = src_index->data();
        for (std::int64_t o = 0; o < n; ++o) gx[si2[o]] += g[o];
    });
    return out;
}

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t r = parts[0]->rank();
    if (axis < 0) axis += static_cast<int>(r);
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p->rank() != r) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < r; ++i) {
            if (static_cast<int>(i) != axis && p->shape[i] != parts[0]->shape[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(p->shape) + " vs " +
                                 shape_str(parts[0]->shape));
            }
        }
        axis_total += p->shape[axis];
    }
    std::vector<std::int64_t> out_shape = parts[0]->shape;
    out_shape[axis] = axis_total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < r; ++i) inner *= out_shape[i];

    auto out = Tensor<T>::zeros(out_shape);
    T* po = out->ptr();
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t chunk = p->shape[axis] * inner;
        const T* pp = p->ptr();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(pp + o * chunk, pp + (o + 1) * chunk, po + o * axis_total * inner + offset);
        }
        offset += chunk;
    }
    std::vector<TensorPtr<T>> ins(parts.begin(), parts.end());
    detail::record_op<T>(out, ins, [parts, out, outer, inner, axis_total, axis] {
        const T* g = out->adj.data();
        std::int64_t offset2 = 0;
        for (const auto& p : parts) {
            const std::int64_t chunk = p->shape[axis] * inner;
            if (p->requires_grad) {
                T* gp = p->adj.data();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = g + o * axis_total * inner + offset2;
                    T* dst = gp + o * chunk;
                    for (std::int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                }
            }
            offset2 += chunk;
        }
    });
    return out;
}

// Select rows along axis 0 (rank 2) or axis 1 (rank 3, same rows per batch).
template <typename T>
TensorPtr<T> gather_rows(const TensorPtr<T>& x, const std::vector<std::int64_t>& idx) {
    if (x->rank() != 2 && x->rank() != 3) {
        throw ShapeError("gather_rows: expected rank 2 or 3 input, got " + shape_str(x->shape));
    }
    const bool batched = x->rank() == 3;
    const std::int64_t batch = batched ? x->shape[0] : 1;
    const std::int64_t rows = batched ? x->shape[1] : x->shape[0];
    const std::int64_t d = x->shape.back();
    for (std::int64_t i : idx) {
        if (i < 0 || i >= rows) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range");
    }
    const std::int64_t nsel = static_cast<std::int64_t>(idx.size());
    auto out = batched ? Tensor<T>::zeros({batch, nsel, d}) : Tensor<T>::zeros({nsel, d});
    const T* px = x->ptr();
    T* po = out->ptr();
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t s = 0; s < nsel; ++s) {
            std::copy(px + (b * rows + idx[s]) * d, px + (b * rows + idx[s]) * d + d,
                      po + (b * nsel + s) * d);
        }
    }
    detail::record_op<T>(out, {x}, [x, out, idx, batch, rows, d, nsel] {
        const T* g = out->adj.data();
        T* gx = x->adj.data();
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t s = 0; s < nsel; ++s) {
                const T* src = g + (b * nsel + s) * d;
                T* dst = gx + (b * rows + idx[s]) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        }
    });
    return out;
}

// Per-sample row selection: x [N x T x D], idx[n] lists rows for sample n.
template <typename T>
TensorPtr<T> gather_rows_per_sample(const TensorPtr<T>& x,
                                    const std::vector<std::vector<std::int64_t>>& idx) {
    if (x->rank() != 3) {
        throw ShapeError("gather_rows_per_sample: expected NxTxD input, got " + shape_str(x->shape));
    }
    const std::int64_t batch = x->shape[0], rows = x->shape[1], d = x->shape[2];
    if (static_cast<std::int64_t>(idx.size()) != batch) {
        throw ShapeError("gather_rows_per_sample: index list count mismatch");
    }
    const std::int64_t nsel = static_cast<std::int64_t>(idx[0].size());
    for (const auto& v : idx) {
        if (static_cast<std::int64_t>(v.size()) != nsel) {
            throw ShapeError("gather_rows_per_sample: ragged index lists");
        }
        for (std::int64_t i : v) {
            if (i < 0 || i >= rows) throw ShapeError("gather_rows_per_sample: index out of range");
        }
    }
    auto out = Tensor<T>::zeros({batch, nsel, d});
    const T* px = x->ptr();
    T* po = out->ptr();
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t s = 0; s < nsel; ++s) {
            std::copy(px + (b * rows + idx[b][s]) * d, px + (b * rows + idx[b][s]) * d + d,
                      po + (b * nsel + s) * d);
        }
    }
    detail::record_op<T>(out, {x}, [x, out, idx, batch, rows, d, nsel] {
        const T* g = out->adj.data();
        T* gx = x->adj.data();
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t s = 0; s < nsel; ++s) {
                const T* src = g + (b * nsel + s) * d;
                T* dst = gx + (b * rows + idx[b][s]) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        }
    });
    return out;
}

// Tile a [D] vector into [batch x count x D] (mask token, class token).
template <typename T>
TensorPtr<T> broadcast_token(const TensorPtr<T>& token, std::int64_t batch, std::int64_t count) {
    if (token->rank() != 1) {
        throw ShapeError("broadcast_token: expected a vector, got " + shape_str(token->shape));
    }
    const std::int64_t d = token->numel();
    auto out = Tensor<T>::zeros({batch, count, d});
    const T* pt = token->ptr();
    T* po = out->ptr();
    for (std::int64_t i = 0; i < batch * count; ++i) std::copy(pt, pt + d, po + i * d);
    detail::record_op<T>(out, {token}, [token, out, batch, count, d] {
        const T* g = out->adj.data();
        T* gt = token->adj.data();
        for (std::int64_t j = 0; j < d; ++j) {
            T sum = T(0);
            for (std::int64_t i = 0; i < batch * count; ++i) sum += g[i * d + j];
            gt[j] += sum;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> sum(const TensorPtr<T>& x) {
    const std::int64_t n = x->numel();
    T acc = T(0);
    const T* px = x->ptr();
    for (std::int64_t i = 0; i < n; ++i) acc += px[i];
    auto out = Tensor<T>::scalar(acc);
    detail::record_op<T>(out, {x}, [x, out, n] {
        const T g = out->adj[0];
        T* gx = x->adj.data();
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
}

template <typename T>
TensorPtr<T> mean(const TensorPtr<T>& x) {
    const std::int64_t n = x->numel();
    T acc = T(0);
    const T* px = x->ptr();
    for (std::int64_t i = 0; i < n; ++i) acc += px[i];
    auto out = Tensor<T>::scalar(acc / T(n));
    detail::record_op<T>(out, {x}, [x, out, n] {
        const T g = out->adj[0] / T(n);
        T* gx = x->adj.data();
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
}

// mean((a - b)^2); b is typically a constant target.
template <typename T>
TensorPtr<T> mse(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    auto d = sub(a, b);
    return mean(mul(d, d));
}

template <typename T>
void backward(Tape<T>& tape, const TensorPtr<T>& loss) {
    tape.backward(loss);
}

}  // namespace astromae
