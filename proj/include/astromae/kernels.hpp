#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "astromae/error.hpp"

// Parallel kernels used by the autodiff ops. Every parallel loop is over
// independent output elements and each element is accumulated sequentially in
// a fixed order, so results are bit-identical across runs and thread counts.
// astromae::reference holds the serial naive implementations; they are the
// test oracles and the baseline for the kernel benchmark, and are never
// called from the ops layer.

namespace astromae::kernels {

using std::int64_t;

// C[m x n] += A[m x k] * B[k x n], row-major.
template <typename T>
void gemm_nn_serial(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    constexpr int64_t IB = 64, JB = 256, KB = 64;
    const int64_t ti_count = (m + IB - 1) / IB;
    const int64_t tj_count = (n + JB - 1) / JB;
    const bool par = (ti_count * tj_count > 1) && (m * n * k > (int64_t(1) << 15));
#pragma omp parallel for collapse(2) schedule(static) if (par)
    for (int64_t ti = 0; ti < ti_count; ++ti) {
        for (int64_t tj = 0; tj < tj_count; ++tj) {
            const int64_t i0 = ti * IB, i1 = std::min(i0 + IB, m);
            const int64_t j0 = tj * JB, j1 = std::min(j0 + JB, n);
            for (int64_t k0 = 0; k0 < k; k0 += KB) {
                const int64_t k1 = std::min(k0 + KB, k);
                for (int64_t i = i0; i < i1; ++i) {
                    T* crow = c + i * n;
                    const T* arow = a + i * k;
                    for (int64_t kk = k0; kk < k1; ++kk) {
                        const T aik = arow[kk];
                        const T* brow = b + kk * n;
                        for (int64_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
                    }
                }
            }
        }
    }
}

// C[m x n] += A[m x k] * B^T, with B stored [n x k].
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m > 1 && m * n * k > (int64_t(1) << 15))
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T sum = T(0);
            for (int64_t kk = 0; kk < k; ++kk) sum += arow[kk] * brow[kk];
            crow[j] += sum;
        }
    }
}

// C[m x n] += A^T * B, with A stored [k x m], B stored [k x n].
template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m > 1 && m * n * k > (int64_t(1) << 15))
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = a[kk * m + i];
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// Batched C[b] += A[b] * B[b] over matching leading dimension.
template <typename T>
void gemm_nn_batched(int64_t batch, int64_t m, int64_t n, int64_t k,
                     const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (batch > 1)
    for (int64_t bi = 0; bi < batch; ++bi) {
        gemm_nn_serial(m, n, k, a + bi * m * k, b + bi * k * n, c + bi * m * n);
    }
}

struct Conv2dDims {
    int64_t batch, c_in, h, w;
    int64_t c_out, kh, kw;
    int64_t stride, pad, groups;
    int64_t oh() const { return (h + 2 * pad - kh) / stride + 1; }
    int64_t ow() const { return (w + 2 * pad - kw) / stride + 1; }
};

template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t oh, int64_t ow, T* cols) {
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                T* row = cols + ((ci * kh + ky) * kw + kx) * (oh * ow);
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t y = oy * stride + ky - pad;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t xx = ox * stride + kx - pad;
                        row[oy * ow + ox] =
                            (y >= 0 && y < h && xx >= 0 && xx < w) ? x[(ci * h + y) * w + xx] : T(0);
                    }
                }
            }
        }
    }
}

// out[n][o][oy][ox]; per-sample im2col + serial gemm, parallel over samples.
template <typename T>
void conv2d_forward(const Conv2dDims& d, const T* x, const T* weight, const T* bias, T* out) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t cg = d.c_in / d.groups;
    const int64_t og = d.c_out / d.groups;
    const int64_t patch = cg * d.kh * d.kw;
    const int64_t plane = oh * ow;
#pragma omp parallel for schedule(static) if (d.batch > 1)
    for (int64_t n = 0; n < d.batch; ++n) {
        std::vector<T> cols(static_cast<std::size_t>(patch) * plane);
        for (int64_t g = 0; g < d.groups; ++g) {
            im2col(x + (n * d.c_in + g * cg) * d.h * d.w, cg, d.h, d.w,
                   d.kh, d.kw, d.stride, d.pad, oh, ow, cols.data());
            T* oslice = out + (n * d.c_out + g * og) * plane;
            std::fill(oslice, oslice + og * plane, T(0));
            gemm_nn_serial(og, plane, patch, weight + g * og * patch, cols.data(), oslice);
        }
        if (bias) {
            for (int64_t o = 0; o < d.c_out; ++o) {
                T* oslice = out + (n * d.c_out + o) * plane;
                const T bo = bias[o];
                for (int64_t p = 0; p < plane; ++p) oslice[p] += bo;
            }
        }
    }
}

// dW accumulation is parallel over kernel elements, sequential over the batch,
// so it is independent of thread count.
template <typename T>
void conv2d_backward_weight(const Conv2dDims& d, const T* x, const T* dout, T* dweight) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t cg = d.c_in / d.groups;
    const int64_t og = d.c_out / d.groups;
    const int64_t wcount = d.c_out * cg * d.kh * d.kw;
#pragma omp parallel for schedule(static) if (wcount > 1)
    for (int64_t wi = 0; wi < wcount; ++wi) {
        const int64_t kx = wi % d.kw;
        const int64_t ky = (wi / d.kw) % d.kh;
        const int64_t cl = (wi / (d.kw * d.kh)) % cg;
        const int64_t o = wi / (d.kw * d.kh * cg);
        const int64_t g = o / og;
        const int64_t c = g * cg + cl;
        T sum = T(0);
        for (int64_t n = 0; n < d.batch; ++n) {
            const T* dslice = dout + (n * d.c_out + o) * oh * ow;
            const T* xslice = x + (n * d.c_in + c) * d.h * d.w;
            for (int64_t oy = 0; oy < oh; ++oy) {
                const int64_t y = oy * d.stride + ky - d.pad;
                if (y < 0 || y >= d.h) continue;
                const T* drow = dslice + oy * ow;
                const T* xrow = xslice + y * d.w;
                for (int64_t ox = 0; ox < ow; ++ox) {
                    const int64_t xx = ox * d.stride + kx - d.pad;
                    if (xx < 0 || xx >= d.w) continue;
                    sum += drow[ox] * xrow[xx];
                }
            }
        }
        dweight[wi] += sum;
    }
}

template <typename T>
void conv2d_backward_bias(const Conv2dDims& d, const T* dout, T* dbias) {
    const int64_t plane = d.oh() * d.ow();
#pragma omp parallel for schedule(static) if (d.c_out > 1)
    for (int64_t o = 0; o < d.c_out; ++o) {
        T sum = T(0);
        for (int64_t n = 0; n < d.batch; ++n) {
            const T* dslice = dout + (n * d.c_out + o) * plane;
            for (int64_t p = 0; p < plane; ++p) sum += dslice[p];
        }
        dbias[o] += sum;
    }
}

// dX via per-sample dcols = W^T * dOut, then a col2im gather (no scatter races).
template <typename T>
void conv2d_backward_input(const Conv2dDims& d, const T* weight, const T* dout, T* dx) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t cg = d.c_in / d.groups;
    const int64_t og = d.c_out / d.groups;
    const int64_t patch = cg * d.kh * d.kw;
    const int64_t plane = oh * ow;
#pragma omp parallel for schedule(static) if (d.batch > 1)
    for (int64_t n = 0; n < d.batch; ++n) {
        std::vector<T> dcols(static_cast<std::size_t>(patch) * plane);
        for (int64_t g = 0; g < d.groups; ++g) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            gemm_tn(patch, plane, og, weight + g * og * patch,
                    dout + (n * d.c_out + g * og) * plane, dcols.data());
            for (int64_t cl = 0; cl < cg; ++cl) {
                T* dxp = dx + (n * d.c_in + g * cg + cl) * d.h * d.w;
                for (int64_t y = 0; y < d.h; ++y) {
                    for (int64_t xx = 0; xx < d.w; ++xx) {
                        T sum = T(0);
                        for (int64_t ky = 0; ky < d.kh; ++ky) {
                            const int64_t oy_num = y + d.pad - ky;
                            if (oy_num < 0 || oy_num % d.stride) continue;
                            const int64_t oy = oy_num / d.stride;
                            if (oy >= oh) continue;
                            for (int64_t kx = 0; kx < d.kw; ++kx) {
                                const int64_t ox_num = xx + d.pad - kx;
                                if (ox_num < 0 || ox_num % d.stride) continue;
                                const int64_t ox = ox_num / d.stride;
                                if (ox >= ow) continue;
                                sum += dcols[((cl * d.kh + ky) * d.kw + kx) * plane + oy * ow + ox];
                            }
                        }
                        dxp[y * d.w + xx] += sum;
                    }
                }
            }
        }
    }
}

struct Pool2dDims {
    int64_t batch, c, h, w;
    int64_t k, stride, pad;
    int64_t oh() const { return (h + 2 * pad - k) / stride + 1; }
    int64_t ow() const { return (w + 2 * pad - k) / stride + 1; }
};

// Windowed max; ties keep the first element in row-major order. Padding cells
// never win (window is clipped to the valid region).
template <typename T>
void max_pool2d_forward(const Pool2dDims& d, const T* x, T* out, int64_t* argmax) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t planes = d.batch * d.c;
#pragma omp parallel for schedule(static) if (planes > 1)
    for (int64_t pc = 0; pc < planes; ++pc) {
        const T* xp = x + pc * d.h * d.w;
        T* op = out + pc * oh * ow;
        int64_t* ap = argmax + pc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t y0 = std::max<int64_t>(0, oy * d.stride - d.pad);
                const int64_t y1 = std::min(d.h, oy * d.stride - d.pad + d.k);
                const int64_t x0 = std::max<int64_t>(0, ox * d.stride - d.pad);
                const int64_t x1 = std::min(d.w, ox * d.stride - d.pad + d.k);
                T best = -std::numeric_limits<T>::infinity();
                int64_t bi = -1;
                for (int64_t y = y0; y < y1; ++y) {
                    for (int64_t xx = x0; xx < x1; ++xx) {
                        const T v = xp[y * d.w + xx];
                        if (v > best) {
                            best = v;
                            bi = y * d.w + xx;
                        }
                    }
                }
                op[oy * ow + ox] = best;
                ap[oy * ow + ox] = bi;
            }
        }
    }
}

template <typename T>
void max_pool2d_backward(const Pool2dDims& d, const int64_t* argmax, const T* dout, T* dx) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t planes = d.batch * d.c;
#pragma omp parallel for schedule(static) if (planes > 1)
    for (int64_t pc = 0; pc < planes; ++pc) {
        const int64_t* ap = argmax + pc * oh * ow;
        const T* dp = dout + pc * oh * ow;
        T* dxp = dx + pc * d.h * d.w;
        for (int64_t p = 0; p < oh * ow; ++p) dxp[ap[p]] += dp[p];
    }
}

}  // namespace astromae::kernels

namespace astromae::reference {

using std::int64_t;

// Naive triple-loop matmul, kept serial as the oracle and benchmark baseline.
template <typename T>
void matmul(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T sum = T(0);
            for (int64_t kk = 0; kk < k; ++kk) sum += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = sum;
        }
    }
}

// Direct loop grouped cross-correlation.
template <typename T>
void conv2d(const kernels::Conv2dDims& d, const T* x, const T* weight, const T* bias, T* out) {
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t cg = d.c_in / d.groups;
    const int64_t og = d.c_out / d.groups;
    for (int64_t n = 0; n < d.batch; ++n) {
        for (int64_t o = 0; o < d.c_out; ++o) {
            const int64_t g = o / og;
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    T sum = bias ? bias[o] : T(0);
                    for (int64_t cl = 0; cl < cg; ++cl) {
                        const int64_t c = g * cg + cl;
                        for (int64_t ky = 0; ky < d.kh; ++ky) {
                            const int64_t y = oy * d.stride + ky - d.pad;
                            if (y < 0 || y >= d.h) continue;
                            for (int64_t kx = 0; kx < d.kw; ++kx) {
                                const int64_t xx = ox * d.stride + kx - d.pad;
                                if (xx < 0 || xx >= d.w) continue;
                                sum += x[((n * d.c_in + c) * d.h + y) * d.w + xx] *
                                       weight[((o * cg + cl) * d.kh + ky) * d.kw + kx];
                            }
                        }
                    }
                    out[((n * d.c_out + o) * oh + oy) * ow + ox] = sum;
                }
            }
        }
    }
}

// Direct sliding-window maximum.
template <typename T>
void max_pool2d(const kernels::Pool2dDims& d, const T* x, T* out) {
    const int64_t oh = d.oh(), ow = d.ow();
    for (int64_t pc = 0; pc < d.batch * d.c; ++pc) {
        const T* xp = x + pc * d.h * d.w;
        T* op = out + pc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                for (int64_t ky = 0; ky < d.k; ++ky) {
                    for (int64_t kx = 0; kx < d.k; ++kx) {
                        const int64_t y = oy * d.stride + ky - d.pad;
                        const int64_t xx = ox * d.stride + kx - d.pad;
                        if (y < 0 || y >= d.h || xx < 0 || xx >= d.w) continue;
                        best = std::max(best, xp[y * d.w + xx]);
                    }
                }
                op[oy * ow + ox] = best;
            }
        }
    }
}

}  // namespace astromae::reference
