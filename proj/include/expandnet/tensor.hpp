// Dense tensor storage and the numerical kernels (convolution, matmul,
// pooling) everything else builds on.
//
// Convolution convention: cross-correlation (no kernel flip), zero padding
// only. The composition algebra in compression.hpp depends on this.
#pragma once

#include <cblas.h>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace expandnet {

template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
        if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
            throw std::invalid_argument("Tensor4: all dimensions must be >= 1");
    }

    std::size_t size() const { return data.size(); }

    T& at(int i, int j, int y, int x) {
        return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }
    const T& at(int i, int j, int y, int x) const {
        return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
};

template <typename T>
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<T> data;  // row-major

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

    T& at(int r, int c_) { return data[static_cast<std::size_t>(r) * cols + c_]; }
    const T& at(int r, int c_) const { return data[static_cast<std::size_t>(r) * cols + c_]; }

    static Matrix identity(int n_) {
        Matrix m(n_, n_);
        for (int i = 0; i < n_; ++i) m.at(i, i) = T(1);
        return m;
    }
};

// Weights of one convolution, (out_channels, in_channels, k, k) order.
// Square odd kernels only.
template <typename T>
struct ConvKernel {
    int out_ch = 0, in_ch = 0, k = 0;
    std::vector<T> data;

    ConvKernel() = default;
    ConvKernel(int out_ch_, int in_ch_, int k_)
        : out_ch(out_ch_), in_ch(in_ch_), k(k_),
          data(static_cast<std::size_t>(out_ch_) * in_ch_ * k_ * k_, T(0)) {
        if (out_ch_ < 1 || in_ch_ < 1 || k_ < 1)
            throw std::invalid_argument("ConvKernel: dimensions must be >= 1");
        if (k_ % 2 == 0) throw std::invalid_argument("ConvKernel: kernel size must be odd");
    }

    T& at(int o, int i, int y, int x) {
        return data[((static_cast<std::size_t>(o) * in_ch + i) * k + y) * k + x];
    }
    const T& at(int o, int i, int y, int x) const {
        return data[((static_cast<std::size_t>(o) * in_ch + i) * k + y) * k + x];
    }
};

namespace detail {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// (c*k*k) x (out_h*out_w) column buffer for one sample.
template <typename T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            T* cols) {
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < out_w; ++ox) *dst++ = T(0);
                        continue;
                    }
                    const T* src = img + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col, used by the convolution backward pass.
template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            T* img) {
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        src += out_w;
                        continue;
                    }
                    T* dst = img + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// Cross-correlation with zero padding. Summation order is fixed (per-sample
// im2col + single-threaded GEMM), so results are reproducible bit-for-bit.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvKernel<T>& kernel,
                          const std::vector<std::type_identity_t<T>>* bias, int stride,
                          int padding) {
    if (stride < 1) throw std::invalid_argument("conv2d_forward: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d_forward: padding must be non-negative");
    if (input.c != kernel.in_ch)
        throw std::invalid_argument("conv2d_forward: input channels " + std::to_string(input.c) +
                                    " != kernel input channels " + std::to_string(kernel.in_ch));
    if (bias && static_cast<int>(bias->size()) != kernel.out_ch)
        throw std::invalid_argument("conv2d_forward: bias size mismatch");
    const int out_h = detail::conv_out_dim(input.h, kernel.k, stride, padding);
    const int out_w = detail::conv_out_dim(input.w, kernel.k, stride, padding);
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("conv2d_forward: non-positive output size");

    Tensor4<T> out(input.n, kernel.out_ch, out_h, out_w);
    const int patch = kernel.in_ch * kernel.k * kernel.k;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    std::vector<T> cols(static_cast<std::size_t>(patch) * plane);
    for (int i = 0; i < input.n; ++i) {
        const T* img = input.data.data() + static_cast<std::size_t>(i) * input.c * input.h * input.w;
        detail::im2col(img, input.c, input.h, input.w, kernel.k, stride, padding, out_h, out_w,
                       cols.data());
        T* dst = out.data.data() + static_cast<std::size_t>(i) * kernel.out_ch * plane;
        detail::gemm(false, false, kernel.out_ch, static_cast<int>(plane), patch, T(1),
                     kernel.data.data(), patch, cols.data(), static_cast<int>(plane), T(0), dst,
                     static_cast<int>(plane));
        if (bias) {
            for (int o = 0; o < kernel.out_ch; ++o) {
                T* row = dst + static_cast<std::size_t>(o) * plane;
                const T b = (*bias)[o];
                for (std::size_t p = 0; p < plane; ++p) row[p] += b;
            }
        }
    }
    return out;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: " + std::to_string(a.cols) + " != " +
                                    std::to_string(b.rows));
    Matrix<T> c(a.rows, b.cols);
    detail::gemm(false, false, a.rows, b.cols, a.cols, T(1), a.data.data(), a.cols, b.data.data(),
                 b.cols, T(0), c.data.data(), b.cols);
    return c;
}

template <typename T>
struct PoolResult {
    Tensor4<T> output;
    // Flat index into the input's data array per output element; ties break
    // to the lowest linear index.
    std::vector<std::size_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor4<T>& input, int k, int stride) {
    if (k < 1 || stride < 1) throw std::invalid_argument("maxpool2d: k and stride must be >= 1");
    if (input.h < k || input.w < k)
        throw std::invalid_argument("maxpool2d: spatial dims smaller than window");
    const int out_h = (input.h - k) / stride + 1;
    const int out_w = (input.w - k) / stride + 1;
    PoolResult<T> res{Tensor4<T>(input.n, input.c, out_h, out_w), {}};
    res.argmax.resize(res.output.size());
    std::size_t oi = 0;
    for (int i = 0; i < input.n; ++i) {
        for (int ch = 0; ch < input.c; ++ch) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride + ky;
                            const int ix = ox * stride + kx;
                            const std::size_t idx =
                                ((static_cast<std::size_t>(i) * input.c + ch) * input.h + iy) *
                                    input.w + ix;
                            if (input.data[idx] > best) {
                                best = input.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    res.output.data[oi] = best;
                    res.argmax[oi] = best_idx;
                    ++oi;
                }
            }
        }
    }
    return res;
}

}  // namespace expandnet
