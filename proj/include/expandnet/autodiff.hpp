// Reverse-mode gradients for every layer kind, driven by softmax
// cross-entropy over a labeled batch.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "expandnet/graph.hpp"

namespace expandnet {

template <typename T>
struct LayerGrads {
    std::vector<T> weight;  // conv/linear weight grad (same layout as params)
    std::vector<T> bias;
    std::vector<T> scale, shift;  // batchnorm
};

template <typename T>
struct GradientTape {
    std::vector<LayerGrads<T>> layers;  // one entry per graph layer
};

namespace detail {

template <typename T>
Tensor4<T> conv_backward(const Conv2dLayer<T>& conv, const LayerCache<T>& cache,
                         const Tensor4<T>& grad_out, LayerGrads<T>& grads) {
    const Tensor4<T>& x = cache.input;
    const int k = conv.k, patch = conv.in_ch * k * k;
    const int out_h = grad_out.h, out_w = grad_out.w;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    grads.weight.assign(conv.weight.size(), T(0));
    if (conv.has_bias) grads.bias.assign(conv.out_ch, T(0));
    Tensor4<T> grad_in(x.n, x.c, x.h, x.w);
    std::vector<T> cols(static_cast<std::size_t>(patch) * plane);
    std::vector<T> gcols(cols.size());
    for (int i = 0; i < x.n; ++i) {
        const T* img = x.data.data() + static_cast<std::size_t>(i) * x.c * x.h * x.w;
        const T* gout = grad_out.data.data() + static_cast<std::size_t>(i) * conv.out_ch * plane;
        detail::im2col(img, x.c, x.h, x.w, k, conv.stride, conv.padding, out_h, out_w, cols.data());
        // dW += gout * cols^T
        detail::gemm(false, true, conv.out_ch, patch, static_cast<int>(plane), T(1), gout,
                     static_cast<int>(plane), cols.data(), static_cast<int>(plane), T(1),
                     grads.weight.data(), patch);
        // dcols = W^T * gout, scattered back to the input
        detail::gemm(true, false, patch, static_cast<int>(plane), conv.out_ch, T(1),
                     conv.weight.data(), patch, gout, static_cast<int>(plane), T(0), gcols.data(),
                     static_cast<int>(plane));
        T* gimg = grad_in.data.data() + static_cast<std::size_t>(i) * x.c * x.h * x.w;
        detail::col2im(gcols.data(), x.c, x.h, x.w, k, conv.stride, conv.padding, out_h, out_w,
                       gimg);
        if (conv.has_bias)
            for (int o = 0; o < conv.out_ch; ++o) {
                const T* row = gout + static_cast<std::size_t>(o) * plane;
                T acc = T(0);
                for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                grads.bias[o] += acc;
            }
    }
    return grad_in;
}

template <typename T>
Tensor4<T> linear_backward(const LinearLayer<T>& lin, const LayerCache<T>& cache,
                           const Tensor4<T>& grad_out, LayerGrads<T>& grads) {
    const Tensor4<T>& x = cache.input;
    grads.weight.assign(lin.weight.size(), T(0));
    // dW = gout^T * x   (out_features x in_features)
    detail::gemm(true, false, lin.out_features, lin.in_features, x.n, T(1), grad_out.data.data(),
                 lin.out_features, x.data.data(), lin.in_features, T(0), grads.weight.data(),
                 lin.in_features);
    if (lin.has_bias) {
        grads.bias.assign(lin.out_features, T(0));
        for (int i = 0; i < x.n; ++i)
            for (int j = 0; j < lin.out_features; ++j)
                grads.bias[j] += grad_out.at(i, j, 0, 0);
    }
    Tensor4<T> grad_in(x.n, lin.in_features, 1, 1);
    detail::gemm(false, false, x.n, lin.in_features, lin.out_features, T(1), grad_out.data.data(),
                 lin.out_features, lin.weight.data(), lin.in_features, T(0), grad_in.data.data(),
                 lin.in_features);
    return grad_in;
}

// Batch-statistics path; mean/invstd cached by the forward pass.
template <typename T>
Tensor4<T> batchnorm_backward(const BatchNormLayer<T>& bn, const LayerCache<T>& cache,
                              const Tensor4<T>& grad_out, LayerGrads<T>& grads) {
    const Tensor4<T>& x = cache.input;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const T m = static_cast<T>(static_cast<double>(x.n) * x.h * x.w);
    grads.scale.assign(bn.channels, T(0));
    grads.shift.assign(bn.channels, T(0));
    Tensor4<T> grad_in(x.n, x.c, x.h, x.w);
    for (int ch = 0; ch < x.c; ++ch) {
        const T mean = cache.bn_mean[ch], invstd = cache.bn_invstd[ch];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int i = 0; i < x.n; ++i) {
            const T* xs = x.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
            const T* gs = grad_out.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                sum_dy += gs[p];
                sum_dy_xhat += gs[p] * (xs[p] - mean) * invstd;
            }
        }
        grads.shift[ch] = sum_dy;
        grads.scale[ch] = sum_dy_xhat;
        const T g = bn.scale[ch];
        for (int i = 0; i < x.n; ++i) {
            const T* xs = x.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
            const T* gs = grad_out.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
            T* gi = grad_in.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const T xhat = (xs[p] - mean) * invstd;
                gi[p] = g * invstd / m * (m * gs[p] - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    return grad_in;
}

}  // namespace detail

// Forward in train mode with caches, softmax cross-entropy loss (mean over
// the batch), then reverse sweep. Returns the loss and parameter gradients.
template <typename T>
std::pair<T, GradientTape<T>> backward(NetworkGraph<T>& net, const Tensor4<T>& x,
                                       const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != x.n)
        throw std::invalid_argument("backward: label count does not match batch size");
    std::vector<LayerCache<T>> caches(net.layers.size());
    Tensor4<T> cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        cur = apply_layer(net.layers[i], cur, Mode::Train, i, &caches[i]);
    if (cur.h != 1 || cur.w != 1)
        throw std::invalid_argument("backward: network output is not a logit vector");
    const int classes = cur.c;
    for (int lab : labels)
        if (lab < 0 || lab >= classes)
            throw std::invalid_argument("backward: label out of range");

    // Softmax cross-entropy and its gradient, numerically stabilized.
    T loss = T(0);
    Tensor4<T> grad(cur.n, cur.c, 1, 1);
    for (int i = 0; i < cur.n; ++i) {
        T mx = cur.at(i, 0, 0, 0);
        for (int j = 1; j < classes; ++j) mx = std::max(mx, cur.at(i, j, 0, 0));
        T denom = T(0);
        for (int j = 0; j < classes; ++j) denom += std::exp(cur.at(i, j, 0, 0) - mx);
        loss += -(cur.at(i, labels[i], 0, 0) - mx - std::log(denom));
        for (int j = 0; j < classes; ++j) {
            const T p = std::exp(cur.at(i, j, 0, 0) - mx) / denom;
            grad.at(i, j, 0, 0) = (p - (j == labels[i] ? T(1) : T(0))) / static_cast<T>(cur.n);
        }
    }
    loss /= static_cast<T>(cur.n);

    GradientTape<T> tape;
    tape.layers.resize(net.layers.size());
    for (std::size_t ri = net.layers.size(); ri-- > 0;) {
        auto& layer = net.layers[ri];
        auto& cache = caches[ri];
        auto& grads = tape.layers[ri];
        if (auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
            grad = detail::conv_backward(*conv, cache, grad, grads);
        } else if (auto* lin = std::get_if<LinearLayer<T>>(&layer)) {
            grad = detail::linear_backward(*lin, cache, grad, grads);
        } else if (auto* bn = std::get_if<BatchNormLayer<T>>(&layer)) {
            grad = detail::batchnorm_backward(*bn, cache, grad, grads);
        } else if (std::holds_alternative<ReLULayer>(layer)) {
            for (std::size_t p = 0; p < grad.data.size(); ++p)
                if (cache.input.data[p] <= T(0)) grad.data[p] = T(0);
        } else if (auto* lrelu = std::get_if<LeakyReLULayer<T>>(&layer)) {
            for (std::size_t p = 0; p < grad.data.size(); ++p)
                if (cache.input.data[p] <= T(0)) grad.data[p] *= lrelu->slope;
        } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
            Tensor4<T> gin(cache.input.n, cache.input.c, cache.input.h, cache.input.w);
            for (std::size_t o = 0; o < grad.data.size(); ++o)
                gin.data[cache.argmax[o]] += grad.data[o];
            grad = std::move(gin);
        } else {  // Flatten
            Tensor4<T> gin(cache.input.n, cache.input.c, cache.input.h, cache.input.w);
            gin.data = grad.data;
            grad = std::move(gin);
        }
    }
    return {loss, std::move(tape)};
}

}  // namespace expandnet
