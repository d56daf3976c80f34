// Exact algebraic collapse of expanded units back into single layers.
//
// Convolution composition runs in kernel space: stacking two
// cross-correlations with kernels A then B equals one cross-correlation
// whose per-channel kernel is the full 2-D convolution of A and B
// (indices add, so sizes compose as k1 + k2 - 1). The explicit
// block-Toeplitz matrix form exists only as a verification oracle
// (build_conv_matrix); it is input-size-dependent and memory-explosive.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "expandnet/graph.hpp"

namespace expandnet {

// Single linear layer equal to the chain. W is the product of the weights
// (outermost last); the bias is the chain's image of the zero vector.
template <typename T>
LinearLayer<T> collapse_fc_chain(const std::vector<LinearLayer<T>>& layers) {
    if (layers.empty()) throw std::invalid_argument("collapse_fc_chain: empty chain");
    for (std::size_t i = 1; i < layers.size(); ++i)
        if (layers[i].in_features != layers[i - 1].out_features)
            throw std::invalid_argument("collapse_fc_chain: shape mismatch at layer " +
                                        std::to_string(i));
    Matrix<T> w;
    w.rows = layers[0].out_features;
    w.cols = layers[0].in_features;
    w.data = layers[0].weight;
    std::vector<T> b(layers[0].out_features, T(0));
    if (layers[0].has_bias) b = layers[0].bias;
    for (std::size_t i = 1; i < layers.size(); ++i) {
        Matrix<T> wi;
        wi.rows = layers[i].out_features;
        wi.cols = layers[i].in_features;
        wi.data = layers[i].weight;
        w = matmul(wi, w);
        std::vector<T> nb(layers[i].out_features, T(0));
        for (int r = 0; r < wi.rows; ++r) {
            T acc = layers[i].has_bias ? layers[i].bias[r] : T(0);
            for (int c = 0; c < wi.cols; ++c) acc += wi.at(r, c) * b[c];
            nb[r] = acc;
        }
        b = std::move(nb);
    }
    bool any_bias = false;
    for (const auto& l : layers) any_bias |= l.has_bias;
    LinearLayer<T> out{w.cols, w.rows, any_bias, std::move(w.data), {}};
    if (any_bias) out.bias = std::move(b);
    return out;
}

// One convolution equal to `first` followed by `second`.
//
// Exactness constraints:
//   - first.stride must be 1 unless second is a 1x1 convolution (a 1x1
//     layer commutes with the stride, which a wider kernel does not);
//   - a bias on `first` folds exactly only when neither layer pads (a bias
//     leaks nonzero values into the zero-padding region otherwise).
template <typename T>
Conv2dLayer<T> compose_conv_pair(const Conv2dLayer<T>& first, const Conv2dLayer<T>& second) {
    if (first.out_ch != second.in_ch)
        throw std::invalid_argument("compose_conv_pair: channel mismatch (" +
                                    std::to_string(first.out_ch) + " vs " +
                                    std::to_string(second.in_ch) + ")");
    if (first.stride != 1 && second.k != 1)
        throw std::invalid_argument(
            "compose_conv_pair: first layer has stride " + std::to_string(first.stride) +
            "; composition is only exact for stride 1 (or a 1x1 second kernel)");
    if (first.stride != 1 && second.padding != 0)
        throw std::invalid_argument("compose_conv_pair: padding after a strided layer");
    if (first.has_bias && (first.padding != 0 || second.padding != 0))
        throw std::invalid_argument(
            "compose_conv_pair: bias on the first layer with nonzero padding cannot be folded "
            "exactly (the bias leaks into the zero-padded border)");

    const int k1 = first.k, k2 = second.k;
    const int kc = k1 + k2 - 1;
    Conv2dLayer<T> out;
    out.in_ch = first.in_ch;
    out.out_ch = second.out_ch;
    out.k = kc;
    out.stride = first.stride * second.stride;
    out.padding = first.padding + second.padding;
    out.has_bias = first.has_bias || second.has_bias;
    out.weight.assign(static_cast<std::size_t>(out.out_ch) * out.in_ch * kc * kc, T(0));

    auto w1 = [&](int p, int m, int y, int x) {
        return first.weight[((static_cast<std::size_t>(p) * first.in_ch + m) * k1 + y) * k1 + x];
    };
    auto w2 = [&](int n, int p, int y, int x) {
        return second.weight[((static_cast<std::size_t>(n) * second.in_ch + p) * k2 + y) * k2 + x];
    };
    for (int n = 0; n < out.out_ch; ++n) {
        for (int m = 0; m < out.in_ch; ++m) {
            T* dst = out.weight.data() + (static_cast<std::size_t>(n) * out.in_ch + m) *
                                             static_cast<std::size_t>(kc) * kc;
            for (int p = 0; p < first.out_ch; ++p)
                for (int by = 0; by < k2; ++by)
                    for (int bx = 0; bx < k2; ++bx) {
                        const T s = w2(n, p, by, bx);
                        if (s == T(0)) continue;
                        for (int ay = 0; ay < k1; ++ay)
                            for (int ax = 0; ax < k1; ++ax)
                                dst[(by + ay) * kc + (bx + ax)] += s * w1(p, m, ay, ax);
                    }
        }
    }
    if (out.has_bias) {
        out.bias.assign(out.out_ch, T(0));
        for (int n = 0; n < out.out_ch; ++n) {
            T acc = second.has_bias ? second.bias[n] : T(0);
            if (first.has_bias) {
                for (int p = 0; p < second.in_ch; ++p) {
                    T ksum = T(0);
                    for (int y = 0; y < k2; ++y)
                        for (int x = 0; x < k2; ++x) ksum += w2(n, p, y, x);
                    acc += ksum * first.bias[p];
                }
            }
            out.bias[n] = acc;
        }
    }
    return out;
}

namespace detail {

inline void unit_fail(const ExpansionUnit& unit, const std::string& msg) {
    throw std::invalid_argument("unit [" + std::string(strategy_name(unit.strategy)) +
                                " at layer " + std::to_string(unit.first) + "]: " + msg);
}

}  // namespace detail

// Left-to-right fold of compose_conv_pair; validates the chain against the
// stride/padding placement the expansion guarantees, and the result against
// the recorded original layer.
template <typename T>
Conv2dLayer<T> collapse_conv_chain(const ExpansionUnit& unit,
                                   const std::vector<Conv2dLayer<T>>& layers) {
    if (layers.empty()) detail::unit_fail(unit, "empty chain");
    if (!unit.original.is_conv) detail::unit_fail(unit, "original layer is not a convolution");
    if (layers.size() != (unit.strategy == Strategy::CL
                              ? 3u
                              : static_cast<std::size_t>((unit.original.k - 1) / 2)))
        detail::unit_fail(unit, "chain length does not match strategy");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool last = i + 1 == layers.size();
        if (i > 0 && layers[i].padding != 0)
            detail::unit_fail(unit, "padding on interior layer " + std::to_string(i));
        if (!last && layers[i].has_bias)
            detail::unit_fail(unit, "bias on non-final layer " + std::to_string(i));
        const int expected_stride =
            (unit.strategy == Strategy::CL ? i == 1 : last) ? unit.original.stride : 1;
        if (layers[i].stride != expected_stride)
            detail::unit_fail(unit, "unexpected stride on layer " + std::to_string(i));
    }
    Conv2dLayer<T> acc = layers[0];
    for (std::size_t i = 1; i < layers.size(); ++i) acc = compose_conv_pair(acc, layers[i]);
    if (acc.k != unit.original.k || acc.stride != unit.original.stride ||
        acc.padding != unit.original.padding || acc.in_ch != unit.original.in_ch ||
        acc.out_ch != unit.original.out_ch)
        detail::unit_fail(unit, "collapsed layer does not match the recorded original");
    if (acc.has_bias != unit.original.has_bias) {
        if (acc.has_bias) detail::unit_fail(unit, "collapsed layer grew a bias");
        // original had a bias the expansion dropped: restore as zeros
        acc.has_bias = true;
        acc.bias.assign(acc.out_ch, T(0));
    }
    return acc;
}

template <typename T>
NetworkGraph<T> compress_network(const NetworkGraph<T>& expanded) {
    if (expanded.unit_annotations.empty())
        throw std::invalid_argument("compress_network: graph has no expansion units");
    NetworkGraph<T> out;
    out.name = expanded.name;
    out.in_c = expanded.in_c;
    out.in_h = expanded.in_h;
    out.in_w = expanded.in_w;
    out.num_classes = expanded.num_classes;
    out.expansion_provenance = expanded.expansion_provenance;
    std::size_t next_unit = 0;
    for (std::size_t i = 0; i < expanded.layers.size(); ++i) {
        if (next_unit < expanded.unit_annotations.size() &&
            i == expanded.unit_annotations[next_unit].first) {
            const ExpansionUnit& unit = expanded.unit_annotations[next_unit];
            if (unit.first + unit.count > expanded.layers.size())
                detail::unit_fail(unit, "layer range out of bounds");
            if (unit.strategy == Strategy::FC) {
                std::vector<LinearLayer<T>> chain;
                for (std::size_t j = 0; j < unit.count; ++j) {
                    const auto* lin = std::get_if<LinearLayer<T>>(&expanded.layers[unit.first + j]);
                    if (!lin) detail::unit_fail(unit, "non-linear layer inside FC unit");
                    chain.push_back(*lin);
                }
                LinearLayer<T> collapsed = collapse_fc_chain(chain);
                if (collapsed.in_features != unit.original.in_ch ||
                    collapsed.out_features != unit.original.out_ch)
                    detail::unit_fail(unit, "collapsed layer does not match the recorded original");
                if (!collapsed.has_bias && unit.original.has_bias) {
                    collapsed.has_bias = true;
                    collapsed.bias.assign(collapsed.out_features, T(0));
                }
                out.layers.emplace_back(std::move(collapsed));
            } else {
                std::vector<Conv2dLayer<T>> chain;
                for (std::size_t j = 0; j < unit.count; ++j) {
                    const auto* conv = std::get_if<Conv2dLayer<T>>(&expanded.layers[unit.first + j]);
                    if (!conv) detail::unit_fail(unit, "non-conv layer inside conv unit");
                    chain.push_back(*conv);
                }
                out.layers.emplace_back(collapse_conv_chain(unit, chain));
            }
            i += unit.count - 1;
            ++next_unit;
        } else {
            out.layers.push_back(expanded.layers[i]);
        }
    }
    infer_output_shape(out);
    return out;
}

// Explicit matrix representation of a convolution: maps the vectorized
// zero-padded input to the vectorized output. Verification tool only;
// guarded against large instances.
template <typename T>
Matrix<T> build_conv_matrix(const Conv2dLayer<T>& layer, int in_h, int in_w) {
    const int ph = in_h + 2 * layer.padding;
    const int pw = in_w + 2 * layer.padding;
    const std::size_t cols = static_cast<std::size_t>(layer.in_ch) * ph * pw;
    const int out_h = (ph - layer.k) / layer.stride + 1;
    const int out_w = (pw - layer.k) / layer.stride + 1;
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("build_conv_matrix: non-positive output size");
    const std::size_t rows = static_cast<std::size_t>(layer.out_ch) * out_h * out_w;
    if (rows * cols > std::size_t(16) * 1024 * 1024)
        throw std::invalid_argument("build_conv_matrix: instance too large for the explicit form");
    Matrix<T> mat(static_cast<int>(rows), static_cast<int>(cols));
    for (int n = 0; n < layer.out_ch; ++n)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const std::size_t row = (static_cast<std::size_t>(n) * out_h + oy) * out_w + ox;
                for (int m = 0; m < layer.in_ch; ++m)
                    for (int ky = 0; ky < layer.k; ++ky)
                        for (int kx = 0; kx < layer.k; ++kx) {
                            const int iy = oy * layer.stride + ky;
                            const int ix = ox * layer.stride + kx;
                            const std::size_t col =
                                (static_cast<std::size_t>(m) * ph + iy) * pw + ix;
                            mat.at(static_cast<int>(row), static_cast<int>(col)) +=
                                layer.weight[((static_cast<std::size_t>(n) * layer.in_ch + m) *
                                                  layer.k + ky) * layer.k + kx];
                        }
            }
    return mat;
}

}  // namespace expandnet
