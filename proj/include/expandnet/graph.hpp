// Sequential network representation: layer specs with owned parameters,
// deterministic forward evaluation, parameter counting and cloning.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "expandnet/tensor.hpp"

namespace expandnet {

template <typename T>
struct Conv2dLayer {
    int in_ch = 0, out_ch = 0, k = 1, stride = 1, padding = 0;
    bool has_bias = true;
    std::vector<T> weight;  // (out_ch, in_ch, k, k)
    std::vector<T> bias;    // empty when has_bias == false

    ConvKernel<T> kernel() const {
        ConvKernel<T> ck(out_ch, in_ch, k);
        ck.data = weight;
        return ck;
    }
};

template <typename T>
struct LinearLayer {
    int in_features = 0, out_features = 0;
    bool has_bias = true;
    std::vector<T> weight;  // (out_features, in_features) row-major
    std::vector<T> bias;
};

template <typename T>
struct BatchNormLayer {
    int channels = 0;
    T eps = T(1e-5);
    T momentum = T(0.1);
    std::vector<T> scale, shift, running_mean, running_var;
};

struct ReLULayer {};

template <typename T>
struct LeakyReLULayer {
    T slope = T(0.1);
};

struct MaxPoolLayer {
    int k = 2, stride = 2;
};

struct FlattenLayer {};

template <typename T>
using LayerSpec = std::variant<Conv2dLayer<T>, LinearLayer<T>, BatchNormLayer<T>, ReLULayer,
                               LeakyReLULayer<T>, MaxPoolLayer, FlattenLayer>;

enum class Strategy { FC, CL, CK };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::FC: return "FC";
        case Strategy::CL: return "CL";
        default: return "CK";
    }
}

// Shape-level record of the layer an expansion unit replaced; enough to
// validate and invert the rewrite.
struct OriginalLayer {
    bool is_conv = false;
    int in_ch = 0, out_ch = 0;
    int k = 1, stride = 1, padding = 0;  // conv only
    bool has_bias = true;
};

struct ExpansionUnit {
    Strategy strategy = Strategy::CL;
    std::size_t first = 0;  // index of the unit's first layer in the expanded graph
    std::size_t count = 0;
    OriginalLayer original;
};

enum class Directive { None, FC, CL, CK };

struct LayerDirective {
    Directive kind = Directive::None;
    int rate = 1;
    int depth = 3;  // FC only
};

struct ExpansionPlan {
    std::vector<LayerDirective> per_layer;  // aligned with the compact graph's layers
    // Keep the network's first expanded layer at M output channels instead
    // of applying the P1 = r*M rule.
    bool table1_channels = false;
    std::uint64_t seed = 0;
};

enum class Mode { Train, Eval };

template <typename T>
struct NetworkGraph {
    std::string name;
    int in_c = 3, in_h = 32, in_w = 32;
    int num_classes = 10;
    std::vector<LayerSpec<T>> layers;
    std::vector<ExpansionUnit> unit_annotations;
    std::optional<ExpansionPlan> expansion_provenance;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

// Kaiming-style fan-in init: weights ~ N(0, sqrt(2/fan_in)), biases zero.
// The stream is keyed by (seed, salt) so rebuilding a graph is bit-identical.
template <typename T>
void init_layer(LayerSpec<T>& layer, std::uint64_t seed, std::uint64_t salt) {
    std::mt19937_64 rng(detail::mix_seed(seed, salt));
    auto fill = [&rng](std::vector<T>& v, double fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& x : v) x = static_cast<T>(dist(rng));
    };
    if (auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
        conv->weight.assign(static_cast<std::size_t>(conv->out_ch) * conv->in_ch * conv->k * conv->k,
                            T(0));
        fill(conv->weight, static_cast<double>(conv->in_ch) * conv->k * conv->k);
        conv->bias.assign(conv->has_bias ? conv->out_ch : 0, T(0));
    } else if (auto* lin = std::get_if<LinearLayer<T>>(&layer)) {
        lin->weight.assign(static_cast<std::size_t>(lin->out_features) * lin->in_features, T(0));
        fill(lin->weight, static_cast<double>(lin->in_features));
        lin->bias.assign(lin->has_bias ? lin->out_features : 0, T(0));
    } else if (auto* bn = std::get_if<BatchNormLayer<T>>(&layer)) {
        bn->scale.assign(bn->channels, T(1));
        bn->shift.assign(bn->channels, T(0));
        bn->running_mean.assign(bn->channels, T(0));
        bn->running_var.assign(bn->channels, T(1));
    }
}

template <typename T>
Conv2dLayer<T> make_conv(int in_ch, int out_ch, int k, int stride, int padding, bool has_bias,
                         std::uint64_t seed, std::uint64_t salt) {
    Conv2dLayer<T> conv{in_ch, out_ch, k, stride, padding, has_bias, {}, {}};
    LayerSpec<T> spec = conv;
    init_layer(spec, seed, salt);
    return std::get<Conv2dLayer<T>>(spec);
}

template <typename T>
LinearLayer<T> make_linear(int in_features, int out_features, bool has_bias, std::uint64_t seed,
                           std::uint64_t salt) {
    LinearLayer<T> lin{in_features, out_features, has_bias, {}, {}};
    LayerSpec<T> spec = lin;
    init_layer(spec, seed, salt);
    return std::get<LinearLayer<T>>(spec);
}

template <typename T>
BatchNormLayer<T> make_batchnorm(int channels) {
    BatchNormLayer<T> bn;
    bn.channels = channels;
    LayerSpec<T> spec = bn;
    init_layer(spec, 0, 0);
    return std::get<BatchNormLayer<T>>(spec);
}

struct Shape3 {
    int c = 0, h = 0, w = 0;
    bool operator==(const Shape3&) const = default;
};

// Shape walker; throws with the offending layer index on incompatibility.
template <typename T>
Shape3 layer_output_shape(const LayerSpec<T>& layer, Shape3 in, std::size_t index) {
    auto fail = [index](const std::string& msg) {
        throw std::invalid_argument("layer " + std::to_string(index) + ": " + msg);
    };
    Shape3 out = in;
    if (const auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
        if (in.c != conv->in_ch) fail("conv2d expects " + std::to_string(conv->in_ch) + " channels, got " + std::to_string(in.c));
        out.c = conv->out_ch;
        out.h = detail::conv_out_dim(in.h, conv->k, conv->stride, conv->padding);
        out.w = detail::conv_out_dim(in.w, conv->k, conv->stride, conv->padding);
        if (out.h < 1 || out.w < 1) fail("conv2d output size is non-positive");
    } else if (const auto* lin = std::get_if<LinearLayer<T>>(&layer)) {
        if (in.h != 1 || in.w != 1) fail("linear layer needs flattened input");
        if (in.c != lin->in_features) fail("linear expects " + std::to_string(lin->in_features) + " features, got " + std::to_string(in.c));
        out = {lin->out_features, 1, 1};
    } else if (const auto* bn = std::get_if<BatchNormLayer<T>>(&layer)) {
        if (in.c != bn->channels) fail("batchnorm channel mismatch");
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
        if (in.h < pool->k || in.w < pool->k) fail("maxpool window exceeds input");
        out.h = (in.h - pool->k) / pool->stride + 1;
        out.w = (in.w - pool->k) / pool->stride + 1;
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
        out = {in.c * in.h * in.w, 1, 1};
    }
    return out;
}

template <typename T>
Shape3 infer_output_shape(const NetworkGraph<T>& net) {
    Shape3 s{net.in_c, net.in_h, net.in_w};
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        s = layer_output_shape(net.layers[i], s, i);
    return s;
}

// Per-layer forward cache for the backward pass.
template <typename T>
struct LayerCache {
    Tensor4<T> input;
    std::vector<std::size_t> argmax;          // maxpool
    std::vector<T> bn_mean, bn_invstd;        // batchnorm, train mode
};

template <typename T>
Tensor4<T> apply_layer(LayerSpec<T>& layer, const Tensor4<T>& x, Mode mode, std::size_t index,
                       LayerCache<T>* cache) {
    if (cache) cache->input = x;
    if (auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
        ConvKernel<T> k = conv->kernel();
        try {
            return conv2d_forward(x, k, conv->has_bias ? &conv->bias : nullptr, conv->stride,
                                  conv->padding);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("layer " + std::to_string(index) + ": " + e.what());
        }
    }
    if (auto* lin = std::get_if<LinearLayer<T>>(&layer)) {
        if (x.h != 1 || x.w != 1 || x.c != lin->in_features)
            throw std::invalid_argument("layer " + std::to_string(index) +
                                        ": linear shape mismatch");
        Tensor4<T> out(x.n, lin->out_features, 1, 1);
        detail::gemm(false, true, x.n, lin->out_features, lin->in_features, T(1), x.data.data(),
                     lin->in_features, lin->weight.data(), lin->in_features, T(0), out.data.data(),
                     lin->out_features);
        if (lin->has_bias) {
            for (int i = 0; i < x.n; ++i)
                for (int j = 0; j < lin->out_features; ++j)
                    out.at(i, j, 0, 0) += lin->bias[j];
        }
        return out;
    }
    if (auto* bn = std::get_if<BatchNormLayer<T>>(&layer)) {
        if (x.c != bn->channels)
            throw std::invalid_argument("layer " + std::to_string(index) +
                                        ": batchnorm channel mismatch");
        Tensor4<T> out(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        const T m = static_cast<T>(static_cast<double>(x.n) * x.h * x.w);
        for (int ch = 0; ch < x.c; ++ch) {
            T mean, var;
            if (mode == Mode::Train) {
                T sum = 0;
                for (int i = 0; i < x.n; ++i) {
                    const T* src = x.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
                    for (std::size_t p = 0; p < plane; ++p) sum += src[p];
                }
                mean = sum / m;
                T sq = 0;
                for (int i = 0; i < x.n; ++i) {
                    const T* src = x.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const T d = src[p] - mean;
                        sq += d * d;
                    }
                }
                var = sq / m;  // biased, as used for normalization
                bn->running_mean[ch] = (T(1) - bn->momentum) * bn->running_mean[ch] + bn->momentum * mean;
                const T unbiased = m > T(1) ? sq / (m - T(1)) : var;
                bn->running_var[ch] = (T(1) - bn->momentum) * bn->running_var[ch] + bn->momentum * unbiased;
            } else {
                mean = bn->running_mean[ch];
                var = bn->running_var[ch];
            }
            const T invstd = T(1) / std::sqrt(var + bn->eps);
            if (cache) {
                if (cache->bn_mean.empty()) {
                    cache->bn_mean.resize(x.c);
                    cache->bn_invstd.resize(x.c);
                }
                cache->bn_mean[ch] = mean;
                cache->bn_invstd[ch] = invstd;
            }
            const T g = bn->scale[ch], b = bn->shift[ch];
            for (int i = 0; i < x.n; ++i) {
                const T* src = x.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
                T* dst = out.data.data() + (static_cast<std::size_t>(i) * x.c + ch) * plane;
                for (std::size_t p = 0; p < plane; ++p)
                    dst[p] = g * (src[p] - mean) * invstd + b;
            }
        }
        return out;
    }
    if (std::holds_alternative<ReLULayer>(layer)) {
        Tensor4<T> out = x;
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
        return out;
    }
    if (auto* lrelu = std::get_if<LeakyReLULayer<T>>(&layer)) {
        Tensor4<T> out = x;
        for (auto& v : out.data) v = v > T(0) ? v : lrelu->slope * v;
        return out;
    }
    if (auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
        auto res = maxpool2d(x, pool->k, pool->stride);
        if (cache) cache->argmax = std::move(res.argmax);
        return std::move(res.output);
    }
    // Flatten
    Tensor4<T> out(x.n, x.c * x.h * x.w, 1, 1);
    out.data = x.data;
    return out;
}

template <typename T>
Tensor4<T> forward(NetworkGraph<T>& net, const Tensor4<T>& x, Mode mode) {
    if (x.c != net.in_c || x.h != net.in_h || x.w != net.in_w)
        throw std::invalid_argument("forward: input shape does not match network declaration");
    Tensor4<T> cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        cur = apply_layer(net.layers[i], cur, mode, i, static_cast<LayerCache<T>*>(nullptr));
    return cur;
}

template <typename T>
Tensor4<T> forward_eval(const NetworkGraph<T>& net, const Tensor4<T>& x) {
    // Eval mode never mutates parameters or running stats.
    return forward(const_cast<NetworkGraph<T>&>(net), x, Mode::Eval);
}

template <typename T>
std::size_t param_count(const LayerSpec<T>& layer) {
    if (const auto* conv = std::get_if<Conv2dLayer<T>>(&layer))
        return conv->weight.size() + conv->bias.size();
    if (const auto* lin = std::get_if<LinearLayer<T>>(&layer))
        return lin->weight.size() + lin->bias.size();
    if (const auto* bn = std::get_if<BatchNormLayer<T>>(&layer))
        return bn->scale.size() + bn->shift.size() + bn->running_mean.size() +
               bn->running_var.size();
    return 0;
}

template <typename T>
std::size_t param_count(const NetworkGraph<T>& net) {
    std::size_t total = 0;
    for (const auto& layer : net.layers) total += param_count(layer);
    return total;
}

enum class InitScheme { CopyParams, Reinit };

template <typename T>
NetworkGraph<T> clone_architecture(const NetworkGraph<T>& net, InitScheme scheme,
                                   std::uint64_t seed = 0) {
    NetworkGraph<T> out = net;
    if (scheme == InitScheme::Reinit)
        for (std::size_t i = 0; i < out.layers.size(); ++i) init_layer(out.layers[i], seed, i);
    return out;
}

// Structural equality: kinds and hyperparameters, ignoring parameter values.
template <typename T>
bool same_architecture(const NetworkGraph<T>& a, const NetworkGraph<T>& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& la = a.layers[i];
        const auto& lb = b.layers[i];
        if (la.index() != lb.index()) return false;
        if (const auto* ca = std::get_if<Conv2dLayer<T>>(&la)) {
            const auto* cb = std::get_if<Conv2dLayer<T>>(&lb);
            if (ca->in_ch != cb->in_ch || ca->out_ch != cb->out_ch || ca->k != cb->k ||
                ca->stride != cb->stride || ca->padding != cb->padding ||
                ca->has_bias != cb->has_bias)
                return false;
        } else if (const auto* lina = std::get_if<LinearLayer<T>>(&la)) {
            const auto* linb = std::get_if<LinearLayer<T>>(&lb);
            if (lina->in_features != linb->in_features ||
                lina->out_features != linb->out_features || lina->has_bias != linb->has_bias)
                return false;
        } else if (const auto* bna = std::get_if<BatchNormLayer<T>>(&la)) {
            if (bna->channels != std::get_if<BatchNormLayer<T>>(&lb)->channels) return false;
        } else if (const auto* pa = std::get_if<MaxPoolLayer>(&la)) {
            const auto* pb = std::get_if<MaxPoolLayer>(&lb);
            if (pa->k != pb->k || pa->stride != pb->stride) return false;
        }
    }
    return true;
}

// Elementwise dtype conversion; architecture and annotations preserved.
template <typename To, typename From>
NetworkGraph<To> convert_graph(const NetworkGraph<From>& net) {
    NetworkGraph<To> out;
    out.name = net.name;
    out.in_c = net.in_c;
    out.in_h = net.in_h;
    out.in_w = net.in_w;
    out.num_classes = net.num_classes;
    out.unit_annotations = net.unit_annotations;
    out.expansion_provenance = net.expansion_provenance;
    auto cast_vec = [](const std::vector<From>& v) {
        std::vector<To> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[i] = static_cast<To>(v[i]);
        return r;
    };
    for (const auto& layer : net.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer<From>>(&layer)) {
            Conv2dLayer<To> c{conv->in_ch, conv->out_ch, conv->k, conv->stride, conv->padding,
                              conv->has_bias, cast_vec(conv->weight), cast_vec(conv->bias)};
            out.layers.emplace_back(std::move(c));
        } else if (const auto* lin = std::get_if<LinearLayer<From>>(&layer)) {
            LinearLayer<To> l{lin->in_features, lin->out_features, lin->has_bias,
                              cast_vec(lin->weight), cast_vec(lin->bias)};
            out.layers.emplace_back(std::move(l));
        } else if (const auto* bn = std::get_if<BatchNormLayer<From>>(&layer)) {
            BatchNormLayer<To> b;
            b.channels = bn->channels;
            b.eps = static_cast<To>(bn->eps);
            b.momentum = static_cast<To>(bn->momentum);
            b.scale = cast_vec(bn->scale);
            b.shift = cast_vec(bn->shift);
            b.running_mean = cast_vec(bn->running_mean);
            b.running_var = cast_vec(bn->running_var);
            out.layers.emplace_back(std::move(b));
        } else if (std::holds_alternative<ReLULayer>(layer)) {
            out.layers.emplace_back(ReLULayer{});
        } else if (const auto* lr = std::get_if<LeakyReLULayer<From>>(&layer)) {
            out.layers.emplace_back(LeakyReLULayer<To>{static_cast<To>(lr->slope)});
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
            out.layers.emplace_back(*pool);
        } else {
            out.layers.emplace_back(FlattenLayer{});
        }
    }
    return out;
}

}  // namespace expandnet
