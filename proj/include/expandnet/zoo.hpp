// Canonical architectures: the SmallNet family (3- or 4-conv, square odd
// kernels, CIFAR-10/100 head) and the ExpandNet variants derived from them.
//
// Padding: the 3x3 three-conv variant uses no padding; every other variant
// uses size-preserving (k-1)/2 padding.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "expandnet/expansion.hpp"
#include "expandnet/graph.hpp"

namespace expandnet {

enum class SmallNetDepth { ThreeConv, FourConv };

template <typename T>
NetworkGraph<T> build_smallnet(int kernel_size, int num_classes, SmallNetDepth depth,
                               std::uint64_t seed = 0) {
    if (kernel_size != 3 && kernel_size != 5 && kernel_size != 7 && kernel_size != 9)
        throw std::invalid_argument("build_smallnet: kernel size must be in {3,5,7,9}");
    if (num_classes != 10 && num_classes != 100)
        throw std::invalid_argument("build_smallnet: class count must be 10 or 100");
    const bool four = depth == SmallNetDepth::FourConv;
    const int padding = (kernel_size == 3 && !four) ? 0 : (kernel_size - 1) / 2;

    NetworkGraph<T> net;
    net.name = "smallnet" + std::to_string(kernel_size) + "-" + (four ? "4" : "3") + "conv-c" +
               std::to_string(num_classes);
    net.in_c = 3;
    net.in_h = net.in_w = 32;
    net.num_classes = num_classes;

    std::uint64_t salt = 0;
    int in_ch = 3;
    const int channels[4] = {8, 16, 32, 64};
    const int conv_count = four ? 4 : 3;
    for (int i = 0; i < conv_count; ++i) {
        net.layers.emplace_back(
            make_conv<T>(in_ch, channels[i], kernel_size, 1, padding, true, seed, salt++));
        net.layers.emplace_back(make_batchnorm<T>(channels[i]));
        net.layers.emplace_back(ReLULayer{});
        net.layers.emplace_back(MaxPoolLayer{2, 2});
        in_ch = channels[i];
    }
    net.layers.emplace_back(FlattenLayer{});
    const Shape3 flattened = [&] {
        Shape3 s{net.in_c, net.in_h, net.in_w};
        for (std::size_t i = 0; i < net.layers.size(); ++i)
            s = layer_output_shape(net.layers[i], s, i);
        return s;
    }();
    const int features = flattened.c;
    net.layers.emplace_back(make_linear<T>(features, 64, true, seed, salt++));
    net.layers.emplace_back(ReLULayer{});
    net.layers.emplace_back(make_linear<T>(64, num_classes, true, seed, salt++));
    infer_output_shape(net);
    return net;
}

template <typename T>
NetworkGraph<T> build_smallnet_by_id(const std::string& id, std::uint64_t seed = 0) {
    // e.g. "smallnet7-3conv-c10"
    if (id.rfind("smallnet", 0) != 0) throw std::invalid_argument("unknown architecture id " + id);
    const std::string rest = id.substr(8);
    const auto dash1 = rest.find('-');
    const auto dash2 = rest.find('-', dash1 + 1);
    if (dash1 == std::string::npos || dash2 == std::string::npos)
        throw std::invalid_argument("unknown architecture id " + id);
    const int k = std::stoi(rest.substr(0, dash1));
    const std::string conv = rest.substr(dash1 + 1, dash2 - dash1 - 1);
    const std::string cls = rest.substr(dash2 + 1);
    SmallNetDepth depth;
    if (conv == "3conv")
        depth = SmallNetDepth::ThreeConv;
    else if (conv == "4conv")
        depth = SmallNetDepth::FourConv;
    else
        throw std::invalid_argument("unknown architecture id " + id);
    if (cls.size() < 2 || cls[0] != 'c') throw std::invalid_argument("unknown architecture id " + id);
    return build_smallnet<T>(k, std::stoi(cls.substr(1)), depth, seed);
}

enum class Variant { FC, CL, CLFC, CK, CKFC };

inline Variant parse_variant(const std::string& s) {
    if (s == "FC" || s == "fc") return Variant::FC;
    if (s == "CL" || s == "cl") return Variant::CL;
    if (s == "CL+FC" || s == "cl+fc") return Variant::CLFC;
    if (s == "CK" || s == "ck") return Variant::CK;
    if (s == "CK+FC" || s == "ck+fc") return Variant::CKFC;
    throw std::invalid_argument("unknown expansion variant " + s);
}

// Plan matching the naming convention: CL/CK cover every conv layer, FC
// covers the penultimate linear layer; the final logit layer stays intact.
template <typename T>
ExpansionPlan make_variant_plan(const NetworkGraph<T>& base, Variant variant, int r,
                                int fc_depth = 3, bool table1_channels = false,
                                std::uint64_t seed = 0) {
    const bool conv_cl = variant == Variant::CL || variant == Variant::CLFC;
    const bool conv_ck = variant == Variant::CK || variant == Variant::CKFC;
    const bool fc = variant == Variant::FC || variant == Variant::CLFC || variant == Variant::CKFC;
    // Last linear layer (logits) is never expanded.
    std::size_t logit_index = base.layers.size();
    for (std::size_t i = base.layers.size(); i-- > 0;)
        if (std::holds_alternative<LinearLayer<T>>(base.layers[i])) {
            logit_index = i;
            break;
        }
    ExpansionPlan plan;
    plan.table1_channels = table1_channels;
    plan.seed = seed;
    plan.per_layer.resize(base.layers.size());
    for (std::size_t i = 0; i < base.layers.size(); ++i) {
        auto& dir = plan.per_layer[i];
        dir.rate = r;
        dir.depth = fc_depth;
        if (const auto* conv = std::get_if<Conv2dLayer<T>>(&base.layers[i])) {
            if (conv_ck) {
                if (conv->k <= 3)
                    throw std::invalid_argument(
                        "CK expansion is not applicable to kernel size " + std::to_string(conv->k));
                dir.kind = Directive::CK;
            } else if (conv_cl) {
                dir.kind = Directive::CL;
            }
        } else if (fc && std::holds_alternative<LinearLayer<T>>(base.layers[i]) &&
                   i != logit_index) {
            dir.kind = Directive::FC;
        }
    }
    return plan;
}

template <typename T>
NetworkGraph<T> build_expandnet_variant(const NetworkGraph<T>& base, Variant variant, int r,
                                        int fc_depth = 3, bool table1_channels = false,
                                        std::uint64_t seed = 0) {
    NetworkGraph<T> out = expand_network(
        base, make_variant_plan(base, variant, r, fc_depth, table1_channels, seed));
    out.name = base.name + "-expand";
    return out;
}

}  // namespace expandnet
