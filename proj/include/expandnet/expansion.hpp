// Rewrites a compact network into its linearly over-parametrized form.
//
// Three strategies:
//   FC : factor a fully-connected layer into a chain of linear layers,
//        widths M -> rM -> rN -> ... -> N.
//   CL : replace a k x k convolution by 1x1 / kxk / 1x1, widths rM and rN.
//   CK : replace a k x k convolution (k odd, k > 3) by (k-1)/2 consecutive
//        3x3 convolutions.
//
// Padding goes on the first layer of a unit only; a CL unit carries the
// stride on its middle layer, a CK unit on its last. Only the last layer of
// a unit may have a bias; this keeps the algebraic collapse exact at padded
// borders. Expansion is architectural: units are freshly initialized, not
// function-preserving.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "expandnet/graph.hpp"

namespace expandnet {

template <typename T>
std::vector<LayerSpec<T>> expand_fc(const LinearLayer<T>& layer, int r, int depth,
                                    std::uint64_t seed = 0, std::uint64_t salt = 0) {
    if (depth < 2) throw std::invalid_argument("expand_fc: depth must be >= 2");
    if (r < 1) throw std::invalid_argument("expand_fc: rate must be >= 1");
    const int m = layer.in_features, n = layer.out_features;
    std::vector<int> widths;
    widths.push_back(m);
    widths.push_back(r * m);                         // P1 = r*M
    for (int i = 2; i < depth; ++i) widths.push_back(r * n);  // Pi = r*N
    widths.push_back(n);
    std::vector<LayerSpec<T>> out;
    for (int i = 0; i < depth; ++i) {
        const bool last = i == depth - 1;
        out.emplace_back(make_linear<T>(widths[i], widths[i + 1], last && layer.has_bias, seed,
                                        detail::mix_seed(salt, static_cast<std::uint64_t>(i))));
    }
    return out;
}

template <typename T>
std::vector<LayerSpec<T>> expand_cl(const Conv2dLayer<T>& layer, int r, std::uint64_t seed = 0,
                                    std::uint64_t salt = 0, bool first_layer_keeps_channels = false) {
    if (r < 1) throw std::invalid_argument("expand_cl: rate must be >= 1");
    const int m = layer.in_ch, n = layer.out_ch;
    const int p1 = first_layer_keeps_channels ? m : r * m;
    const int q = r * n;
    std::vector<LayerSpec<T>> out;
    out.emplace_back(make_conv<T>(m, p1, 1, 1, layer.padding, false, seed,
                                  detail::mix_seed(salt, 0)));
    out.emplace_back(make_conv<T>(p1, q, layer.k, layer.stride, 0, false, seed,
                                  detail::mix_seed(salt, 1)));
    out.emplace_back(make_conv<T>(q, n, 1, 1, 0, layer.has_bias, seed, detail::mix_seed(salt, 2)));
    return out;
}

template <typename T>
std::vector<LayerSpec<T>> expand_ck(const Conv2dLayer<T>& layer, int r, std::uint64_t seed = 0,
                                    std::uint64_t salt = 0, bool first_layer_keeps_channels = false) {
    if (r < 1) throw std::invalid_argument("expand_ck: rate must be >= 1");
    if (layer.k % 2 == 0 || layer.k <= 3)
        throw std::invalid_argument("expand_ck: requires odd kernel size > 3");
    const int depth = (layer.k - 1) / 2;  // L = (k-1)/2
    const int m = layer.in_ch, n = layer.out_ch;
    std::vector<int> widths;
    widths.push_back(m);
    widths.push_back(first_layer_keeps_channels ? m : r * m);
    for (int i = 2; i < depth; ++i) widths.push_back(r * n);
    widths.push_back(n);
    std::vector<LayerSpec<T>> out;
    for (int i = 0; i < depth; ++i) {
        const bool last = i == depth - 1;
        out.emplace_back(make_conv<T>(widths[i], widths[i + 1], 3, last ? layer.stride : 1,
                                      i == 0 ? layer.padding : 0, last && layer.has_bias, seed,
                                      detail::mix_seed(salt, static_cast<std::uint64_t>(i))));
    }
    return out;
}

namespace detail {

template <typename T>
OriginalLayer record_original(const LayerSpec<T>& layer) {
    OriginalLayer orig;
    if (const auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
        orig = {true, conv->in_ch, conv->out_ch, conv->k, conv->stride, conv->padding,
                conv->has_bias};
    } else {
        const auto& lin = std::get<LinearLayer<T>>(layer);
        orig = {false, lin.in_features, lin.out_features, 1, 1, 0, lin.has_bias};
    }
    return orig;
}

}  // namespace detail

template <typename T>
NetworkGraph<T> expand_network(const NetworkGraph<T>& net, const ExpansionPlan& plan) {
    if (plan.per_layer.size() != net.layers.size())
        throw std::invalid_argument("expand_network: plan length does not match layer count");
    NetworkGraph<T> out;
    out.name = net.name;
    out.in_c = net.in_c;
    out.in_h = net.in_h;
    out.in_w = net.in_w;
    out.num_classes = net.num_classes;
    bool first_conv_seen = false;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& dir = plan.per_layer[i];
        const auto& layer = net.layers[i];
        const bool is_conv = std::holds_alternative<Conv2dLayer<T>>(layer);
        const bool is_linear = std::holds_alternative<LinearLayer<T>>(layer);
        const bool table1_first = plan.table1_channels && is_conv && !first_conv_seen;
        if (is_conv) first_conv_seen = true;
        if (dir.kind == Directive::None) {
            out.layers.push_back(layer);
            continue;
        }
        std::vector<LayerSpec<T>> unit_layers;
        Strategy strategy;
        switch (dir.kind) {
            case Directive::FC:
                if (!is_linear)
                    throw std::invalid_argument("expand_network: FC directive on non-linear layer " +
                                                std::to_string(i));
                unit_layers = expand_fc(std::get<LinearLayer<T>>(layer), dir.rate, dir.depth,
                                        plan.seed, i);
                strategy = Strategy::FC;
                break;
            case Directive::CL:
                if (!is_conv)
                    throw std::invalid_argument("expand_network: CL directive on non-conv layer " +
                                                std::to_string(i));
                unit_layers = expand_cl(std::get<Conv2dLayer<T>>(layer), dir.rate, plan.seed, i,
                                        table1_first);
                strategy = Strategy::CL;
                break;
            default:
                if (!is_conv)
                    throw std::invalid_argument("expand_network: CK directive on non-conv layer " +
                                                std::to_string(i));
                unit_layers = expand_ck(std::get<Conv2dLayer<T>>(layer), dir.rate, plan.seed, i,
                                        table1_first);
                strategy = Strategy::CK;
                break;
        }
        ExpansionUnit unit;
        unit.strategy = strategy;
        unit.first = out.layers.size();
        unit.count = unit_layers.size();
        unit.original = detail::record_original(layer);
        out.unit_annotations.push_back(unit);
        for (auto& l : unit_layers) out.layers.push_back(std::move(l));
    }
    out.expansion_provenance = plan;
    infer_output_shape(out);  // validates adjacency
    return out;
}

// Nonlinear counterpart: ReLU between consecutive layers inside each unit
// (never after a unit's last layer). Parameter tensors match the expanded
// graph one-to-one, so trained weights transfer directly.
template <typename T>
NetworkGraph<T> build_nonlinear_counterpart(const NetworkGraph<T>& expanded) {
    if (expanded.unit_annotations.empty())
        throw std::invalid_argument("build_nonlinear_counterpart: graph has no expansion units");
    NetworkGraph<T> out;
    out.name = expanded.name + "-nonlinear";
    out.in_c = expanded.in_c;
    out.in_h = expanded.in_h;
    out.in_w = expanded.in_w;
    out.num_classes = expanded.num_classes;
    out.expansion_provenance = expanded.expansion_provenance;
    std::size_t next_unit = 0;
    for (std::size_t i = 0; i < expanded.layers.size(); ++i) {
        if (next_unit < expanded.unit_annotations.size() &&
            i == expanded.unit_annotations[next_unit].first) {
            ExpansionUnit unit = expanded.unit_annotations[next_unit];
            const std::size_t begin = out.layers.size();
            for (std::size_t j = 0; j < unit.count; ++j) {
                out.layers.push_back(expanded.layers[unit.first + j]);
                if (j + 1 < unit.count) out.layers.emplace_back(ReLULayer{});
            }
            unit.first = begin;
            unit.count = 2 * unit.count - 1;
            out.unit_annotations.push_back(unit);
            i += expanded.unit_annotations[next_unit].count - 1;
            ++next_unit;
        } else {
            out.layers.push_back(expanded.layers[i]);
        }
    }
    return out;
}

}  // namespace expandnet
