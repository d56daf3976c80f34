// Model persistence: a JSON manifest describing layers and provenance plus
// a sidecar blob of little-endian IEEE-754 parameter values concatenated in
// layer order (conv weight then bias; linear weight row-major then bias;
// BN scale, shift, running mean, running variance). The manifest carries a
// content hash of the blob, verified on load.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <type_traits>

#include "expandnet/data.hpp"
#include "expandnet/graph.hpp"

namespace expandnet {

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <typename T>
void append_blob(std::vector<std::uint8_t>& blob, const std::vector<T>& v) {
    static_assert(std::is_floating_point_v<T>);
    const std::size_t off = blob.size();
    blob.resize(off + v.size() * sizeof(T));
    std::memcpy(blob.data() + off, v.data(), v.size() * sizeof(T));  // little-endian host
}

template <typename T>
void take_blob(const std::vector<std::uint8_t>& blob, std::size_t& off, std::vector<T>& v,
               std::size_t count) {
    if (off + count * sizeof(T) > blob.size())
        throw format_error("model blob truncated at byte offset " + std::to_string(off));
    v.resize(count);
    std::memcpy(v.data(), blob.data() + off, count * sizeof(T));
    off += count * sizeof(T);
}

inline nlohmann::json plan_to_json(const ExpansionPlan& plan) {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : plan.per_layer) {
        const char* kind = d.kind == Directive::None ? "none"
                           : d.kind == Directive::FC ? "fc"
                           : d.kind == Directive::CL ? "cl"
                                                     : "ck";
        dirs.push_back({{"kind", kind}, {"rate", d.rate}, {"depth", d.depth}});
    }
    return {{"directives", dirs},
            {"table1_channels", plan.table1_channels},
            {"seed", plan.seed}};
}

inline ExpansionPlan plan_from_json(const nlohmann::json& j) {
    ExpansionPlan plan;
    plan.table1_channels = j.value("table1_channels", false);
    plan.seed = j.value("seed", std::uint64_t(0));
    for (const auto& d : j.at("directives")) {
        LayerDirective dir;
        const std::string kind = d.at("kind");
        dir.kind = kind == "fc"   ? Directive::FC
                   : kind == "cl" ? Directive::CL
                   : kind == "ck" ? Directive::CK
                                  : Directive::None;
        dir.rate = d.at("rate");
        dir.depth = d.at("depth");
        plan.per_layer.push_back(dir);
    }
    return plan;
}

}  // namespace detail

template <typename T>
void save_model(const NetworkGraph<T>& net, const std::filesystem::path& manifest_path) {
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["name"] = net.name;
    manifest["dtype"] = sizeof(T) == 4 ? "float32" : "float64";
    manifest["input_shape"] = {net.in_c, net.in_h, net.in_w};
    manifest["num_classes"] = net.num_classes;

    std::vector<std::uint8_t> blob;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json j;
        if (const auto* conv = std::get_if<Conv2dLayer<T>>(&layer)) {
            j = {{"kind", "conv2d"},   {"in", conv->in_ch},        {"out", conv->out_ch},
                 {"k", conv->k},       {"stride", conv->stride},   {"padding", conv->padding},
                 {"bias", conv->has_bias}};
            detail::append_blob(blob, conv->weight);
            if (conv->has_bias) detail::append_blob(blob, conv->bias);
        } else if (const auto* lin = std::get_if<LinearLayer<T>>(&layer)) {
            j = {{"kind", "linear"},
                 {"in", lin->in_features},
                 {"out", lin->out_features},
                 {"bias", lin->has_bias}};
            detail::append_blob(blob, lin->weight);
            if (lin->has_bias) detail::append_blob(blob, lin->bias);
        } else if (const auto* bn = std::get_if<BatchNormLayer<T>>(&layer)) {
            j = {{"kind", "batchnorm"},
                 {"channels", bn->channels},
                 {"eps", static_cast<double>(bn->eps)},
                 {"momentum", static_cast<double>(bn->momentum)}};
            detail::append_blob(blob, bn->scale);
            detail::append_blob(blob, bn->shift);
            detail::append_blob(blob, bn->running_mean);
            detail::append_blob(blob, bn->running_var);
        } else if (std::holds_alternative<ReLULayer>(layer)) {
            j = {{"kind", "relu"}};
        } else if (const auto* lr = std::get_if<LeakyReLULayer<T>>(&layer)) {
            j = {{"kind", "leaky_relu"}, {"slope", static_cast<double>(lr->slope)}};
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
            j = {{"kind", "maxpool"}, {"k", pool->k}, {"stride", pool->stride}};
        } else {
            j = {{"kind", "flatten"}};
        }
        layers.push_back(std::move(j));
    }
    manifest["layers"] = std::move(layers);

    if (!net.unit_annotations.empty() || net.expansion_provenance) {
        nlohmann::json exp;
        if (net.expansion_provenance)
            exp["plan"] = detail::plan_to_json(*net.expansion_provenance);
        nlohmann::json units = nlohmann::json::array();
        for (const auto& u : net.unit_annotations) {
            units.push_back({{"strategy", strategy_name(u.strategy)},
                             {"first", u.first},
                             {"count", u.count},
                             {"original",
                              {{"is_conv", u.original.is_conv},
                               {"in", u.original.in_ch},
                               {"out", u.original.out_ch},
                               {"k", u.original.k},
                               {"stride", u.original.stride},
                               {"padding", u.original.padding},
                               {"bias", u.original.has_bias}}}});
        }
        exp["units"] = std::move(units);
        manifest["expansion"] = std::move(exp);
    }

    std::filesystem::path blob_path = manifest_path;
    blob_path.replace_extension(".bin");
    manifest["blob"] = {{"file", blob_path.filename().string()},
                        {"bytes", blob.size()},
                        {"fnv1a64", detail::hex64(detail::fnv1a(blob.data(), blob.size()))}};

    std::ofstream bout(blob_path, std::ios::binary);
    if (!bout) throw format_error("cannot write " + blob_path.string());
    bout.write(reinterpret_cast<const char*>(blob.data()),
               static_cast<std::streamsize>(blob.size()));
    std::ofstream mout(manifest_path);
    if (!mout) throw format_error("cannot write " + manifest_path.string());
    mout << manifest.dump(2) << "\n";
}

template <typename T>
NetworkGraph<T> load_model(const std::filesystem::path& manifest_path) {
    std::ifstream min(manifest_path);
    if (!min) throw format_error("cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        min >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(manifest_path.string() + ": invalid manifest: " + e.what());
    }
    if (manifest.value("format_version", 0) != 1)
        throw format_error(manifest_path.string() + ": unsupported format version");
    const std::string want_dtype = sizeof(T) == 4 ? "float32" : "float64";
    if (manifest.value("dtype", "") != want_dtype)
        throw format_error(manifest_path.string() + ": dtype is " +
                           manifest.value("dtype", "?") + ", expected " + want_dtype);

    const auto blob_path = manifest_path.parent_path() /
                           manifest.at("blob").at("file").get<std::string>();
    auto blob = detail::read_file(blob_path);
    if (blob.size() != manifest.at("blob").at("bytes").get<std::size_t>())
        throw format_error(blob_path.string() + ": blob truncated at byte offset " +
                           std::to_string(blob.size()));
    if (detail::hex64(detail::fnv1a(blob.data(), blob.size())) !=
        manifest.at("blob").at("fnv1a64").get<std::string>())
        throw format_error(blob_path.string() + ": content hash mismatch (corrupt blob)");

    NetworkGraph<T> net;
    net.name = manifest.value("name", "");
    const auto shape = manifest.at("input_shape");
    net.in_c = shape.at(0);
    net.in_h = shape.at(1);
    net.in_w = shape.at(2);
    net.num_classes = manifest.value("num_classes", 0);

    std::size_t off = 0;
    for (const auto& j : manifest.at("layers")) {
        const std::string kind = j.at("kind");
        if (kind == "conv2d") {
            Conv2dLayer<T> conv;
            conv.in_ch = j.at("in");
            conv.out_ch = j.at("out");
            conv.k = j.at("k");
            conv.stride = j.at("stride");
            conv.padding = j.at("padding");
            conv.has_bias = j.at("bias");
            detail::take_blob(blob, off, conv.weight,
                              static_cast<std::size_t>(conv.out_ch) * conv.in_ch * conv.k * conv.k);
            if (conv.has_bias) detail::take_blob(blob, off, conv.bias, conv.out_ch);
            net.layers.emplace_back(std::move(conv));
        } else if (kind == "linear") {
            LinearLayer<T> lin;
            lin.in_features = j.at("in");
            lin.out_features = j.at("out");
            lin.has_bias = j.at("bias");
            detail::take_blob(blob, off, lin.weight,
                              static_cast<std::size_t>(lin.out_features) * lin.in_features);
            if (lin.has_bias) detail::take_blob(blob, off, lin.bias, lin.out_features);
            net.layers.emplace_back(std::move(lin));
        } else if (kind == "batchnorm") {
            BatchNormLayer<T> bn;
            bn.channels = j.at("channels");
            bn.eps = static_cast<T>(j.at("eps").get<double>());
            bn.momentum = static_cast<T>(j.at("momentum").get<double>());
            detail::take_blob(blob, off, bn.scale, bn.channels);
            detail::take_blob(blob, off, bn.shift, bn.channels);
            detail::take_blob(blob, off, bn.running_mean, bn.channels);
            detail::take_blob(blob, off, bn.running_var, bn.channels);
            net.layers.emplace_back(std::move(bn));
        } else if (kind == "relu") {
            net.layers.emplace_back(ReLULayer{});
        } else if (kind == "leaky_relu") {
            net.layers.emplace_back(LeakyReLULayer<T>{static_cast<T>(j.at("slope").get<double>())});
        } else if (kind == "maxpool") {
            net.layers.emplace_back(MaxPoolLayer{j.at("k"), j.at("stride")});
        } else if (kind == "flatten") {
            net.layers.emplace_back(FlattenLayer{});
        } else {
            throw format_error(manifest_path.string() + ": unknown layer kind '" + kind + "'");
        }
    }
    if (off != blob.size())
        throw format_error(blob_path.string() + ": " + std::to_string(blob.size() - off) +
                           " trailing bytes in blob");

    if (manifest.contains("expansion")) {
        const auto& exp = manifest.at("expansion");
        if (exp.contains("plan"))
            net.expansion_provenance = detail::plan_from_json(exp.at("plan"));
        for (const auto& ju : exp.at("units")) {
            ExpansionUnit u;
            const std::string s = ju.at("strategy");
            u.strategy = s == "FC" ? Strategy::FC : s == "CL" ? Strategy::CL : Strategy::CK;
            u.first = ju.at("first");
            u.count = ju.at("count");
            const auto& jo = ju.at("original");
            u.original = {jo.at("is_conv"), jo.at("in"),      jo.at("out"), jo.at("k"),
                          jo.at("stride"),  jo.at("padding"), jo.at("bias")};
            net.unit_annotations.push_back(u);
        }
    }
    return net;
}

}  // namespace expandnet
