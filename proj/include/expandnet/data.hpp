// Dataset ingestion: CIFAR binary batches and synthetic generators.
//
// CIFAR-10 records are 3073 bytes (label + 3072 pixels, channel-major
// R,G,B planes, row-major within a plane); CIFAR-100 records are 3074
// bytes (coarse label, fine label, pixels) and we use the fine label.
// Pixels are scaled to [0,1] and standardized per channel with statistics
// computed from the train split.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "expandnet/tensor.hpp"

namespace expandnet {

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetHandle {
    std::string name;
    int num_classes = 10;
    int channels = 3, height = 32, width = 32;
    std::vector<float> images;  // (n, c, h, w) contiguous, normalized
    std::vector<int> labels;
    std::array<float, 3> mean{0.f, 0.f, 0.f};
    std::array<float, 3> stddev{1.f, 1.f, 1.f};

    int size() const { return static_cast<int>(labels.size()); }

    std::size_t sample_floats() const {
        return static_cast<std::size_t>(channels) * height * width;
    }

    // Copies samples `indices` into a batch tensor (any scalar type).
    template <typename T>
    Tensor4<T> batch(const std::vector<int>& indices) const {
        Tensor4<T> out(static_cast<int>(indices.size()), channels, height, width);
        const std::size_t sf = sample_floats();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const float* src = images.data() + static_cast<std::size_t>(indices[i]) * sf;
            T* dst = out.data.data() + i * sf;
            for (std::size_t p = 0; p < sf; ++p) dst[p] = static_cast<T>(src[p]);
        }
        return out;
    }
};

enum class CifarFlavor { Cifar10, Cifar100 };

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

struct RawCifar {
    std::vector<std::uint8_t> pixels;  // n * 3072
    std::vector<int> labels;
};

inline void parse_cifar_file(const std::filesystem::path& path, CifarFlavor flavor, RawCifar& out) {
    const std::size_t record = flavor == CifarFlavor::Cifar10 ? 3073 : 3074;
    const std::size_t label_offset = flavor == CifarFlavor::Cifar10 ? 0 : 1;  // fine label
    auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % record != 0)
        throw format_error(path.string() + ": truncated or malformed at byte offset " +
                           std::to_string(bytes.size() - bytes.size() % record) + " (record size " +
                           std::to_string(record) + ")");
    const std::size_t n = bytes.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes.data() + i * record;
        out.labels.push_back(rec[label_offset]);
        out.pixels.insert(out.pixels.end(), rec + label_offset + 1, rec + record);
    }
}

inline void normalize(DatasetHandle& ds, const std::vector<std::uint8_t>& pixels,
                      bool compute_stats) {
    const std::size_t n = ds.labels.size();
    const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
    ds.images.resize(n * 3 * plane);
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = static_cast<float>(pixels[i]) / 255.f;
    if (compute_stats) {
        for (int ch = 0; ch < 3; ++ch) {
            double sum = 0, sq = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const float* src = ds.images.data() + (i * 3 + ch) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    sum += src[p];
                    sq += static_cast<double>(src[p]) * src[p];
                }
            }
            const double m = sum / (n * plane);
            const double var = sq / (n * plane) - m * m;
            ds.mean[ch] = static_cast<float>(m);
            ds.stddev[ch] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < 3; ++ch) {
            float* dst = ds.images.data() + (i * 3 + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = (dst[p] - ds.mean[ch]) / ds.stddev[ch];
        }
}

// Seeded stratified sample: floor(total/num_classes) per class.
inline std::vector<int> stratified_indices(const std::vector<int>& labels, int num_classes,
                                           int total, std::uint64_t seed) {
    std::vector<std::vector<int>> by_class(num_classes);
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) by_class[labels[i]].push_back(i);
    const int per_class = total / num_classes;
    std::mt19937_64 rng(seed);
    std::vector<int> keep;
    for (auto& idxs : by_class) {
        if (static_cast<int>(idxs.size()) < per_class)
            throw format_error("stratified subset: class has fewer than " +
                               std::to_string(per_class) + " samples");
        std::shuffle(idxs.begin(), idxs.end(), rng);
        keep.insert(keep.end(), idxs.begin(), idxs.begin() + per_class);
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

inline DatasetHandle select(const DatasetHandle& ds, const std::vector<int>& indices) {
    DatasetHandle out = ds;
    out.images.clear();
    out.labels.clear();
    const std::size_t sf = ds.sample_floats();
    for (int i : indices) {
        const float* src = ds.images.data() + static_cast<std::size_t>(i) * sf;
        out.images.insert(out.images.end(), src, src + sf);
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

}  // namespace detail

struct CifarSplits {
    DatasetHandle train;
    DatasetHandle eval;
};

inline CifarSplits load_cifar(const std::filesystem::path& dir, CifarFlavor flavor,
                              int subset = 0, std::uint64_t seed = 0) {
    detail::RawCifar raw_train, raw_eval;
    if (flavor == CifarFlavor::Cifar10) {
        for (int i = 1; i <= 5; ++i)
            detail::parse_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), flavor,
                                     raw_train);
        detail::parse_cifar_file(dir / "test_batch.bin", flavor, raw_eval);
    } else {
        detail::parse_cifar_file(dir / "train.bin", flavor, raw_train);
        detail::parse_cifar_file(dir / "test.bin", flavor, raw_eval);
    }
    CifarSplits splits;
    const int classes = flavor == CifarFlavor::Cifar10 ? 10 : 100;
    splits.train.name = flavor == CifarFlavor::Cifar10 ? "cifar10-train" : "cifar100-train";
    splits.train.num_classes = classes;
    splits.train.labels = std::move(raw_train.labels);
    detail::normalize(splits.train, raw_train.pixels, true);
    splits.eval.name = flavor == CifarFlavor::Cifar10 ? "cifar10-eval" : "cifar100-eval";
    splits.eval.num_classes = classes;
    splits.eval.labels = std::move(raw_eval.labels);
    splits.eval.mean = splits.train.mean;  // eval uses train-split stats
    splits.eval.stddev = splits.train.stddev;
    detail::normalize(splits.eval, raw_eval.pixels, false);
    for (int lab : splits.train.labels)
        if (lab < 0 || lab >= classes) throw format_error("label out of range in train split");
    for (int lab : splits.eval.labels)
        if (lab < 0 || lab >= classes) throw format_error("label out of range in eval split");
    if (subset > 0)
        splits.train = detail::select(
            splits.train,
            detail::stratified_indices(splits.train.labels, classes, subset, seed));
    return splits;
}

// Gaussian class blobs rendered as 3x32x32 images. `noise` scales the
// per-pixel Gaussian noise relative to the unit-strength class template;
// small values give linearly separable data.
inline DatasetHandle synthetic_dataset(int num_classes, int n, std::uint64_t seed,
                                       float noise = 0.25f) {
    if (num_classes < 2 || n < 1) throw std::invalid_argument("synthetic_dataset: bad arguments");
    DatasetHandle ds;
    ds.name = "synthetic";
    ds.num_classes = num_classes;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> gauss(0.f, 1.f);
    const std::size_t sf = ds.sample_floats();
    std::vector<float> templates(static_cast<std::size_t>(num_classes) * sf);
    for (auto& v : templates) v = gauss(rng);
    ds.images.resize(static_cast<std::size_t>(n) * sf);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int cls = i % num_classes;  // balanced
        ds.labels[i] = cls;
        const float* tmpl = templates.data() + static_cast<std::size_t>(cls) * sf;
        float* dst = ds.images.data() + static_cast<std::size_t>(i) * sf;
        for (std::size_t p = 0; p < sf; ++p) dst[p] = tmpl[p] + noise * gauss(rng);
    }
    return ds;
}

// Writes a dataset back out in CIFAR-10 binary batch format (test helper
// and stand-in generator). Values are clamped to [0,255] after inverting
// the usual [0,1] scaling.
inline void write_cifar10_format(const std::filesystem::path& path,
                                 const std::vector<std::uint8_t>& pixels,
                                 const std::vector<int>& labels) {
    if (pixels.size() != labels.size() * 3072)
        throw std::invalid_argument("write_cifar10_format: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot write " + path.string());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::uint8_t lab = static_cast<std::uint8_t>(labels[i]);
        out.put(static_cast<char>(lab));
        out.write(reinterpret_cast<const char*>(pixels.data() + i * 3072), 3072);
    }
}

}  // namespace expandnet
