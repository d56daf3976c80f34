// Acceptance gate, fast half. One PASS/FAIL line per criterion:
//   1. equivalence grid        expanded chain == collapsed layer across a
//                              grid of kernel sizes, rates, strides,
//                              paddings, and all three strategies
//   2. matrix cross-check      explicit convolution-matrix product equals
//                              the matrix of the kernel-composed layer
//   3. depth law               kxk -> exactly (k-1)/2 3x3 layers, and the
//                              collapse recovers kernel size k
//   4. round-trip counting     compress(expand(net)) preserves parameter
//                              count and layer sequence for the whole zoo
//   5. gradient correctness    finite differences across all layer kinds
//   6. determinism             identical seeds give bitwise-identical
//                              training reports
//   7. format robustness       truncated data files rejected with a byte
//                              offset; model save/load is bit-exact
//
// The training-trend criterion runs in the separate acceptance_training
// binary because it trains for real.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "expandnet/autodiff.hpp"
#include "expandnet/compression.hpp"
#include "expandnet/data.hpp"
#include "expandnet/expansion.hpp"
#include "expandnet/model_io.hpp"
#include "expandnet/train.hpp"
#include "expandnet/zoo.hpp"

namespace fs = std::filesystem;
using namespace expandnet;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << ": " << criterion;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!pass) ++g_failures;
}

template <typename T>
void fill_gaussian(std::vector<T>& v, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& x : v) x = static_cast<T>(gauss(rng));
}

template <typename T>
double unit_equivalence(const NetworkGraph<T>& a, const NetworkGraph<T>& b, int trials,
                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0;
    for (int t = 0; t < trials; ++t) {
        Tensor4<T> x(1, a.in_c, a.in_h, a.in_w);
        fill_gaussian(x.data, rng);
        auto ya = forward_eval(a, x);
        auto yb = forward_eval(b, x);
        for (std::size_t i = 0; i < ya.data.size(); ++i)
            worst = std::max(worst, std::abs(double(ya.data[i]) - double(yb.data[i])));
    }
    return worst;
}

// Single-layer network wrapping one conv or linear, expanded per directive.
template <typename T>
std::pair<NetworkGraph<T>, NetworkGraph<T>> expanded_and_collapsed(bool is_conv, int in_ch,
                                                                   int out_ch, int k, int s,
                                                                   int p, LayerDirective dir,
                                                                   std::uint64_t seed) {
    NetworkGraph<T> base;
    base.in_c = in_ch;
    if (is_conv) {
        base.in_h = base.in_w = 12;
        base.layers.emplace_back(make_conv<T>(in_ch, out_ch, k, s, p, true, seed, 0));
    } else {
        base.in_h = base.in_w = 1;
        base.layers.emplace_back(make_linear<T>(in_ch, out_ch, true, seed, 0));
    }
    ExpansionPlan plan;
    plan.per_layer = {dir};
    plan.seed = seed;
    auto expanded = expand_network(base, plan);
    auto collapsed = compress_network(expanded);
    return {expanded, collapsed};
}

void check_equivalence_grid() {
    const auto start = Clock::now();
    int units = 0;
    double worst64 = 0, worst32 = 0;
    std::string first_fail;

    auto run_unit = [&](bool is_conv, int in_ch, int out_ch, int k, int s, int p,
                        LayerDirective dir) {
        const std::uint64_t seed = 1000 + units;
        {
            auto [e64, c64] =
                expanded_and_collapsed<double>(is_conv, in_ch, out_ch, k, s, p, dir, seed);
            const double d = unit_equivalence(e64, c64, 50, seed);
            worst64 = std::max(worst64, d);
            if (d > 1e-9 && first_fail.empty())
                first_fail = "f64 unit " + std::to_string(units);
        }
        {
            auto [e32, c32] =
                expanded_and_collapsed<float>(is_conv, in_ch, out_ch, k, s, p, dir, seed);
            const double d = unit_equivalence(e32, c32, 50, seed);
            worst32 = std::max(worst32, d);
            if (d > 1e-4 && first_fail.empty())
                first_fail = "f32 unit " + std::to_string(units);
        }
        ++units;
    };

    const int rates[] = {1, 2, 4, 8};
    // CL: every kernel size, rate, stride; padding cycles through 0..4
    int pad = 0;
    for (int k : {1, 3, 5, 7, 9})
        for (int r : rates)
            for (int s : {1, 2}) {
                run_unit(true, 3, 6, k, s, pad, {Directive::CL, r});
                pad = (pad + 1) % 5;
            }
    // CK: odd kernels above 3
    for (int k : {5, 7, 9})
        for (int r : rates)
            for (int s : {1, 2}) {
                run_unit(true, 3, 6, k, s, pad, {Directive::CK, r});
                pad = (pad + 1) % 5;
            }
    // FC: rates x depths x width pairs
    const std::vector<std::pair<int, int>> widths{{16, 8}, {7, 13}, {32, 4}, {5, 5}, {24, 10}};
    for (int r : rates)
        for (int d : {2, 3, 4})
            for (auto [m, n] : widths) run_unit(false, m, n, 0, 0, 0, {Directive::FC, r, d});

    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    std::ostringstream detail;
    detail << units << " units, max diff " << worst64 << " f64 / " << worst32 << " f32, "
           << int(secs) << "s";
    if (!first_fail.empty()) detail << ", first failure " << first_fail;
    report("equivalence grid", units >= 120 && first_fail.empty() && secs < 120,
           detail.str());
}

void check_matrix_crosscheck() {
    int instances = 0;
    double worst = 0;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_conv = [&](int in_ch, int out_ch, int k, int p) {
        Conv2dLayer<double> conv{in_ch, out_ch, k, 1, p, false,
                                 std::vector<double>(std::size_t(out_ch) * in_ch * k * k),
                                 {}};
        for (auto& w : conv.weight) w = gauss(rng);
        return conv;
    };
    const std::vector<std::pair<int, int>> kernel_pairs{{1, 3}, {3, 1}, {3, 3}, {1, 1}};
    for (int c : {1, 2, 4})
        for (auto [k1, k2] : kernel_pairs)
            for (int p : {0, 1}) {
                const int h = 6, w = 6;
                auto a = random_conv(2, c, k1, p);
                auto b = random_conv(c, 3, k2, 0);
                const int ah = h + 2 * p - k1 + 1, aw = w + 2 * p - k1 + 1;
                if (ah < k2) continue;
                auto composed = compose_conv_pair(a, b);
                auto ma = build_conv_matrix(a, h, w);
                auto mb = build_conv_matrix(b, ah, aw);
                auto mc = build_conv_matrix(composed, h, w);
                auto prod = matmul(mb, ma);
                for (std::size_t i = 0; i < prod.data.size(); ++i)
                    worst = std::max(worst, std::abs(prod.data[i] - mc.data[i]));
                ++instances;
            }
    report("matrix cross-check", instances >= 20 && worst <= 1e-10,
           std::to_string(instances) + " instances, max diff " + std::to_string(worst));
}

void check_depth_law() {
    bool ok = true;
    std::string detail;
    for (int k : {5, 7, 9}) {
        auto conv = make_conv<double>(3, 5, k, 1, (k - 1) / 2, true, 11, 0);
        auto chain_specs = expand_ck(conv, 2, 11, 1);
        const std::size_t want = std::size_t(k - 1) / 2;
        if (chain_specs.size() != want) {
            ok = false;
            detail = "k=" + std::to_string(k) + " gave " + std::to_string(chain_specs.size()) +
                     " layers, want " + std::to_string(want);
            break;
        }
        ExpansionUnit unit;
        unit.strategy = Strategy::CK;
        unit.count = chain_specs.size();
        unit.original = {true, conv.in_ch, conv.out_ch, conv.k, conv.stride, conv.padding,
                         conv.has_bias};
        std::vector<Conv2dLayer<double>> chain;
        for (auto& spec : chain_specs) chain.push_back(std::get<Conv2dLayer<double>>(spec));
        auto collapsed = collapse_conv_chain(unit, chain);
        if (collapsed.k != k) {
            ok = false;
            detail = "k=" + std::to_string(k) + " collapsed to kernel " +
                     std::to_string(collapsed.k);
            break;
        }
    }
    report("depth law", ok, ok ? "k in {5,7,9} -> L in {2,3,4}, collapse exact" : detail);
}

void check_round_trip_counting() {
    bool ok = true;
    std::string detail;
    for (int k : {3, 5, 7, 9})
        for (auto depth : {SmallNetDepth::ThreeConv, SmallNetDepth::FourConv})
            for (int classes : {10, 100})
                for (auto v : {Variant::FC, Variant::CL, Variant::CLFC, Variant::CK,
                               Variant::CKFC}) {
                    if (k == 3 && (v == Variant::CK || v == Variant::CKFC)) continue;
                    auto net = build_smallnet<float>(k, classes, depth, 17);
                    auto expanded = build_expandnet_variant(net, v, 4, 3, false, 17);
                    auto compact = compress_network(expanded);
                    if (param_count(compact) != param_count(net) ||
                        !same_architecture(compact, net)) {
                        ok = false;
                        detail = net.name + " variant " + std::to_string(int(v));
                    }
                }
    report("round-trip counting", ok,
           ok ? "zoo x variants: parameter counts and layer sequences identical" : detail);
}

void check_gradients() {
    const auto start = Clock::now();
    NetworkGraph<double> net;
    net.in_c = 2;
    net.in_h = net.in_w = 8;
    net.num_classes = 3;
    net.layers.emplace_back(make_conv<double>(2, 4, 3, 1, 1, true, 5, 0));
    net.layers.emplace_back(make_batchnorm<double>(4));
    net.layers.emplace_back(ReLULayer{});
    net.layers.emplace_back(MaxPoolLayer{2, 2});
    net.layers.emplace_back(make_conv<double>(4, 3, 3, 2, 1, false, 5, 1));
    net.layers.emplace_back(LeakyReLULayer<double>{0.1});
    net.layers.emplace_back(FlattenLayer{});
    net.layers.emplace_back(make_linear<double>(12, 3, true, 5, 2));
    Tensor4<double> x(3, 2, 8, 8);
    std::mt19937_64 rng(23);
    fill_gaussian(x.data, rng);
    std::vector<int> labels{2, 0, 1};

    auto [loss, tape] = backward(net, x, labels);
    (void)loss;
    const double h = 1e-5;
    double worst = 0;
    auto probe = [&](std::vector<double>& params, const std::vector<double>& grads) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double lp = backward(net, x, labels).first;
            params[i] = keep - h;
            const double lm = backward(net, x, labels).first;
            params[i] = keep;
            const double numeric = (lp - lm) / (2 * h);
            const double denom = std::max({std::abs(numeric), std::abs(grads[i]), 1e-8});
            worst = std::max(worst, std::abs(numeric - grads[i]) / denom);
        }
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& g = tape.layers[li];
        if (auto* conv = std::get_if<Conv2dLayer<double>>(&net.layers[li])) {
            probe(conv->weight, g.weight);
            probe(conv->bias, g.bias);
        } else if (auto* lin = std::get_if<LinearLayer<double>>(&net.layers[li])) {
            probe(lin->weight, g.weight);
            probe(lin->bias, g.bias);
        } else if (auto* bn = std::get_if<BatchNormLayer<double>>(&net.layers[li])) {
            probe(bn->scale, g.scale);
            probe(bn->shift, g.shift);
        }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    std::ostringstream detail;
    detail << "all layer kinds, every parameter, max rel err " << worst << ", " << int(secs)
           << "s";
    report("gradient correctness", worst <= 1e-4 && secs < 60, detail.str());
}

void check_determinism() {
    auto data = synthetic_dataset(4, 96, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.lr_milestones.clear();
    cfg.seed = 5;
    auto run = [&]() {
        NetworkGraph<float> net;
        net.in_c = 3;
        net.in_h = net.in_w = 32;
        net.num_classes = 4;
        net.layers.emplace_back(make_conv<float>(3, 4, 3, 2, 1, false, 9, 0));
        net.layers.emplace_back(ReLULayer{});
        net.layers.emplace_back(MaxPoolLayer{2, 2});
        net.layers.emplace_back(FlattenLayer{});
        net.layers.emplace_back(make_linear<float>(4 * 8 * 8, 4, true, 9, 1));
        auto report = train(net, data, data, cfg);
        for (auto& e : report.epochs) e.wall_ms = 0;  // wall time legitimately varies
        return report.to_jsonl();
    };
    const auto a = run();
    const auto b = run();
    report("determinism", a == b,
           a == b ? "two seeded runs, reports bitwise identical" : "reports differ");
}

void check_format_robustness() {
    const auto dir = fs::temp_directory_path() / "expandnet-acceptance-fmt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    bool ok = true;
    std::string detail = "truncation detected with byte offset; save/load bit-exact";

    // truncated CIFAR file names the byte offset
    {
        std::vector<int> labels(8, 1);
        std::vector<std::uint8_t> px(8 * 3072, 100);
        for (int b = 1; b <= 5; ++b)
            write_cifar10_format(dir / ("data_batch_" + std::to_string(b) + ".bin"), px,
                                 labels);
        write_cifar10_format(dir / "test_batch.bin", px, labels);
        fs::resize_file(dir / "data_batch_2.bin", 3 * 3073 + 17);
        try {
            load_cifar(dir, CifarFlavor::Cifar10);
            ok = false;
            detail = "truncated file was accepted";
        } catch (const format_error& e) {
            if (std::string(e.what()).find(std::to_string(3 * 3073)) == std::string::npos) {
                ok = false;
                detail = std::string("error lacks byte offset: ") + e.what();
            }
        }
    }

    // save/load round trip is output-bit-exact
    if (ok) {
        auto net = build_expandnet_variant(
            build_smallnet<float>(7, 10, SmallNetDepth::ThreeConv, 31), Variant::CKFC, 4, 3, false,
            31);
        save_model(net, dir / "m.json");
        auto loaded = load_model<float>(dir / "m.json");
        Tensor4<float> x(2, 3, 32, 32);
        std::mt19937_64 rng(13);
        fill_gaussian(x.data, rng);
        auto ya = forward_eval(net, x);
        auto yb = forward_eval(loaded, x);
        if (ya.data != yb.data) {
            ok = false;
            detail = "loaded model output differs";
        }
        save_model(loaded, dir / "m2.json");
        auto blob_a = detail::read_file(dir / "m.bin");
        auto blob_b = detail::read_file(dir / "m2.bin");
        if (blob_a != blob_b) {
            ok = false;
            detail = "re-saved blob differs";
        }
    }
    fs::remove_all(dir);
    report("format robustness", ok, detail);
}

}  // namespace

int main() {
    check_equivalence_grid();
    check_matrix_crosscheck();
    check_depth_law();
    check_round_trip_counting();
    check_gradients();
    check_determinism();
    check_format_robustness();
    return g_failures == 0 ? 0 : 1;
}
