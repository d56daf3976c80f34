// expandnet: single-binary CLI for the whole pipeline:
//   new -> expand -> (init) -> train -> compress -> verify -> eval
//
// Exit codes: 0 success, 2 usage error, 3 data/format error,
// 4 verification failure.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "expandnet/compression.hpp"
#include "expandnet/data.hpp"
#include "expandnet/expansion.hpp"
#include "expandnet/model_io.hpp"
#include "expandnet/train.hpp"
#include "expandnet/zoo.hpp"

namespace fs = std::filesystem;
using namespace expandnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitVerify = 4;

// A model argument is either a manifest path or a zoo architecture id.
NetworkGraph<float> load_or_build(const std::string& arg, std::uint64_t seed) {
    if (fs::exists(arg)) return load_model<float>(arg);
    return build_smallnet_by_id<float>(arg, seed);
}

struct DataFlags {
    std::string dataset = "cifar10";
    std::string data_dir;
    int subset = 0;
    std::uint64_t seed = 0;

    CifarSplits load() const {
        if (dataset == "synthetic") {
            CifarSplits s;
            s.train = synthetic_dataset(10, subset > 0 ? subset : 2000, seed);
            s.eval = synthetic_dataset(10, 500, seed + 1);
            return s;
        }
        fs::path dir = data_dir;
        if (dir.empty()) {
            if (const char* env = std::getenv("EXPANDNET_DATA_DIR")) dir = env;
        }
        if (dir.empty())
            throw format_error("no dataset directory: pass --data-dir or set EXPANDNET_DATA_DIR");
        const auto flavor = dataset == "cifar100" ? CifarFlavor::Cifar100 : CifarFlavor::Cifar10;
        return load_cifar(dir, flavor, subset, seed);
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--dataset", dataset, "cifar10, cifar100, or synthetic")
            ->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
        cmd->add_option("--data-dir", data_dir, "dataset directory (default: $EXPANDNET_DATA_DIR)");
        cmd->add_option("--subset", subset, "stratified training subset size (0 = full)");
    }
};

int run(int argc, char** argv) {
    CLI::App app{"ExpandNets: train compact networks through linear over-parameterization"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();

    // --- new -------------------------------------------------------------
    auto* cmd_new = app.add_subcommand("new", "create a model from an architecture id");
    std::string new_arch, new_out;
    cmd_new->add_option("arch", new_arch, "architecture id, e.g. smallnet7-3conv-c10")
        ->required();
    cmd_new->add_option("out", new_out, "output manifest path (.json)")->required();

    // --- expand ----------------------------------------------------------
    auto* cmd_expand = app.add_subcommand("expand", "expand linear layers into deeper chains");
    std::string ex_in, ex_out;
    bool ex_fc = false, ex_cl = false, ex_ck = false, ex_table1 = false;
    int ex_rate = 4, ex_depth = 3;
    cmd_expand->add_option("model-in", ex_in, "input manifest or architecture id")->required();
    cmd_expand->add_option("model-out", ex_out, "output manifest path")->required();
    cmd_expand->add_flag("--fc", ex_fc, "expand hidden fully-connected layers");
    cmd_expand->add_flag("--cl", ex_cl, "expand conv layers with 1x1/kxk/1x1 sandwiches");
    cmd_expand->add_flag("--ck", ex_ck, "expand kxk convs into chains of 3x3 convs");
    cmd_expand->add_option("--rate", ex_rate, "channel/width expansion rate r")
        ->capture_default_str();
    cmd_expand->add_option("--depth", ex_depth, "fully-connected chain depth")
        ->capture_default_str();
    cmd_expand->add_flag("--table1-channels", ex_table1,
                         "first conv's first expanded layer keeps M channels instead of r*M");

    // --- train -----------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "train a model and write a JSONL report");
    std::string tr_in, tr_out, tr_report;
    bool tr_init = false;
    TrainConfig cfg;
    DataFlags tr_data;
    cmd_train->add_option("model-in", tr_in, "input manifest or architecture id")->required();
    cmd_train->add_option("model-out", tr_out, "output manifest path")->required();
    cmd_train->add_option("--report", tr_report, "JSONL training report path");
    cmd_train->add_option("--epochs", cfg.epochs)->capture_default_str();
    cmd_train->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    cmd_train->add_option("--lr", cfg.lr)->capture_default_str();
    cmd_train->add_option("--momentum", cfg.momentum)->capture_default_str();
    cmd_train->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
    cmd_train->add_option("--milestones", cfg.lr_milestones, "epochs where lr is decayed")
        ->capture_default_str();
    cmd_train->add_option("--lr-decay", cfg.lr_decay)->capture_default_str();
    cmd_train->add_flag("--init-from-counterpart", tr_init,
                        "pre-train the nonlinear counterpart and transfer its weights");
    tr_data.attach(cmd_train);

    // --- compress ----------------------------------------------------------
    auto* cmd_compress = app.add_subcommand("compress", "collapse expansion units algebraically");
    std::string cp_in, cp_out;
    cmd_compress->add_option("model-in", cp_in, "expanded model manifest")->required();
    cmd_compress->add_option("model-out", cp_out, "output manifest path")->required();

    // --- verify ------------------------------------------------------------
    auto* cmd_verify = app.add_subcommand("verify", "compare two models on random inputs");
    std::string vf_a, vf_b;
    int vf_trials = 50;
    double vf_tol = 1e-4;
    cmd_verify->add_option("model-a", vf_a)->required();
    cmd_verify->add_option("model-b", vf_b)->required();
    cmd_verify->add_option("--trials", vf_trials)->capture_default_str();
    cmd_verify->add_option("--tol", vf_tol)->capture_default_str();

    // --- eval --------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "report top-1 accuracy on the eval split");
    std::string ev_in;
    DataFlags ev_data;
    cmd_eval->add_option("model-in", ev_in, "model manifest")->required();
    ev_data.attach(cmd_eval);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    tr_data.seed = seed;
    ev_data.seed = seed;

    if (cmd_new->parsed()) {
        auto net = build_smallnet_by_id<float>(new_arch, seed);
        save_model(net, new_out);
        std::cout << "wrote " << new_out << " (" << param_count(net) << " parameters)\n";
        return kExitOk;
    }

    if (cmd_expand->parsed()) {
        auto net = load_or_build(ex_in, seed);
        if (ex_cl && ex_ck) throw std::invalid_argument("--cl and --ck are mutually exclusive");
        ExpansionPlan plan;
        if (!ex_fc && !ex_cl && !ex_ck) {
            plan.per_layer.assign(net.layers.size(), LayerDirective{});
            plan.seed = seed;
        } else {
            Variant v = ex_ck ? (ex_fc ? Variant::CKFC : Variant::CK)
                      : ex_cl ? (ex_fc ? Variant::CLFC : Variant::CL)
                              : Variant::FC;
            plan = make_variant_plan(net, v, ex_rate, ex_depth, ex_table1, seed);
        }
        auto expanded = expand_network(net, plan);
        save_model(expanded, ex_out);
        std::cout << "wrote " << ex_out << ": " << param_count(net) << " -> "
                  << param_count(expanded) << " parameters\n";
        return kExitOk;
    }

    if (cmd_train->parsed()) {
        cfg.seed = seed;
        cfg.validate();
        auto net = load_or_build(tr_in, seed);
        auto splits = tr_data.load();
        if (splits.train.num_classes != net.num_classes)
            throw format_error("model expects " + std::to_string(net.num_classes) +
                               " classes, dataset has " +
                               std::to_string(splits.train.num_classes));
        if (tr_init) {
            auto counterpart = build_nonlinear_counterpart(net);
            std::cerr << "pre-training nonlinear counterpart (" << cfg.epochs << " epochs)\n";
            train(counterpart, splits.train, splits.eval, cfg);
            init_from_counterpart(net, counterpart);
        }
        auto report = train(net, splits.train, splits.eval, cfg);
        save_model(net, tr_out);
        if (!tr_report.empty()) {
            std::ofstream out(tr_report);
            if (!out) throw format_error("cannot write " + tr_report);
            out << report.to_jsonl();
        }
        std::cout << "final eval accuracy: " << report.epochs.back().eval_acc << "\n";
        return kExitOk;
    }

    if (cmd_compress->parsed()) {
        auto net = load_model<float>(cp_in);
        auto compact = compress_network(net);
        save_model(compact, cp_out);
        std::cout << "wrote " << cp_out << ": " << param_count(net) << " -> "
                  << param_count(compact) << " parameters\n";
        return kExitOk;
    }

    if (cmd_verify->parsed()) {
        auto a = load_model<float>(vf_a);
        auto b = load_model<float>(vf_b);
        if (a.in_c != b.in_c || a.in_h != b.in_h || a.in_w != b.in_w ||
            a.num_classes != b.num_classes)
            throw format_error("models have different input/output shapes");
        std::mt19937_64 rng(seed);
        std::normal_distribution<float> gauss(0.f, 1.f);
        double max_abs = 0, max_rel = 0;
        for (int t = 0; t < vf_trials; ++t) {
            Tensor4<float> x(1, a.in_c, a.in_h, a.in_w);
            for (auto& v : x.data) v = gauss(rng);
            auto ya = forward_eval(a, x);
            auto yb = forward_eval(b, x);
            for (std::size_t i = 0; i < ya.data.size(); ++i) {
                const double d = std::abs(double(ya.data[i]) - double(yb.data[i]));
                max_abs = std::max(max_abs, d);
                max_rel = std::max(
                    max_rel, d / std::max(1e-12, std::abs(double(ya.data[i]))));
            }
        }
        std::cout << "max abs diff " << max_abs << ", max rel diff " << max_rel << " over "
                  << vf_trials << " inputs\n";
        return max_abs <= vf_tol ? kExitOk : kExitVerify;
    }

    if (cmd_eval->parsed()) {
        auto net = load_model<float>(ev_in);
        auto splits = ev_data.load();
        std::cout << "top-1 accuracy: " << evaluate(net, splits.eval) << "\n";
        return kExitOk;
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
