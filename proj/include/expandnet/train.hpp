// SGD training loop: momentum, weight decay, milestone learning-rate
// schedule, per-epoch evaluation. Deterministic for a fixed seed.
#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "expandnet/autodiff.hpp"
#include "expandnet/data.hpp"
#include "expandnet/graph.hpp"

namespace expandnet {

struct TrainConfig {
    int epochs = 150;
    int batch_size = 128;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<int> lr_milestones{50, 100};
    double lr_decay = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
        if (epochs < 1 || batch_size < 1)
            throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
        for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
            if (lr_milestones[i] >= epochs)
                throw std::invalid_argument("TrainConfig: milestone beyond epoch count");
            if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])
                throw std::invalid_argument("TrainConfig: milestones must be strictly increasing");
        }
    }

    // Milestone decay; a milestone m means "from epoch m on, lr is divided".
    double lr_at(int epoch) const {
        double cur = lr;
        for (int m : lr_milestones)
            if (epoch >= m) cur *= lr_decay;
        return cur;
    }
};

struct EpochReport {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double eval_acc = 0;
    std::int64_t wall_ms = 0;
};

struct TrainReport {
    std::vector<EpochReport> epochs;

    std::string to_jsonl() const {
        std::ostringstream out;
        for (const auto& e : epochs) {
            out.precision(17);
            out << "{\"epoch\":" << e.epoch << ",\"lr\":" << e.lr << ",\"train_loss\":"
                << e.train_loss << ",\"eval_acc\":" << e.eval_acc << ",\"wall_ms\":" << e.wall_ms
                << "}\n";
        }
        return out.str();
    }
};

// Momentum buffers, one slot per layer mirroring LayerGrads.
template <typename T>
struct OptimizerState {
    std::vector<LayerGrads<T>> velocity;
};

// v <- momentum*v + g (+ weight_decay*w for conv/linear weights);
// w <- w - lr*v. Weight decay is not applied to biases or BN parameters.
template <typename T>
void sgd_step(NetworkGraph<T>& net, const GradientTape<T>& tape, const TrainConfig& cfg, int epoch,
              OptimizerState<T>& state) {
    if (tape.layers.size() != net.layers.size())
        throw std::invalid_argument("sgd_step: tape does not match network");
    if (state.velocity.empty()) state.velocity.resize(net.layers.size());
    const T lr = static_cast<T>(cfg.lr_at(epoch));
    const T mu = static_cast<T>(cfg.momentum);
    const T wd = static_cast<T>(cfg.weight_decay);
    auto update = [&](std::vector<T>& w, const std::vector<T>& g, std::vector<T>& v, T decay) {
        if (g.empty()) return;
        if (v.size() != w.size()) v.assign(w.size(), T(0));
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i] + decay * w[i];
            w[i] -= lr * v[i];
        }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& vel = state.velocity[i];
        const auto& g = tape.layers[i];
        if (auto* conv = std::get_if<Conv2dLayer<T>>(&net.layers[i])) {
            update(conv->weight, g.weight, vel.weight, wd);
            update(conv->bias, g.bias, vel.bias, T(0));
        } else if (auto* lin = std::get_if<LinearLayer<T>>(&net.layers[i])) {
            update(lin->weight, g.weight, vel.weight, wd);
            update(lin->bias, g.bias, vel.bias, T(0));
        } else if (auto* bn = std::get_if<BatchNormLayer<T>>(&net.layers[i])) {
            update(bn->scale, g.scale, vel.scale, T(0));
            update(bn->shift, g.shift, vel.shift, T(0));
        }
    }
}

template <typename T>
double evaluate(const NetworkGraph<T>& net, const DatasetHandle& data, int batch_size = 256) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    int correct = 0;
    for (int start = 0; start < data.size(); start += batch_size) {
        const int end = std::min(start + batch_size, data.size());
        std::vector<int> idx(end - start);
        for (int i = start; i < end; ++i) idx[i - start] = i;
        Tensor4<T> x = data.batch<T>(idx);
        Tensor4<T> logits = forward_eval(net, x);
        for (int i = 0; i < logits.n; ++i) {
            int best = 0;
            for (int j = 1; j < logits.c; ++j)
                if (logits.at(i, j, 0, 0) > logits.at(i, best, 0, 0)) best = j;
            if (best == data.labels[start + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / data.size();
}

template <typename T>
std::vector<int> predictions(const NetworkGraph<T>& net, const DatasetHandle& data,
                             int batch_size = 256) {
    std::vector<int> preds;
    preds.reserve(data.size());
    for (int start = 0; start < data.size(); start += batch_size) {
        const int end = std::min(start + batch_size, data.size());
        std::vector<int> idx(end - start);
        for (int i = start; i < end; ++i) idx[i - start] = i;
        Tensor4<T> logits = forward_eval(net, data.batch<T>(idx));
        for (int i = 0; i < logits.n; ++i) {
            int best = 0;
            for (int j = 1; j < logits.c; ++j)
                if (logits.at(i, j, 0, 0) > logits.at(i, best, 0, 0)) best = j;
            preds.push_back(best);
        }
    }
    return preds;
}

template <typename T>
TrainReport train(NetworkGraph<T>& net, const DatasetHandle& train_data,
                  const DatasetHandle& eval_data, const TrainConfig& cfg) {
    cfg.validate();
    if (train_data.size() == 0) throw std::invalid_argument("train: empty dataset");
    TrainReport report;
    OptimizerState<T> state;
    std::vector<int> order(train_data.size());
    for (int i = 0; i < train_data.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, 0xE90C + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        std::size_t seen = 0;
        for (int start = 0; start < train_data.size(); start += cfg.batch_size) {
            const int end = std::min(start + cfg.batch_size, train_data.size());
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            Tensor4<T> x = train_data.batch<T>(idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_data.labels[idx[i]];
            auto [loss, tape] = backward(net, x, labels);
            sgd_step(net, tape, cfg, epoch, state);
            loss_sum += static_cast<double>(loss) * idx.size();
            seen += idx.size();
        }
        EpochReport er;
        er.epoch = epoch;
        er.lr = cfg.lr_at(epoch);
        er.train_loss = loss_sum / static_cast<double>(seen);
        er.eval_acc = eval_data.size() > 0 ? evaluate(net, eval_data) : 0.0;
        er.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
        report.epochs.push_back(er);
    }
    return report;
}

// Copies every parameter tensor of the trained nonlinear counterpart into
// the expanded network (architectures identical modulo interior ReLUs).
template <typename T>
void init_from_counterpart(NetworkGraph<T>& expanded, const NetworkGraph<T>& counterpart) {
    auto collect = [](auto& net) {
        std::vector<LayerSpec<T>*> params;
        for (auto& layer : net.layers)
            if (!std::holds_alternative<ReLULayer>(layer) &&
                !std::holds_alternative<LeakyReLULayer<T>>(layer) &&
                !std::holds_alternative<MaxPoolLayer>(layer) &&
                !std::holds_alternative<FlattenLayer>(layer))
                params.push_back(const_cast<LayerSpec<T>*>(&layer));
        return params;
    };
    auto dst = collect(expanded);
    auto src = collect(const_cast<NetworkGraph<T>&>(counterpart));
    if (dst.size() != src.size())
        throw std::invalid_argument("init_from_counterpart: parameterized layer counts differ");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->index() != src[i]->index())
            throw std::invalid_argument("init_from_counterpart: layer kind mismatch at slot " +
                                        std::to_string(i));
        if (auto* d = std::get_if<Conv2dLayer<T>>(dst[i])) {
            const auto& s = std::get<Conv2dLayer<T>>(*src[i]);
            if (d->weight.size() != s.weight.size() || d->bias.size() != s.bias.size())
                throw std::invalid_argument("init_from_counterpart: conv shape mismatch at slot " +
                                            std::to_string(i));
            d->weight = s.weight;
            d->bias = s.bias;
        } else if (auto* d = std::get_if<LinearLayer<T>>(dst[i])) {
            const auto& s = std::get<LinearLayer<T>>(*src[i]);
            if (d->weight.size() != s.weight.size() || d->bias.size() != s.bias.size())
                throw std::invalid_argument(
                    "init_from_counterpart: linear shape mismatch at slot " + std::to_string(i));
            d->weight = s.weight;
            d->bias = s.bias;
        } else if (auto* d = std::get_if<BatchNormLayer<T>>(dst[i])) {
            const auto& s = std::get<BatchNormLayer<T>>(*src[i]);
            if (d->channels != s.channels)
                throw std::invalid_argument("init_from_counterpart: bn shape mismatch at slot " +
                                            std::to_string(i));
            d->scale = s.scale;
            d->shift = s.shift;
            d->running_mean = s.running_mean;
            d->running_var = s.running_var;
        }
    }
}

}  // namespace expandnet
