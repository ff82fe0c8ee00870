/*
 * Copyright 2026 The ucfl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef UCFL_NN_HPP
#define UCFL_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucfl/core.hpp"

namespace ucfl {

enum class Activation { linear, relu, sigmoid };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "linear";
}

inline Activation activation_from_string(std::string_view s) {
    if (s == "linear") return Activation::linear;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw Error("unknown activation: " + std::string(s));
}

struct DenseLayer {
    Matrix weights;  // out x in
    std::vector<double> bias;
    Activation activation = Activation::linear;
    bool frozen = false;

    std::size_t in() const noexcept { return weights.cols(); }
    std::size_t out() const noexcept { return weights.rows(); }
    std::size_t parameter_count() const noexcept { return out() * in() + out(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feed-forward stack of dense layers with a per-layer freeze flag.
class DenseNetwork {
public:
    DenseNetwork() = default;

    explicit DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            if (l.out() == 0 || l.in() == 0) throw DimensionError("layer with zero width");
            if (l.bias.size() != l.out()) throw DimensionError("bias length does not match layer width");
            if (i > 0 && layers_[i - 1].out() != l.in())
                throw DimensionError("layer " + std::to_string(i) + " input does not chain");
        }
    }

    std::span<const DenseLayer> layers() const noexcept { return layers_; }
    const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
    DenseLayer& layer(std::size_t i) { return layers_.at(i); }
    std::size_t depth() const noexcept { return layers_.size(); }

    std::size_t input_size() const noexcept { return layers_.empty() ? 0 : layers_.front().in(); }
    std::size_t output_size() const noexcept { return layers_.empty() ? 0 : layers_.back().out(); }

    std::size_t total_parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.parameter_count();
        return n;
    }

    std::size_t trainable_parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers_)
            if (!l.frozen) n += l.parameter_count();
        return n;
    }

    void set_frozen(std::size_t i, bool frozen) { layers_.at(i).frozen = frozen; }

    void freeze_all_except(std::size_t keep) {
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].frozen = (i != keep);
    }

    void unfreeze_all() {
        for (auto& l : layers_) l.frozen = false;
    }

    /// Index of the lowest unfrozen layer, or depth() when everything is frozen.
    std::size_t first_trainable() const noexcept {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (!layers_[i].frozen) return i;
        return layers_.size();
    }

    friend bool operator==(const DenseNetwork&, const DenseNetwork&) = default;

private:
    std::vector<DenseLayer> layers_;
};

namespace detail {

inline double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::linear: break;
    }
    return z;
}

// Derivative expressed through the pre-activation z and output y.
inline double activate_grad(Activation a, double z, double y) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: return y * (1.0 - y);
        case Activation::linear: break;
    }
    return 1.0;
}

inline void affine(const DenseLayer& l, std::span<const double> x, std::span<double> z) {
    const std::size_t in = l.in();
    const double* w = l.weights.data().data();
    for (std::size_t o = 0; o < l.out(); ++o) {
        double s = l.bias[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
        z[o] = s;
    }
}

}  // namespace detail

/// Output of the layer range [from, to) applied to `input`.
inline std::vector<double> forward_range(const DenseNetwork& net, std::span<const double> input, std::size_t from,
                                         std::size_t to) {
    if (from > to || to > net.depth()) throw DimensionError("forward_range: bad layer range");
    if (from < to && input.size() != net.layer(from).in())
        throw DimensionError("forward: input length " + std::to_string(input.size()) + " does not match layer width " +
                             std::to_string(net.layer(from).in()));
    std::vector<double> x(input.begin(), input.end());
    std::vector<double> z;
    for (std::size_t li = from; li < to; ++li) {
        const auto& l = net.layer(li);
        z.assign(l.out(), 0.0);
        detail::affine(l, x, z);
        for (double& v : z) v = detail::activate(l.activation, v);
        x.swap(z);
    }
    return x;
}

inline std::vector<double> forward(const DenseNetwork& net, std::span<const double> input) {
    return forward_range(net, input, 0, net.depth());
}

inline double mse_loss(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) throw DimensionError("mse_loss: length mismatch");
    if (y.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y_hat[i] - y[i];
        s += d * d;
    }
    return s / static_cast<double>(y.size());
}

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double m = *std::max_element(p.begin(), p.end());
    double total = 0.0;
    for (double& v : p) {
        v = std::exp(v - m);
        total += v;
    }
    for (double& v : p) v /= total;
    return p;
}

/// -sum target_k * log softmax(logits)_k; `target` is a probability vector.
inline double cross_entropy_loss(std::span<const double> target, std::span<const double> logits) {
    if (target.size() != logits.size()) throw DimensionError("cross_entropy_loss: length mismatch");
    const double m = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - m);
    lse = m + std::log(lse);
    double loss = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k)
        if (target[k] != 0.0) loss -= target[k] * (logits[k] - lse);
    return loss;
}

enum class Loss { mse, softmax_cross_entropy };

struct TrainingPair {
    std::span<const double> input;
    std::span<const double> target;
};

struct LayerGradient {
    Matrix weights;
    std::vector<double> bias;
};

struct GradientResult {
    std::vector<LayerGradient> layers;  // empty entries for frozen layers
    double loss = 0.0;                  // mean loss over the batch
};

/// Mean loss gradient over `batch` for every unfrozen layer. Backpropagation
/// stops at the lowest unfrozen layer.
inline GradientResult batch_gradient(const DenseNetwork& net, std::span<const TrainingPair> batch,
                                     Loss loss = Loss::mse) {
    if (batch.empty()) throw Error("batch_gradient: empty batch");
    const std::size_t depth = net.depth();
    GradientResult g;
    g.layers.resize(depth);
    const std::size_t lowest = net.first_trainable();
    for (std::size_t li = lowest; li < depth; ++li) {
        const auto& l = net.layer(li);
        if (l.frozen) continue;
        g.layers[li].weights = Matrix(l.out(), l.in());
        g.layers[li].bias.assign(l.out(), 0.0);
    }

    // acts[0] is the input, acts[li + 1] the output of layer li.
    std::vector<std::vector<double>> pre(depth), acts(depth + 1);
    for (std::size_t li = 0; li < depth; ++li) {
        pre[li].resize(net.layer(li).out());
        acts[li + 1].resize(net.layer(li).out());
    }
    std::vector<double> delta, prev_delta;

    for (const auto& ex : batch) {
        if (ex.input.size() != net.input_size()) throw DimensionError("batch_gradient: input length mismatch");
        if (ex.target.size() != net.output_size()) throw DimensionError("batch_gradient: target length mismatch");
        acts[0].assign(ex.input.begin(), ex.input.end());
        for (std::size_t li = 0; li < depth; ++li) {
            const auto& l = net.layer(li);
            detail::affine(l, acts[li], pre[li]);
            for (std::size_t o = 0; o < l.out(); ++o) acts[li + 1][o] = detail::activate(l.activation, pre[li][o]);
        }
        const auto& out = acts[depth];
        const std::size_t n_out = out.size();
        delta.assign(n_out, 0.0);
        if (loss == Loss::mse) {
            g.loss += mse_loss(ex.target, out);
            const auto& top = net.layer(depth - 1);
            for (std::size_t o = 0; o < n_out; ++o)
                delta[o] = 2.0 * (out[o] - ex.target[o]) / static_cast<double>(n_out) *
                           detail::activate_grad(top.activation, pre[depth - 1][o], out[o]);
        } else {
            if (net.layer(depth - 1).activation != Activation::linear)
                throw Error("softmax cross-entropy requires a linear output layer");
            g.loss += cross_entropy_loss(ex.target, out);
            const auto p = softmax(out);
            double mass = 0.0;
            for (double t : ex.target) mass += t;
            for (std::size_t o = 0; o < n_out; ++o) delta[o] = mass * p[o] - ex.target[o];
        }
        if (lowest >= depth) continue;

        for (std::size_t li = depth; li-- > lowest;) {
            const auto& l = net.layer(li);
            const auto& x = acts[li];
            if (!l.frozen) {
                auto& gw = g.layers[li].weights;
                for (std::size_t o = 0; o < l.out(); ++o) {
                    const double d = delta[o];
                    if (d == 0.0) continue;
                    auto row = gw.row(o);
                    for (std::size_t i = 0; i < l.in(); ++i) row[i] += d * x[i];
                    g.layers[li].bias[o] += d;
                }
            }
            if (li == lowest) break;
            const auto& below = net.layer(li - 1);
            prev_delta.assign(l.in(), 0.0);
            for (std::size_t o = 0; o < l.out(); ++o) {
                const double d = delta[o];
                if (d == 0.0) continue;
                const auto w = l.weights.row(o);
                for (std::size_t i = 0; i < l.in(); ++i) prev_delta[i] += w[i] * d;
            }
            for (std::size_t i = 0; i < l.in(); ++i)
                prev_delta[i] *= detail::activate_grad(below.activation, pre[li - 1][i], acts[li][i]);
            delta.swap(prev_delta);
        }
    }

    const double scale = 1.0 / static_cast<double>(batch.size());
    g.loss *= scale;
    for (auto& lg : g.layers) {
        for (double& v : lg.weights.data()) v *= scale;
        for (double& v : lg.bias) v *= scale;
    }
    return g;
}

/// theta <- theta - lr * grad for unfrozen layers.
inline void apply_gradient(DenseNetwork& net, const GradientResult& g, double lr) {
    for (std::size_t li = 0; li < net.depth(); ++li) {
        auto& l = net.layer(li);
        if (l.frozen) continue;
        const auto& lg = g.layers.at(li);
        auto& w = l.weights.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * lg.weights.data()[k];
        for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] -= lr * lg.bias[k];
    }
}

/// One SGD step on the mean batch gradient.
inline DenseNetwork sgd_step(DenseNetwork net, std::span<const TrainingPair> batch, double lr, Loss loss = Loss::mse) {
    if (!(lr > 0.0)) throw Error("sgd_step: learning rate must be positive");
    if (batch.empty()) throw Error("sgd_step: empty batch");
    if (net.trainable_parameter_count() == 0) return net;
    apply_gradient(net, batch_gradient(net, batch, loss), lr);
    return net;
}

/// Unfrozen parameters in canonical order: layer, row-major weights, bias.
struct FlatParams {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    friend bool operator==(const FlatParams&, const FlatParams&) = default;
};

inline FlatParams flatten_trainable(const DenseNetwork& net) {
    FlatParams flat;
    flat.values.reserve(net.trainable_parameter_count());
    for (const auto& l : net.layers()) {
        if (l.frozen) continue;
        flat.values.insert(flat.values.end(), l.weights.data().begin(), l.weights.data().end());
        flat.values.insert(flat.values.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

inline DenseNetwork unflatten_trainable(DenseNetwork net, const FlatParams& flat) {
    if (flat.size() != net.trainable_parameter_count())
        throw DimensionError("unflatten_trainable: expected " + std::to_string(net.trainable_parameter_count()) +
                             " values, got " + std::to_string(flat.size()));
    std::size_t at = 0;
    for (std::size_t li = 0; li < net.depth(); ++li) {
        auto& l = net.layer(li);
        if (l.frozen) continue;
        for (double& v : l.weights.data()) v = flat.values[at++];
        for (double& v : l.bias) v = flat.values[at++];
    }
    return net;
}

/// Re-draws a layer's weights uniformly in [-a, a], a = sqrt(6 / (fan_in + fan_out)); bias is zeroed.
inline void glorot_uniform_init(DenseLayer& layer, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double a = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& w : layer.weights.data()) w = dist(rng);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

/// Dense stack with the given layer widths, `hidden` activation between layers
/// and `output` activation at the top, Glorot-initialised from `seed`.
inline DenseNetwork make_network(std::span<const std::size_t> widths, Activation hidden, Activation output,
                                 std::uint64_t seed) {
    if (widths.size() < 2) throw Error("make_network: need at least input and output widths");
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        DenseLayer l;
        l.weights = Matrix(widths[i + 1], widths[i]);
        l.bias.assign(widths[i + 1], 0.0);
        l.activation = (i + 2 == widths.size()) ? output : hidden;
        glorot_uniform_init(l, derive_seed(seed, i));
        layers.push_back(std::move(l));
    }
    return DenseNetwork(std::move(layers));
}

struct FitConfig {
    std::size_t epochs = 1;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    Loss loss = Loss::mse;
};

inline double dataset_loss(const DenseNetwork& net, const Matrix& inputs, const Matrix& targets, Loss loss) {
    if (inputs.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        const auto y = forward(net, inputs.row(r));
        total += loss == Loss::mse ? mse_loss(targets.row(r), y) : cross_entropy_loss(targets.row(r), y);
    }
    return total / static_cast<double>(inputs.rows());
}

/// Shuffled mini-batch SGD over (inputs, targets). Returns the full-dataset
/// loss measured after each epoch.
inline std::vector<double> fit(DenseNetwork& net, const Matrix& inputs, const Matrix& targets, const FitConfig& cfg) {
    if (inputs.rows() == 0) throw Error("fit: empty dataset");
    if (inputs.rows() != targets.rows()) throw DimensionError("fit: inputs/targets row mismatch");
    if (cfg.batch_size == 0) throw Error("fit: batch_size must be positive");
    std::vector<double> history;
    history.reserve(cfg.epochs);
    std::vector<std::size_t> order(inputs.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    std::vector<TrainingPair> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t k = start; k < end; ++k) batch.push_back({inputs.row(order[k]), targets.row(order[k])});
            if (net.trainable_parameter_count() > 0) apply_gradient(net, batch_gradient(net, batch, cfg.loss), cfg.learning_rate);
        }
        history.push_back(dataset_loss(net, inputs, targets, cfg.loss));
    }
    return history;
}

}  // namespace ucfl

#endif  // UCFL_NN_HPP
