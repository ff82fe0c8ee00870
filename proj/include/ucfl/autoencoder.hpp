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

#ifndef UCFL_AUTOENCODER_HPP
#define UCFL_AUTOENCODER_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "ucfl/core.hpp"
#include "ucfl/nn.hpp"

namespace ucfl {

/// Fixed per-dimension affine map x -> (x - offset) * scale, estimated once on
/// a pre-training corpus and shared by every client.
struct FeatureNormalizer {
    std::vector<double> offset;
    std::vector<double> scale;

    bool empty() const noexcept { return offset.empty(); }

    static FeatureNormalizer fit(const Matrix& data) {
        if (data.rows() == 0) throw Error("FeatureNormalizer: empty data");
        FeatureNormalizer n;
        n.offset.assign(data.cols(), 0.0);
        n.scale.assign(data.cols(), 1.0);
        const double rows = static_cast<double>(data.rows());
        for (std::size_t r = 0; r < data.rows(); ++r)
            for (std::size_t c = 0; c < data.cols(); ++c) n.offset[c] += data(r, c);
        for (double& m : n.offset) m /= rows;
        std::vector<double> var(data.cols(), 0.0);
        for (std::size_t r = 0; r < data.rows(); ++r)
            for (std::size_t c = 0; c < data.cols(); ++c) {
                const double d = data(r, c) - n.offset[c];
                var[c] += d * d;
            }
        for (std::size_t c = 0; c < data.cols(); ++c) {
            const double sd = std::sqrt(var[c] / rows);
            n.scale[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
        }
        return n;
    }

    Matrix apply(const Matrix& data) const {
        if (empty()) return data;
        if (data.cols() != offset.size()) throw DimensionError("FeatureNormalizer: width mismatch");
        Matrix out(data.rows(), data.cols());
        for (std::size_t r = 0; r < data.rows(); ++r)
            for (std::size_t c = 0; c < data.cols(); ++c) out(r, c) = (data(r, c) - offset[c]) * scale[c];
        return out;
    }

    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> out(x.begin(), x.end());
        if (empty()) return out;
        if (x.size() != offset.size()) throw DimensionError("FeatureNormalizer: width mismatch");
        for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - offset[c]) * scale[c];
        return out;
    }

    friend bool operator==(const FeatureNormalizer&, const FeatureNormalizer&) = default;
};

struct AutoencoderConfig {
    std::size_t input_size = 128;
    std::vector<std::size_t> hidden = {20, 8, 8, 20};
    Activation hidden_activation = Activation::relu;
    Activation output_activation = Activation::linear;
    std::uint64_t seed = 1;
};

/// Autoencoder h: the dense stack, the index of its bottleneck layer (the only
/// layer left trainable after pre-training) and the input normalisation.
struct Autoencoder {
    DenseNetwork network;
    std::size_t bottleneck_layer = 0;
    FeatureNormalizer normalizer;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    std::size_t epochs_trained = 0;

    std::size_t total_parameter_count() const noexcept { return network.total_parameter_count(); }
    std::size_t bottleneck_parameter_count() const { return network.layer(bottleneck_layer).parameter_count(); }

    friend bool operator==(const Autoencoder& a, const Autoencoder& b) {
        const bool same_loss = (std::isnan(a.final_loss) && std::isnan(b.final_loss)) || a.final_loss == b.final_loss;
        return a.network == b.network && a.bottleneck_layer == b.bottleneck_layer && a.normalizer == b.normalizer &&
               same_loss && a.epochs_trained == b.epochs_trained;
    }
};

/// Builds input -> hidden... -> input and designates the middle layer as the
/// bottleneck: every other layer is frozen.
inline Autoencoder build_autoencoder(const AutoencoderConfig& cfg) {
    if (cfg.hidden.empty()) throw Error("build_autoencoder: need at least one hidden width");
    std::vector<std::size_t> widths;
    widths.push_back(cfg.input_size);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.input_size);
    Autoencoder ae;
    ae.network = make_network(widths, cfg.hidden_activation, cfg.output_activation, cfg.seed);
    ae.bottleneck_layer = ae.network.depth() / 2;
    ae.network.freeze_all_except(ae.bottleneck_layer);
    return ae;
}

struct PretrainConfig {
    std::size_t epochs = 300;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

/// Trains every layer on `frames` (raw feature rows; the normaliser is fitted
/// here when the autoencoder has none) and restores the bottleneck-only
/// freeze mask afterwards. Per-epoch losses go to `history` when given.
inline Autoencoder pretrain(Autoencoder ae, const Matrix& frames, const PretrainConfig& cfg,
                            std::vector<double>* history = nullptr) {
    if (frames.rows() == 0) throw Error("pretrain: empty dataset");
    if (frames.cols() != ae.network.input_size()) throw DimensionError("pretrain: feature width mismatch");
    if (ae.normalizer.empty()) ae.normalizer = FeatureNormalizer::fit(frames);
    if (cfg.epochs == 0) return ae;

    const Matrix data = ae.normalizer.apply(frames);
    ae.network.unfreeze_all();
    const auto losses = fit(ae.network, data, data, {cfg.epochs, cfg.learning_rate, cfg.batch_size, cfg.seed, Loss::mse});
    ae.network.freeze_all_except(ae.bottleneck_layer);
    ae.final_loss = losses.back();
    ae.epochs_trained += cfg.epochs;
    if (history) *history = losses;
    return ae;
}

}  // namespace ucfl

#endif  // UCFL_AUTOENCODER_HPP
