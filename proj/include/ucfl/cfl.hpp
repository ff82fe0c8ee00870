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

#ifndef UCFL_CFL_HPP
#define UCFL_CFL_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "ucfl/autoencoder.hpp"
#include "ucfl/cfl_server.hpp"
#include "ucfl/core.hpp"
#include "ucfl/features.hpp"
#include "ucfl/nn.hpp"

namespace ucfl {

struct LocalTrainingConfig {
    double learning_rate = 0.02;
    std::size_t batch_size = 32;
    std::size_t local_epochs = 1;  // passes over the client's frames per round
};

namespace detail {

// Frozen layers below the first trainable one do not change during CFL, so
// their output is computed once per client.
struct PrefixCache {
    std::vector<DenseLayer> layers;
    Matrix outputs;
};

inline const Matrix& prefix_outputs(const Matrix& frames, const DenseNetwork& model, PrefixCache& cache) {
    const std::size_t split = model.first_trainable();
    const auto prefix = model.layers().first(split);
    if (!cache.outputs.empty() && std::equal(prefix.begin(), prefix.end(), cache.layers.begin(), cache.layers.end()))
        return cache.outputs;
    cache.layers.assign(prefix.begin(), prefix.end());
    if (split == 0) {
        cache.outputs = frames;
        return cache.outputs;
    }
    const std::size_t width = model.layer(split - 1).out();
    cache.outputs = Matrix(frames.rows(), width);
    for (std::size_t r = 0; r < frames.rows(); ++r) {
        const auto y = forward_range(model, frames.row(r), 0, split);
        std::copy(y.begin(), y.end(), cache.outputs.row(r).begin());
    }
    return cache.outputs;
}

inline WeightDelta local_update_impl(const Matrix& frames, const DenseNetwork& cluster_model,
                                     const LocalTrainingConfig& cfg, std::uint64_t seed, PrefixCache& cache) {
    if (frames.rows() == 0) throw Error("local_update: client has no data");
    if (frames.cols() != cluster_model.input_size()) throw DimensionError("local_update: feature width mismatch");
    if (cfg.batch_size == 0) throw Error("local_update: batch_size must be positive");
    const FlatParams before = flatten_trainable(cluster_model);
    WeightDelta delta;
    delta.values.assign(before.size(), 0.0);
    if (cfg.local_epochs == 0 || before.size() == 0) return delta;

    const std::size_t split = cluster_model.first_trainable();
    const Matrix& inputs = prefix_outputs(frames, cluster_model, cache);
    std::vector<DenseLayer> tail(cluster_model.layers().begin() + static_cast<std::ptrdiff_t>(split),
                                 cluster_model.layers().end());
    DenseNetwork suffix(std::move(tail));

    std::vector<std::size_t> order(frames.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::vector<TrainingPair> batch;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t k = start; k < end; ++k) batch.push_back({inputs.row(order[k]), frames.row(order[k])});
            apply_gradient(suffix, batch_gradient(suffix, batch, Loss::mse), cfg.learning_rate);
        }
    }
    const FlatParams after = flatten_trainable(suffix);
    for (std::size_t k = 0; k < after.size(); ++k) delta.values[k] = after.values[k] - before.values[k];
    return delta;
}

}  // namespace detail

/// Trains the unfrozen layers of `cluster_model` on `client_data` and returns
/// theta_after - theta_before. Only the update leaves this function.
inline WeightDelta local_update(const LmbeMatrix& client_data, const DenseNetwork& cluster_model,
                                const LocalTrainingConfig& cfg, std::uint64_t seed) {
    detail::PrefixCache cache;
    return detail::local_update_impl(client_data.values, cluster_model, cfg, seed, cache);
}

/// A sensor node holding its (normalised) features privately. The server can
/// only ask it for a round of training.
class FeatureClient {
public:
    FeatureClient(std::size_t id, const LmbeMatrix& features, const FeatureNormalizer& normalizer,
                  LocalTrainingConfig cfg, std::uint64_t seed)
        : id_(id), frames_(normalizer.apply(features.values)), cfg_(cfg), seed_(seed) {
        if (frames_.rows() == 0) throw Error("client " + std::to_string(id) + " has no frames");
    }

    std::size_t id() const noexcept { return id_; }

    WeightDelta train_round(const DenseNetwork& model, const RoundContext& ctx) const {
        WeightDelta d = detail::local_update_impl(frames_, model, cfg_, derive_seed(seed_, ctx.cluster_key, ctx.round),
                                                  cache_);
        d.client_id = id_;
        return d;
    }

private:
    std::size_t id_;
    Matrix frames_;
    LocalTrainingConfig cfg_;
    std::uint64_t seed_;
    mutable detail::PrefixCache cache_;
};

static_assert(FederatedClient<FeatureClient>);

/// Convenience wrapper: one client per feature matrix (ids 0..M-1), sharing
/// the autoencoder's normaliser.
inline CflResult run_cfl(std::span<const LmbeMatrix> clients, const Autoencoder& pretrained, const CflConfig& cfg,
                         const LocalTrainingConfig& local, std::uint64_t client_seed) {
    std::vector<FeatureClient> handles;
    handles.reserve(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i)
        handles.emplace_back(i, clients[i], pretrained.normalizer, local, derive_seed(client_seed, i));
    return run_cfl_server(std::span<const FeatureClient>(handles), pretrained.network, pretrained.bottleneck_layer, cfg);
}

}  // namespace ucfl

#endif  // UCFL_CFL_HPP
