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

// Property checks shared by the unit tests and the acceptance runner.

#ifndef UCFL_TESTS_CHECKS_HPP
#define UCFL_TESTS_CHECKS_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ucfl/autoencoder.hpp"
#include "ucfl/cfl.hpp"
#include "ucfl/cfl_server.hpp"
#include "ucfl/features.hpp"
#include "ucfl/nn.hpp"
#include "ucfl/scene.hpp"

namespace checks {

struct GradientCheck {
    std::size_t layer = 0;
    double relative_error = 0.0;
};

/// Analytic gradient of every layer vs central differences of the batch loss.
/// Error per layer is |g_a - g_fd| / max(|g_a|, |g_fd|) over the layer's parameters.
inline std::vector<GradientCheck> gradient_check(ucfl::DenseNetwork net, const ucfl::Matrix& x, const ucfl::Matrix& y,
                                                 ucfl::Loss loss) {
    net.unfreeze_all();
    std::vector<ucfl::TrainingPair> batch;
    for (std::size_t r = 0; r < x.rows(); ++r) batch.push_back({x.row(r), y.row(r)});
    const auto g = ucfl::batch_gradient(net, batch, loss);

    std::vector<GradientCheck> out;
    for (std::size_t li = 0; li < net.depth(); ++li) {
        ucfl::DenseNetwork only = net;
        only.freeze_all_except(li);
        const auto theta = ucfl::flatten_trainable(only).values;
        auto f = [&](const std::vector<double>& p) {
            const auto n = ucfl::unflatten_trainable(only, {p});
            return ucfl::dataset_loss(n, x, y, loss);
        };
        const auto fd = oracle::central_difference(f, theta, 1e-6);
        std::vector<double> an(g.layers[li].weights.data());
        an.insert(an.end(), g.layers[li].bias.begin(), g.layers[li].bias.end());
        double diff = 0.0, na = 0.0, nf = 0.0;
        for (std::size_t k = 0; k < an.size(); ++k) {
            diff += (an[k] - fd[k]) * (an[k] - fd[k]);
            na += an[k] * an[k];
            nf += fd[k] * fd[k];
        }
        const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-300});
        out.push_back({li, std::sqrt(diff) / denom});
    }
    return out;
}

inline ucfl::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    ucfl::Matrix m(rows, cols);
    for (double& v : m.data()) v = g(rng);
    return m;
}

/// Random symmetric similarity matrix in [-1, 1] with unit diagonal.
inline ucfl::SimilarityMatrix random_similarity(std::size_t m, std::mt19937_64& rng, bool coarse = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> level(-4, 4);
    ucfl::SimilarityMatrix a;
    a.entries = ucfl::Matrix(m, m, 1.0);
    for (std::size_t i = 0; i < m; ++i) a.node_ids.push_back(i);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = coarse ? level(rng) / 4.0 : u(rng);
            a.entries(i, j) = a.entries(j, i) = v;
        }
    return a;
}

inline std::vector<std::vector<double>> as_rows(const ucfl::SimilarityMatrix& a) {
    std::vector<std::vector<double>> rows(a.size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) rows[i][j] = a(i, j);
    return rows;
}

/// Feature matrices for `m` clients: one shared utterance (congruent) or two
/// groups with different source classes (incongruent; ids < m/2 are group 0).
inline std::vector<ucfl::LmbeMatrix> contract_clients(std::size_t m, bool congruent, std::uint64_t seed,
                                                      double seconds = 5.0) {
    std::vector<ucfl::LmbeMatrix> out;
    for (std::size_t i = 0; i < m; ++i) {
        const bool group1 = !congruent && i >= m / 2;
        auto sig = ucfl::make_source_signal(group1 ? "high-f0" : "low-f0", seconds, ucfl::derive_seed(seed, 1, group1));
        std::mt19937_64 rng(ucfl::derive_seed(seed, 2, i));
        std::normal_distribution<double> g(0.0, 0.005);
        for (double& v : sig.samples) v += g(rng);
        out.push_back(ucfl::lmbe(sig, 0.064, 0.032, 128));
    }
    return out;
}

/// True when the leaves are exactly {0..m/2-1} and {m/2..m-1}.
inline bool is_two_group_split(const std::vector<std::vector<std::size_t>>& leaves, std::size_t m) {
    if (leaves.size() != 2) return false;
    std::vector<std::size_t> g0, g1;
    for (std::size_t i = 0; i < m; ++i) (i < m / 2 ? g0 : g1).push_back(i);
    auto a = leaves[0], b = leaves[1];
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return (a == g0 && b == g1) || (a == g1 && b == g0);
}

}  // namespace checks

#endif  // UCFL_TESTS_CHECKS_HPP
