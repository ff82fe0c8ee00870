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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "checks.hpp"
#include "oracles.hpp"
#include "ucfl/cfl.hpp"
#include "ucfl/cfl_server.hpp"

using namespace ucfl;

namespace {

WeightDelta delta(std::size_t id, std::vector<double> v) { return {id, std::move(v)}; }

/// Client whose update points along its group's direction with a little
/// per-round jitter, shrinking as rounds go by.
struct DirectionClient {
    std::size_t id_ = 0;
    std::vector<double> direction;
    double scale = 1.0;

    std::size_t id() const { return id_; }
    WeightDelta train_round(const DenseNetwork& model, const RoundContext& ctx) const {
        std::mt19937_64 rng(derive_seed(id_, ctx.cluster_key, ctx.round));
        std::normal_distribution<double> g(0.0, 0.05);
        WeightDelta d;
        d.client_id = id_;
        const double shrink = scale / (1.0 + 0.1 * static_cast<double>(ctx.round));
        for (double v : direction) d.values.push_back(shrink * (v + g(rng)));
        d.values.resize(model.trainable_parameter_count(), 0.0);
        return d;
    }
};

DenseNetwork tiny_model() {
    const std::size_t widths[] = {4, 3, 4};
    auto net = make_network(widths, Activation::relu, Activation::linear, 1);
    net.freeze_all_except(0);
    return net;
}

std::vector<DirectionClient> grouped_clients(std::vector<std::vector<double>> dirs, std::vector<std::size_t> group,
                                             double scale = 1.0) {
    std::vector<DirectionClient> out;
    for (std::size_t i = 0; i < group.size(); ++i) out.push_back({i, dirs[group[i]], scale});
    return out;
}

std::vector<double> unit(std::size_t k, std::size_t len = 15) {
    std::vector<double> v(len, 0.0);
    v[k] = 1.0;
    return v;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST(Similarity, Examples) {
    const std::vector<WeightDelta> d{delta(0, {1, 0}), delta(1, {0, 2}), delta(2, {-3, 0}), delta(3, {1, 1})};
    const auto a = cosine_similarity_matrix(d);
    EXPECT_DOUBLE_EQ(a(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(a(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(a(0, 2), -1.0);
    EXPECT_NEAR(a(0, 3), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_EQ(a(1, 3), a(3, 1));
    EXPECT_EQ(a.node_ids, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Similarity, PairExamples) {
    auto pair = [](std::vector<double> x, std::vector<double> y) {
        return cosine_similarity_matrix(std::vector<WeightDelta>{delta(0, x), delta(1, y)})(0, 1);
    };
    EXPECT_DOUBLE_EQ(pair({1, 0}, {0, 1}), 0.0);
    EXPECT_NEAR(pair({1, 1}, {2, 2}), 1.0, 1e-15);
    EXPECT_NEAR(pair({1, 1}, {1, 0}), 0.70711, 1e-5);
}

TEST(Similarity, ScaleInvariant) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    std::vector<WeightDelta> d, scaled;
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> v(72);
        for (double& x : v) x = g(rng);
        d.push_back(delta(i, v));
        for (double& x : v) x *= 1e-6 * static_cast<double>(i + 1);
        scaled.push_back(delta(i, v));
    }
    const auto a = cosine_similarity_matrix(d), b = cosine_similarity_matrix(scaled);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a(i, j), b(i, j), 1e-12);
}

TEST(Similarity, ZeroNormRejected) {
    const std::vector<WeightDelta> d{delta(0, {1, 0}), delta(7, {0, 0})};
    try {
        cosine_similarity_matrix(d);
        FAIL();
    } catch (const ZeroNormDeltaError& e) {
        EXPECT_EQ(e.client_id, 7u);
    }
    EXPECT_THROW(cosine_similarity_matrix(std::vector<WeightDelta>{delta(0, {1})}), Error);
    EXPECT_THROW(cosine_similarity_matrix(std::vector<WeightDelta>{delta(0, {1}), delta(1, {1, 2})}), DimensionError);
}

TEST(Norms, Examples) {
    const std::vector<WeightDelta> opposite{delta(0, {3, 4}), delta(1, {-3, -4})};
    const auto n = congruence_norms(opposite);
    EXPECT_DOUBLE_EQ(n.mean_norm, 0.0);
    EXPECT_DOUBLE_EQ(n.max_norm, 5.0);
    EXPECT_DOUBLE_EQ(n.ratio(), 0.0);
    const std::vector<WeightDelta> same{delta(0, {3, 4}), delta(1, {6, 8})};
    const auto s = congruence_norms(same);
    EXPECT_DOUBLE_EQ(s.mean_norm, 7.5);
    EXPECT_DOUBLE_EQ(s.max_norm, 10.0);
    const auto single = congruence_norms(std::vector<WeightDelta>{delta(0, {3, 4})});
    EXPECT_DOUBLE_EQ(single.mean_norm, 5.0);
    EXPECT_DOUBLE_EQ(single.max_norm, 5.0);
    const auto orth = congruence_norms(std::vector<WeightDelta>{delta(0, {1, 0}), delta(1, {0, 1})});
    EXPECT_NEAR(orth.mean_norm, 0.70711, 1e-5);
    EXPECT_DOUBLE_EQ(orth.max_norm, 1.0);
    const std::vector<WeightDelta> zeros{delta(0, {0, 0}), delta(1, {0, 0})};
    EXPECT_DOUBLE_EQ(congruence_norms(zeros).ratio(), 1.0);
}

TEST(Aggregate, AddsMeanDelta) {
    DenseNetwork net = tiny_model();
    const auto before = flatten_trainable(net).values;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    std::vector<WeightDelta> d;
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> v(before.size());
        for (double& x : v) x = g(rng);
        d.push_back(delta(i, v));
    }
    const auto after = flatten_trainable(aggregate(d, net)).values;
    for (std::size_t k = 0; k < before.size(); ++k) {
        double mean = 0.0;
        for (const auto& x : d) mean += x.values[k];
        EXPECT_NEAR(after[k], before[k] + mean / 5.0, 1e-12);
    }
}

TEST(Aggregate, SingleClientAddsItsDelta) {
    DenseNetwork net = tiny_model();
    auto theta = flatten_trainable(net).values;
    std::vector<double> v(theta.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = 0.01 * static_cast<double>(k);
    const auto after = flatten_trainable(aggregate(std::vector<WeightDelta>{delta(0, v)}, net)).values;
    for (std::size_t k = 0; k < v.size(); ++k) EXPECT_DOUBLE_EQ(after[k], theta[k] + v[k]);
}

TEST(Aggregate, OppositeDeltasCancelAndFrozenLayersStay) {
    DenseNetwork net = tiny_model();
    std::vector<double> v(net.trainable_parameter_count(), 0.25);
    std::vector<double> w(v.size(), -0.25);
    const std::vector<WeightDelta> d{delta(0, v), delta(1, w)};
    EXPECT_EQ(aggregate(d, net), net);
    EXPECT_THROW(aggregate(std::vector<WeightDelta>{delta(0, {1.0})}, net), DimensionError);
    EXPECT_THROW(aggregate(std::vector<WeightDelta>{}, net), Error);
}

TEST(SplitDecision, Eps1FixedAtRoundZero) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1, 2, 3};
    split_decision(s, {1.0, 3.0}, cfg);
    EXPECT_DOUBLE_EQ(*s.eps1, 0.5 * 1.0 + 0.5 * 3.0);
    split_decision(s, {10.0, 30.0}, cfg);
    EXPECT_DOUBLE_EQ(*s.eps1, 2.0);
    EXPECT_EQ(s.round, 2u);
}

TEST(SplitDecision, NoSplitBeforeMinRounds) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1, 2, 3};
    EXPECT_EQ(split_decision(s, {1.0, 1.0}, cfg), Decision::continue_training);
    for (int r = 1; r <= 2; ++r) EXPECT_EQ(split_decision(s, {0.1, 1.0}, cfg), Decision::continue_training);
    EXPECT_EQ(split_decision(s, {0.1, 1.0}, cfg), Decision::split);
}

TEST(SplitDecision, RatioAboveEps2KeepsTraining) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1, 2, 3};
    split_decision(s, {1.0, 1.0}, cfg);
    for (int r = 1; r <= 2; ++r) split_decision(s, {0.9, 1.0}, cfg);
    // Rounds 3, 4 are tolerated (counter 1, 2); round 5 exceeds eps3.
    EXPECT_EQ(split_decision(s, {0.9, 1.0}, cfg), Decision::continue_training);
    EXPECT_EQ(split_decision(s, {0.9, 1.0}, cfg), Decision::continue_training);
    EXPECT_EQ(split_decision(s, {0.9, 1.0}, cfg), Decision::stop);
}

TEST(SplitDecision, MeanAboveEps1KeepsTraining) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1, 2, 3};
    split_decision(s, {1.0, 1.0}, cfg);
    for (int r = 1; r <= 2; ++r) split_decision(s, {1.0, 1.0}, cfg);
    // ratio 0.5 <= eps2 but mean 2 > eps1 = 1.
    EXPECT_EQ(split_decision(s, {2.0, 4.0}, cfg), Decision::continue_training);
}

TEST(SplitDecision, IdenticalUpdatesNeverSplit) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1, 2, 3};
    for (int r = 0; r < 6; ++r) EXPECT_NE(split_decision(s, {0.5, 0.5}, cfg), Decision::split);
}

TEST(SplitDecision, PairsNeverSplit) {
    CflConfig cfg;
    ClusterState s;
    s.members = {0, 1};
    split_decision(s, {1.0, 1.0}, cfg);
    for (int r = 1; r <= 3; ++r) EXPECT_NE(split_decision(s, {0.0, 1.0}, cfg), Decision::split);
}

TEST(SplitDecision, MaxRoundsStops) {
    CflConfig cfg;
    cfg.max_rounds = 2;
    ClusterState s;
    s.members = {0, 1, 2};
    EXPECT_EQ(split_decision(s, {1.0, 1.0}, cfg), Decision::continue_training);
    EXPECT_EQ(split_decision(s, {1.0, 1.0}, cfg), Decision::stop);
    EXPECT_EQ(to_string(Decision::split), "split");
}

TEST(Bipartition, BlockMatrix) {
    SimilarityMatrix a;
    a.node_ids = {10, 11, 12, 13, 14};
    a.entries = Matrix(5, 5, 0.1);
    const std::vector<std::size_t> g{0, 1, 0, 1, 1};
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            if (g[i] == g[j]) a.entries(i, j) = i == j ? 1.0 : 0.9;
    const auto [c1, c2] = bipartition(a);
    EXPECT_EQ(c1, (std::vector<std::size_t>{10, 12}));
    EXPECT_EQ(c2, (std::vector<std::size_t>{11, 13, 14}));
}

TEST(Bipartition, ThreeNodes) {
    SimilarityMatrix a;
    a.node_ids = {0, 1, 2};
    a.entries = Matrix(3, 3, 1.0);
    a.entries(0, 1) = a.entries(1, 0) = 0.9;
    a.entries(0, 2) = a.entries(2, 0) = 0.2;
    a.entries(1, 2) = a.entries(2, 1) = 0.3;
    const auto [c1, c2] = bipartition(a);
    EXPECT_EQ(c1, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(c2, (std::vector<std::size_t>{2}));
    EXPECT_DOUBLE_EQ(max_inter_similarity(a, c1, c2), 0.3);
}

TEST(Bipartition, OptimalAgainstExhaustiveSearch) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = checks::random_similarity(8, rng, trial % 2 == 1);
        const auto [c1, c2] = bipartition(a);
        ASSERT_FALSE(c1.empty());
        ASSERT_FALSE(c2.empty());
        ASSERT_EQ(c1.size() + c2.size(), 8u);
        EXPECT_DOUBLE_EQ(max_inter_similarity(a, c1, c2), oracle::exhaustive_min_max_inter(checks::as_rows(a)));
    }
}

TEST(Bipartition, TiesBreakDeterministically) {
    // Every edge of the star-shaped spanning tree is equally weak; the cut
    // with the lexicographically smallest side wins.
    SimilarityMatrix a;
    a.node_ids = {0, 1, 2, 3};
    a.entries = Matrix(4, 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) a.entries(i, i) = 1.0;
    const auto [c1, c2] = bipartition(a);
    EXPECT_EQ(c1, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(c2, (std::vector<std::size_t>{3}));
    EXPECT_EQ(bipartition(a), std::make_pair(c1, c2));
    EXPECT_THROW(bipartition(SimilarityMatrix{{0}, Matrix(1, 1, 1.0)}), Error);
}

TEST(Server, SeparatesOpposedGroups) {
    const auto clients = grouped_clients({unit(0), unit(1)}, {0, 1, 0, 1, 1, 0});
    CflConfig cfg;
    const auto r = run_cfl_server(std::span<const DirectionClient>(clients), tiny_model(), 0, cfg);
    const auto leaves = r.tree.leaves();
    ASSERT_EQ(leaves.size(), 2u);
    EXPECT_EQ(sorted(leaves[0]), (std::vector<std::size_t>{0, 2, 5}));
    EXPECT_EQ(sorted(leaves[1]), (std::vector<std::size_t>{1, 3, 4}));
    ASSERT_TRUE(r.similarity.has_value());
    EXPECT_EQ(r.similarity->size(), 6u);
    EXPECT_FALSE(r.trace.empty());
    EXPECT_EQ(r.trace.front().cluster, "r");
}

TEST(Server, CongruentClientsStayTogether) {
    const auto clients = grouped_clients({unit(0)}, {0, 0, 0, 0, 0});
    const auto r = run_cfl_server(std::span<const DirectionClient>(clients), tiny_model(), 0, CflConfig{});
    EXPECT_EQ(r.tree.leaves().size(), 1u);
    EXPECT_EQ(r.tree.nodes[0].rounds, 2u + 2u + 2u);
}

TEST(Server, LeavesPartitionClients) {
    const auto clients = grouped_clients({unit(0), unit(1), unit(2), unit(3)}, {0, 1, 2, 3, 0, 1, 2, 3, 0, 1});
    const auto r = run_cfl_server(std::span<const DirectionClient>(clients), tiny_model(), 0, CflConfig{});
    std::vector<std::size_t> all;
    for (const auto& leaf : r.tree.leaves()) all.insert(all.end(), leaf.begin(), leaf.end());
    EXPECT_EQ(sorted(all), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    EXPECT_GE(r.tree.leaves().size(), 2u);
}

TEST(Server, InvariantToUpdateScale) {
    const std::vector<std::size_t> groups{0, 1, 2, 0, 1, 2, 0, 1};
    const auto a = grouped_clients({unit(0), unit(1), unit(2)}, groups, 1.0);
    const auto b = grouped_clients({unit(0), unit(1), unit(2)}, groups, 1e-4);
    const auto ra = run_cfl_server(std::span<const DirectionClient>(a), tiny_model(), 0, CflConfig{});
    const auto rb = run_cfl_server(std::span<const DirectionClient>(b), tiny_model(), 0, CflConfig{});
    EXPECT_EQ(ra.tree.leaves(), rb.tree.leaves());
}

TEST(Server, ZeroMaxRoundsGivesSingleLeaf) {
    const auto clients = grouped_clients({unit(0), unit(1)}, {0, 1, 0, 1});
    CflConfig cfg;
    cfg.max_rounds = 0;
    const auto r = run_cfl_server(std::span<const DirectionClient>(clients), tiny_model(), 0, cfg);
    EXPECT_EQ(r.tree.leaves().size(), 1u);
    EXPECT_FALSE(r.similarity.has_value());
    EXPECT_TRUE(r.trace.empty());
}

TEST(Server, RejectsBadInput) {
    const std::vector<DirectionClient> none;
    EXPECT_THROW(run_cfl_server(std::span<const DirectionClient>(none), tiny_model(), 0, CflConfig{}), Error);
    const auto clients = grouped_clients({unit(0)}, {0, 0});
    EXPECT_THROW(run_cfl_server(std::span<const DirectionClient>(clients), tiny_model(), 5, CflConfig{}), Error);
}

TEST(LocalUpdate, ZeroEpochsGivesZeroDelta) {
    const auto ae = build_autoencoder({});
    const auto feats = checks::contract_clients(1, true, 3, 1.0)[0];
    LocalTrainingConfig cfg;
    cfg.local_epochs = 0;
    const auto d = local_update(feats, ae.network, cfg, 1);
    EXPECT_EQ(d.values, std::vector<double>(72, 0.0));
}

TEST(LocalUpdate, DeterministicAndSized) {
    const auto ae = build_autoencoder({});
    const auto feats = checks::contract_clients(1, true, 3, 1.0)[0];
    const auto a = local_update(feats, ae.network, {}, 5);
    EXPECT_EQ(a.values.size(), 72u);
    EXPECT_GT(a.norm(), 0.0);
    EXPECT_EQ(a, local_update(feats, ae.network, {}, 5));
    EXPECT_NE(a, local_update(feats, ae.network, {}, 6));
}

TEST(LocalUpdate, MatchesFullNetworkTraining) {
    const auto ae = build_autoencoder({});
    auto feats = checks::contract_clients(1, true, 4, 1.0)[0];
    LocalTrainingConfig cfg;
    cfg.batch_size = 1000000;
    const auto d = local_update(feats, ae.network, cfg, 1);
    std::vector<TrainingPair> batch;
    for (std::size_t r = 0; r < feats.values.rows(); ++r) batch.push_back({feats.values.row(r), feats.values.row(r)});
    const auto stepped = sgd_step(ae.network, batch, cfg.learning_rate);
    const auto before = flatten_trainable(ae.network).values, after = flatten_trainable(stepped).values;
    for (std::size_t k = 0; k < d.values.size(); ++k) EXPECT_NEAR(d.values[k], after[k] - before[k], 1e-12);
}

TEST(LocalUpdate, RejectsBadInput) {
    const auto ae = build_autoencoder({});
    LmbeMatrix empty;
    empty.values = Matrix(0, 128);
    EXPECT_THROW(local_update(empty, ae.network, {}, 1), Error);
    LmbeMatrix narrow;
    narrow.values = Matrix(4, 64);
    EXPECT_THROW(local_update(narrow, ae.network, {}, 1), DimensionError);
}

TEST(RunCfl, DeterministicAndPartitioning) {
    const auto x = checks::contract_clients(6, false, 9, 2.0);
    auto ae = build_autoencoder({});
    ae.normalizer = FeatureNormalizer::fit(x[0].values);
    CflConfig cfg;
    cfg.max_rounds = 6;
    const auto a = run_cfl(x, ae, cfg, {}, 3);
    const auto b = run_cfl(x, ae, cfg, {}, 3);
    EXPECT_EQ(a.tree.leaves(), b.tree.leaves());
    EXPECT_EQ(a.final_deltas, b.final_deltas);
    std::vector<std::size_t> ids;
    for (const auto& leaf : a.tree.leaves()) ids.insert(ids.end(), leaf.begin(), leaf.end());
    EXPECT_EQ(sorted(ids), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    for (const auto& d : a.final_deltas) EXPECT_EQ(d.values.size(), 72u);
}
