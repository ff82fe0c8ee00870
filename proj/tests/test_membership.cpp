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
#include <random>

#include "checks.hpp"
#include "oracles.hpp"
#include "ucfl/membership.hpp"

using namespace ucfl;

namespace {

SimilarityMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    SimilarityMatrix a;
    a.entries = Matrix(rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        a.node_ids.push_back(i);
        for (std::size_t j = 0; j < rows.size(); ++j) a.entries(i, j) = rows[i][j];
    }
    return a;
}

}  // namespace

TEST(IntraInter, PairUsesTheOtherMember) {
    const auto a = from_rows({{1, 0.7, 0.4}, {0.7, 1, 0.2}, {0.4, 0.2, 1}});
    const std::vector<std::size_t> c{0, 1};
    const auto qr = intra_inter(a, c);
    EXPECT_DOUBLE_EQ(qr.q[0], 0.7);
    EXPECT_DOUBLE_EQ(qr.q[1], 0.7);
    EXPECT_DOUBLE_EQ(qr.r[0], 0.4);
    EXPECT_DOUBLE_EQ(qr.r[1], 0.2);
}

TEST(IntraInter, MatchesBruteForce) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = checks::random_similarity(6, rng);
        const auto rows = checks::as_rows(a);
        std::vector<bool> in(6, false);
        std::vector<std::size_t> c;
        for (std::size_t i = 0; i < 6; ++i)
            if ((rng() & 1) != 0) {
                in[i] = true;
                c.push_back(i);
            }
        if (c.size() < 2 || c.size() == 6) continue;
        const auto qr = intra_inter(a, c);
        for (std::size_t k = 0; k < c.size(); ++k) {
            const auto [q, r] = oracle::intra_inter(rows, in, c[k]);
            EXPECT_NEAR(qr.q[k], q, 1e-12);
            EXPECT_NEAR(qr.r[k], r, 1e-12);
        }
    }
}

TEST(IntraInter, Errors) {
    const auto a = from_rows({{1, 0.7, 0.4}, {0.7, 1, 0.2}, {0.4, 0.2, 1}});
    const std::vector<std::size_t> all{0, 1, 2}, one{1};
    EXPECT_THROW(intra_inter(a, all), Error);
    EXPECT_THROW(intra_inter(a, one), Error);
}

TEST(Balance, Examples) {
    const std::vector<double> q{0.2, 0.6, 0.4}, r{-0.1, 0.3, 0.1};
    EXPECT_EQ(balance(q, r, 0.0), min_max_normalize(r));
    EXPECT_EQ(balance(q, r, 1.0), min_max_normalize(q));
    const std::vector<double> qn{0.0, 1.0}, rn{1.0, 0.0};
    EXPECT_EQ(balance(qn, rn, 0.5), (std::vector<double>{0.5, 0.5}));
    EXPECT_THROW(balance(q, r, 1.5), Error);
    EXPECT_THROW(balance(q, qn, 0.5), DimensionError);
}

TEST(Balance, ConstantTermNormalizesToZeros) {
    const std::vector<double> q{0.3, 0.3, 0.3}, r{0.0, 1.0, 0.5};
    EXPECT_EQ(min_max_normalize(q), (std::vector<double>{0.0, 0.0, 0.0}));
    EXPECT_EQ(balance(q, r, 0.5), (std::vector<double>{0.0, 0.5, 0.25}));
}

TEST(Membership, ReferenceMapsToOne) {
    std::mt19937_64 rng(3);
    const auto a = checks::random_similarity(7, rng);
    const std::vector<std::size_t> c{1, 3, 4};
    const auto mv = membership_values(a, c, 0.5, 0.0);
    EXPECT_EQ(mv.values[mv.reference_node], 1.0);
    EXPECT_NE(std::find(c.begin(), c.end(), mv.reference_node), c.end());
    for (double v : mv.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Membership, ThresholdOneKeepsOnlyReference) {
    std::mt19937_64 rng(4);
    const auto a = checks::random_similarity(6, rng);
    const std::vector<std::size_t> c{0, 2};
    const auto mv = membership_values(a, c, 0.5, 1.0);
    EXPECT_EQ(mv.nonzero_count(), 1u);
    EXPECT_EQ(mv.values[mv.reference_node], 1.0);
}

TEST(Membership, ThresholdZeroesValuesAtOrBelowV) {
    // Reference row (1, 0.9, 0.8, 0.3) is already min-max normalized for
    // node 0 once a zero entry is present; node 4 carries the minimum.
    const auto a = from_rows({{1.0, 0.9, 0.8, 0.3, 0.0},
                              {0.9, 1.0, 0.5, 0.2, 0.1},
                              {0.8, 0.5, 1.0, 0.4, 0.3},
                              {0.3, 0.2, 0.4, 1.0, 0.6},
                              {0.0, 0.1, 0.3, 0.6, 1.0}});
    const std::vector<std::size_t> c{0, 1, 2};
    // With lambda = 0 the reference is the member least similar to the exterior.
    const auto mv = membership_values(a, c, 0.0, 0.8);
    EXPECT_EQ(mv.reference_node, 0u);
    EXPECT_EQ(mv.values, (std::vector<double>{1.0, 0.9, 0.0, 0.0, 0.0}));
}

TEST(Membership, ReferenceIsArgminOfBalance) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = checks::random_similarity(8, rng);
        const std::vector<std::size_t> c{1, 2, 5, 6};
        const double lambda = (trial % 5) / 4.0;
        const auto qr = intra_inter(a, c);
        const auto p = balance(qr.q, qr.r, lambda);
        const auto k = static_cast<std::size_t>(std::min_element(p.begin(), p.end()) - p.begin());
        EXPECT_EQ(membership_values(a, c, lambda, 0.8).reference_node, c[k]);
    }
}

TEST(Membership, MonotoneInThreshold) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = checks::random_similarity(9, rng);
        const std::vector<std::size_t> c{0, 4, 7};
        std::size_t previous = 10;
        for (double v : {0.0, 0.25, 0.5, 0.8, 0.9, 1.0}) {
            const auto n = membership_values(a, c, 0.5, v).nonzero_count();
            EXPECT_LE(n, previous);
            previous = n;
        }
    }
}

TEST(Membership, AffineShiftOfSimilaritiesKeepsReference) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = checks::random_similarity(7, rng);
        const std::vector<std::size_t> c{0, 3, 5};
        const auto before = membership_values(a, c, 0.5, 0.8);
        for (double& v : a.entries.data()) v = 0.5 * v + 0.2;
        const auto after = membership_values(a, c, 0.5, 0.8);
        EXPECT_EQ(before.reference_node, after.reference_node);
        for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(before.values[j], after.values[j], 1e-12);
    }
}

TEST(Membership, NodeOrderIndependent) {
    std::mt19937_64 rng(8);
    const auto a = checks::random_similarity(6, rng);
    // Same matrix with nodes listed in reverse.
    SimilarityMatrix b;
    b.entries = Matrix(6, 6);
    for (std::size_t i = 0; i < 6; ++i) {
        b.node_ids.push_back(5 - i);
        for (std::size_t j = 0; j < 6; ++j) b.entries(i, j) = a(5 - i, 5 - j);
    }
    const std::vector<std::size_t> c{1, 2, 4};
    const auto ma = membership_values(a, c, 0.5, 0.5);
    const auto mb = membership_values(b, c, 0.5, 0.5);
    EXPECT_EQ(ma.reference_node, mb.reference_node);
    for (std::size_t id = 0; id < 6; ++id) EXPECT_NEAR(ma.values[id], mb.values[5 - id], 1e-15);
}

TEST(Membership, SingletonAndWholeNetworkClusters) {
    std::mt19937_64 rng(9);
    const auto a = checks::random_similarity(5, rng);
    const std::vector<std::size_t> single{3};
    EXPECT_EQ(membership_values(a, single, 0.5, 0.8).reference_node, 3u);
    const std::vector<std::size_t> all{0, 1, 2, 3, 4};
    const auto mv = membership_values(a, all, 0.5, 0.8);
    EXPECT_EQ(mv.values[mv.reference_node], 1.0);
    EXPECT_THROW(membership_values(a, std::vector<std::size_t>{}, 0.5, 0.8), Error);
    EXPECT_THROW(membership_values(a, single, 0.5, 1.2), Error);
}

TEST(Membership, DefaultLambda) {
    EXPECT_EQ(default_lambda(1), 0.5);
    EXPECT_EQ(default_lambda(2), 0.5);
    EXPECT_EQ(default_lambda(3), 0.0);
}
