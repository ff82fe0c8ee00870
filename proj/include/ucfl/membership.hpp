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

#ifndef UCFL_MEMBERSHIP_HPP
#define UCFL_MEMBERSHIP_HPP

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "ucfl/cfl_server.hpp"
#include "ucfl/core.hpp"

namespace ucfl {

/// Mean intra-cluster (q) and inter-cluster (r) similarity of each member,
/// in the order of `cluster`.
struct IntraInter {
    std::vector<double> q;
    std::vector<double> r;
};

/// `cluster` holds node ids of `a`; every other node of `a` is exterior.
inline IntraInter intra_inter(const SimilarityMatrix& a, std::span<const std::size_t> cluster) {
    const std::size_t m = a.size();
    if (cluster.size() < 2) throw Error("intra_inter: cluster needs at least 2 members");
    if (cluster.size() >= m) throw Error("intra_inter: cluster covers every node, inter-cluster similarity undefined");
    std::vector<bool> inside(m, false);
    std::vector<std::size_t> idx;
    for (auto id : cluster) {
        const std::size_t i = a.index_of(id);
        if (inside[i]) throw Error("intra_inter: duplicate member");
        inside[i] = true;
        idx.push_back(i);
    }
    IntraInter out;
    for (auto i : idx) {
        double q = 0.0, r = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            (inside[j] ? q : r) += a(i, j);
        }
        out.q.push_back(q / static_cast<double>(cluster.size() - 1));
        out.r.push_back(r / static_cast<double>(m - cluster.size()));
    }
    return out;
}

/// (x - min) / (max - min); a constant vector maps to zeros.
inline std::vector<double> min_max_normalize(std::span<const double> x) {
    std::vector<double> out(x.size(), 0.0);
    if (x.empty()) return out;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - *lo) / range;
    return out;
}

/// p = lambda * norm(q) + (1 - lambda) * norm(r).
inline std::vector<double> balance(std::span<const double> q, std::span<const double> r, double lambda) {
    if (q.size() != r.size()) throw DimensionError("balance: q and r differ in length");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("balance: lambda must lie in [0, 1]");
    const auto qn = min_max_normalize(q);
    const auto rn = min_max_normalize(r);
    std::vector<double> p(q.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = lambda * qn[i] + (1.0 - lambda) * rn[i];
    return p;
}

struct MembershipVector {
    std::size_t cluster_id = 0;
    std::vector<double> values;  // one per node of the similarity matrix
    std::size_t reference_node = 0;
    double lambda = 0.0;
    double threshold = 0.0;

    std::size_t nonzero_count() const {
        return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return v > 0.0; }));
    }
};

/// Picks the member with the smallest balanced score p as reference node
/// (lowest id on ties), min-max normalises its similarity row over all nodes
/// and zeroes every value <= v. A singleton cluster uses its only member as
/// reference; a cluster spanning every node ranks members by q alone.
inline MembershipVector membership_values(const SimilarityMatrix& a, std::span<const std::size_t> cluster,
                                          double lambda, double v, std::size_t cluster_id = 0) {
    if (cluster.empty()) throw Error("membership_values: empty cluster");
    if (!(v >= 0.0 && v <= 1.0)) throw Error("membership_values: threshold must lie in [0, 1]");
    MembershipVector mv;
    mv.cluster_id = cluster_id;
    mv.lambda = lambda;
    mv.threshold = v;

    std::vector<double> p;
    if (cluster.size() == 1) {
        p = {0.0};
    } else if (cluster.size() == a.size()) {
        std::vector<double> q;
        for (auto id : cluster) {
            const std::size_t i = a.index_of(id);
            double s = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j)
                if (j != i) s += a(i, j);
            q.push_back(s / static_cast<double>(a.size() - 1));
        }
        p = min_max_normalize(q);
    } else {
        const auto qr = intra_inter(a, cluster);
        p = balance(qr.q, qr.r, lambda);
    }

    std::size_t best = 0;
    for (std::size_t k = 1; k < cluster.size(); ++k)
        if (p[k] < p[best] || (p[k] == p[best] && cluster[k] < cluster[best])) best = k;
    mv.reference_node = cluster[best];

    const std::size_t ref = a.index_of(mv.reference_node);
    std::vector<double> row(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) row[j] = a(ref, j);
    mv.values = min_max_normalize(row);
    // The diagonal entry is the row maximum, so the reference maps to 1 unless
    // the row is constant.
    mv.values[ref] = 1.0;
    for (std::size_t j = 0; j < a.size(); ++j)
        if (j != ref && mv.values[j] <= v) mv.values[j] = 0.0;
    return mv;
}

/// Default balance weight: intra-cluster information helps when at most two
/// clusters exist; with more, inter-cluster similarity alone is used.
inline double default_lambda(std::size_t cluster_count) { return cluster_count <= 2 ? 0.5 : 0.0; }

}  // namespace ucfl

#endif  // UCFL_MEMBERSHIP_HPP
