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

// Server side of clustered federated learning. This header deliberately
// depends only on the network and delta types: nothing here can name an
// audio signal or a feature matrix.

#ifndef UCFL_CFL_SERVER_HPP
#define UCFL_CFL_SERVER_HPP

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucfl/core.hpp"
#include "ucfl/nn.hpp"

namespace ucfl {

/// A client's flattened update of the trainable (bottleneck) parameters for one round.
struct WeightDelta {
    std::size_t client_id = 0;
    std::vector<double> values;

    double norm() const { return l2_norm(values); }
    friend bool operator==(const WeightDelta&, const WeightDelta&) = default;
};

/// Pairwise cosine similarities over a set of clients.
struct SimilarityMatrix {
    std::vector<std::size_t> node_ids;
    Matrix entries;

    std::size_t size() const noexcept { return node_ids.size(); }
    double operator()(std::size_t i, std::size_t j) const noexcept { return entries(i, j); }

    /// Position of `id` in node_ids.
    std::size_t index_of(std::size_t id) const {
        const auto it = std::find(node_ids.begin(), node_ids.end(), id);
        if (it == node_ids.end()) throw Error("similarity matrix has no node " + std::to_string(id));
        return static_cast<std::size_t>(it - node_ids.begin());
    }
};

class ZeroNormDeltaError : public Error {
public:
    explicit ZeroNormDeltaError(std::size_t client)
        : Error("client " + std::to_string(client) + " sent a zero-norm weight update"), client_id(client) {}
    std::size_t client_id;
};

/// A[i][j] = <d_i, d_j> / (|d_i| |d_j|).
inline SimilarityMatrix cosine_similarity_matrix(std::span<const WeightDelta> deltas) {
    if (deltas.size() < 2) throw Error("cosine_similarity_matrix: need at least 2 deltas");
    const std::size_t m = deltas.size();
    const std::size_t len = deltas.front().values.size();
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (deltas[i].values.size() != len) throw DimensionError("cosine_similarity_matrix: delta length mismatch");
        norms[i] = deltas[i].norm();
        if (!(norms[i] > 0.0)) throw ZeroNormDeltaError(deltas[i].client_id);
    }
    SimilarityMatrix a;
    a.entries = Matrix(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        a.node_ids.push_back(deltas[i].client_id);
        a.entries(i, i) = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) {
            const double c = std::clamp(dot(deltas[i].values, deltas[j].values) / (norms[i] * norms[j]), -1.0, 1.0);
            a.entries(i, j) = c;
            a.entries(j, i) = c;
        }
    }
    return a;
}

/// Mean-update norm |mean_i d_i| and maximum individual norm max_i |d_i|.
struct CongruenceNorms {
    double mean_norm = 0.0;
    double max_norm = 0.0;

    /// mean/max; defined as 1 when every update is zero (nothing to separate).
    double ratio() const noexcept { return max_norm > 0.0 ? mean_norm / max_norm : 1.0; }
};

inline CongruenceNorms congruence_norms(std::span<const WeightDelta> deltas) {
    if (deltas.empty()) throw Error("congruence_norms: no deltas");
    const std::size_t len = deltas.front().values.size();
    std::vector<double> mean(len, 0.0);
    CongruenceNorms n;
    for (const auto& d : deltas) {
        if (d.values.size() != len) throw DimensionError("congruence_norms: delta length mismatch");
        for (std::size_t k = 0; k < len; ++k) mean[k] += d.values[k];
        n.max_norm = std::max(n.max_norm, d.norm());
    }
    for (double& v : mean) v /= static_cast<double>(deltas.size());
    n.mean_norm = l2_norm(mean);
    return n;
}

/// Federated averaging: theta_c <- theta_c + mean(deltas).
inline DenseNetwork aggregate(std::span<const WeightDelta> deltas, DenseNetwork cluster_model) {
    if (deltas.empty()) throw Error("aggregate: no deltas");
    const std::size_t len = cluster_model.trainable_parameter_count();
    FlatParams theta = flatten_trainable(cluster_model);
    std::vector<double> sum(len, 0.0);
    for (const auto& d : deltas) {
        if (d.values.size() != len)
            throw DimensionError("aggregate: delta of client " + std::to_string(d.client_id) + " has length " +
                                 std::to_string(d.values.size()) + ", model has " + std::to_string(len));
        for (std::size_t k = 0; k < len; ++k) sum[k] += d.values[k];
    }
    const double inv = 1.0 / static_cast<double>(deltas.size());
    for (std::size_t k = 0; k < len; ++k) theta.values[k] += sum[k] * inv;
    return unflatten_trainable(std::move(cluster_model), theta);
}

struct CflConfig {
    double eps2 = 0.84;          // mean/max norm ratio threshold
    std::size_t eps3 = 2;        // allowed consecutive rounds without a split
    double beta = 0.5;           // eps1 = beta * mean + (1 - beta) * max at round 0
    std::size_t min_rounds = 2;  // congruence is tested only for rounds > min_rounds
    std::size_t max_rounds = 30; // per cluster
    std::uint64_t seed = 0;      // bottleneck re-initialisation
};

enum class Decision { continue_training, split, stop };

inline std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::continue_training: return "continue";
        case Decision::split: return "split";
        case Decision::stop: return "stop";
    }
    return "continue";
}

struct ClusterState {
    std::vector<std::size_t> members;
    DenseNetwork model;
    std::size_t round = 0;  // index of the round whose norms are evaluated next
    std::size_t no_split_rounds = 0;
    std::optional<double> eps1;
    std::vector<CongruenceNorms> history;
};

/// Records the norms of round `state.round` and decides what happens next.
/// eps1 is fixed from the round-0 norms. For rounds past min_rounds a cluster
/// of more than two clients splits when mean <= eps1 and mean/max <= eps2;
/// otherwise the no-split counter grows and training stops once it exceeds
/// eps3. Training also stops after max_rounds rounds. Advances state.round.
inline Decision split_decision(ClusterState& state, const CongruenceNorms& norms, const CflConfig& cfg) {
    state.history.push_back(norms);
    if (state.round == 0 || !state.eps1)
        state.eps1 = cfg.beta * norms.mean_norm + (1.0 - cfg.beta) * norms.max_norm;

    Decision d = Decision::continue_training;
    if (state.round > cfg.min_rounds) {
        const bool splittable = state.members.size() > 2;
        if (splittable && norms.mean_norm <= *state.eps1 && norms.ratio() <= cfg.eps2) {
            d = Decision::split;
        } else if (++state.no_split_rounds > cfg.eps3) {
            d = Decision::stop;
        }
    }
    if (d == Decision::continue_training && state.round + 1 >= cfg.max_rounds) d = Decision::stop;
    ++state.round;
    return d;
}

/// Bi-partition minimising the largest inter-cluster similarity.
///
/// Builds a maximum spanning tree of A (Prim, O(M^2)) and cuts one of its
/// weakest edges: the cut property makes that edge the strongest link across
/// the resulting partition, and no other partition can do better. Among
/// equally weak edges the partition whose smaller-ordered side is
/// lexicographically smallest wins. Returned sets hold node ids and c1 is the
/// lexicographically smaller side.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> bipartition(const SimilarityMatrix& a) {
    const std::size_t m = a.size();
    if (m < 2) throw Error("bipartition: need at least 2 nodes");

    std::vector<std::size_t> parent(m, m);
    std::vector<double> best(m, -std::numeric_limits<double>::infinity());
    std::vector<bool> in_tree(m, false);
    best[0] = std::numeric_limits<double>::infinity();
    for (std::size_t step = 0; step < m; ++step) {
        std::size_t u = m;
        for (std::size_t v = 0; v < m; ++v)
            if (!in_tree[v] && (u == m || best[v] > best[u])) u = v;
        in_tree[u] = true;
        for (std::size_t v = 0; v < m; ++v)
            if (!in_tree[v] && a(u, v) > best[v]) {
                best[v] = a(u, v);
                parent[v] = u;
            }
    }

    double weakest = std::numeric_limits<double>::infinity();
    for (std::size_t v = 1; v < m; ++v) weakest = std::min(weakest, a(v, parent[v]));

    std::optional<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> chosen;
    for (std::size_t cut = 1; cut < m; ++cut) {
        if (a(cut, parent[cut]) != weakest) continue;
        // Subtree below `cut` when the tree is rooted at 0.
        std::vector<bool> below(m, false);
        for (std::size_t v = 0; v < m; ++v) {
            std::size_t w = v;
            while (w != 0 && w != cut) w = parent[w];
            below[v] = (w == cut);
        }
        std::vector<std::size_t> s, t;
        for (std::size_t v = 0; v < m; ++v) (below[v] ? s : t).push_back(a.node_ids[v]);
        std::sort(s.begin(), s.end());
        std::sort(t.begin(), t.end());
        if (t < s) std::swap(s, t);
        if (!chosen || s < chosen->first) chosen = std::make_pair(std::move(s), std::move(t));
    }
    return std::move(*chosen);
}

/// Largest similarity between the two sides of a partition (given as node ids).
inline double max_inter_similarity(const SimilarityMatrix& a, std::span<const std::size_t> c1,
                                   std::span<const std::size_t> c2) {
    double worst = -std::numeric_limits<double>::infinity();
    for (auto i : c1)
        for (auto j : c2) worst = std::max(worst, a(a.index_of(i), a.index_of(j)));
    return worst;
}

// ---------------------------------------------------------------------------
// Federated loop

/// Identifies the training round a client is asked to run.
struct RoundContext {
    std::uint64_t cluster_key = 0;
    std::size_t round = 0;
};

/// The only thing a server may ask of a client: train the downloaded model
/// for one round and return the resulting update.
template <typename C>
concept FederatedClient = requires(const C& c, const DenseNetwork& model, const RoundContext& ctx) {
    { c.id() } -> std::convertible_to<std::size_t>;
    { c.train_round(model, ctx) } -> std::same_as<WeightDelta>;
};

struct TraceRecord {
    std::string cluster;  // path from the root: "r", "r0", "r01", ...
    std::size_t round = 0;
    std::size_t members = 0;
    double mean_norm = 0.0;
    double max_norm = 0.0;
    double ratio = 0.0;
    double eps1 = 0.0;
    Decision decision = Decision::continue_training;
};

struct ClusterNode {
    std::string path;
    std::vector<std::size_t> members;  // client ids, ascending
    std::optional<std::pair<std::size_t, std::size_t>> children;
    std::size_t rounds = 0;
    std::optional<double> eps1;
    std::vector<CongruenceNorms> history;
    DenseNetwork model;

    bool is_leaf() const noexcept { return !children.has_value(); }
};

/// Recursive partition of the clients. nodes[0] is the root.
struct ClusterTree {
    std::vector<ClusterNode> nodes;

    std::vector<std::size_t> leaf_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].is_leaf()) out.push_back(i);
        return out;
    }

    /// Member sets of the leaves in tree order.
    std::vector<std::vector<std::size_t>> leaves() const {
        std::vector<std::vector<std::size_t>> out;
        for (auto i : leaf_indices()) out.push_back(nodes[i].members);
        return out;
    }
};

struct CflResult {
    ClusterTree tree;
    /// Similarities over all M clients built from each client's update in the
    /// final round of its own leaf; absent when no round was run.
    std::optional<SimilarityMatrix> similarity;
    std::vector<WeightDelta> final_deltas;  // indexed by position in the client list
    std::vector<TraceRecord> trace;
};

namespace detail {

template <FederatedClient Client>
class CflServer {
public:
    CflServer(std::span<const Client> clients, const DenseNetwork& pretrained, std::size_t bottleneck,
              const CflConfig& cfg)
        : clients_(clients), pretrained_(pretrained), bottleneck_(bottleneck), cfg_(cfg) {
        if (bottleneck_ >= pretrained_.depth()) throw Error("run_cfl: bottleneck layer out of range");
        for (std::size_t k = 0; k < clients_.size(); ++k) position_.emplace_back(clients_[k].id(), k);
        std::sort(position_.begin(), position_.end());
    }

    CflResult run() {
        std::vector<std::size_t> all;
        for (const auto& c : clients_) all.push_back(c.id());
        std::sort(all.begin(), all.end());
        result_.final_deltas.resize(clients_.size());
        final_set_.assign(clients_.size(), false);
        process(std::move(all), "r", mix_seed(cfg_.seed));
        if (cfg_.max_rounds > 0 && clients_.size() >= 2 &&
            std::all_of(final_set_.begin(), final_set_.end(), [](bool b) { return b; }))
            result_.similarity = cosine_similarity_matrix(result_.final_deltas);
        return std::move(result_);
    }

private:
    const Client& client(std::size_t id) const {
        const auto it = std::lower_bound(position_.begin(), position_.end(), std::make_pair(id, std::size_t{0}));
        if (it == position_.end() || it->first != id) throw Error("run_cfl: unknown client id");
        return clients_[it->second];
    }

    std::size_t position_of(std::size_t id) const {
        return std::lower_bound(position_.begin(), position_.end(), std::make_pair(id, std::size_t{0}))->second;
    }

    std::size_t process(std::vector<std::size_t> members, std::string path, std::uint64_t key) {
        const std::size_t index = result_.tree.nodes.size();
        result_.tree.nodes.push_back({});
        result_.tree.nodes[index].path = path;
        result_.tree.nodes[index].members = members;

        ClusterState state;
        state.members = members;
        state.model = pretrained_;
        glorot_uniform_init(state.model.layer(bottleneck_), key);
        state.model.freeze_all_except(bottleneck_);

        // Clusters that can no longer split run a single round so that every
        // client contributes an update to the network-wide similarity matrix.
        CflConfig local = cfg_;
        if (members.size() <= 2) local.max_rounds = std::min<std::size_t>(cfg_.max_rounds, 1);

        std::vector<WeightDelta> deltas;
        Decision decision = Decision::stop;
        while (state.round < local.max_rounds) {
            deltas.clear();
            const RoundContext ctx{key, state.round};
            for (auto id : members) {
                WeightDelta d = client(id).train_round(state.model, ctx);
                d.client_id = id;
                deltas.push_back(std::move(d));
            }
            const CongruenceNorms norms = congruence_norms(deltas);
            const std::size_t round = state.round;
            decision = split_decision(state, norms, local);
            result_.trace.push_back(
                {path, round, members.size(), norms.mean_norm, norms.max_norm, norms.ratio(), *state.eps1, decision});
            if (decision == Decision::split) break;
            state.model = aggregate(deltas, std::move(state.model));
            if (decision == Decision::stop) break;
        }

        {
            auto& node = result_.tree.nodes[index];
            node.rounds = state.round;
            node.eps1 = state.eps1;
            node.history = state.history;
        }

        if (decision == Decision::split) {
            const auto [c1, c2] = bipartition(cosine_similarity_matrix(deltas));
            result_.tree.nodes[index].model = std::move(state.model);
            const std::size_t left = process(c1, path + "0", derive_seed(key, 0));
            const std::size_t right = process(c2, path + "1", derive_seed(key, 1));
            result_.tree.nodes[index].children = std::make_pair(left, right);
        } else {
            for (auto& d : deltas) {
                const std::size_t pos = position_of(d.client_id);
                final_set_[pos] = true;
                result_.final_deltas[pos] = std::move(d);
            }
            result_.tree.nodes[index].model = std::move(state.model);
        }
        return index;
    }

    std::span<const Client> clients_;
    const DenseNetwork& pretrained_;
    std::size_t bottleneck_;
    CflConfig cfg_;
    std::vector<std::pair<std::size_t, std::size_t>> position_;
    std::vector<bool> final_set_;
    CflResult result_;
};

}  // namespace detail

/// Runs recursive clustered federated learning over `clients`, starting every
/// cluster from `pretrained` with a freshly drawn bottleneck layer.
template <FederatedClient Client>
CflResult run_cfl_server(std::span<const Client> clients, const DenseNetwork& pretrained, std::size_t bottleneck,
                         const CflConfig& cfg) {
    if (clients.empty()) throw Error("run_cfl: no clients");
    return detail::CflServer<Client>(clients, pretrained, bottleneck, cfg).run();
}

}  // namespace ucfl

#endif  // UCFL_CFL_SERVER_HPP
