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

#ifndef UCFL_EVAL_HPP
#define UCFL_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ucfl/autoencoder.hpp"
#include "ucfl/core.hpp"
#include "ucfl/features.hpp"
#include "ucfl/membership.hpp"
#include "ucfl/nn.hpp"
#include "ucfl/scene.hpp"

namespace ucfl {

// ---------------------------------------------------------------------------
// Cluster-to-source distances

struct CtsReport {
    Matrix distances;  // clusters x sources, normalised by mean source-pair distance
    std::vector<Point> centroids;
    double mean_source_distance = 0.0;
};

/// MV-weighted centroid sum_i mu_i pos_i / sum_i mu_i.
inline Point weighted_centroid(std::span<const double> mu, std::span<const Point> positions) {
    if (mu.size() != positions.size()) throw DimensionError("centroid: one weight per node required");
    double w = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(mu[i] > 0.0)) continue;
        w += mu[i];
        x += mu[i] * positions[i].x;
        y += mu[i] * positions[i].y;
    }
    if (!(w > 0.0)) throw Error("cts: cluster has no node with nonzero membership");
    return {x / w, y / w};
}

inline double mean_pairwise_distance(std::span<const Point> points) {
    if (points.size() < 2) throw Error("cts: mean source-pair distance needs at least 2 sources");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t a = 0; a < points.size(); ++a)
        for (std::size_t b = a + 1; b < points.size(); ++b, ++n) s += distance(points[a], points[b]);
    return s / static_cast<double>(n);
}

inline CtsReport cts(std::span<const MembershipVector> clusters, std::span<const Point> node_positions,
                     std::span<const Point> source_positions) {
    CtsReport rep;
    rep.mean_source_distance = mean_pairwise_distance(source_positions);
    rep.distances = Matrix(clusters.size(), source_positions.size());
    for (std::size_t x = 0; x < clusters.size(); ++x) {
        rep.centroids.push_back(weighted_centroid(clusters[x].values, node_positions));
        for (std::size_t z = 0; z < source_positions.size(); ++z)
            rep.distances(x, z) = distance(source_positions[z], rep.centroids.back()) / rep.mean_source_distance;
    }
    return rep;
}

/// Ordering of clusters into rank slots: slot z < N_S holds the cluster
/// greedily matched to source z (smallest remaining distance first); the
/// unmatched clusters follow by ascending distance to their closest source.
struct ClusterMatching {
    std::vector<std::size_t> slots;                     // slots[k] = cluster index
    std::vector<std::optional<std::size_t>> source_of;  // per slot
};

inline ClusterMatching match_clusters(const CtsReport& rep) {
    const std::size_t nc = rep.distances.rows(), ns = rep.distances.cols();
    std::vector<std::optional<std::size_t>> cluster_for_source(ns);
    std::vector<bool> used(nc, false);
    for (std::size_t step = 0; step < std::min(nc, ns); ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bx = 0, bz = 0;
        for (std::size_t z = 0; z < ns; ++z) {
            if (cluster_for_source[z]) continue;
            for (std::size_t x = 0; x < nc; ++x)
                if (!used[x] && rep.distances(x, z) < best) {
                    best = rep.distances(x, z);
                    bx = x;
                    bz = z;
                }
        }
        used[bx] = true;
        cluster_for_source[bz] = bx;
    }
    ClusterMatching m;
    for (std::size_t z = 0; z < ns; ++z)
        if (cluster_for_source[z]) {
            m.slots.push_back(*cluster_for_source[z]);
            m.source_of.push_back(z);
        }
    std::vector<std::pair<double, std::size_t>> rest;
    for (std::size_t x = 0; x < nc; ++x) {
        if (used[x]) continue;
        double closest = std::numeric_limits<double>::infinity();
        for (std::size_t z = 0; z < ns; ++z) closest = std::min(closest, rep.distances(x, z));
        rest.emplace_back(closest, x);
    }
    std::sort(rest.begin(), rest.end());
    for (const auto& [d, x] : rest) {
        m.slots.push_back(x);
        m.source_of.push_back(std::nullopt);
    }
    return m;
}

struct CtsSummary {
    double mean_diagonal = 0.0;      // matched cluster vs its own source
    double mean_off_diagonal = 0.0;  // matched cluster vs every other source
    std::size_t matched = 0;
};

inline CtsSummary summarize_cts(const CtsReport& rep, const ClusterMatching& m) {
    CtsSummary s;
    double diag = 0.0, off = 0.0;
    std::size_t n_off = 0;
    for (std::size_t k = 0; k < m.slots.size(); ++k) {
        if (!m.source_of[k]) continue;
        const std::size_t x = m.slots[k];
        for (std::size_t z = 0; z < rep.distances.cols(); ++z) {
            if (z == *m.source_of[k]) diag += rep.distances(x, z);
            else {
                off += rep.distances(x, z);
                ++n_off;
            }
        }
        ++s.matched;
    }
    s.mean_diagonal = s.matched ? diag / static_cast<double>(s.matched) : 0.0;
    s.mean_off_diagonal = n_off ? off / static_cast<double>(n_off) : 0.0;
    return s;
}

struct ClusterSlotStats {
    std::size_t slot = 0;
    std::size_t scenarios = 0;  // N_{c_x}: scenarios in which this slot exists
    double mean_nodes = 0.0;
};

/// `slot_sizes[s][k]` is the node count of the cluster in rank slot k of scenario s.
inline std::vector<ClusterSlotStats> cluster_stats(std::span<const std::vector<std::size_t>> slot_sizes) {
    if (slot_sizes.empty()) throw Error("cluster_stats: no scenarios");
    std::size_t slots = 0;
    for (const auto& s : slot_sizes) slots = std::max(slots, s.size());
    std::vector<ClusterSlotStats> out(slots);
    for (std::size_t k = 0; k < slots; ++k) out[k].slot = k;
    for (const auto& s : slot_sizes)
        for (std::size_t k = 0; k < s.size(); ++k) {
            ++out[k].scenarios;
            out[k].mean_nodes += static_cast<double>(s[k]);
        }
    for (auto& row : out)
        if (row.scenarios) row.mean_nodes /= static_cast<double>(row.scenarios);
    return out;
}

inline bool plausible_cluster_count(std::size_t clusters, std::size_t sources) {
    return clusters >= sources && clusters <= 3 * sources;
}

// ---------------------------------------------------------------------------
// Source-class recognition

struct ClassifierConfig {
    std::size_t band_count = 40;
    double frame_len_s = 0.064;
    double hop_s = 0.02;
    std::vector<std::size_t> hidden = {16};
    std::size_t epochs = 13;
    double learning_rate = 0.01;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
};

/// Classifier e over time-averaged log-mel energies.
struct Classifier {
    DenseNetwork network;
    FeatureNormalizer normalizer;
    std::size_t class_count = 0;
    std::size_t band_count = 40;
    double frame_len_s = 0.064;
    double hop_s = 0.02;

    std::vector<double> features(const AudioSignal& utterance) const {
        return time_average(lmbe(utterance, frame_len_s, hop_s, band_count));
    }

    std::vector<double> probabilities_from_features(std::span<const double> feats) const {
        return softmax(forward(network, normalizer.apply(feats)));
    }

    std::vector<double> probabilities(const AudioSignal& utterance) const {
        return probabilities_from_features(features(utterance));
    }
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Trains a softmax classifier with cross-entropy on feature rows `x` and labels
/// `y` in [0, classes). With epochs = 0 the network keeps its random init.
inline Classifier train_classifier(const Matrix& x, std::span<const std::size_t> y, const ClassifierConfig& cfg) {
    if (x.rows() != y.size()) throw DimensionError("train_classifier: one label per row required");
    if (x.rows() == 0) throw Error("train_classifier: empty dataset");
    const std::size_t classes = *std::max_element(y.begin(), y.end()) + 1;
    std::vector<bool> seen(classes, false);
    for (auto label : y) seen[label] = true;
    if (classes < 2 || std::count(seen.begin(), seen.end(), true) < 2)
        throw Error("train_classifier: need at least two classes");

    Classifier c;
    c.class_count = classes;
    c.band_count = x.cols();
    c.frame_len_s = cfg.frame_len_s;
    c.hop_s = cfg.hop_s;
    c.normalizer = FeatureNormalizer::fit(x);
    std::vector<std::size_t> widths{x.cols()};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(classes);
    c.network = make_network(widths, Activation::relu, Activation::linear, cfg.seed);

    const Matrix inputs = c.normalizer.apply(x);
    Matrix targets(x.rows(), classes);
    for (std::size_t r = 0; r < x.rows(); ++r) targets(r, y[r]) = 1.0;
    if (cfg.epochs > 0)
        fit(c.network, inputs, targets,
            {cfg.epochs, cfg.learning_rate, cfg.batch_size, derive_seed(cfg.seed, 1), Loss::softmax_cross_entropy});
    return c;
}

inline double classifier_accuracy(const Classifier& c, const Matrix& x, std::span<const std::size_t> y) {
    if (x.rows() == 0) return 0.0;
    std::size_t ok = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) ok += argmax(c.probabilities_from_features(x.row(r))) == y[r];
    return static_cast<double>(ok) / static_cast<double>(x.rows());
}

/// Majority label; ties go to the lowest class index.
inline std::size_t mode_label(std::span<const std::size_t> labels, std::size_t class_count) {
    std::vector<std::size_t> counts(class_count, 0);
    for (auto l : labels) ++counts.at(l);
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

struct NodePrediction {
    std::size_t label = 0;            // mode over utterances
    std::vector<double> mean_probs;   // mean softmax over utterances
    double confidence = 0.0;          // mean max-softmax over utterances
};

inline NodePrediction aggregate_utterances(std::span<const std::vector<double>> utterance_probs) {
    if (utterance_probs.empty()) throw Error("aggregate_utterances: no utterances");
    const std::size_t classes = utterance_probs.front().size();
    NodePrediction p;
    p.mean_probs.assign(classes, 0.0);
    std::vector<std::size_t> labels;
    for (const auto& u : utterance_probs) {
        if (u.size() != classes) throw DimensionError("aggregate_utterances: class count mismatch");
        labels.push_back(argmax(u));
        p.confidence += *std::max_element(u.begin(), u.end());
        for (std::size_t k = 0; k < classes; ++k) p.mean_probs[k] += u[k];
    }
    const double n = static_cast<double>(utterance_probs.size());
    for (double& v : p.mean_probs) v /= n;
    p.confidence /= n;
    p.label = mode_label(labels, classes);
    return p;
}

enum class Aggregation { mode, mv_weighted };
enum class PriorMode { all, closest_n_s, top_confidence_n_s };

inline std::string_view to_string(Aggregation a) { return a == Aggregation::mode ? "mode" : "mv_weighted"; }

inline std::string_view to_string(PriorMode p) {
    switch (p) {
        case PriorMode::all: return "all";
        case PriorMode::closest_n_s: return "closest_N_S";
        case PriorMode::top_confidence_n_s: return "top_confidence_N_S";
    }
    return "all";
}

struct EvalCluster {
    std::vector<std::size_t> members;          // hard leaf members (node ids)
    const MembershipVector* mv = nullptr;      // soft values over all nodes
    std::optional<std::size_t> slot;           // rank slot from CTS matching
};

struct RecognitionScore {
    double accuracy = 0.0;
    double f1 = 0.0;
    std::size_t clusters = 0;
};

/// Macro-averaged F1 over the classes that occur in the truth or the predictions.
inline double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t classes) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t k = 0; k < truth.size(); ++k) {
            tp += pred[k] == c && truth[k] == c;
            fp += pred[k] == c && truth[k] != c;
            fn += pred[k] != c && truth[k] == c;
        }
        if (tp + fp + fn == 0) continue;
        total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

/// Cluster-level accuracy and F1 of one scenario. Cluster truth is the mode of
/// its members' ground-truth labels; the prediction is either the mode of the
/// members' node labels or the argmax of the MV-weighted mean class scores.
inline RecognitionScore recognize(std::span<const EvalCluster> clusters, std::span<const NodePrediction> nodes,
                                  std::span<const std::size_t> node_truth, std::size_t class_count, PriorMode prior,
                                  Aggregation aggregation, std::size_t n_sources) {
    if (nodes.size() != node_truth.size()) throw DimensionError("recognize: one truth label per node required");

    std::vector<std::size_t> chosen;
    switch (prior) {
        case PriorMode::all:
            for (std::size_t k = 0; k < clusters.size(); ++k) chosen.push_back(k);
            break;
        case PriorMode::closest_n_s:
            for (std::size_t k = 0; k < clusters.size(); ++k) {
                if (!clusters[k].slot) throw Error("recognize: closest_N_S needs source positions (cluster slots)");
                if (*clusters[k].slot < n_sources) chosen.push_back(k);
            }
            break;
        case PriorMode::top_confidence_n_s: {
            std::vector<std::pair<double, std::size_t>> ranked;
            for (std::size_t k = 0; k < clusters.size(); ++k) {
                double conf = 0.0;
                for (auto id : clusters[k].members) conf += nodes[id].confidence;
                conf /= static_cast<double>(std::max<std::size_t>(1, clusters[k].members.size()));
                ranked.emplace_back(-conf, k);
            }
            std::sort(ranked.begin(), ranked.end());
            for (std::size_t k = 0; k < std::min(n_sources, ranked.size()); ++k) chosen.push_back(ranked[k].second);
            std::sort(chosen.begin(), chosen.end());
            break;
        }
    }

    std::vector<std::size_t> truth, pred;
    for (auto k : chosen) {
        const auto& c = clusters[k];
        std::vector<std::size_t> gt, labels;
        for (auto id : c.members) {
            gt.push_back(node_truth[id]);
            labels.push_back(nodes[id].label);
        }
        truth.push_back(mode_label(gt, class_count));
        if (aggregation == Aggregation::mode) {
            pred.push_back(mode_label(labels, class_count));
        } else {
            if (!c.mv) throw Error("recognize: MV-weighted aggregation needs membership values");
            std::vector<double> score(class_count, 0.0);
            for (std::size_t i = 0; i < c.mv->values.size(); ++i) {
                const double mu = c.mv->values[i];
                if (!(mu > 0.0)) continue;
                for (std::size_t cl = 0; cl < class_count; ++cl) score[cl] += mu * nodes[i].mean_probs[cl];
            }
            pred.push_back(argmax(score));
        }
    }

    RecognitionScore s;
    s.clusters = truth.size();
    if (truth.empty()) return s;
    std::size_t ok = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) ok += truth[k] == pred[k];
    s.accuracy = static_cast<double>(ok) / static_cast<double>(truth.size());
    s.f1 = macro_f1(truth, pred, class_count);
    return s;
}

}  // namespace ucfl

#endif  // UCFL_EVAL_HPP
