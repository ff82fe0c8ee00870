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

#ifndef UCFL_EXPERIMENT_HPP
#define UCFL_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "ucfl/audio.hpp"
#include "ucfl/autoencoder.hpp"
#include "ucfl/cfl.hpp"
#include "ucfl/checkpoint.hpp"
#include "ucfl/eval.hpp"
#include "ucfl/features.hpp"
#include "ucfl/membership.hpp"
#include "ucfl/scene.hpp"

namespace ucfl {

struct FeatureParams {
    double frame_len_s = 0.064;
    double hop_s = 0.032;
    std::size_t band_count = 128;
};

/// Pre-training material: synthetic reverberant clips or a directory of WAV files.
struct CorpusSpec {
    std::string kind = "synthetic";
    std::size_t clips = 16;
    double clip_s = kUtteranceSeconds;
    std::uint64_t seed = 0xC0A9;
    std::string wav_dir;
};

struct ExperimentConfig {
    std::string scene = "2SL";
    std::optional<SceneTemplate> custom_scene;
    ConstellationConstraints constraints;
    std::vector<std::uint64_t> seeds;
    double duration_s = 4 * kUtteranceSeconds;
    double sensor_noise_std = 1e-4;

    FeatureParams features;
    AutoencoderConfig autoencoder;
    PretrainConfig pretrain;
    CorpusSpec corpus;
    std::string checkpoint;  // loaded when it exists, written after pre-training otherwise

    CflConfig cfl;
    LocalTrainingConfig local;

    std::optional<double> lambda;  // default_lambda(|C|) when unset
    double threshold = 0.8;
    std::vector<double> threshold_sweep = {0.0, 0.5, 0.8, 0.9};

    bool recognition = true;
    ClassifierConfig classifier;
    std::size_t classifier_utterances_per_class = 100;

    std::string output_dir = "ucfl-out";
    std::size_t jobs = 1;

    SceneTemplate scene_template() const {
        if (custom_scene) return *custom_scene;
        if (auto t = builtin_template(scene)) return *t;
        throw Error("unknown scene template: " + scene);
    }
};

inline void validate(const ExperimentConfig& c) {
    if (!(c.cfl.eps2 > 0.0 && c.cfl.eps2 <= 1.0)) throw Error("config: eps2 must lie in (0, 1]");
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw Error("config: threshold v must lie in [0, 1]");
    for (double v : c.threshold_sweep)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("config: threshold_sweep entries must lie in [0, 1]");
    if (c.lambda && !(*c.lambda >= 0.0 && *c.lambda <= 1.0)) throw Error("config: lambda must lie in [0, 1]");
    if (!(c.cfl.beta >= 0.0 && c.cfl.beta <= 1.0)) throw Error("config: beta must lie in [0, 1]");
    if (!(c.duration_s > 0.0)) throw Error("config: duration_s must be positive");
    if (!(c.local.learning_rate > 0.0)) throw Error("config: local learning rate must be positive");
    if (c.corpus.kind != "synthetic" && c.corpus.kind != "wav_dir")
        throw Error("config: corpus.kind must be 'synthetic' or 'wav_dir'");
    if (c.corpus.kind == "wav_dir" && !std::filesystem::is_directory(c.corpus.wav_dir))
        throw Error("config: corpus directory does not exist: " + c.corpus.wav_dir);
    (void)c.scene_template();
}

// ---------------------------------------------------------------------------
// JSON config

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline SceneTemplate scene_template_from_json(const nlohmann::json& j) {
    SceneTemplate t;
    read_opt(j, "name", t.name);
    for (const auto& r : j.at("rooms")) {
        Room room;
        room.name = r.value("name", "");
        const auto rect = r.at("rect").get<std::vector<double>>();
        if (rect.size() != 4) throw Error("config: room rect must be [x0, y0, x1, y1]");
        room.x0 = rect[0];
        room.y0 = rect[1];
        room.x1 = rect[2];
        room.y1 = rect[3];
        room.t60 = r.at("t60").get<double>();
        t.nodes_per_room.push_back(r.at("nodes").get<std::size_t>());
        t.rooms.push_back(room);
    }
    for (const auto& s : j.at("sources")) t.sources.push_back({s.at("room").get<std::size_t>(), s.at("class").get<std::string>()});
    read_opt(j, "sample_rate", t.sample_rate);
    read_opt(j, "room_height", t.room_height);
    read_opt(j, "insertion_loss_db", t.insertion_loss_db);
    return t;
}

}  // namespace detail

/// Applies the fields present in `j` on top of `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = {}) {
    using detail::read_opt;
    if (j.contains("scene")) {
        if (j["scene"].is_string()) c.scene = j["scene"].get<std::string>();
        else c.custom_scene = detail::scene_template_from_json(j["scene"]);
    }
    if (j.contains("constraints")) {
        const auto& k = j["constraints"];
        read_opt(k, "constrained_rooms", c.constraints.constrained_rooms);
        read_opt(k, "min_nodes_in_critical_distance", c.constraints.min_nodes_in_critical_distance);
        read_opt(k, "max_attempts", c.constraints.max_attempts);
    }
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "duration_s", c.duration_s);
    read_opt(j, "sensor_noise_std", c.sensor_noise_std);
    if (j.contains("features")) {
        read_opt(j["features"], "frame_len_s", c.features.frame_len_s);
        read_opt(j["features"], "hop_s", c.features.hop_s);
        read_opt(j["features"], "band_count", c.features.band_count);
    }
    if (j.contains("autoencoder")) {
        read_opt(j["autoencoder"], "hidden", c.autoencoder.hidden);
        read_opt(j["autoencoder"], "seed", c.autoencoder.seed);
    }
    if (j.contains("pretrain")) {
        read_opt(j["pretrain"], "epochs", c.pretrain.epochs);
        read_opt(j["pretrain"], "learning_rate", c.pretrain.learning_rate);
        read_opt(j["pretrain"], "batch_size", c.pretrain.batch_size);
        read_opt(j["pretrain"], "seed", c.pretrain.seed);
    }
    if (j.contains("corpus")) {
        read_opt(j["corpus"], "kind", c.corpus.kind);
        read_opt(j["corpus"], "clips", c.corpus.clips);
        read_opt(j["corpus"], "clip_s", c.corpus.clip_s);
        read_opt(j["corpus"], "seed", c.corpus.seed);
        read_opt(j["corpus"], "wav_dir", c.corpus.wav_dir);
    }
    read_opt(j, "checkpoint", c.checkpoint);
    if (j.contains("cfl")) {
        const auto& k = j["cfl"];
        read_opt(k, "eps2", c.cfl.eps2);
        read_opt(k, "eps3", c.cfl.eps3);
        read_opt(k, "beta", c.cfl.beta);
        read_opt(k, "min_rounds", c.cfl.min_rounds);
        read_opt(k, "max_rounds", c.cfl.max_rounds);
        read_opt(k, "learning_rate", c.local.learning_rate);
        read_opt(k, "batch_size", c.local.batch_size);
        read_opt(k, "local_epochs", c.local.local_epochs);
    }
    if (j.contains("lambda")) {
        if (j["lambda"].is_null() || j["lambda"] == "auto") c.lambda.reset();
        else c.lambda = j["lambda"].get<double>();
    }
    read_opt(j, "threshold", c.threshold);
    read_opt(j, "threshold_sweep", c.threshold_sweep);
    read_opt(j, "recognition", c.recognition);
    if (j.contains("classifier")) {
        const auto& k = j["classifier"];
        read_opt(k, "epochs", c.classifier.epochs);
        read_opt(k, "learning_rate", c.classifier.learning_rate);
        read_opt(k, "batch_size", c.classifier.batch_size);
        read_opt(k, "hidden", c.classifier.hidden);
        read_opt(k, "utterances_per_class", c.classifier_utterances_per_class);
    }
    read_opt(j, "output_dir", c.output_dir);
    read_opt(j, "jobs", c.jobs);
    return c;
}

// ---------------------------------------------------------------------------
// Training material

/// A random furnished-less room with one or two talkers, heard by one node.
inline AudioSignal synthetic_reverberant_clip(std::uint64_t seed, double duration_s, double sample_rate = 16000.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SceneTemplate t;
    t.name = "clip";
    t.sample_rate = sample_rate;
    const double w = 3.0 + 3.0 * unit(rng), d = 3.0 + 3.0 * unit(rng);
    t.rooms = {{"room", 0.0, 0.0, w, d, 0.25 + 0.35 * unit(rng)}};
    t.nodes_per_room = {2};
    const auto& classes = source_classes();
    const std::size_t talkers = unit(rng) < 0.5 ? 1 : 2;
    for (std::size_t k = 0; k < talkers; ++k)
        t.sources.push_back({0, classes[static_cast<std::size_t>(unit(rng) * static_cast<double>(classes.size())) % classes.size()].name});
    ConstellationConstraints free;
    free.constrained_rooms.clear();
    free.min_source_separation = 0.5;
    const Scene scene = generate_constellation(t, derive_seed(seed, 1), free);
    std::vector<AudioSignal> src;
    for (std::size_t z = 0; z < scene.sources.size(); ++z)
        src.push_back(make_source_signal(scene.sources[z].class_name, duration_s, derive_seed(seed, 2, z), sample_rate));
    const auto rirs = scene_rirs(scene, derive_seed(seed, 3));
    auto nodes = render_node_signals(scene, src, rirs, {duration_s, 1e-4, derive_seed(seed, 4)});
    return nodes.front();
}

/// Feature rows for pre-training the autoencoder.
inline Matrix pretraining_frames(const CorpusSpec& spec, const FeatureParams& fp) {
    std::vector<AudioSignal> clips;
    if (spec.kind == "wav_dir") {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(spec.wav_dir))
            if (e.path().extension() == ".wav") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) clips.push_back(read_wav(f));
    } else {
        for (std::size_t k = 0; k < spec.clips; ++k)
            clips.push_back(synthetic_reverberant_clip(derive_seed(spec.seed, k), spec.clip_s));
    }
    std::vector<LmbeMatrix> feats;
    std::size_t rows = 0;
    for (const auto& c : clips) {
        if (c.size() < static_cast<std::size_t>(fp.frame_len_s * c.sample_rate)) continue;
        feats.push_back(lmbe(c, fp.frame_len_s, fp.hop_s, fp.band_count));
        rows += feats.back().frames();
    }
    if (rows == 0) throw Error("pretraining corpus is empty");
    Matrix out(rows, fp.band_count);
    std::size_t r = 0;
    for (const auto& f : feats)
        for (std::size_t t = 0; t < f.frames(); ++t, ++r) std::copy(f.values.row(t).begin(), f.values.row(t).end(), out.row(r).begin());
    return out;
}

struct PretrainOutcome {
    Autoencoder autoencoder;
    std::vector<double> losses;
    std::size_t frames = 0;
};

inline PretrainOutcome pretrain_autoencoder(const ExperimentConfig& cfg) {
    AutoencoderConfig ac = cfg.autoencoder;
    ac.input_size = cfg.features.band_count;
    PretrainOutcome out;
    const Matrix frames = pretraining_frames(cfg.corpus, cfg.features);
    out.frames = frames.rows();
    out.autoencoder = pretrain(build_autoencoder(ac), frames, cfg.pretrain, &out.losses);
    return out;
}

/// Autoencoder from the configured checkpoint, pre-training (and saving) it first when needed.
inline Autoencoder obtain_autoencoder(const ExperimentConfig& cfg) {
    if (!cfg.checkpoint.empty() && std::filesystem::exists(cfg.checkpoint)) return load_checkpoint(cfg.checkpoint);
    Autoencoder ae = pretrain_autoencoder(cfg).autoencoder;
    if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, ae);
    return ae;
}

struct LabeledFeatures {
    Matrix x;
    std::vector<std::size_t> y;
};

/// Signal of one source captured at `mic` in a single room.
inline AudioSignal reverberant_capture(const Room& room, Point src, Point mic, const AudioSignal& clean, std::uint64_t seed) {
    Scene scene;
    scene.rooms = {room};
    scene.sources = {{0, 0, src, "capture"}};
    scene.nodes = {{0, 0, mic}};
    const RirSet rirs = {{synthesize_rir(room, src, mic, derive_seed(seed, 1))}};
    return render_node_signals(scene, std::span<const AudioSignal>(&clean, 1), rirs, {clean.duration_s(), 0.0, 0}).front();
}

/// Time-averaged log-mel features of reverberant utterances, balanced over the
/// source classes. With probability `mix_probability` a talker of another class
/// is added at a signal-to-interference ratio drawn from [sir_min_db, sir_max_db].
inline LabeledFeatures recognizer_dataset(std::size_t per_class, std::uint64_t seed, const ClassifierConfig& cc,
                                          double mix_probability = 0.75, double sir_min_db = 0.0, double sir_max_db = 10.0) {
    const auto& classes = source_classes();
    LabeledFeatures d;
    d.x = Matrix(per_class * classes.size(), cc.band_count);
    std::size_t row = 0;
    for (std::size_t k = 0; k < per_class; ++k)
        for (const auto& cls : classes) {
            const std::uint64_t s = derive_seed(seed, k, cls.label);
            std::mt19937_64 rng(s);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            const double w = 3.0 + 3.0 * unit(rng), dep = 3.0 + 3.0 * unit(rng);
            const Room room{"room", 0.0, 0.0, w, dep, 0.25 + 0.35 * unit(rng)};
            auto inside = [&] { return Point{w * (0.1 + 0.8 * unit(rng)), dep * (0.1 + 0.8 * unit(rng))}; };
            const Point mic = inside(), src = inside(), far = inside();
            const auto& other = classes[(cls.label + 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(classes.size() - 1))) %
                                        classes.size()];
            const bool mixed = classes.size() > 1 && unit(rng) < mix_probability;
            const double sir_db = sir_min_db + (sir_max_db - sir_min_db) * unit(rng);

            AudioSignal x = reverberant_capture(room, src, mic, make_source_signal(cls.name, kUtteranceSeconds, derive_seed(s, 1)),
                                                derive_seed(s, 2));
            if (mixed) {
                const AudioSignal y = reverberant_capture(room, far, mic, make_source_signal(other.name, kUtteranceSeconds, derive_seed(s, 3)),
                                                          derive_seed(s, 4));
                double px = 0.0, py = 0.0;
                for (double v : x.samples) px += v * v;
                for (double v : y.samples) py += v * v;
                const double g = py > 0.0 ? std::sqrt(px / py * std::pow(10.0, -sir_db / 10.0)) : 0.0;
                for (std::size_t n = 0; n < x.samples.size(); ++n) x.samples[n] += g * y.samples[n];
            }
            std::normal_distribution<double> noise(0.0, 1e-4);
            for (double& v : x.samples) v += noise(rng);
            const auto f = time_average(lmbe(x, cc.frame_len_s, cc.hop_s, cc.band_count));
            std::copy(f.begin(), f.end(), d.x.row(row).begin());
            d.y.push_back(cls.label);
            ++row;
        }
    return d;
}

inline Classifier train_recognizer(const ExperimentConfig& cfg) {
    const auto data = recognizer_dataset(cfg.classifier_utterances_per_class, derive_seed(cfg.classifier.seed, 0xC1A55), cfg.classifier);
    return train_classifier(data.x, data.y, cfg.classifier);
}

// ---------------------------------------------------------------------------
// One scenario

struct RecognitionRow {
    PriorMode prior = PriorMode::all;
    Aggregation aggregation = Aggregation::mode;
    double threshold = -1.0;  // -1 for mode aggregation (no MVs)
    RecognitionScore score;
};

struct ScenarioResult {
    std::uint64_t seed = 0;
    Scene scene;
    std::vector<std::vector<std::size_t>> leaves;       // tree order
    std::vector<std::size_t> slot_clusters;             // slot -> leaf index
    std::vector<std::optional<std::size_t>> slot_source;
    std::vector<MembershipVector> memberships;          // per leaf, at the main threshold
    double lambda = 0.0;
    std::optional<CtsReport> cts;
    CtsSummary cts_summary;
    std::vector<RecognitionRow> recognition;
    std::vector<TraceRecord> trace;
    std::vector<std::size_t> node_truth;
    std::vector<NodePrediction> node_predictions;
    std::size_t rounds = 0;
};

inline std::vector<AudioSignal> render_scenario_sources(const Scene& scene, double duration_s) {
    std::vector<AudioSignal> out;
    for (const auto& s : scene.sources)
        out.push_back(make_source_signal(s.class_name, duration_s, derive_seed(scene.seed, 0x50C, s.id), scene.sample_rate));
    return out;
}

inline ScenarioResult run_scenario(const ExperimentConfig& cfg, const Autoencoder& ae, const Classifier* classifier,
                                   std::uint64_t seed) {
    ScenarioResult res;
    res.seed = seed;
    res.scene = generate_constellation(cfg.scene_template(), derive_seed(seed, 0x5CE), cfg.constraints);
    const Scene& scene = res.scene;
    const auto sources = render_scenario_sources(scene, cfg.duration_s);
    const auto rirs = scene_rirs(scene, derive_seed(seed, 0x1B));
    const auto signals = render_node_signals(scene, sources, rirs, {cfg.duration_s, cfg.sensor_noise_std, derive_seed(seed, 0x77)});

    std::vector<LmbeMatrix> feats;
    for (const auto& s : signals) feats.push_back(lmbe(s, cfg.features.frame_len_s, cfg.features.hop_s, cfg.features.band_count));

    CflConfig cc = cfg.cfl;
    cc.seed = derive_seed(seed, 0xCF1);
    const CflResult cfl = run_cfl(feats, ae, cc, cfg.local, derive_seed(seed, 0xC11));
    res.trace = cfl.trace;
    for (const auto& n : cfl.tree.nodes) res.rounds += n.rounds;
    res.leaves = cfl.tree.leaves();
    if (!cfl.similarity) throw Error("scenario: CFL produced no similarity matrix (max_rounds = 0?)");
    const SimilarityMatrix& a = *cfl.similarity;
    res.lambda = cfg.lambda.value_or(default_lambda(res.leaves.size()));

    auto memberships_at = [&](double v) {
        std::vector<MembershipVector> mvs;
        for (std::size_t c = 0; c < res.leaves.size(); ++c) mvs.push_back(membership_values(a, res.leaves[c], res.lambda, v, c));
        return mvs;
    };
    res.memberships = memberships_at(cfg.threshold);

    std::vector<Point> node_pos, src_pos;
    for (const auto& n : scene.nodes) node_pos.push_back(n.position);
    for (const auto& s : scene.sources) src_pos.push_back(s.position);
    if (src_pos.size() >= 2) {
        res.cts = cts(res.memberships, node_pos, src_pos);
        const auto m = match_clusters(*res.cts);
        res.slot_clusters = m.slots;
        res.slot_source = m.source_of;
        res.cts_summary = summarize_cts(*res.cts, m);
    } else {
        for (std::size_t c = 0; c < res.leaves.size(); ++c) {
            res.slot_clusters.push_back(c);
            res.slot_source.push_back(std::nullopt);
        }
    }

    if (classifier) {
        const auto utt_len = static_cast<std::size_t>(kUtteranceSeconds * scene.sample_rate);
        for (std::size_t i = 0; i < signals.size(); ++i) {
            std::vector<std::vector<double>> probs;
            for (std::size_t start = 0; start + utt_len <= signals[i].size(); start += utt_len) {
                AudioSignal u;
                u.sample_rate = signals[i].sample_rate;
                u.samples.assign(signals[i].samples.begin() + static_cast<std::ptrdiff_t>(start),
                                 signals[i].samples.begin() + static_cast<std::ptrdiff_t>(start + utt_len));
                probs.push_back(classifier->probabilities(u));
            }
            if (probs.empty()) probs.push_back(classifier->probabilities(signals[i]));
            res.node_predictions.push_back(aggregate_utterances(probs));
            const std::size_t z = nearest_source_by_delay(rirs, i);
            res.node_truth.push_back(source_class(scene.sources[z].class_name).label);
        }
        std::vector<std::size_t> slot_of(res.leaves.size());
        for (std::size_t k = 0; k < res.slot_clusters.size(); ++k) slot_of[res.slot_clusters[k]] = k;
        const std::size_t classes = source_classes().size();
        const std::size_t ns = scene.sources.size();

        auto eval_clusters = [&](const std::vector<MembershipVector>* mvs) {
            std::vector<EvalCluster> out;
            for (std::size_t c = 0; c < res.leaves.size(); ++c)
                out.push_back({res.leaves[c], mvs ? &(*mvs)[c] : nullptr,
                               res.cts ? std::optional<std::size_t>(slot_of[c]) : std::nullopt});
            return out;
        };
        std::vector<PriorMode> priors = {PriorMode::all, PriorMode::top_confidence_n_s};
        if (res.cts) priors.insert(priors.begin() + 1, PriorMode::closest_n_s);
        const auto plain = eval_clusters(nullptr);
        for (auto prior : priors)
            res.recognition.push_back({prior, Aggregation::mode, -1.0,
                                       recognize(plain, res.node_predictions, res.node_truth, classes, prior, Aggregation::mode, ns)});
        for (double v : cfg.threshold_sweep) {
            const auto mvs = memberships_at(v);
            const auto soft = eval_clusters(&mvs);
            for (auto prior : priors)
                res.recognition.push_back({prior, Aggregation::mv_weighted, v,
                                           recognize(soft, res.node_predictions, res.node_truth, classes, prior,
                                                     Aggregation::mv_weighted, ns)});
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Serialisation of results

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace detail

inline std::string trace_jsonl(const std::vector<TraceRecord>& trace) {
    std::string out;
    for (const auto& t : trace) {
        nlohmann::json j = {{"cluster", t.cluster},     {"round", t.round},       {"members", t.members},
                            {"mean_norm", t.mean_norm}, {"max_norm", t.max_norm}, {"ratio", t.ratio},
                            {"eps1", t.eps1},           {"decision", to_string(t.decision)}};
        out += j.dump() + "\n";
    }
    return out;
}

/// cluster_id,node_id,mu,is_reference
inline std::string membership_csv(const std::vector<MembershipVector>& mvs) {
    std::string out = "cluster_id,node_id,mu,is_reference\n";
    for (const auto& mv : mvs)
        for (std::size_t i = 0; i < mv.values.size(); ++i)
            out += std::to_string(mv.cluster_id) + "," + std::to_string(i) + "," + detail::fmt(mv.values[i]) + "," +
                   (i == mv.reference_node ? "1" : "0") + "\n";
    return out;
}

/// Compact per-scenario summary; the `report` subcommand aggregates these.
inline nlohmann::json scenario_summary(const ScenarioResult& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["sources"] = r.scene.sources.size();
    j["nodes"] = r.scene.nodes.size();
    j["clusters"] = r.leaves.size();
    j["lambda"] = r.lambda;
    j["rounds"] = r.rounds;
    std::vector<std::size_t> sizes;
    for (auto c : r.slot_clusters) sizes.push_back(r.leaves[c].size());
    j["slot_sizes"] = sizes;
    if (r.cts) {
        std::vector<std::vector<double>> rows;
        for (auto c : r.slot_clusters) {
            std::vector<double> row;
            for (std::size_t z = 0; z < r.cts->distances.cols(); ++z) row.push_back(r.cts->distances(c, z));
            rows.push_back(row);
        }
        j["cts"] = rows;
        j["cts_mean_diagonal"] = r.cts_summary.mean_diagonal;
        j["cts_mean_off_diagonal"] = r.cts_summary.mean_off_diagonal;
    }
    nlohmann::json rec = nlohmann::json::array();
    for (const auto& row : r.recognition)
        rec.push_back({{"prior", to_string(row.prior)},
                       {"aggregation", to_string(row.aggregation)},
                       {"threshold", row.threshold},
                       {"accuracy", row.score.accuracy},
                       {"f1", row.score.f1},
                       {"clusters", row.score.clusters}});
    j["recognition"] = rec;
    return j;
}

struct AggregateReports {
    std::string cts_csv;
    std::string cts_long_csv;
    std::string cluster_stats_csv;
    std::string cluster_counts_csv;
    std::string recognition_csv;
};

/// Table-style CSVs over a set of scenario summaries (sorted by seed).
///
///   cts.csv            seed,clusters,mean_diagonal,mean_off_diagonal,d_c{x}_s{z}... (x,z <= N_S); last row "mean"
///   cts_long.csv       seed,slot,source,cts
///   cluster_stats.csv  slot,n_scenarios,mean_nodes
///   cluster_counts.csv seed,sources,clusters,plausible
///   recognition.csv    prior,aggregation,threshold,accuracy,f1,scenarios
inline AggregateReports aggregate_reports(std::vector<nlohmann::json> summaries) {
    std::sort(summaries.begin(), summaries.end(),
              [](const auto& a, const auto& b) { return a.at("seed").template get<std::uint64_t>() < b.at("seed").template get<std::uint64_t>(); });
    using detail::fmt;
    AggregateReports rep;
    std::size_t ns = 0;
    for (const auto& s : summaries) ns = std::max(ns, s.at("sources").get<std::size_t>());

    rep.cts_csv = "seed,clusters,mean_diagonal,mean_off_diagonal";
    for (std::size_t x = 0; x < ns; ++x)
        for (std::size_t z = 0; z < ns; ++z) rep.cts_csv += ",d_c" + std::to_string(x + 1) + "_s" + std::to_string(z + 1);
    rep.cts_csv += "\n";
    rep.cts_long_csv = "seed,slot,source,cts\n";
    std::vector<double> sums(2 + ns * ns, 0.0);
    std::vector<std::size_t> counts(2 + ns * ns, 0);
    double cluster_sum = 0.0;
    std::size_t cts_rows = 0;
    for (const auto& s : summaries) {
        if (!s.contains("cts")) continue;
        const auto seed = s.at("seed").get<std::uint64_t>();
        const auto m = s.at("cts").get<std::vector<std::vector<double>>>();
        std::string line = std::to_string(seed) + "," + std::to_string(s.at("clusters").get<std::size_t>());
        cluster_sum += s.at("clusters").get<double>();
        ++cts_rows;
        const double diag = s.at("cts_mean_diagonal").get<double>(), off = s.at("cts_mean_off_diagonal").get<double>();
        line += "," + fmt(diag) + "," + fmt(off);
        sums[0] += diag;
        sums[1] += off;
        ++counts[0];
        ++counts[1];
        for (std::size_t x = 0; x < ns; ++x)
            for (std::size_t z = 0; z < ns; ++z) {
                if (x < m.size() && z < m[x].size()) {
                    line += "," + fmt(m[x][z]);
                    sums[2 + x * ns + z] += m[x][z];
                    ++counts[2 + x * ns + z];
                } else {
                    line += ",";
                }
            }
        rep.cts_csv += line + "\n";
        for (std::size_t x = 0; x < m.size(); ++x)
            for (std::size_t z = 0; z < m[x].size(); ++z)
                rep.cts_long_csv += std::to_string(seed) + "," + std::to_string(x + 1) + "," + std::to_string(z + 1) + "," + fmt(m[x][z]) + "\n";
    }
    if (cts_rows > 0) {
        std::string line = "mean," + fmt(cluster_sum / static_cast<double>(cts_rows));
        for (std::size_t k = 0; k < sums.size(); ++k)
            line += counts[k] ? "," + fmt(sums[k] / static_cast<double>(counts[k])) : std::string(",");
        rep.cts_csv += line + "\n";
    }

    std::vector<std::vector<std::size_t>> slot_sizes;
    rep.cluster_counts_csv = "seed,sources,clusters,plausible\n";
    for (const auto& s : summaries) {
        slot_sizes.push_back(s.at("slot_sizes").get<std::vector<std::size_t>>());
        const auto n_s = s.at("sources").get<std::size_t>(), n_c = s.at("clusters").get<std::size_t>();
        rep.cluster_counts_csv += std::to_string(s.at("seed").get<std::uint64_t>()) + "," + std::to_string(n_s) + "," +
                                  std::to_string(n_c) + "," + (plausible_cluster_count(n_c, n_s) ? "1" : "0") + "\n";
    }
    rep.cluster_stats_csv = "slot,n_scenarios,mean_nodes\n";
    if (!slot_sizes.empty())
        for (const auto& row : cluster_stats(slot_sizes))
            rep.cluster_stats_csv += std::to_string(row.slot + 1) + "," + std::to_string(row.scenarios) + "," + fmt(row.mean_nodes) + "\n";

    struct Acc {
        double acc = 0.0, f1 = 0.0;
        std::size_t n = 0;
    };
    std::map<std::tuple<std::string, std::string, double>, Acc> table;
    std::vector<std::tuple<std::string, std::string, double>> order;
    for (const auto& s : summaries)
        for (const auto& r : s.at("recognition")) {
            if (r.at("clusters").get<std::size_t>() == 0) continue;
            auto key = std::make_tuple(r.at("prior").get<std::string>(), r.at("aggregation").get<std::string>(),
                                       r.at("threshold").get<double>());
            if (!table.count(key)) order.push_back(key);
            auto& a = table[key];
            a.acc += r.at("accuracy").get<double>();
            a.f1 += r.at("f1").get<double>();
            ++a.n;
        }
    rep.recognition_csv = "prior,aggregation,threshold,accuracy,f1,scenarios\n";
    for (const auto& key : order) {
        const auto& a = table[key];
        const double v = std::get<2>(key);
        rep.recognition_csv += std::get<0>(key) + "," + std::get<1>(key) + "," + (v < 0.0 ? std::string("none") : fmt(v)) + "," +
                               fmt(a.acc / static_cast<double>(a.n)) + "," + fmt(a.f1 / static_cast<double>(a.n)) + "," +
                               std::to_string(a.n) + "\n";
    }
    return rep;
}

inline void write_aggregate_reports(const std::filesystem::path& dir, const AggregateReports& rep) {
    write_file_atomic(dir / "cts.csv", rep.cts_csv);
    write_file_atomic(dir / "cts_long.csv", rep.cts_long_csv);
    write_file_atomic(dir / "cluster_stats.csv", rep.cluster_stats_csv);
    write_file_atomic(dir / "cluster_counts.csv", rep.cluster_counts_csv);
    write_file_atomic(dir / "recognition.csv", rep.recognition_csv);
}

/// Re-aggregates every scenario_*.json found in `dir`.
inline AggregateReports report_directory(const std::filesystem::path& dir) {
    std::vector<nlohmann::json> summaries;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("scenario_", 0) == 0 && e.path().extension() == ".json")
            summaries.push_back(nlohmann::json::parse(read_file(e.path())));
    }
    return aggregate_reports(std::move(summaries));
}

// ---------------------------------------------------------------------------
// Floor plan

/// Rooms, sources with critical-distance circles, and nodes coloured by the
/// cluster in which they have the largest membership value (opacity = MV).
inline std::string floorplan_svg(const ScenarioResult& r) {
    const Scene& s = r.scene;
    double max_x = 0.0, max_y = 0.0;
    for (const auto& room : s.rooms) {
        max_x = std::max(max_x, room.x1);
        max_y = std::max(max_y, room.y1);
    }
    const double px = 80.0, pad = 20.0;
    auto X = [&](double x) { return detail::fmt(pad + x * px); };
    auto Y = [&](double y) { return detail::fmt(pad + (max_y - y) * px); };
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#2ca02c"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(2 * pad + max_x * px) << "\" height=\""
       << detail::fmt(2 * pad + max_y * px) << "\">\n";
    for (const auto& room : s.rooms)
        os << "  <rect x=\"" << X(room.x0) << "\" y=\"" << Y(room.y1) << "\" width=\"" << detail::fmt(room.width() * px)
           << "\" height=\"" << detail::fmt(room.depth() * px) << "\" fill=\"none\" stroke=\"black\"/>\n"
           << "  <text x=\"" << X(room.x0 + 0.1) << "\" y=\"" << Y(room.y1 - 0.3) << "\" font-size=\"12\">" << room.name
           << " T60=" << detail::fmt(room.t60) << "s</text>\n";
    for (const auto& src : s.sources) {
        os << "  <circle cx=\"" << X(src.position.x) << "\" cy=\"" << Y(src.position.y) << "\" r=\""
           << detail::fmt(s.critical_distance_of(src.room) * px) << "\" fill=\"none\" stroke=\"green\"/>\n";
        os << "  <rect x=\"" << detail::fmt(pad + src.position.x * px - 5) << "\" y=\""
           << detail::fmt(pad + (max_y - src.position.y) * px - 5) << "\" width=\"10\" height=\"10\" fill=\"black\"/>\n";
        os << "  <text x=\"" << X(src.position.x + 0.1) << "\" y=\"" << Y(src.position.y + 0.1) << "\" font-size=\"11\">s"
           << src.id + 1 << " " << src.class_name << "</text>\n";
    }
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        std::size_t best = 0;
        double mu = 0.0;
        for (std::size_t c = 0; c < r.memberships.size(); ++c)
            if (r.memberships[c].values[i] > mu) {
                mu = r.memberships[c].values[i];
                best = c;
            }
        std::size_t leaf = 0;
        for (std::size_t c = 0; c < r.leaves.size(); ++c)
            if (std::find(r.leaves[c].begin(), r.leaves[c].end(), i) != r.leaves[c].end()) leaf = c;
        if (mu == 0.0) best = leaf;
        os << "  <circle cx=\"" << X(s.nodes[i].position.x) << "\" cy=\"" << Y(s.nodes[i].position.y)
           << "\" r=\"7\" fill=\"" << palette[best % 10] << "\" fill-opacity=\"" << detail::fmt(std::max(mu, 0.08))
           << "\" stroke=\"" << palette[leaf % 10] << "\"/>\n";
        os << "  <text x=\"" << X(s.nodes[i].position.x + 0.1) << "\" y=\"" << Y(s.nodes[i].position.y - 0.12)
           << "\" font-size=\"9\">" << i << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Whole experiment

struct ExperimentOutcome {
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::filesystem::path output_dir;
    bool ok() const noexcept { return failed == 0; }
};

/// Output directory after applying UCFL_OUTPUT_ROOT to relative paths.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    if (p.is_relative())
        if (const char* root = std::getenv("UCFL_OUTPUT_ROOT"); root && *root) p = std::filesystem::path(root) / p;
    return p;
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    ExperimentOutcome outcome;
    outcome.output_dir = resolve_output_dir(cfg.output_dir);
    std::filesystem::create_directories(outcome.output_dir);
    const auto& dir = outcome.output_dir;

    std::optional<Autoencoder> ae;
    std::optional<Classifier> classifier;
    if (!cfg.seeds.empty()) {
        ae = obtain_autoencoder(cfg);
        if (cfg.recognition) classifier = train_recognizer(cfg);
    }

    std::vector<std::optional<nlohmann::json>> summaries(cfg.seeds.size());
    std::vector<std::string> errors(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < cfg.seeds.size(); k = next++) {
            const auto seed = cfg.seeds[k];
            const std::string tag = std::to_string(seed);
            try {
                const ScenarioResult r = run_scenario(cfg, *ae, classifier ? &*classifier : nullptr, seed);
                write_file_atomic(dir / ("trace_" + tag + ".jsonl"), trace_jsonl(r.trace));
                write_file_atomic(dir / ("membership_" + tag + ".csv"), membership_csv(r.memberships));
                write_file_atomic(dir / ("floorplan_" + tag + ".svg"), floorplan_svg(r));
                auto summary = scenario_summary(r);
                write_file_atomic(dir / ("scenario_" + tag + ".json"), summary.dump(1) + "\n");
                summaries[k] = std::move(summary);
            } catch (const std::exception& e) {
                errors[k] = e.what();
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.seeds.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }

    std::vector<nlohmann::json> ok;
    std::string error_log;
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
        if (summaries[k]) {
            ok.push_back(*summaries[k]);
            ++outcome.completed;
        } else {
            ++outcome.failed;
            error_log += nlohmann::json{{"seed", cfg.seeds[k]}, {"error", errors[k]}}.dump() + "\n";
        }
    }
    write_aggregate_reports(dir, aggregate_reports(std::move(ok)));
    if (!error_log.empty()) write_file_atomic(dir / "errors.jsonl", error_log);
    return outcome;
}

}  // namespace ucfl

#endif  // UCFL_EXPERIMENT_HPP
