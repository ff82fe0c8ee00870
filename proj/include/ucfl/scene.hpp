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

#ifndef UCFL_SCENE_HPP
#define UCFL_SCENE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucfl/audio.hpp"
#include "ucfl/core.hpp"
#include "ucfl/fft.hpp"

namespace ucfl {

inline constexpr double kSpeedOfSound = 343.0;

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned rectangular room.
struct Room {
    std::string name;
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    double t60 = 0.5;

    double width() const noexcept { return x1 - x0; }
    double depth() const noexcept { return y1 - y0; }
    double area() const noexcept { return width() * depth(); }
    Point center() const noexcept { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
    bool contains(Point p) const noexcept { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }

    friend bool operator==(const Room&, const Room&) = default;
};

/// Sabine-based critical distance d_c = 0.057 sqrt(V / T60), V in m^3.
inline double critical_distance(double volume_m3, double t60_s) { return 0.057 * std::sqrt(volume_m3 / t60_s); }

inline double critical_distance(const Room& room, double height_m) {
    return critical_distance(room.area() * height_m, room.t60);
}

struct SourceSpec {
    std::size_t id = 0;
    std::size_t room = 0;
    Point position;
    std::string class_name;

    friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

struct NodeSpec {
    std::size_t id = 0;
    std::size_t room = 0;
    Point position;

    friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

struct Scene {
    std::string name;
    std::vector<Room> rooms;
    std::vector<SourceSpec> sources;
    std::vector<NodeSpec> nodes;
    double sample_rate = 16000.0;
    double room_height = 2.6;
    double insertion_loss_db = 6.0;
    std::uint64_t seed = 0;

    double critical_distance_of(std::size_t room) const { return critical_distance(rooms.at(room), room_height); }

    std::optional<std::size_t> room_of(Point p) const {
        for (std::size_t r = 0; r < rooms.size(); ++r)
            if (rooms[r].contains(p)) return r;
        return std::nullopt;
    }

    friend bool operator==(const Scene&, const Scene&) = default;
};

inline void validate(const Scene& s) {
    if (s.nodes.size() < 2) throw Error("scene: need at least 2 nodes");
    if (s.sources.empty()) throw Error("scene: need at least 1 source");
    for (const auto& r : s.rooms)
        if (!(r.t60 > 0.0) || !(r.area() > 0.0)) throw Error("scene: room '" + r.name + "' needs positive area and T60");
    for (const auto& src : s.sources)
        if (src.room >= s.rooms.size() || !s.rooms[src.room].contains(src.position))
            throw Error("scene: source " + std::to_string(src.id) + " lies outside its room");
    for (const auto& n : s.nodes)
        if (n.room >= s.rooms.size() || !s.rooms[n.room].contains(n.position))
            throw Error("scene: node " + std::to_string(n.id) + " lies outside its room");
}

// ---------------------------------------------------------------------------
// Templates and constellation sampling

struct SourceTemplate {
    std::size_t room = 0;
    std::string class_name;
};

struct SceneTemplate {
    std::string name;
    std::vector<Room> rooms;
    std::vector<std::size_t> nodes_per_room;
    std::vector<SourceTemplate> sources;
    double sample_rate = 16000.0;
    double room_height = 2.6;
    double insertion_loss_db = 6.0;
};

struct ConstellationConstraints {
    /// Sources in these rooms need `min_nodes_in_critical_distance` same-room
    /// nodes closer than the room's critical distance.
    std::vector<std::size_t> constrained_rooms = {0};
    std::size_t min_nodes_in_critical_distance = 3;
    double source_wall_margin = 0.5;
    double node_wall_margin = 0.1;
    double min_source_separation = 1.5;
    std::size_t max_attempts = 2'000'000;
};

/// One 4 x 5 m room with two sources of different classes and ten nodes.
inline SceneTemplate template_2sl() {
    SceneTemplate t;
    t.name = "2SL";
    t.rooms = {{"living", 0.0, 0.0, 4.0, 5.0, 0.4}};
    t.nodes_per_room = {10};
    t.sources = {{0, "low-f0"}, {0, "high-f0"}};
    return t;
}

/// Four-room flat with four sources (two per class) and sixteen nodes.
inline SceneTemplate template_4sa() {
    SceneTemplate t;
    t.name = "4SA";
    t.rooms = {{"living", 0.0, 0.0, 6.0, 5.0, 0.35},
               {"kitchen", 6.0, 0.0, 10.0, 5.0, 0.3},
               {"bedroom", 0.0, 5.0, 5.0, 9.0, 0.3},
               {"hallway", 5.0, 5.0, 10.0, 9.0, 0.45}};
    t.nodes_per_room = {8, 3, 3, 2};
    t.sources = {{0, "low-f0"}, {0, "high-f0"}, {1, "high-f0"}, {2, "low-f0"}};
    return t;
}

inline std::optional<SceneTemplate> builtin_template(std::string_view name) {
    if (name == "2SL") return template_2sl();
    if (name == "4SA") return template_4sa();
    return std::nullopt;
}

/// Nodes of `scene` in the source's room closer than that room's critical distance.
inline std::size_t nodes_within_critical_distance(const Scene& scene, const SourceSpec& src) {
    const double dc = scene.critical_distance_of(src.room);
    std::size_t n = 0;
    for (const auto& node : scene.nodes)
        if (node.room == src.room && distance(node.position, src.position) < dc) ++n;
    return n;
}

/// Post-hoc check of the constellation constraints; returns a description of
/// the first violation, or nothing.
inline std::optional<std::string> check_constraints(const Scene& scene, const ConstellationConstraints& c) {
    for (const auto& src : scene.sources) {
        if (std::find(c.constrained_rooms.begin(), c.constrained_rooms.end(), src.room) == c.constrained_rooms.end())
            continue;
        const std::size_t n = nodes_within_critical_distance(scene, src);
        if (n < c.min_nodes_in_critical_distance)
            return "source " + std::to_string(src.id) + " has " + std::to_string(n) + " nodes within critical distance (need " +
                   std::to_string(c.min_nodes_in_critical_distance) + ")";
    }
    return std::nullopt;
}

/// Samples source and node positions uniformly in their rooms and rejects
/// constellations that violate `constraints`. Deterministic in `seed`.
inline Scene generate_constellation(const SceneTemplate& tpl, std::uint64_t seed,
                                    const ConstellationConstraints& constraints = {}) {
    if (tpl.nodes_per_room.size() != tpl.rooms.size()) throw Error("template: nodes_per_room must match rooms");
    Scene scene;
    scene.name = tpl.name;
    scene.rooms = tpl.rooms;
    scene.sample_rate = tpl.sample_rate;
    scene.room_height = tpl.room_height;
    scene.insertion_loss_db = tpl.insertion_loss_db;
    scene.seed = seed;
    for (const auto& room : tpl.rooms)
        if (!(room.t60 > 0.0) || !(room.area() > 0.0))
            throw Error("template: room '" + room.name + "' needs positive area and T60");

    std::mt19937_64 rng(seed);
    auto uniform_in = [&](const Room& r, double margin) {
        const double mx = std::min(margin, r.width() / 2.0), my = std::min(margin, r.depth() / 2.0);
        std::uniform_real_distribution<double> ux(r.x0 + mx, r.x1 - mx), uy(r.y0 + my, r.y1 - my);
        const double x = ux(rng);
        return Point{x, uy(rng)};
    };

    auto place_sources = [&] {
        scene.sources.clear();
        for (std::size_t z = 0; z < tpl.sources.size(); ++z) {
            const auto& st = tpl.sources[z];
            if (st.room >= tpl.rooms.size()) throw Error("template: source room out of range");
            Point p;
            for (int tries = 0;; ++tries) {
                p = uniform_in(tpl.rooms[st.room], constraints.source_wall_margin);
                bool ok = true;
                for (const auto& other : scene.sources)
                    if (other.room == st.room && distance(other.position, p) < constraints.min_source_separation) ok = false;
                if (ok || tries > 10'000) break;
            }
            scene.sources.push_back({z, st.room, p, st.class_name});
        }
    };

    std::size_t total_nodes = 0;
    for (auto n : tpl.nodes_per_room) total_nodes += n;
    scene.nodes.resize(total_nodes);

    place_sources();
    for (std::size_t attempt = 0; attempt < constraints.max_attempts; ++attempt) {
        if (attempt > 0 && attempt % 4096 == 0) place_sources();
        std::size_t id = 0;
        for (std::size_t r = 0; r < tpl.rooms.size(); ++r)
            for (std::size_t k = 0; k < tpl.nodes_per_room[r]; ++k, ++id)
                scene.nodes[id] = {id, r, uniform_in(tpl.rooms[r], constraints.node_wall_margin)};
        if (!check_constraints(scene, constraints)) {
            validate(scene);
            return scene;
        }
    }
    throw Error("generate_constellation: constraint unsatisfiable after " + std::to_string(constraints.max_attempts) +
                " attempts: " + check_constraints(scene, constraints).value_or("unknown"));
}

// ---------------------------------------------------------------------------
// Room impulse responses

struct Rir {
    std::vector<double> taps;
    double first_peak_delay_s = 0.0;
    std::size_t source_id = 0;
    std::size_t node_id = 0;
    double direct_energy = 0.0;
    double tail_energy = 0.0;

    /// Tap index of the direct path.
    std::size_t direct_index(double sample_rate) const {
        return static_cast<std::size_t>(std::lround(first_peak_delay_s * sample_rate));
    }
};

struct RirOptions {
    double sample_rate = 16000.0;
    double room_height = 2.6;
    std::size_t boundaries = 0;
    double insertion_loss_db = 6.0;
};

/// Direct path at d / c with amplitude 1 / max(d, 0.1) followed by a seeded
/// Gaussian tail under exp(-3 ln(10) t / T60). The tail energy is set so the
/// direct-to-reverberant ratio equals (d_c / d)^2. Each crossed room boundary
/// attenuates both parts by the insertion loss.
inline Rir synthesize_rir(const Room& room, Point source, Point node, std::uint64_t seed, const RirOptions& opt = {}) {
    const double fs = opt.sample_rate;
    const double d = distance(source, node);
    const double d_eff = std::max(d, 0.1);
    const double dc = critical_distance(room, opt.room_height);
    const double gain = std::pow(10.0, -opt.insertion_loss_db * static_cast<double>(opt.boundaries) / 20.0);

    Rir rir;
    rir.first_peak_delay_s = d / kSpeedOfSound;
    const auto delay = static_cast<std::size_t>(std::lround(rir.first_peak_delay_s * fs));
    const auto tail_len = static_cast<std::size_t>(std::ceil(room.t60 * fs));
    rir.taps.assign(delay + 1 + tail_len, 0.0);
    const double direct = gain / d_eff;
    rir.taps[delay] = direct;
    rir.direct_energy = direct * direct;

    const double decay = 3.0 * std::numbers::ln10 / room.t60;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    double raw_energy = 0.0;
    for (std::size_t n = 1; n <= tail_len; ++n) {
        const double v = noise(rng) * std::exp(-decay * static_cast<double>(n) / fs);
        rir.taps[delay + n] = v;
        raw_energy += v * v;
    }
    const double target = rir.direct_energy * (d_eff / dc) * (d_eff / dc);
    const double scale = raw_energy > 0.0 ? std::sqrt(target / raw_energy) : 0.0;
    for (std::size_t n = 1; n <= tail_len; ++n) rir.taps[delay + n] *= scale;
    rir.tail_energy = target;
    return rir;
}

/// Room boundaries crossed by the straight path a -> b, counted as changes of
/// the containing room along the segment (at least 1 when the end rooms differ).
inline std::size_t boundaries_crossed(const Scene& scene, Point a, Point b) {
    const auto ra = scene.room_of(a), rb = scene.room_of(b);
    const double len = distance(a, b);
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / 0.02)));
    std::size_t changes = 0;
    auto current = ra;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        const auto r = scene.room_of({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
        if (r && current && *r != *current) ++changes;
        if (r) current = r;
    }
    if (ra != rb) changes = std::max<std::size_t>(changes, 1);
    return changes;
}

/// RIR from source z to node i: tail built with the node's room, insertion
/// loss applied per crossed boundary.
inline Rir scene_rir(const Scene& scene, std::size_t z, std::size_t i, std::uint64_t seed) {
    const auto& src = scene.sources.at(z);
    const auto& node = scene.nodes.at(i);
    RirOptions opt{scene.sample_rate, scene.room_height,
                   src.room == node.room ? 0 : boundaries_crossed(scene, src.position, node.position),
                   scene.insertion_loss_db};
    Rir rir = synthesize_rir(scene.rooms.at(node.room), src.position, node.position, seed, opt);
    rir.source_id = src.id;
    rir.node_id = node.id;
    return rir;
}

/// rirs[z][i] for every source z and node i.
using RirSet = std::vector<std::vector<Rir>>;

inline RirSet scene_rirs(const Scene& scene, std::uint64_t seed) {
    RirSet set(scene.sources.size());
    for (std::size_t z = 0; z < scene.sources.size(); ++z)
        for (std::size_t i = 0; i < scene.nodes.size(); ++i)
            set[z].push_back(scene_rir(scene, z, i, derive_seed(seed, z, i)));
    return set;
}

/// Index of the source whose RIR to node i has the shortest first-peak delay.
inline std::size_t nearest_source_by_delay(const RirSet& rirs, std::size_t node) {
    std::size_t best = 0;
    for (std::size_t z = 1; z < rirs.size(); ++z)
        if (rirs[z][node].first_peak_delay_s < rirs[best][node].first_peak_delay_s) best = z;
    return best;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderOptions {
    double duration_s = 40.0;
    double sensor_noise_std = 0.0;
    std::uint64_t noise_seed = 0;
};

/// x_i = sum_z s_z * g_{z,i} (+ optional white sensor noise), truncated to the
/// requested duration. Source spectra are computed once and shared by all nodes.
inline std::vector<AudioSignal> render_node_signals(const Scene& scene, std::span<const AudioSignal> sources,
                                                    const RirSet& rirs, const RenderOptions& opt) {
    if (sources.size() != scene.sources.size()) throw DimensionError("render: one signal per source required");
    if (rirs.size() != scene.sources.size()) throw DimensionError("render: rir set does not match sources");
    const auto out_len = static_cast<std::size_t>(std::lround(opt.duration_s * scene.sample_rate));
    for (const auto& s : sources) {
        if (s.sample_rate != scene.sample_rate) throw Error("render: source sample rate differs from scene");
        if (s.size() < out_len) throw Error("render: source signal shorter than requested duration");
    }
    std::size_t max_taps = 1;
    for (const auto& per_source : rirs) {
        if (per_source.size() != scene.nodes.size()) throw DimensionError("render: rir set does not match nodes");
        for (const auto& r : per_source) max_taps = std::max(max_taps, r.taps.size());
    }

    const std::size_t fft_n = next_power_of_two(std::max<std::size_t>(2 * max_taps, 8192));
    const std::size_t block = fft_n - max_taps + 1;
    const std::size_t blocks = (out_len + block - 1) / block;
    const FftPlan plan(fft_n);

    // Spectra of every input block of every source.
    std::vector<std::vector<std::vector<Complex>>> src_spec(sources.size());
    for (std::size_t z = 0; z < sources.size(); ++z) {
        src_spec[z].resize(blocks);
        for (std::size_t b = 0; b < blocks; ++b) {
            auto& buf = src_spec[z][b];
            buf.assign(fft_n, Complex{});
            const std::size_t start = b * block;
            const std::size_t len = std::min(block, out_len - start);
            for (std::size_t k = 0; k < len; ++k) buf[k] = sources[z].samples[start + k];
            plan.forward(buf);
        }
    }

    std::vector<AudioSignal> out(scene.nodes.size());
    std::vector<std::vector<Complex>> rir_spec(sources.size(), std::vector<Complex>(fft_n));
    std::vector<Complex> acc(fft_n);
    for (std::size_t i = 0; i < scene.nodes.size(); ++i) {
        for (std::size_t z = 0; z < sources.size(); ++z) {
            auto& spec = rir_spec[z];
            std::fill(spec.begin(), spec.end(), Complex{});
            const auto& taps = rirs[z][i].taps;
            for (std::size_t k = 0; k < taps.size(); ++k) spec[k] = taps[k];
            plan.forward(spec);
        }
        auto& y = out[i];
        y.sample_rate = scene.sample_rate;
        y.samples.assign(out_len, 0.0);
        for (std::size_t b = 0; b < blocks; ++b) {
            std::fill(acc.begin(), acc.end(), Complex{});
            for (std::size_t z = 0; z < sources.size(); ++z)
                for (std::size_t k = 0; k < fft_n; ++k) acc[k] += src_spec[z][b][k] * rir_spec[z][k];
            plan.inverse(acc);
            const std::size_t start = b * block;
            for (std::size_t k = 0; k < fft_n && start + k < out_len; ++k) y.samples[start + k] += acc[k].real();
        }
        if (opt.sensor_noise_std > 0.0) {
            std::mt19937_64 rng(derive_seed(opt.noise_seed, i));
            std::normal_distribution<double> noise(0.0, opt.sensor_noise_std);
            for (double& v : y.samples) v += noise(rng);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic sources

struct SourceClass {
    std::string name;
    std::size_t label = 0;
    double f0_min = 0.0;
    double f0_max = 0.0;
    double formant_min = 1.0;  // formant frequency scale range
    double formant_max = 1.0;
};

/// Harmonic "voice" classes: a low and a high fundamental-frequency range with
/// matching formant scales.
inline const std::vector<SourceClass>& source_classes() {
    static const std::vector<SourceClass> classes = {{"low-f0", 0, 80.0, 135.0, 0.85, 0.97},
                                                                {"high-f0", 1, 190.0, 280.0, 1.12, 1.25}};
    return classes;
}

inline const SourceClass& source_class(std::string_view name) {
    for (const auto& c : source_classes())
        if (c.name == name) return c;
    throw Error("unknown source class: " + std::string(name));
}

inline constexpr double kUtteranceSeconds = 10.0;

/// Speech-like harmonic signal: 10 s utterances of syllables with a gliding
/// fundamental, two formant resonances and pauses, concatenated to
/// `duration_s`. The speaker (base f0, formant scale) is fixed by `seed`.
inline AudioSignal make_source_signal(std::string_view class_name, double duration_s, std::uint64_t seed,
                                      double sample_rate = 16000.0) {
    const SourceClass& cls = source_class(class_name);
    if (!(duration_s >= 0.0)) throw Error("make_source_signal: negative duration");
    AudioSignal out;
    out.sample_rate = sample_rate;
    const auto total = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
    out.samples.assign(total, 0.0);

    std::mt19937_64 speaker_rng(derive_seed(seed, 0x5eed));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double speaker_f0 = cls.f0_min + (cls.f0_max - cls.f0_min) * unit(speaker_rng);
    const double formant_scale = cls.formant_min + (cls.formant_max - cls.formant_min) * unit(speaker_rng);

    const auto utt_len = static_cast<std::size_t>(std::lround(kUtteranceSeconds * sample_rate));
    const std::size_t max_harmonics = 60;
    std::vector<double> amp(max_harmonics + 1);
    for (std::size_t utt = 0; utt * utt_len < total; ++utt) {
        std::mt19937_64 rng(derive_seed(seed, utt + 1));
        std::normal_distribution<double> white(0.0, 1.0);
        const std::size_t begin = utt * utt_len;
        const std::size_t end = std::min(total, begin + utt_len);
        const double utt_f0 = speaker_f0 * (0.95 + 0.1 * unit(rng));

        std::size_t t = begin + static_cast<std::size_t>(0.05 * sample_rate * unit(rng));
        double phase = 0.0;
        while (t < end) {
            const auto syl_len = static_cast<std::size_t>((0.12 + 0.23 * unit(rng)) * sample_rate);
            const double pause_s = unit(rng) < 0.1 ? 0.25 + 0.35 * unit(rng) : 0.03 + 0.12 * unit(rng);
            const double glide = -0.1 + 0.2 * unit(rng);
            const double f1 = (300.0 + 500.0 * unit(rng)) * formant_scale;
            const double f2 = (900.0 + 1400.0 * unit(rng)) * formant_scale;
            const double level = 0.6 + 0.4 * unit(rng);
            for (std::size_t k = 1; k <= max_harmonics; ++k) {
                const double f = utt_f0 * static_cast<double>(k);
                const double r1 = 1.0 / (1.0 + std::pow((f - f1) / 90.0, 2));
                const double r2 = 1.0 / (1.0 + std::pow((f - f2) / 130.0, 2));
                amp[k] = f < 5000.0 ? (1.0 + 1.5 * r1 + 1.0 * r2) / static_cast<double>(k) : 0.0;
            }
            const std::size_t ramp = std::max<std::size_t>(1, static_cast<std::size_t>(0.02 * sample_rate));
            for (std::size_t n = 0; n < syl_len && t + n < end; ++n) {
                const double pos = static_cast<double>(n) / static_cast<double>(syl_len);
                const double f0 = utt_f0 * (1.0 + glide * (pos - 0.5));
                phase += 2.0 * std::numbers::pi * f0 / sample_rate;
                if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
                // sin(k phase) by the Chebyshev recurrence.
                const double c2 = 2.0 * std::cos(phase);
                double s_prev = 0.0, s_cur = std::sin(phase), v = 0.0;
                for (std::size_t k = 1; k <= max_harmonics && amp[k] > 0.0; ++k) {
                    v += amp[k] * s_cur;
                    const double s_next = c2 * s_cur - s_prev;
                    s_prev = s_cur;
                    s_cur = s_next;
                }
                double env = 1.0;
                if (n < ramp) env = std::sin(0.5 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(ramp));
                else if (syl_len - n < ramp)
                    env = std::sin(0.5 * std::numbers::pi * static_cast<double>(syl_len - n) / static_cast<double>(ramp));
                out.samples[t + n] = level * env * env * (v + 0.05 * white(rng));
            }
            t += syl_len + static_cast<std::size_t>(pause_s * sample_rate);
        }

        double energy = 0.0;
        for (std::size_t n = begin; n < end; ++n) energy += out.samples[n] * out.samples[n];
        const double rms = std::sqrt(energy / static_cast<double>(std::max<std::size_t>(1, end - begin)));
        if (rms > 0.0)
            for (std::size_t n = begin; n < end; ++n) out.samples[n] *= 0.05 / rms;
    }
    return out;
}

}  // namespace ucfl

#endif  // UCFL_SCENE_HPP
