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

#ifndef UCFL_FEATURES_HPP
#define UCFL_FEATURES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "ucfl/audio.hpp"
#include "ucfl/core.hpp"
#include "ucfl/fft.hpp"

namespace ucfl {

class TooShortError : public Error {
public:
    using Error::Error;
};

/// Energy floor applied before the logarithm.
inline constexpr double kLmbeFloor = 1e-10;

/// Log-mel band energies, one row per frame.
struct LmbeMatrix {
    Matrix values;  // frames x band_count
    std::size_t band_count = 0;
    double frame_len_s = 0.0;
    double hop_s = 0.0;

    std::size_t frames() const noexcept { return values.rows(); }

    friend bool operator==(const LmbeMatrix&, const LmbeMatrix&) = default;
};

struct Framing {
    std::size_t frame_samples;
    std::size_t hop_samples;
    std::size_t frames;
};

inline Framing framing_for(std::size_t n, double sample_rate, double frame_len_s, double hop_s) {
    const auto frame = static_cast<std::size_t>(std::lround(frame_len_s * sample_rate));
    const auto hop = static_cast<std::size_t>(std::lround(hop_s * sample_rate));
    if (frame < 2) throw Error("stft: frame must span at least 2 samples");
    if (hop < 1 || hop > frame) throw Error("stft: hop must be in [1, frame length]");
    if (n < frame) throw TooShortError("stft: signal too short for a single frame");
    return {frame, hop, (n - frame) / hop + 1};
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// Power spectrogram |DFT(hann * frame)|^2, frames x (frame_samples/2 + 1).
/// Frame lengths that are not a power of two use a direct DFT.
inline Matrix stft_power(const AudioSignal& signal, double frame_len_s, double hop_s) {
    validate(signal);
    const Framing f = framing_for(signal.size(), signal.sample_rate, frame_len_s, hop_s);
    const std::size_t n = f.frame_samples;
    const std::size_t bins = n / 2 + 1;
    const auto window = hann_window(n);
    Matrix power(f.frames, bins);

    std::vector<Complex> buf(n);
    if (is_power_of_two(n)) {
        const FftPlan plan(n);
        for (std::size_t t = 0; t < f.frames; ++t) {
            const double* x = signal.samples.data() + t * f.hop_samples;
            for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] * window[i];
            plan.forward(buf);
            for (std::size_t k = 0; k < bins; ++k) power(t, k) = std::norm(buf[k]);
        }
    } else {
        std::vector<double> frame(n);
        for (std::size_t t = 0; t < f.frames; ++t) {
            const double* x = signal.samples.data() + t * f.hop_samples;
            for (std::size_t i = 0; i < n; ++i) frame[i] = x[i] * window[i];
            for (std::size_t k = 0; k < bins; ++k) {
                Complex acc{};
                for (std::size_t i = 0; i < n; ++i) {
                    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k * i % n) /
                                         static_cast<double>(n);
                    acc += frame[i] * Complex{std::cos(angle), std::sin(angle)};
                }
                power(t, k) = std::norm(acc);
            }
        }
    }
    return power;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Centre frequency of each triangular filter in Hz.
inline std::vector<double> mel_center_frequencies(std::size_t band_count, double sample_rate) {
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> centers(band_count);
    for (std::size_t k = 0; k < band_count; ++k)
        centers[k] = mel_to_hz(top * static_cast<double>(k + 1) / static_cast<double>(band_count + 1));
    return centers;
}

/// HTK-mel triangular filterbank, bands x bins, peak weight 1.
///
/// Adjacent triangles form a partition of unity between the outer centres, so
/// every column sums to at most 1. A filter too narrow to cover any bin is
/// given weight at the bin nearest its centre; columns are then rescaled where
/// needed to keep their sum at or below 1.
inline Matrix mel_filterbank(std::size_t bins, std::size_t band_count, double sample_rate) {
    if (band_count < 1) throw Error("mel_filterbank: band_count must be >= 1");
    if (bins < 2) throw Error("mel_filterbank: need at least 2 bins");
    if (band_count > bins) throw Error("mel_filterbank: more bands than bins");
    const double nyquist = sample_rate / 2.0;
    const double top = hz_to_mel(nyquist);
    std::vector<double> edges(band_count + 2);
    for (std::size_t k = 0; k < edges.size(); ++k)
        edges[k] = mel_to_hz(top * static_cast<double>(k) / static_cast<double>(band_count + 1));

    const double bin_hz = nyquist / static_cast<double>(bins - 1);
    Matrix fb(band_count, bins);
    for (std::size_t k = 0; k < band_count; ++k) {
        const double lo = edges[k], mid = edges[k + 1], hi = edges[k + 2];
        bool any = false;
        for (std::size_t b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * bin_hz;
            double w = 0.0;
            if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
            fb(k, b) = w;
            any = any || w > 0.0;
        }
        if (!any) {
            const auto nearest = static_cast<std::size_t>(std::lround(mid / bin_hz));
            fb(k, std::min(nearest, bins - 1)) = 1.0;
        }
    }
    for (std::size_t b = 0; b < bins; ++b) {
        double sum = 0.0;
        for (std::size_t k = 0; k < band_count; ++k) sum += fb(k, b);
        if (sum > 1.0)
            for (std::size_t k = 0; k < band_count; ++k) fb(k, b) /= sum;
    }
    return fb;
}

/// log(max(filterbank * power, floor)) for a precomputed power spectrogram.
inline Matrix log_mel_energies(const Matrix& power, const Matrix& filterbank, double floor = kLmbeFloor) {
    if (power.cols() != filterbank.cols()) throw DimensionError("lmbe: filterbank/bin mismatch");
    Matrix out(power.rows(), filterbank.rows());
    for (std::size_t t = 0; t < power.rows(); ++t) {
        const auto frame = power.row(t);
        for (std::size_t k = 0; k < filterbank.rows(); ++k)
            out(t, k) = std::log(std::max(dot(filterbank.row(k), frame), floor));
    }
    return out;
}

inline LmbeMatrix lmbe(const AudioSignal& signal, double frame_len_s, double hop_s, std::size_t band_count) {
    const Matrix power = stft_power(signal, frame_len_s, hop_s);
    const Matrix fb = mel_filterbank(power.cols(), band_count, signal.sample_rate);
    return {log_mel_energies(power, fb), band_count, frame_len_s, hop_s};
}

/// Column-wise mean of an LMBE matrix (the time-averaged feature vector).
inline std::vector<double> time_average(const LmbeMatrix& m) {
    std::vector<double> avg(m.band_count, 0.0);
    if (m.frames() == 0) return avg;
    for (std::size_t t = 0; t < m.frames(); ++t)
        for (std::size_t k = 0; k < m.band_count; ++k) avg[k] += m.values(t, k);
    for (double& v : avg) v /= static_cast<double>(m.frames());
    return avg;
}

}  // namespace ucfl

#endif  // UCFL_FEATURES_HPP
