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

#ifndef UCFL_AUDIO_HPP
#define UCFL_AUDIO_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ucfl/core.hpp"

namespace ucfl {

/// Mono time-domain signal.
struct AudioSignal {
    std::vector<double> samples;
    double sample_rate = 16000.0;

    std::size_t size() const noexcept { return samples.size(); }
    double duration_s() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }

    friend bool operator==(const AudioSignal&, const AudioSignal&) = default;
};

inline void validate(const AudioSignal& s) {
    if (!(s.sample_rate > 0.0)) throw Error("audio: sample_rate must be positive");
    for (double v : s.samples)
        if (!std::isfinite(v)) throw Error("audio: non-finite sample");
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline std::uint32_t get_u32(const std::string& b, std::size_t at) {
    if (at + 4 > b.size()) throw Error("wav: truncated file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}
inline std::uint16_t get_u16(const std::string& b, std::size_t at) {
    if (at + 2 > b.size()) throw Error("wav: truncated file");
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                      (static_cast<unsigned char>(b[at + 1]) << 8));
}

}  // namespace detail

/// Encodes a signal as a 16-bit PCM mono RIFF/WAVE image. Samples are clipped to [-1, 1).
inline std::string encode_wav(const AudioSignal& s) {
    const auto n = static_cast<std::uint32_t>(s.samples.size());
    const auto rate = static_cast<std::uint32_t>(std::lround(s.sample_rate));
    std::string out;
    out.reserve(44 + 2 * n);
    out += "RIFF";
    detail::put_u32(out, 36 + 2 * n);
    out += "WAVEfmt ";
    detail::put_u32(out, 16);
    detail::put_u16(out, 1);  // PCM
    detail::put_u16(out, 1);  // mono
    detail::put_u32(out, rate);
    detail::put_u32(out, rate * 2);
    detail::put_u16(out, 2);
    detail::put_u16(out, 16);
    out += "data";
    detail::put_u32(out, 2 * n);
    for (double v : s.samples) {
        const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return out;
}

inline AudioSignal decode_wav(const std::string& bytes) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
        throw Error("wav: not a RIFF/WAVE file");
    std::size_t at = 12;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (at + 8 <= bytes.size()) {
        const std::string id = bytes.substr(at, 4);
        const std::uint32_t len = detail::get_u32(bytes, at + 4);
        const std::size_t body = at + 8;
        if (id == "fmt ") {
            if (detail::get_u16(bytes, body) != 1) throw Error("wav: only PCM is supported");
            if (detail::get_u16(bytes, body + 2) != 1) throw Error("wav: only mono is supported");
            rate = detail::get_u32(bytes, body + 4);
            if (detail::get_u16(bytes, body + 14) != 16) throw Error("wav: only 16-bit samples are supported");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw Error("wav: data chunk before fmt chunk");
            if (body + len > bytes.size()) throw Error("wav: truncated data chunk");
            AudioSignal s;
            s.sample_rate = rate;
            s.samples.resize(len / 2);
            for (std::size_t i = 0; i < s.samples.size(); ++i) {
                const auto raw = static_cast<std::int16_t>(detail::get_u16(bytes, body + 2 * i));
                s.samples[i] = raw / 32768.0;
            }
            return s;
        }
        at = body + len + (len & 1u);
    }
    throw Error("wav: no data chunk");
}

inline AudioSignal read_wav(const std::filesystem::path& path) { return decode_wav(read_file(path)); }

inline void write_wav(const std::filesystem::path& path, const AudioSignal& s) {
    write_file_atomic(path, encode_wav(s));
}

}  // namespace ucfl

#endif  // UCFL_AUDIO_HPP
