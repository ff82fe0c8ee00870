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

#ifndef UCFL_FFT_HPP
#define UCFL_FFT_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "ucfl/core.hpp"

namespace ucfl {

using Complex = std::complex<double>;

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_power_of_two(std::size_t n) noexcept {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.
class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n), twiddle_(n / 2), reversed_(n) {
        if (!is_power_of_two(n)) throw Error("FftPlan: size must be a power of two");
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            twiddle_[k] = {std::cos(angle), std::sin(angle)};
        }
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            reversed_[i] = r;
        }
    }

    std::size_t size() const noexcept { return n_; }

    void forward(std::span<Complex> x) const { transform(x, false); }

    /// Inverse transform including the 1/n scaling.
    void inverse(std::span<Complex> x) const {
        transform(x, true);
        const double scale = 1.0 / static_cast<double>(n_);
        for (auto& v : x) v *= scale;
    }

private:
    void transform(std::span<Complex> x, bool inverse) const {
        if (x.size() != n_) throw DimensionError("FftPlan: buffer size mismatch");
        for (std::size_t i = 0; i < n_; ++i)
            if (i < reversed_[i]) std::swap(x[i], x[reversed_[i]]);
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            const std::size_t half = len / 2;
            const std::size_t stride = n_ / len;
            for (std::size_t start = 0; start < n_; start += len) {
                for (std::size_t k = 0; k < half; ++k) {
                    Complex w = twiddle_[k * stride];
                    if (inverse) w = std::conj(w);
                    const Complex t = w * x[start + k + half];
                    x[start + k + half] = x[start + k] - t;
                    x[start + k] += t;
                }
            }
        }
    }

    std::size_t n_;
    std::vector<Complex> twiddle_;
    std::vector<std::size_t> reversed_;
};

/// Adds the linear convolution of `signal` with `kernel` into `out` by FFT
/// overlap-add; samples past `out.size()` are discarded.
inline void fft_convolve_into(std::span<const double> signal, std::span<const double> kernel,
                              std::span<double> out) {
    if (kernel.empty() || signal.empty() || out.empty()) return;
    const std::size_t fft_n = next_power_of_two(std::max<std::size_t>(4 * kernel.size(), 4096));
    const std::size_t block = fft_n - kernel.size() + 1;
    const FftPlan plan(fft_n);

    std::vector<Complex> kspec(fft_n);
    for (std::size_t i = 0; i < kernel.size(); ++i) kspec[i] = kernel[i];
    plan.forward(kspec);

    std::vector<Complex> buf(fft_n);
    for (std::size_t start = 0; start < signal.size() && start < out.size(); start += block) {
        std::fill(buf.begin(), buf.end(), Complex{});
        const std::size_t len = std::min(block, signal.size() - start);
        for (std::size_t i = 0; i < len; ++i) buf[i] = signal[start + i];
        plan.forward(buf);
        for (std::size_t i = 0; i < fft_n; ++i) buf[i] *= kspec[i];
        plan.inverse(buf);
        const std::size_t produced = len + kernel.size() - 1;
        for (std::size_t i = 0; i < produced && start + i < out.size(); ++i) out[start + i] += buf[i].real();
    }
}

}  // namespace ucfl

#endif  // UCFL_FFT_HPP
