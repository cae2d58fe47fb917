// SPDX-License-Identifier: Apache-2.0
#include "evf/fft.hpp"

#include "evf/waveform.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace evf {

void fft_inplace(std::span<Complex> x, bool inverse) {
  const std::size_t n = x.size();
  if (!is_power_of_two(n))
    throw std::invalid_argument("fft length " + std::to_string(n) +
                                " is not a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1)
      j ^= bit;
    j ^= bit;
    if (i < j)
      std::swap(x[i], x[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    // Twiddles computed directly per index to avoid accumulated drift.
    for (std::size_t k = 0; k < half; ++k) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(len);
      const Complex w(std::cos(angle), std::sin(angle));
      for (std::size_t start = 0; start < n; start += len) {
        const Complex u = x[start + k];
        const Complex v = x[start + k + half] * w;
        x[start + k] = u + v;
        x[start + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto &v : x)
      v *= scale;
  }
}

std::vector<Complex> dft(std::span<const double> x) {
  std::vector<Complex> out(x.begin(), x.end());
  fft_inplace(out, false);
  return out;
}

std::vector<Complex> dft(std::span<const Complex> x) {
  std::vector<Complex> out(x.begin(), x.end());
  fft_inplace(out, false);
  return out;
}

std::vector<Complex> idft(std::span<const Complex> spectrum) {
  std::vector<Complex> out(spectrum.begin(), spectrum.end());
  fft_inplace(out, true);
  return out;
}

std::vector<double> idft_real(std::span<const Complex> spectrum, double *max_imag) {
  auto full = idft(spectrum);
  std::vector<double> out(full.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    out[i] = full[i].real();
    worst = std::max(worst, std::fabs(full[i].imag()));
  }
  if (max_imag)
    *max_imag = worst;
  return out;
}

} // namespace evf
