// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <span>
#include <vector>

namespace evf {

using Complex = std::complex<double>;

/// In-place iterative radix-2 FFT. Forward is unnormalized; inverse scales
/// by 1/N. Throws std::invalid_argument for non-power-of-two lengths.
void fft_inplace(std::span<Complex> x, bool inverse);

std::vector<Complex> dft(std::span<const double> x);
std::vector<Complex> dft(std::span<const Complex> x);
std::vector<Complex> idft(std::span<const Complex> spectrum);

/// Real part of the inverse transform. When @p max_imag is given it receives
/// the largest imaginary residue.
std::vector<double> idft_real(std::span<const Complex> spectrum,
                              double *max_imag = nullptr);

} // namespace evf
