// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evf {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// C x T samples, channel-major.
struct Waveform {
  std::size_t channels = 1;
  std::size_t length = 0;
  double sample_rate = 1.0;
  std::vector<double> data;
  std::uint32_t subject_id = 0;
  std::uint32_t modality_id = 0;

  Waveform() = default;
  Waveform(std::size_t c, std::size_t t, double rate)
      : channels(c), length(t), sample_rate(rate), data(c * t, 0.0) {}

  std::span<double> channel(std::size_t c) {
    return std::span<double>(data).subspan(c * length, length);
  }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(data).subspan(c * length, length);
  }

  /// Throws std::invalid_argument unless T > 0 is a power of two and all
  /// samples are finite.
  void validate() const;
};

} // namespace evf
