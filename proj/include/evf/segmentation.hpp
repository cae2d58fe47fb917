// SPDX-License-Identifier: Apache-2.0
/**
 * @file   segmentation.hpp
 * @brief  Stochastic partitions of the frame axis into contiguous segments.
 */
#pragma once

#include "evf/rng.hpp"
#include "evf/waveform.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace evf {

/// Interior boundaries b_1 < ... < b_{M-1} in (0, F); segment m covers the
/// half-open interval [b_m, b_{m+1}) with b_0 = 0 and b_M = F.
class Segmentation {
public:
  Segmentation(std::size_t num_frames, std::vector<std::size_t> boundaries);

  static Segmentation single(std::size_t num_frames) { return {num_frames, {}}; }
  /// M segments of (nearly) equal length.
  static Segmentation uniform(std::size_t num_frames, std::size_t num_segments);

  std::size_t num_frames() const { return num_frames_; }
  std::size_t num_segments() const { return boundaries_.size() + 1; }
  const std::vector<std::size_t> &boundaries() const { return boundaries_; }

  /// [start, end) of segment m.
  std::pair<std::size_t, std::size_t> span(std::size_t m) const;
  std::size_t length(std::size_t m) const;
  /// Midpoint of segment m in frame units.
  double center(std::size_t m) const;
  std::size_t min_length() const;

  bool operator==(const Segmentation &) const = default;

private:
  std::size_t num_frames_;
  std::vector<std::size_t> boundaries_;
};

/// Frame index -> segment index.
std::vector<std::size_t> segment_membership(const Segmentation &seg);

// FixedUniform always returns the equal-spacing split into
// round((m_min + m_max) / 2) segments, with no randomness.
enum class SegMode { UniformRandom, EnergyBiased, FixedUniform };

std::string seg_mode_name(SegMode mode);
SegMode seg_mode_from_name(const std::string &name);

struct SegSamplerConfig {
  std::size_t m_min = 2;
  std::size_t m_max = 8;
  std::size_t min_gap = 2; // frames
  SegMode mode = SegMode::UniformRandom;

  /// Throws ConfigError unless 1 <= m_min <= m_max and m_max * min_gap <= F.
  void validate(std::size_t num_frames) const;
  bool operator==(const SegSamplerConfig &) const = default;
};

inline constexpr int kMaxRejectionAttempts = 1000;

/**
 * M ~ Uniform{m_min..m_max}. Uniform mode draws M-1 distinct interior
 * boundaries uniformly and rejects draws violating min_gap; energy-biased
 * mode draws boundaries proportionally to the smoothed magnitude of the
 * frame-energy gradient. After kMaxRejectionAttempts failures the sampler
 * falls back to jittered equal spacing.
 */
Segmentation sample_segmentation(std::size_t num_frames, const SegSamplerConfig &cfg,
                                 Rng &rng,
                                 std::optional<std::span<const double>> frame_energy = {});

/// Mean-square energy of each D-sample frame, averaged over channels.
std::vector<double> frame_energy(const Waveform &x, std::size_t downsample);

} // namespace evf
