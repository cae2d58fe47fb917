// SPDX-License-Identifier: Apache-2.0
/**
 * @file   projections.hpp
 * @brief  Seeded, length-preserving time-frequency projections of waveforms.
 *
 * A ProjectionSpec is an ordered list of transforms plus a seed. Applying it
 * is a pure function of (spec, waveform): every random draw inside a
 * transform comes from a stream keyed by (seed, transform index). Frequency
 * domain edits are mirrored onto negative frequencies so outputs stay real.
 */
#pragma once

#include "evf/rng.hpp"
#include "evf/waveform.hpp"

#include <json.hpp>

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

namespace evf {

namespace xf {

struct Identity {
  bool operator==(const Identity &) const = default;
};
/// Ideal band-pass keeping |f| in [f_lo, f_hi] Hz.
struct SubbandFilter {
  double f_lo = 0.0, f_hi = 0.0;
  bool operator==(const SubbandFilter &) const = default;
};
/// Random phase rotation of positive-frequency bins, smoothed over bins.
struct PhasePerturb {
  double sigma = 0.0;
  std::uint32_t smooth_len = 1;
  bool operator==(const PhasePerturb &) const = default;
};
/// Monotone warp t -> t + d(t); max_disp is a fraction of the knot spacing.
struct TimeWarp {
  std::uint32_t num_knots = 1;
  double max_disp = 0.0;
  bool operator==(const TimeWarp &) const = default;
};
/// Zeroes num_spans spans of span_len * T samples.
struct LocalMask {
  std::uint32_t num_spans = 0;
  double span_len = 0.0;
  bool operator==(const LocalMask &) const = default;
};
struct AmplitudeScale {
  double factor = 1.0;
  bool operator==(const AmplitudeScale &) const = default;
};
/// Zeroes num_bands contiguous bands of band_len bins.
struct FreqDropout {
  std::uint32_t num_bands = 0;
  std::uint32_t band_len = 1;
  bool operator==(const FreqDropout &) const = default;
};
struct NoiseInject {
  double sigma = 0.0;
  bool operator==(const NoiseInject &) const = default;
};

} // namespace xf

using Transform =
    std::variant<xf::Identity, xf::SubbandFilter, xf::PhasePerturb, xf::TimeWarp,
                 xf::LocalMask, xf::AmplitudeScale, xf::FreqDropout, xf::NoiseInject>;

struct ProjectionSpec {
  std::vector<Transform> transforms;
  std::uint64_t seed = 0;

  static ProjectionSpec identity() { return {{xf::Identity{}}, 0}; }
  bool operator==(const ProjectionSpec &) const = default;
};

nlohmann::json to_json(const ProjectionSpec &spec);
ProjectionSpec projection_from_json(const nlohmann::json &j);

/// Throws ConfigError when a parameter violates its range for @p sample_rate.
void validate(const ProjectionSpec &spec, double sample_rate);

struct ApplyDiagnostics {
  double max_imag_residue = 0.0;
};

/// Applies the transforms in order to every channel. Output keeps C, T and
/// the sample rate.
Waveform apply(const ProjectionSpec &spec, const Waveform &x,
               ApplyDiagnostics *diag = nullptr);

/// Warped sampling grid w(t) in [0, T-1], strictly increasing.
std::vector<double> warp_grid(std::size_t length, const xf::TimeWarp &warp,
                              Rng &rng);

/**
 * Inclusion probability and parameter range per transform. Sampled specs
 * list the included transforms in canonical order:
 * amplitude, warp, subband, phase, frequency dropout, mask, noise.
 */
struct ProjectionFamily {
  double p_amplitude = 0.5;
  double amplitude_lo = 0.7, amplitude_hi = 1.3;

  double p_warp = 0.5;
  std::uint32_t warp_knots = 4;
  double warp_disp_lo = 0.05, warp_disp_hi = 0.3;

  double p_subband = 0.5;
  double subband_lo_max = 1.0;   // Hz, f_lo ~ U(0, subband_lo_max)
  double subband_hi_min = 40.0;  // Hz, f_hi ~ U(subband_hi_min, Nyquist)

  double p_phase = 0.5;
  double phase_sigma_lo = 0.1, phase_sigma_hi = 1.0;
  std::uint32_t phase_smooth_len = 8;

  double p_freq_dropout = 0.3;
  std::uint32_t freq_bands_max = 2;
  std::uint32_t freq_band_len = 4;

  double p_mask = 0.5;
  std::uint32_t mask_spans_max = 2;
  double mask_span_lo = 0.02, mask_span_hi = 0.08;

  double p_noise = 0.5;
  double noise_lo = 0.01, noise_hi = 0.1;

  /// Every inclusion probability zero.
  static ProjectionFamily none();
  void validate() const;
  bool operator==(const ProjectionFamily &) const = default;
};

ProjectionSpec sample_projection(const ProjectionFamily &family,
                                 double sample_rate, Rng &rng);

/// Two independently sampled projections of the same waveform.
std::pair<Waveform, Waveform> two_views(const Waveform &x,
                                        const ProjectionFamily &family, Rng &rng);

} // namespace evf
