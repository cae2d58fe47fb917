// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synthgen.hpp
 * @brief  Synthetic corpora drawn from a latent event field.
 *
 * Each recording is a superposition of latent events e = (u, tau, delta, a)
 * pushed through a fixed analytic emission kernel, plus i.i.d. Gaussian
 * noise. Every modality is a different kernel applied to the same events,
 * so paired modalities share ground truth exactly.
 */
#pragma once

#include "evf/rng.hpp"
#include "evf/waveform.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evf {

struct LatentEvent {
  // Latent state u = (class_id, frequency, phase).
  std::uint32_t class_id = 0;
  double frequency = 0.0; // Hz
  double phase = 0.0;     // radians
  double tau = 0.0;       // onset, seconds
  double delta = 0.0;     // duration, seconds
  double amplitude = 0.0;

  std::vector<double> state() const {
    return {static_cast<double>(class_id), frequency, phase};
  }
  bool operator==(const LatentEvent &) const = default;
};

struct EventClassSpec {
  double freq_lo = 1.0, freq_hi = 2.0; // Hz
  double dur_lo = 0.1, dur_hi = 0.2;   // seconds
  double amp_lo = 1.0, amp_hi = 1.0;
  bool operator==(const EventClassSpec &) const = default;
};

enum class EmissionKernel : std::uint32_t {
  Gabor = 0,               // Gaussian envelope
  DerivativeOfGaussian = 1 // first-derivative-of-Gaussian envelope
};

std::string kernel_name(EmissionKernel k);
EmissionKernel kernel_from_name(const std::string &name);

struct SyntheticCorpusConfig {
  std::uint32_t num_recordings = 256;
  std::uint32_t length = 512; // samples; padded to the next power of two
  std::uint32_t channels = 1;
  double sample_rate = 128.0;
  double events_mean = 6.0; // Poisson mean events per recording
  double noise_sigma = 0.1;
  std::uint32_t num_subjects = 64;
  // Probability that an event takes the recording's dominant class.
  double class_purity = 0.8;
  std::vector<EventClassSpec> classes = default_classes();
  std::vector<EmissionKernel> modalities = {EmissionKernel::Gabor};
  std::uint64_t seed = 0;

  static std::vector<EventClassSpec> default_classes();
  std::size_t padded_length() const;
  double duration_seconds() const { return length / sample_rate; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;
  bool operator==(const SyntheticCorpusConfig &) const = default;
};

/// Ground truth for one stored record; paired modality records share events.
struct RecordTruth {
  std::uint32_t index = 0;
  std::uint32_t pair = 0; // recording index shared by all modalities
  std::uint32_t subject = 0;
  std::uint32_t modality = 0;
  int label = -1; // dominant class
  std::vector<LatentEvent> events;
};

/// K ~ Poisson(events_mean) events; each takes @p dominant_class with
/// probability class_purity, else a uniformly chosen other class.
std::vector<LatentEvent> sample_events(const SyntheticCorpusConfig &cfg,
                                       Rng &rng, std::uint32_t dominant_class);

/// Kernel value of one event at time t (seconds).
double emission(const LatentEvent &e, EmissionKernel kernel, double t);

/// Sum of emissions at sample times plus N(0, noise_sigma) noise drawn from
/// @p noise (no noise when null).
Waveform emit_waveform(const std::vector<LatentEvent> &events,
                       std::uint32_t modality_id,
                       const SyntheticCorpusConfig &cfg, Rng *noise = nullptr);

struct Dataset;

/// Fully determined by cfg (including seed). Records are ordered by
/// recording, then modality.
Dataset generate_corpus(const SyntheticCorpusConfig &cfg);

} // namespace evf
