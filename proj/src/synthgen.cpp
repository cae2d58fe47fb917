// SPDX-License-Identifier: Apache-2.0
#include "evf/synthgen.hpp"

#include "evf/dataset.hpp"
#include "evf/errors.hpp"

#include <cmath>
#include <numbers>

namespace evf {

std::string kernel_name(EmissionKernel k) {
  switch (k) {
  case EmissionKernel::Gabor:
    return "gabor";
  case EmissionKernel::DerivativeOfGaussian:
    return "dog";
  }
  return "unknown";
}

EmissionKernel kernel_from_name(const std::string &name) {
  if (name == "gabor")
    return EmissionKernel::Gabor;
  if (name == "dog")
    return EmissionKernel::DerivativeOfGaussian;
  throw ConfigError("unknown emission kernel '" + name + "'");
}

std::vector<EventClassSpec> SyntheticCorpusConfig::default_classes() {
  // Four classes separated by carrier band and event duration.
  return {
      {1.5, 3.0, 0.6, 1.2, 0.8, 1.2},
      {5.0, 8.0, 0.4, 0.8, 0.8, 1.2},
      {11.0, 15.0, 0.3, 0.6, 0.8, 1.2},
      {20.0, 28.0, 0.2, 0.4, 0.8, 1.2},
  };
}

std::size_t SyntheticCorpusConfig::padded_length() const {
  std::size_t n = 1;
  while (n < length)
    n <<= 1;
  return n;
}

void SyntheticCorpusConfig::validate() const {
  if (num_recordings == 0)
    throw ConfigError("generator.num_recordings must be positive");
  if (length == 0 || channels == 0)
    throw ConfigError("generator.length and generator.channels must be positive");
  if (!(sample_rate > 0.0))
    throw ConfigError("generator.sample_rate must be positive");
  if (!(events_mean >= 0.0))
    throw ConfigError("generator.events_mean must be nonnegative");
  if (!(noise_sigma >= 0.0))
    throw ConfigError("generator.noise_sigma must be nonnegative");
  if (num_subjects == 0)
    throw ConfigError("generator.num_subjects must be positive");
  if (!(class_purity >= 0.0 && class_purity <= 1.0))
    throw ConfigError("generator.class_purity must lie in [0, 1]");
  if (classes.empty())
    throw ConfigError("generator.classes must not be empty");
  for (const auto &c : classes)
    if (!(c.freq_lo > 0.0 && c.freq_lo <= c.freq_hi && c.dur_lo > 0.0 &&
          c.dur_lo <= c.dur_hi && c.amp_lo <= c.amp_hi))
      throw ConfigError("generator.classes: ranges must be nonempty with "
                        "positive frequency and duration bounds");
  if (modalities.empty())
    throw ConfigError("generator.modalities must not be empty");
}

std::vector<LatentEvent> sample_events(const SyntheticCorpusConfig &cfg,
                                       Rng &rng, std::uint32_t dominant_class) {
  const auto num_classes = static_cast<std::uint32_t>(cfg.classes.size());
  const unsigned k = rng.poisson(cfg.events_mean);
  std::vector<LatentEvent> events;
  events.reserve(k);
  for (unsigned i = 0; i < k; ++i) {
    LatentEvent e;
    e.class_id = dominant_class;
    if (num_classes > 1 && !rng.bernoulli(cfg.class_purity)) {
      auto other = static_cast<std::uint32_t>(rng.index(num_classes - 1));
      e.class_id = other >= dominant_class ? other + 1 : other;
    }
    const auto &spec = cfg.classes[e.class_id];
    e.frequency = rng.uniform(spec.freq_lo, spec.freq_hi);
    e.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    e.tau = rng.uniform(0.0, cfg.duration_seconds());
    e.delta = rng.uniform(spec.dur_lo, spec.dur_hi);
    e.amplitude = rng.uniform(spec.amp_lo, spec.amp_hi);
    events.push_back(e);
  }
  return events;
}

double emission(const LatentEvent &e, EmissionKernel kernel, double t) {
  const double sigma = e.delta / 3.0;
  const double u = (t - e.tau) / sigma;
  const double envelope = std::exp(-0.5 * u * u);
  const double carrier =
      std::cos(2.0 * std::numbers::pi * e.frequency * (t - e.tau) + e.phase);
  switch (kernel) {
  case EmissionKernel::Gabor:
    return e.amplitude * envelope * carrier;
  case EmissionKernel::DerivativeOfGaussian:
    // -u exp(-u^2/2) peaks at e^{-1/2}; rescale to unit peak.
    return e.amplitude * (-u * envelope * std::exp(0.5)) * carrier;
  }
  return 0.0;
}

Waveform emit_waveform(const std::vector<LatentEvent> &events,
                       std::uint32_t modality_id,
                       const SyntheticCorpusConfig &cfg, Rng *noise) {
  if (modality_id >= cfg.modalities.size())
    throw ConfigError("modality " + std::to_string(modality_id) +
                      " not configured");
  const auto kernel = cfg.modalities[modality_id];
  Waveform w(cfg.channels, cfg.padded_length(), cfg.sample_rate);
  w.modality_id = modality_id;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    auto ch = w.channel(c);
    const double gain = 1.0 / static_cast<double>(c + 1);
    for (std::size_t i = 0; i < cfg.length; ++i) {
      const double t = static_cast<double>(i) / cfg.sample_rate;
      double acc = 0.0;
      for (const auto &e : events)
        acc += emission(e, kernel, t);
      ch[i] = gain * acc;
    }
    if (noise && cfg.noise_sigma > 0.0)
      for (std::size_t i = 0; i < cfg.length; ++i)
        ch[i] += noise->normal(0.0, cfg.noise_sigma);
  }
  return w;
}

Dataset generate_corpus(const SyntheticCorpusConfig &cfg) {
  cfg.validate();
  Dataset ds;
  ds.channels = cfg.channels;
  ds.length = static_cast<std::uint32_t>(cfg.padded_length());
  ds.sample_rate = static_cast<float>(cfg.sample_rate);
  ds.multimodal = cfg.modalities.size() > 1;
  const auto num_classes = static_cast<std::int64_t>(cfg.classes.size());
  for (std::uint32_t rec = 0; rec < cfg.num_recordings; ++rec) {
    Rng rng(cfg.seed, {rec, 0});
    const auto label = static_cast<std::uint32_t>(rng.uniform_int(0, num_classes - 1));
    const std::uint32_t subject = rec % cfg.num_subjects;
    auto events = sample_events(cfg, rng, label);
    for (std::uint32_t m = 0; m < cfg.modalities.size(); ++m) {
      Rng noise(cfg.seed, {rec, 1, m});
      auto w = emit_waveform(events, m, cfg, &noise);
      w.subject_id = subject;
      // Stored precision is f32; keep memory and disk identical.
      for (auto &v : w.data)
        v = static_cast<double>(static_cast<float>(v));
      RecordTruth truth;
      truth.index = static_cast<std::uint32_t>(ds.records.size());
      truth.pair = rec;
      truth.subject = subject;
      truth.modality = m;
      truth.label = static_cast<int>(label);
      truth.events = events;
      ds.records.push_back(std::move(w));
      ds.truth.push_back(std::move(truth));
    }
  }
  return ds;
}

} // namespace evf
