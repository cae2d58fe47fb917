// SPDX-License-Identifier: Apache-2.0
#include "evf/segmentation.hpp"

#include "evf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evf {

Segmentation::Segmentation(std::size_t num_frames, std::vector<std::size_t> boundaries)
    : num_frames_(num_frames), boundaries_(std::move(boundaries)) {
  if (num_frames_ == 0)
    throw std::invalid_argument("segmentation needs at least one frame");
  std::size_t prev = 0;
  for (auto b : boundaries_) {
    if (b <= prev || b >= num_frames_)
      throw std::invalid_argument("segmentation boundaries must be strictly "
                                  "increasing interior frames");
    prev = b;
  }
}

Segmentation Segmentation::uniform(std::size_t num_frames, std::size_t num_segments) {
  if (num_segments == 0 || num_segments > num_frames)
    throw std::invalid_argument("cannot split " + std::to_string(num_frames) +
                                " frames into " + std::to_string(num_segments) + " segments");
  std::vector<std::size_t> b;
  for (std::size_t i = 1; i < num_segments; ++i)
    b.push_back(i * num_frames / num_segments);
  return {num_frames, std::move(b)};
}

std::pair<std::size_t, std::size_t> Segmentation::span(std::size_t m) const {
  if (m >= num_segments())
    throw std::out_of_range("segment index out of range");
  const std::size_t start = m == 0 ? 0 : boundaries_[m - 1];
  const std::size_t end = m == boundaries_.size() ? num_frames_ : boundaries_[m];
  return {start, end};
}

std::size_t Segmentation::length(std::size_t m) const {
  auto [s, e] = span(m);
  return e - s;
}

double Segmentation::center(std::size_t m) const {
  auto [s, e] = span(m);
  return 0.5 * static_cast<double>(s + e);
}

std::size_t Segmentation::min_length() const {
  std::size_t best = num_frames_;
  for (std::size_t m = 0; m < num_segments(); ++m)
    best = std::min(best, length(m));
  return best;
}

std::vector<std::size_t> segment_membership(const Segmentation &seg) {
  std::vector<std::size_t> map(seg.num_frames());
  for (std::size_t m = 0; m < seg.num_segments(); ++m) {
    auto [s, e] = seg.span(m);
    std::fill(map.begin() + static_cast<std::ptrdiff_t>(s),
              map.begin() + static_cast<std::ptrdiff_t>(e), m);
  }
  return map;
}

std::string seg_mode_name(SegMode mode) {
  switch (mode) {
  case SegMode::UniformRandom:
    return "uniform_random";
  case SegMode::EnergyBiased:
    return "signal_energy_biased";
  case SegMode::FixedUniform:
    return "fixed_uniform";
  }
  return "unknown";
}

SegMode seg_mode_from_name(const std::string &name) {
  if (name == "uniform_random")
    return SegMode::UniformRandom;
  if (name == "signal_energy_biased")
    return SegMode::EnergyBiased;
  if (name == "fixed_uniform")
    return SegMode::FixedUniform;
  throw ConfigError("unknown segmentation mode '" + name + "'");
}

void SegSamplerConfig::validate(std::size_t num_frames) const {
  if (m_min < 1 || m_min > m_max)
    throw ConfigError("segmentation requires 1 <= m_min <= m_max");
  if (min_gap < 1)
    throw ConfigError("segmentation.min_gap must be at least 1 frame");
  if (m_max * min_gap > num_frames)
    throw ConfigError("segmentation infeasible: m_max * min_gap = " +
                      std::to_string(m_max * min_gap) + " exceeds " +
                      std::to_string(num_frames) + " frames");
}

namespace {

bool gaps_ok(const std::vector<std::size_t> &b, std::size_t frames, std::size_t min_gap) {
  std::size_t prev = 0;
  for (auto x : b) {
    if (x < prev + min_gap)
      return false;
    prev = x;
  }
  return prev + min_gap <= frames;
}

std::vector<std::size_t> draw_uniform(std::size_t frames, std::size_t count, Rng &rng) {
  std::vector<std::size_t> b;
  while (b.size() < count) {
    auto pick = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(frames) - 1));
    if (std::find(b.begin(), b.end(), pick) == b.end())
      b.push_back(pick);
  }
  std::sort(b.begin(), b.end());
  return b;
}

std::vector<std::size_t> draw_weighted(const std::vector<double> &weights, std::size_t count,
                                       Rng &rng) {
  // weights[t] for t in [0, F); index 0 is never a boundary.
  std::vector<double> w = weights;
  w[0] = 0.0;
  std::vector<std::size_t> b;
  while (b.size() < count) {
    double total = 0.0;
    for (double v : w)
      total += v;
    double u = rng.uniform() * total;
    std::size_t pick = w.size() - 1;
    for (std::size_t t = 1; t < w.size(); ++t) {
      if (u < w[t]) {
        pick = t;
        break;
      }
      u -= w[t];
    }
    while (w[pick] == 0.0) // guard against round-off landing on a used slot
      pick = pick > 1 ? pick - 1 : w.size() - 1;
    b.push_back(pick);
    w[pick] = 0.0;
  }
  std::sort(b.begin(), b.end());
  return b;
}

std::vector<double> boundary_weights(std::span<const double> energy) {
  const std::size_t f = energy.size();
  std::vector<double> grad(f, 0.0), smooth(f, 0.0);
  for (std::size_t t = 1; t < f; ++t)
    grad[t] = std::fabs(energy[t] - energy[t - 1]);
  double mean = 0.0;
  for (std::size_t t = 1; t < f; ++t) {
    const std::size_t lo = std::max<std::size_t>(1, t - 1);
    const std::size_t hi = std::min(f - 1, t + 1);
    double acc = 0.0;
    for (std::size_t j = lo; j <= hi; ++j)
      acc += grad[j];
    smooth[t] = acc / static_cast<double>(hi - lo + 1);
    mean += smooth[t];
  }
  mean /= static_cast<double>(std::max<std::size_t>(1, f - 1));
  // Floor keeps every interior frame reachable (random/signal hybrid).
  const double floor = 0.05 * mean + 1e-12;
  for (std::size_t t = 1; t < f; ++t)
    smooth[t] += floor;
  return smooth;
}

} // namespace

Segmentation sample_segmentation(std::size_t num_frames, const SegSamplerConfig &cfg, Rng &rng,
                                 std::optional<std::span<const double>> frame_energy) {
  cfg.validate(num_frames);
  if (cfg.mode == SegMode::FixedUniform)
    return Segmentation::uniform(num_frames, (cfg.m_min + cfg.m_max + 1) / 2);
  const auto m = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.m_min), static_cast<std::int64_t>(cfg.m_max)));
  if (m == 1)
    return Segmentation::single(num_frames);

  const bool biased = cfg.mode == SegMode::EnergyBiased && frame_energy.has_value();
  std::vector<double> weights;
  if (biased) {
    if (frame_energy->size() != num_frames)
      throw std::invalid_argument("frame energy length does not match frame count");
    weights = boundary_weights(*frame_energy);
  }
  for (int attempt = 0; attempt < kMaxRejectionAttempts; ++attempt) {
    auto b = biased ? draw_weighted(weights, m - 1, rng) : draw_uniform(num_frames, m - 1, rng);
    if (gaps_ok(b, num_frames, cfg.min_gap))
      return {num_frames, std::move(b)};
  }
  // Fallback: equal spacing with bounded jitter.
  auto base = Segmentation::uniform(num_frames, m).boundaries();
  const std::size_t slack = num_frames / m > cfg.min_gap ? (num_frames / m - cfg.min_gap) / 2 : 0;
  auto jittered = base;
  for (auto &x : jittered)
    x = static_cast<std::size_t>(static_cast<std::int64_t>(x) +
                                 rng.uniform_int(-static_cast<std::int64_t>(slack),
                                                 static_cast<std::int64_t>(slack)));
  if (gaps_ok(jittered, num_frames, cfg.min_gap))
    return {num_frames, std::move(jittered)};
  return {num_frames, std::move(base)};
}

std::vector<double> frame_energy(const Waveform &x, std::size_t downsample) {
  if (downsample == 0 || x.length % downsample != 0)
    throw std::invalid_argument("frame_energy: length not divisible by downsample factor");
  const std::size_t frames = x.length / downsample;
  std::vector<double> e(frames, 0.0);
  for (std::size_t c = 0; c < x.channels; ++c) {
    auto ch = x.channel(c);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t i = 0; i < downsample; ++i) {
        const double v = ch[f * downsample + i];
        e[f] += v * v;
      }
  }
  for (auto &v : e)
    v /= static_cast<double>(downsample * x.channels);
  return e;
}

} // namespace evf
