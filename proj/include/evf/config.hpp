// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Experiment configuration: one JSON document with a section per
 *         component. Parsing rejects unknown keys; serialization writes every
 *         field, so parse(serialize(c)) is the normalized form of c.
 */
#pragma once

#include "evf/encoder.hpp"
#include "evf/losses.hpp"
#include "evf/projections.hpp"
#include "evf/segmentation.hpp"
#include "evf/synthgen.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evf {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t total_steps = 500;
  std::size_t warmup_steps = 50;
  double peak_lr = 2e-3;
  double floor_lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  /// Train one encoder per modality with the alignment term. Needs a paired corpus.
  bool multimodal = false;
  /// Keep same-subject recordings as negatives instead of masking them.
  bool hard_negatives = false;
  std::size_t log_interval = 1;
  std::size_t checkpoint_interval = 100; // 0: final checkpoint only

  void validate() const;
  bool operator==(const TrainConfig &) const = default;
};

struct EvalConfig {
  std::size_t seg_samples = 8;
  double test_fraction = 0.25; // share of subjects held out by the probe split
  double probe_l2 = 1e-4;
  std::size_t probe_max_iters = 10000;
  double probe_tol = 1e-6;
  std::size_t probe_hidden = 0; // 0: linear probe
  std::vector<double> noise_severities = {0.0, 0.1, 0.3};
  std::vector<double> warp_severities = {0.0, 0.2, 0.4};
  std::vector<double> freq_mask_severities = {0.0, 2.0, 4.0}; // bands of 4 bins
  std::size_t ablation_seeds = 5;
  std::size_t ablation_steps = 0; // 0: trainer.total_steps
  std::size_t baseline_draws = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EvalConfig &) const = default;
};

struct ExperimentConfig {
  SyntheticCorpusConfig generator;
  ProjectionFamily projections;
  SegSamplerConfig segmentation;
  EncoderConfig encoder;
  LossWeights losses;
  TrainConfig trainer;
  EvalConfig eval;

  /// Frames per recording, F = T / D.
  std::size_t num_frames() const;
  /// Per-section checks plus cross-section consistency. Throws ConfigError.
  void validate() const;
  bool operator==(const ExperimentConfig &) const = default;
};

nlohmann::json to_json(const ExperimentConfig &cfg);
/// Missing keys take defaults; unknown keys and type mismatches throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json &j);
/// Parse, validate and re-serialize with every default explicit.
nlohmann::json normalize_config(const nlohmann::json &j);

ExperimentConfig load_config(const std::filesystem::path &path);

nlohmann::json to_json(const EncoderConfig &cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json &j);

} // namespace evf
