// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  Two-view batch assembly, AdamW with warmup and cosine decay,
 *         gradient clipping, the pretraining loop and resumption.
 *
 * Every random draw in a step comes from a stream keyed by (seed, step, ...),
 * so parameters plus optimizer moments at step k are all the state needed to
 * continue a run bit-exactly.
 */
#pragma once

#include "evf/config.hpp"
#include "evf/dataset.hpp"
#include "evf/losses.hpp"
#include "evf/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evf {

struct ViewPair {
  Waveform x1, x2;
  Segmentation s1 = Segmentation::single(1), s2 = Segmentation::single(1);
  ProjectionSpec p1, p2;
};

struct BatchItem {
  std::size_t sample = 0; // corpus sample index
  std::uint32_t subject = 0;
  std::vector<ViewPair> views; // one per trained modality
};

struct Batch {
  std::size_t step = 0;
  std::vector<BatchItem> items;
  ExclusionMask mask; // B x B, same-subject pairs set unless hard negatives
};

/// Modalities the model trains on for this config and corpus.
std::size_t trained_modalities(const ExperimentConfig &cfg, const Dataset &corpus);

/// Same-subject cross pairs (i != j) are excluded from the negatives.
ExclusionMask subject_mask(const std::vector<std::uint32_t> &subjects);

/// B distinct samples and two fresh (projection, segmentation) views of each,
/// fully determined by (@p seed, @p step).
Batch build_batch(const Dataset &corpus, const ExperimentConfig &cfg, std::size_t step,
                  std::uint64_t seed);

/// Linear warmup from 0, then cosine decay from peak to floor at total_steps.
double lr_at(std::size_t step, const TrainConfig &cfg);

struct ClipResult {
  double norm = 0.0;  // global gradient norm before clipping
  double scale = 1.0; // factor applied to every gradient
};

/// Throws NumericError naming the first parameter with a non-finite gradient.
ClipResult clip_gradients(const NamedTensors &params, double clip_norm);

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

/// Bias-corrected Adam on each parameter's gradient plus decoupled decay
/// theta -= lr * weight_decay * theta. Parameters without a gradient are
/// treated as having a zero gradient.
void adamw_step(const NamedTensors &params, AdamState &state, double lr, const AdamHyper &h);

struct LossReport {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double cons = 0.0; // multimodal runs: mean of cons_mod
  double sparsity = 0.0;
  double smoothness = 0.0;
  double agree = 0.0;
  double align = 0.0;
  std::vector<double> cons_mod;
  double grad_norm = 0.0;
  double clip_scale = 1.0;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json &j);
};

/// Forward pass over both views of every item; terms with zero weight are
/// left undefined.
LossParts batch_losses(const Model &model, const Batch &batch, const ExperimentConfig &cfg);

/// Forward, backward, clip and AdamW at learning rate lr_at(step).
LossReport train_step(Model &model, const Batch &batch, const ExperimentConfig &cfg,
                      AdamState &adam, std::size_t step);

/// Mean consistency loss over @p num_batches fixed batches of @p corpus
/// (keyed by @p seed, independent of training steps). No gradients.
double heldout_consistency(const Model &model, const Dataset &corpus,
                           const ExperimentConfig &cfg, std::uint64_t seed,
                           std::size_t num_batches = 4);

struct TrainState {
  Model model;
  AdamState adam;
  std::size_t step = 0; // last completed step
};

TrainState init_train_state(const ExperimentConfig &cfg, const Dataset &corpus);

Checkpoint make_checkpoint(const TrainState &state, const ExperimentConfig &cfg,
                           const nlohmann::json &run = nlohmann::json::object());
TrainState restore_train_state(const Checkpoint &ckpt, const Dataset &corpus);

struct PretrainOptions {
  /// Output directory for metrics.jsonl and checkpoints; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  /// Recorded in checkpoints so that resume can find the corpus.
  std::filesystem::path data_path;
  /// Stop after this step (0: run to total_steps), writing a checkpoint.
  std::size_t stop_after = 0;
  std::function<void(const LossReport &)> on_log;
};

/// Runs steps state.step + 1 .. total_steps. Appends one metrics record per
/// log interval and writes checkpoint_<step>.evck at checkpoint intervals plus
/// final.evck when the loop ends.
void run_training(TrainState &state, const Dataset &corpus, const ExperimentConfig &cfg,
                  const PretrainOptions &opts);

TrainState pretrain(const Dataset &corpus, const ExperimentConfig &cfg,
                    const PretrainOptions &opts = {});

/// Continues from a checkpoint; metrics records past the checkpoint step are
/// dropped from metrics.jsonl before new ones are appended.
TrainState resume(const std::filesystem::path &checkpoint, const Dataset &corpus,
                  PretrainOptions opts);

inline constexpr const char *kMetricsFile = "metrics.jsonl";
inline constexpr const char *kFinalCheckpoint = "final.evck";

} // namespace evf
