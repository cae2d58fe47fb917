// SPDX-License-Identifier: Apache-2.0
/**
 * @file   eval.hpp
 * @brief  Frozen-embedding evaluation: extraction with segmentation-variance
 *         uncertainty, linear probe, retrieval, robustness, boundary
 *         alignment and the ablation harness.
 */
#pragma once

#include "evf/config.hpp"
#include "evf/dataset.hpp"
#include "evf/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace evf {

struct EmbeddingSample {
  std::vector<double> z; // unit norm
  double variance = 0.0; // mean per-dimension population variance across samples
};

/// Averages the embeddings of @p num_samples sampled segmentations of @p x
/// and renormalizes.
EmbeddingSample extract_embedding(const EventEncoder &encoder, const Waveform &x,
                                  const SegSamplerConfig &seg, std::size_t num_samples,
                                  Rng &rng);

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<double> z; // N x dim, row-major
  std::vector<double> variance;
  std::vector<std::uint32_t> ids; // record index in the source corpus
  std::vector<int> labels;        // -1 when unlabeled
  std::vector<std::uint32_t> subjects;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(z).subspan(i * dim, dim);
  }
  EmbeddingSet subset(const std::vector<std::size_t> &rows) const;
};

/// Passed as the modality to embed paired recordings by the renormalized mean
/// of their per-modality embeddings.
inline constexpr std::size_t kSharedEmbedding = static_cast<std::size_t>(-1);

/// Embeds every record of @p modality (all records when the corpus is
/// unimodal). Segmentations for record r come from Rng(seed, {r, ...}).
EmbeddingSet embed_corpus(const Model &model, const Dataset &corpus,
                          const ExperimentConfig &cfg, std::size_t modality = 0);

/// Rows of @p set grouped by subject: a shuffled ceil(fraction * S) of the S
/// subjects (at least one, at most S - 1) go to the test side.
struct Split {
  std::vector<std::size_t> train, test;
};
Split split_by_subject(const std::vector<std::uint32_t> &subjects, double test_fraction,
                       std::uint64_t seed);

// --- metrics ---------------------------------------------------------------

/// Mann-Whitney rank statistic with averaged tie ranks. Throws
/// std::invalid_argument unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> positive);

/// Macro F1 over classes 0..K-1 that occur in @p truth or @p pred.
double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t num_classes);
double accuracy(std::span<const int> pred, std::span<const int> truth);
double balanced_accuracy(std::span<const int> pred, std::span<const int> truth,
                         std::size_t num_classes);

/// Average precision of a ranked binary relevance list (0 when nothing is relevant).
double average_precision(std::span<const int> ranked_relevance);
/// Binary-gain NDCG with log2(rank + 1) discount over the full list.
double ndcg(std::span<const int> ranked_relevance);

// --- probe -----------------------------------------------------------------

struct ProbeConfig {
  double l2 = 1e-4;
  std::size_t max_iters = 10000;
  double tol = 1e-6;
  std::size_t hidden = 0; // 0: linear; otherwise one ReLU layer of this width
  std::uint64_t seed = 0; // first-layer init when hidden > 0
};

/// Multinomial logistic regression on frozen embeddings, optionally after
/// one hidden ReLU layer.
struct Probe {
  std::size_t dim = 0, num_classes = 0, hidden = 0;
  /// Hidden rows hidden x (dim + 1) first when present, then the output
  /// layer num_classes x (width + 1); biases last in each row.
  std::vector<double> weights;
  std::vector<double> loss_history;
  std::size_t iterations = 0;

  /// N x num_classes class probabilities.
  std::vector<double> predict_proba(const EmbeddingSet &set) const;
  std::vector<int> predict(const EmbeddingSet &set) const;
};

/// Full-batch gradient descent with Armijo backtracking, so the recorded
/// loss never increases. Throws ConfigError when fewer than two classes occur.
/// Training objective at the probe's current weights: mean cross-entropy
/// plus (l2 / 2) times the squared non-bias weights. Fills @p grad when given.
double probe_loss(const Probe &probe, const EmbeddingSet &set, double l2,
                  std::vector<double> *grad = nullptr);

Probe train_probe(const EmbeddingSet &train, const ProbeConfig &cfg,
                        std::size_t num_classes = 0);

struct ClassificationReport {
  double auroc = 0.0; // one-vs-rest macro average
  double f1 = 0.0;    // macro
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::size_t n = 0;
  nlohmann::json to_json() const;
};

ClassificationReport score_probe(const Probe &probe, const EmbeddingSet &test);
ClassificationReport fit_and_score_probe(const EmbeddingSet &train, const EmbeddingSet &test,
                                         const ProbeConfig &cfg);

struct ProbeResult {
  Probe probe;
  Split split;
  ClassificationReport report;
};

/// Subject-disjoint split of @p set, probe fit on the train side, scored on the test side.
ProbeResult probe_eval(const EmbeddingSet &set, const EvalConfig &cfg);

// --- retrieval -------------------------------------------------------------

struct RetrievalReport {
  double map = 0.0;
  double ndcg = 0.0;
  std::size_t queries = 0;
  std::size_t excluded = 0; // queries without any relevant gallery item
  nlohmann::json to_json() const;
};

/// Cosine ranking of @p gallery for every query; relevance is a shared
/// dominant class. Gallery rows with the query's id are skipped.
RetrievalReport retrieval_eval(const EmbeddingSet &queries, const EmbeddingSet &gallery);

struct Baseline {
  double mean = 0.0, stddev = 0.0;
};

/// MAP of uniformly random rankings of @p labels against themselves.
Baseline random_map_baseline(const std::vector<int> &labels, std::size_t draws,
                             std::uint64_t seed);

// --- robustness ------------------------------------------------------------

struct Perturbation {
  std::string name; // noise, time_warp, freq_mask
  double severity = 0.0;

  /// Zero severity yields the identity projection.
  ProjectionSpec spec(std::uint64_t seed) const;
};

std::vector<Perturbation> perturbation_suite(const EvalConfig &cfg);

Dataset perturb_corpus(const Dataset &corpus, const Perturbation &p, std::uint64_t seed);

struct RobustnessRecord {
  std::string variant;
  std::string perturbation; // "clean" for the unperturbed test set
  double severity = 0.0;
  std::size_t level = 0; // index within the severity sweep
  ClassificationReport report;
  nlohmann::json to_json() const;
};

/// Re-embeds the perturbed test rows and scores the frozen probe. The
/// first record is the clean test set.
std::vector<RobustnessRecord> robustness_eval(const Model &model, const Probe &probe,
                                              const Dataset &corpus,
                                              const std::vector<std::size_t> &test_records,
                                              const ExperimentConfig &cfg,
                                              const std::string &variant = "model");

/// One row per variant, one column per perturbation (AUROC).
std::string robustness_table(const std::vector<RobustnessRecord> &records);

// --- boundary alignment ------------------------------------------------------

/// Local maxima of @p p strictly above @p threshold.
std::vector<std::size_t> boundary_peaks(std::span<const double> p, double threshold = 0.5);

/// Mean over onsets of the distance in frames to the nearest peak; @p frames
/// when there are no peaks.
double onset_distance(const std::vector<double> &onsets, const std::vector<std::size_t> &peaks,
                      std::size_t frames);

struct AlignmentReport {
  double score = 0.0; // frames, lower is better
  double baseline = 0.0;
  double baseline_std = 0.0;
  std::size_t recordings = 0; // with at least one event
  std::size_t onsets = 0;
  std::size_t without_peaks = 0; // recordings scored at the worst case
  nlohmann::json to_json() const;
};

/// Baseline: the same number of boundaries per recording placed uniformly at
/// random, averaged over cfg.eval.baseline_draws draws.
AlignmentReport boundary_alignment(const Model &model, const Dataset &corpus,
                                   const ExperimentConfig &cfg);

// --- uncertainty -------------------------------------------------------------

struct UncertaintyReport {
  std::vector<double> variance; // per record
  double mean = 0.0, median = 0.0;
  /// Spearman correlation of variance with the ground-truth event count.
  double event_count_correlation = 0.0;
  nlohmann::json to_json() const;
};

UncertaintyReport uncertainty_eval(const EmbeddingSet &set, const Dataset &corpus);

double spearman(std::span<const double> a, std::span<const double> b);

// --- ablation ----------------------------------------------------------------

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
};

/// full, w/o seg, w/o proj, w/o interact; each differs from @p base in one section.
std::vector<AblationVariant> ablation_variants(const ExperimentConfig &base);

struct AblationRow {
  std::string variant;
  std::vector<ClassificationReport> per_seed;
  double auroc_mean = 0.0, auroc_std = 0.0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  nlohmann::json to_json() const;
};

struct AblationProgress {
  std::string variant;
  std::size_t seed_index = 0;
  ClassificationReport report;
};

/// Pretrains every variant on @p corpus for cfg.eval.ablation_seeds seeds
/// (trainer and eval seed base + k) and probes the frozen embeddings of
/// @p probe_corpus.
std::vector<AblationRow> ablate(const Dataset &corpus, const Dataset &probe_corpus,
                                const ExperimentConfig &base,
                                const std::function<void(const AblationProgress &)> &progress = {});

/// Trainer and eval seeds of ablation run @p k.
ExperimentConfig ablation_run_config(const ExperimentConfig &variant, std::size_t k);

std::string ablation_table(const std::vector<AblationRow> &rows);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(std::span<const double> v);

/// Aligned-column text table.
std::string format_table(const std::vector<std::string> &header,
                         const std::vector<std::vector<std::string>> &rows);

} // namespace evf
