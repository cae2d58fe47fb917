// SPDX-License-Identifier: Apache-2.0
#include "evf/eval.hpp"

#include "evf/errors.hpp"
#include "evf/projections.hpp"
#include "evf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace evf {

using nlohmann::json;

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::size_t encoder_for(const Model &model, std::uint32_t modality) {
  return std::min<std::size_t>(modality, model.num_modalities() - 1);
}

EmbeddingSet embed_records(const Model &model, const Dataset &corpus,
                           const ExperimentConfig &cfg, const std::vector<std::size_t> &records) {
  NoGradGuard no_grad;
  EmbeddingSet set;
  set.dim = model.config().embed_dim;
  for (std::size_t r : records) {
    const Waveform &x = corpus.records.at(r);
    const EventEncoder &enc = model.encoder(encoder_for(model, x.modality_id));
    Rng rng(cfg.eval.seed, {r, 0x656d62u});
    const auto e = extract_embedding(enc, x, cfg.segmentation, cfg.eval.seg_samples, rng);
    set.z.insert(set.z.end(), e.z.begin(), e.z.end());
    set.variance.push_back(e.variance);
    set.ids.push_back(static_cast<std::uint32_t>(r));
    set.labels.push_back(corpus.has_labels() ? corpus.truth[r].label : -1);
    set.subjects.push_back(x.subject_id);
  }
  return set;
}

// One row per paired sample: the renormalized mean of its modality
// embeddings, with the mean of their variances. Ids name the first record.
EmbeddingSet embed_shared(const Model &model, const Dataset &corpus, const ExperimentConfig &cfg) {
  const std::size_t mods = corpus.num_modalities();
  std::vector<EmbeddingSet> per;
  for (std::size_t m = 0; m < mods; ++m) {
    std::vector<std::size_t> records;
    for (std::size_t i = 0; i < corpus.num_samples(); ++i)
      records.push_back(corpus.record_index(i, m));
    per.push_back(embed_records(model, corpus, cfg, records));
  }
  EmbeddingSet set = per[0];
  for (std::size_t i = 0; i < set.size(); ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < set.dim; ++c) {
      double v = 0.0;
      for (const auto &p : per)
        v += p.row(i)[c];
      set.z[i * set.dim + c] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0))
      throw NumericError("shared embedding of sample " + std::to_string(i) + " has zero norm");
    double var = 0.0;
    for (std::size_t c = 0; c < set.dim; ++c)
      set.z[i * set.dim + c] /= norm;
    for (const auto &p : per)
      var += p.variance[i];
    set.variance[i] = var / static_cast<double>(mods);
  }
  return set;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
      ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0; // 1-based average
    for (std::size_t k = i; k <= j; ++k)
      ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::size_t class_count(const std::vector<int> &labels) {
  int mx = -1;
  for (int l : labels) {
    if (l < 0)
      throw ConfigError("embedding set has unlabeled rows; a sidecar is required");
    mx = std::max(mx, l);
  }
  return static_cast<std::size_t>(mx + 1);
}

std::size_t distinct(const std::vector<int> &labels) {
  return std::set<int>(labels.begin(), labels.end()).size();
}

} // namespace

// --- extraction --------------------------------------------------------------

EmbeddingSample extract_embedding(const EventEncoder &encoder, const Waveform &x,
                                  const SegSamplerConfig &seg, std::size_t num_samples,
                                  Rng &rng) {
  if (num_samples == 0)
    throw ConfigError("number of segmentation samples must be at least 1");
  NoGradGuard no_grad;
  const std::size_t down = encoder.config().downsample();
  const std::size_t frames = x.length / down;
  std::vector<double> energy;
  if (seg.mode == SegMode::EnergyBiased)
    energy = frame_energy(x, down);
  const Tensor features = encoder.extract_local_features(x);

  std::vector<std::vector<double>> zs;
  for (std::size_t s = 0; s < num_samples; ++s) {
    const Segmentation sg =
        energy.empty() ? sample_segmentation(frames, seg, rng)
                       : sample_segmentation(frames, seg, rng, std::span<const double>(energy));
    const auto pooled = encoder.pool_segments(features, sg);
    const Tensor z = encoder.readout(encoder.config().use_interaction
                                         ? encoder.interact(pooled, frames)
                                         : pooled.rows);
    zs.emplace_back(z.data().begin(), z.data().end());
  }
  const std::size_t d = zs[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto &z : zs)
    for (std::size_t k = 0; k < d; ++k)
      mean[k] += z[k];
  for (double &m : mean)
    m /= static_cast<double>(num_samples);

  EmbeddingSample out;
  for (const auto &z : zs)
    for (std::size_t k = 0; k < d; ++k)
      out.variance += (z[k] - mean[k]) * (z[k] - mean[k]);
  out.variance /= static_cast<double>(num_samples * d);

  double norm = 0.0;
  for (double m : mean)
    norm += m * m;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw NumericError("mean embedding has zero or non-finite norm");
  out.z.resize(d);
  for (std::size_t k = 0; k < d; ++k)
    out.z[k] = mean[k] / norm;
  return out;
}

EmbeddingSet EmbeddingSet::subset(const std::vector<std::size_t> &rows) const {
  EmbeddingSet s;
  s.dim = dim;
  for (std::size_t i : rows) {
    const auto r = row(i);
    s.z.insert(s.z.end(), r.begin(), r.end());
    s.variance.push_back(variance[i]);
    s.ids.push_back(ids[i]);
    s.labels.push_back(labels[i]);
    s.subjects.push_back(subjects[i]);
  }
  return s;
}

EmbeddingSet embed_corpus(const Model &model, const Dataset &corpus, const ExperimentConfig &cfg,
                          std::size_t modality) {
  if (corpus.channels != model.config().in_channels ||
      corpus.length % model.config().downsample() != 0)
    throw ConfigError("corpus shape (C=" + std::to_string(corpus.channels) +
                      ", T=" + std::to_string(corpus.length) +
                      ") does not match the encoder configuration");
  if (modality == kSharedEmbedding && corpus.multimodal)
    return embed_shared(model, corpus, cfg);
  if (modality != kSharedEmbedding && corpus.multimodal && modality >= corpus.num_modalities())
    throw ConfigError("corpus has " + std::to_string(corpus.num_modalities()) +
                      " modalities; modality " + std::to_string(modality) + " requested");
  std::vector<std::size_t> records;
  for (std::size_t i = 0; i < corpus.num_samples(); ++i)
    records.push_back(corpus.record_index(i, corpus.multimodal ? modality : 0));
  return embed_records(model, corpus, cfg, records);
}

Split split_by_subject(const std::vector<std::uint32_t> &subjects, double test_fraction,
                       std::uint64_t seed) {
  std::vector<std::uint32_t> unique(subjects.begin(), subjects.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.size() < 2)
    throw ConfigError("a subject-disjoint split needs at least two subjects");
  Rng rng(seed, {0x73706c6974u});
  for (std::size_t i = unique.size() - 1; i > 0; --i)
    std::swap(unique[i], unique[rng.index(i + 1)]);
  const auto want = static_cast<std::size_t>(std::ceil(test_fraction * unique.size()));
  const std::size_t n_test = std::clamp<std::size_t>(want, 1, unique.size() - 1);
  const std::set<std::uint32_t> test(unique.begin(), unique.begin() + n_test);
  Split s;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    (test.count(subjects[i]) ? s.test : s.train).push_back(i);
  return s;
}

// --- metrics -----------------------------------------------------------------

double auroc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size())
    throw std::invalid_argument("auroc: scores and labels differ in length");
  const auto ranks = average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (positive[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0)
    throw std::invalid_argument("auroc needs both positive and negative examples");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t num_classes) {
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = pred[i] == static_cast<int>(c), t = truth[i] == static_cast<int>(c);
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    if (tp + fp + fn == 0)
      continue;
    acc += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    ++used;
  }
  return used ? acc / static_cast<double>(used) : 0.0;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (truth.empty())
    return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double balanced_accuracy(std::span<const int> pred, std::span<const int> truth,
                         std::size_t num_classes) {
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t n = 0, hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (truth[i] == static_cast<int>(c)) {
        ++n;
        hit += pred[i] == truth[i];
      }
    if (n == 0)
      continue;
    acc += static_cast<double>(hit) / static_cast<double>(n);
    ++used;
  }
  return used ? acc / static_cast<double>(used) : 0.0;
}

double average_precision(std::span<const int> rel) {
  double hits = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k)
    if (rel[k]) {
      hits += 1.0;
      acc += hits / static_cast<double>(k + 1);
    }
  return hits > 0.0 ? acc / hits : 0.0;
}

double ndcg(std::span<const int> rel) {
  double dcg = 0.0, ideal = 0.0;
  std::size_t relevant = 0;
  for (std::size_t k = 0; k < rel.size(); ++k)
    if (rel[k]) {
      dcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
      ++relevant;
    }
  for (std::size_t k = 0; k < relevant; ++k)
    ideal += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  return relevant ? dcg / ideal : 0.0;
}

// --- probe -------------------------------------------------------------------

namespace {

// Layout of the flat weight vector: with a hidden layer, hidden x (dim + 1)
// first-layer rows come first; the output layer is num_classes x (width + 1)
// where width is hidden or dim. Biases are the last entry of each row.
struct ProbeShape {
  std::size_t dim, hidden, k;

  std::size_t width() const { return hidden ? hidden : dim; }
  std::size_t out_offset() const { return hidden * (dim + 1); }
  std::size_t size() const { return out_offset() + k * (width() + 1); }
  bool is_bias(std::size_t i) const {
    return i < out_offset() ? i % (dim + 1) == dim : (i - out_offset()) % (width() + 1) == width();
  }

  // Fills the (post-ReLU) features and the logits of one row.
  void forward(const std::vector<double> &w, std::span<const double> x, std::vector<double> &feat,
               std::vector<double> &logits) const {
    if (hidden) {
      feat.resize(hidden);
      for (std::size_t h = 0; h < hidden; ++h) {
        const double *row = &w[h * (dim + 1)];
        double a = row[dim];
        for (std::size_t j = 0; j < dim; ++j)
          a += row[j] * x[j];
        feat[h] = std::max(a, 0.0);
      }
    } else {
      feat.assign(x.begin(), x.end());
    }
    const std::size_t wd = width();
    logits.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
      const double *row = &w[out_offset() + c * (wd + 1)];
      double s = row[wd];
      for (std::size_t j = 0; j < wd; ++j)
        s += row[j] * feat[j];
      logits[c] = s;
    }
  }
};

struct ProbeObjective {
  const EmbeddingSet &data;
  ProbeShape shape;
  double l2;

  // Mean cross-entropy plus (l2 / 2) * |weights without biases|^2; fills grad when given.
  double operator()(const std::vector<double> &w, std::vector<double> *grad) const {
    const std::size_t d = shape.dim, n = data.size(), wd = shape.width(), k = shape.k;
    const std::size_t off = shape.out_offset();
    if (grad)
      grad->assign(w.size(), 0.0);
    double loss = 0.0;
    std::vector<double> feat, logits, dfeat(wd);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = data.row(i);
      shape.forward(w, x, feat, logits);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits)
        z += std::exp(l - mx);
      const double lse = mx + std::log(z);
      const auto y = static_cast<std::size_t>(data.labels[i]);
      loss += lse - logits[y];
      if (!grad)
        continue;
      std::fill(dfeat.begin(), dfeat.end(), 0.0);
      for (std::size_t c = 0; c < k; ++c) {
        const double r = std::exp(logits[c] - lse) - (c == y ? 1.0 : 0.0);
        double *g = &(*grad)[off + c * (wd + 1)];
        const double *row = &w[off + c * (wd + 1)];
        for (std::size_t j = 0; j < wd; ++j) {
          g[j] += r * feat[j];
          dfeat[j] += r * row[j];
        }
        g[wd] += r;
      }
      for (std::size_t h = 0; h < shape.hidden; ++h) {
        if (feat[h] <= 0.0)
          continue;
        double *g = &(*grad)[h * (d + 1)];
        for (std::size_t j = 0; j < d; ++j)
          g[j] += dfeat[h] * x[j];
        g[d] += dfeat[h];
      }
    }
    loss /= static_cast<double>(n);
    double reg = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!shape.is_bias(i))
        reg += w[i] * w[i];
    if (grad) {
      for (double &g : *grad)
        g /= static_cast<double>(n);
      for (std::size_t i = 0; i < w.size(); ++i)
        if (!shape.is_bias(i))
          (*grad)[i] += l2 * w[i];
    }
    return loss + 0.5 * l2 * reg;
  }
};

} // namespace

std::vector<double> Probe::predict_proba(const EmbeddingSet &set) const {
  if (set.dim != dim)
    throw ConfigError("probe expects " + std::to_string(dim) + "-dimensional embeddings, got " +
                      std::to_string(set.dim));
  const ProbeShape shape{dim, hidden, num_classes};
  std::vector<double> out(set.size() * num_classes), feat, logits;
  for (std::size_t i = 0; i < set.size(); ++i) {
    shape.forward(weights, set.row(i), feat, logits);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    double *p = &out[i * num_classes];
    for (std::size_t c = 0; c < num_classes; ++c)
      z += (p[c] = std::exp(logits[c] - mx));
    for (std::size_t c = 0; c < num_classes; ++c)
      p[c] /= z;
  }
  return out;
}

std::vector<int> Probe::predict(const EmbeddingSet &set) const {
  const auto p = predict_proba(set);
  std::vector<int> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double *row = &p[i * num_classes];
    out[i] = static_cast<int>(std::max_element(row, row + num_classes) - row);
  }
  return out;
}

double probe_loss(const Probe &probe, const EmbeddingSet &set, double l2,
                  std::vector<double> *grad) {
  if (set.dim != probe.dim)
    throw ConfigError("probe expects " + std::to_string(probe.dim) +
                      "-dimensional embeddings, got " + std::to_string(set.dim));
  class_count(set.labels);
  const ProbeObjective objective{set, {probe.dim, probe.hidden, probe.num_classes}, l2};
  return objective(probe.weights, grad);
}

Probe train_probe(const EmbeddingSet &train, const ProbeConfig &cfg, std::size_t num_classes) {
  const std::size_t k = std::max(num_classes, class_count(train.labels));
  if (distinct(train.labels) < 2)
    throw ConfigError("probe training split contains a single class");
  const ProbeShape shape{train.dim, cfg.hidden, k};
  Probe probe;
  probe.dim = train.dim;
  probe.hidden = cfg.hidden;
  probe.num_classes = k;
  probe.weights.assign(shape.size(), 0.0);
  // The linear case is convex and starts from zero; a hidden layer needs
  // random first-layer weights to break symmetry.
  if (cfg.hidden) {
    Rng rng(cfg.seed, {0x70726f6265u});
    const double scale = std::sqrt(2.0 / static_cast<double>(train.dim));
    for (std::size_t i = 0; i < shape.out_offset(); ++i)
      if (!shape.is_bias(i))
        probe.weights[i] = scale * rng.normal();
  }

  const ProbeObjective objective{train, shape, cfg.l2};
  std::vector<double> grad, candidate(probe.weights.size());
  double loss = objective(probe.weights, &grad);
  probe.loss_history.push_back(loss);
  double step = 1.0;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    double gg = 0.0;
    for (double g : grad)
      gg += g * g;
    if (gg == 0.0)
      break;
    double next = 0.0;
    bool accepted = false;
    for (; step > 1e-12; step *= 0.5) {
      for (std::size_t i = 0; i < candidate.size(); ++i)
        candidate[i] = probe.weights[i] - step * grad[i];
      next = objective(candidate, nullptr);
      if (next <= loss - 1e-4 * step * gg) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      break;
    probe.weights.swap(candidate);
    probe.iterations = it + 1;
    probe.loss_history.push_back(next);
    const double delta = loss - next;
    loss = objective(probe.weights, &grad);
    if (delta < cfg.tol)
      break;
    step = std::min(step * 2.0, 1e4);
  }
  return probe;
}

json ClassificationReport::to_json() const {
  return {{"auroc", auroc},
          {"f1", f1},
          {"accuracy", accuracy},
          {"balanced_accuracy", balanced_accuracy},
          {"n", n}};
}

ClassificationReport score_probe(const Probe &probe, const EmbeddingSet &test) {
  if (distinct(test.labels) < 2)
    throw ConfigError("probe test split contains a single class");
  const std::size_t k = probe.num_classes;
  if (class_count(test.labels) > k)
    throw ConfigError("test split has a class the probe never saw");
  const auto proba = probe.predict_proba(test);
  const auto pred = probe.predict(test);
  ClassificationReport r;
  r.n = test.size();
  double acc = 0.0;
  std::size_t used = 0;
  std::vector<double> scores(test.size());
  std::vector<int> positive(test.size());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      scores[i] = proba[i * k + c];
      positive[i] = test.labels[i] == static_cast<int>(c);
      pos += positive[i];
    }
    if (pos == 0 || pos == test.size())
      continue;
    acc += auroc(scores, positive);
    ++used;
  }
  r.auroc = acc / static_cast<double>(used);
  r.f1 = macro_f1(pred, test.labels, k);
  r.accuracy = accuracy(pred, test.labels);
  r.balanced_accuracy = balanced_accuracy(pred, test.labels, k);
  return r;
}

ClassificationReport fit_and_score_probe(const EmbeddingSet &train, const EmbeddingSet &test,
                                         const ProbeConfig &cfg) {
  const std::size_t k = std::max(class_count(train.labels), class_count(test.labels));
  return score_probe(train_probe(train, cfg, k), test);
}

ProbeResult probe_eval(const EmbeddingSet &set, const EvalConfig &cfg) {
  ProbeResult r;
  r.split = split_by_subject(set.subjects, cfg.test_fraction, cfg.seed);
  const auto train = set.subset(r.split.train);
  const auto test = set.subset(r.split.test);
  r.probe = train_probe(train,
                        {cfg.probe_l2, cfg.probe_max_iters, cfg.probe_tol, cfg.probe_hidden, cfg.seed},
                        class_count(set.labels));
  r.report = score_probe(r.probe, test);
  return r;
}

// --- retrieval ---------------------------------------------------------------

json RetrievalReport::to_json() const {
  return {{"map", map}, {"ndcg", ndcg}, {"queries", queries}, {"excluded", excluded}};
}

RetrievalReport retrieval_eval(const EmbeddingSet &queries, const EmbeddingSet &gallery) {
  if (gallery.size() == 0)
    throw ConfigError("retrieval gallery is empty");
  if (queries.dim != gallery.dim)
    throw ConfigError("query and gallery embeddings differ in dimension");
  class_count(queries.labels);
  class_count(gallery.labels);
  RetrievalReport r;
  double map_acc = 0.0, ndcg_acc = 0.0;
  std::vector<std::pair<double, std::size_t>> ranked;
  std::vector<int> rel;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto zq = queries.row(q);
    ranked.clear();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (gallery.ids[g] == queries.ids[q])
        continue;
      const auto zg = gallery.row(g);
      double dot = 0.0, nq = 0.0, ng = 0.0;
      for (std::size_t k = 0; k < zq.size(); ++k) {
        dot += zq[k] * zg[k];
        nq += zq[k] * zq[k];
        ng += zg[k] * zg[k];
      }
      ranked.emplace_back(dot / std::sqrt(nq * ng), g);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto &a, const auto &b) { return a.first > b.first; });
    rel.clear();
    for (const auto &[sim, g] : ranked)
      rel.push_back(gallery.labels[g] == queries.labels[q]);
    if (std::find(rel.begin(), rel.end(), 1) == rel.end()) {
      ++r.excluded;
      continue;
    }
    map_acc += average_precision(rel);
    ndcg_acc += ndcg(rel);
    ++r.queries;
  }
  if (r.queries) {
    r.map = map_acc / static_cast<double>(r.queries);
    r.ndcg = ndcg_acc / static_cast<double>(r.queries);
  }
  return r;
}

Baseline random_map_baseline(const std::vector<int> &labels, std::size_t draws,
                             std::uint64_t seed) {
  const std::size_t n = labels.size();
  std::vector<double> maps;
  std::vector<std::size_t> order;
  std::vector<int> rel;
  for (std::size_t draw = 0; draw < draws; ++draw) {
    Rng rng(seed, {0x72616e64u, draw});
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t q = 0; q < n; ++q) {
      order.clear();
      for (std::size_t g = 0; g < n; ++g)
        if (g != q)
          order.push_back(g);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);
      rel.clear();
      for (std::size_t g : order)
        rel.push_back(labels[g] == labels[q]);
      if (std::find(rel.begin(), rel.end(), 1) == rel.end())
        continue;
      acc += average_precision(rel);
      ++used;
    }
    maps.push_back(used ? acc / static_cast<double>(used) : 0.0);
  }
  const auto [m, s] = mean_std(maps);
  return {m, s};
}

// --- robustness --------------------------------------------------------------

ProjectionSpec Perturbation::spec(std::uint64_t seed) const {
  if (severity == 0.0)
    return ProjectionSpec::identity();
  ProjectionSpec s;
  s.seed = seed;
  if (name == "noise")
    s.transforms.push_back(xf::NoiseInject{severity});
  else if (name == "time_warp")
    s.transforms.push_back(xf::TimeWarp{4, severity});
  else if (name == "freq_mask")
    s.transforms.push_back(xf::FreqDropout{static_cast<std::uint32_t>(std::lround(severity)), 4});
  else
    throw ConfigError("unknown perturbation '" + name + "'");
  return s;
}

std::vector<Perturbation> perturbation_suite(const EvalConfig &cfg) {
  std::vector<Perturbation> out;
  for (double s : cfg.noise_severities)
    out.push_back({"noise", s});
  for (double s : cfg.warp_severities)
    out.push_back({"time_warp", s});
  for (double s : cfg.freq_mask_severities)
    out.push_back({"freq_mask", s});
  return out;
}

Dataset perturb_corpus(const Dataset &corpus, const Perturbation &p, std::uint64_t seed) {
  Dataset out = corpus;
  for (std::size_t r = 0; r < out.records.size(); ++r) {
    Rng rng(seed, {0x70657274u, r});
    out.records[r] = apply(p.spec(rng.next_u64()), corpus.records[r]);
  }
  return out;
}

json RobustnessRecord::to_json() const {
  return {{"variant", variant}, {"perturbation", perturbation}, {"severity", severity},
          {"level", level},     {"report", report.to_json()}};
}

std::vector<RobustnessRecord> robustness_eval(const Model &model, const Probe &probe,
                                              const Dataset &corpus,
                                              const std::vector<std::size_t> &test_records,
                                              const ExperimentConfig &cfg,
                                              const std::string &variant) {
  std::vector<RobustnessRecord> out;
  out.push_back({variant, "clean", 0.0, 0,
                 score_probe(probe, embed_records(model, corpus, cfg, test_records))});
  std::map<std::string, std::size_t> level;
  std::size_t idx = 0;
  for (const auto &p : perturbation_suite(cfg.eval)) {
    Dataset perturbed = corpus;
    for (std::size_t r : test_records) {
      Rng rng(cfg.eval.seed, {0x70657274u, idx, r});
      perturbed.records[r] = apply(p.spec(rng.next_u64()), corpus.records[r]);
    }
    out.push_back({variant, p.name, p.severity, level[p.name]++,
                   score_probe(probe, embed_records(model, perturbed, cfg, test_records))});
    ++idx;
  }
  return out;
}

std::string robustness_table(const std::vector<RobustnessRecord> &records) {
  std::vector<std::string> header = {"variant"};
  std::vector<std::string> variants;
  std::map<std::pair<std::string, std::string>, double> cell;
  for (const auto &r : records) {
    const std::string col =
        r.perturbation == "clean" ? "clean" : r.perturbation + "@" + fmt(r.severity, 2);
    if (std::find(header.begin(), header.end(), col) == header.end())
      header.push_back(col);
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
      variants.push_back(r.variant);
    cell[{r.variant, col}] = r.report.auroc;
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto &v : variants) {
    std::vector<std::string> row = {v};
    for (std::size_t c = 1; c < header.size(); ++c) {
      auto it = cell.find({v, header[c]});
      row.push_back(it == cell.end() ? "-" : fmt(it->second));
    }
    rows.push_back(std::move(row));
  }
  return format_table(header, rows);
}

// --- boundary alignment ------------------------------------------------------

std::vector<std::size_t> boundary_peaks(std::span<const double> p, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < p.size(); ++f) {
    if (!(p[f] > threshold))
      continue;
    const bool left = f == 0 || p[f] > p[f - 1];
    const bool right = f + 1 == p.size() || p[f] >= p[f + 1];
    if (left && right)
      out.push_back(f);
  }
  return out;
}

double onset_distance(const std::vector<double> &onsets, const std::vector<std::size_t> &peaks,
                      std::size_t frames) {
  if (onsets.empty())
    return 0.0;
  double acc = 0.0;
  for (double o : onsets) {
    double best = static_cast<double>(frames);
    for (std::size_t p : peaks)
      best = std::min(best, std::abs(o - static_cast<double>(p)));
    acc += best;
  }
  return acc / static_cast<double>(onsets.size());
}

json AlignmentReport::to_json() const {
  return {{"score", score},           {"baseline", baseline},
          {"baseline_std", baseline_std}, {"recordings", recordings},
          {"onsets", onsets},         {"without_peaks", without_peaks}};
}

AlignmentReport boundary_alignment(const Model &model, const Dataset &corpus,
                                   const ExperimentConfig &cfg) {
  if (!corpus.has_labels())
    throw ConfigError("boundary alignment needs the ground-truth sidecar");
  NoGradGuard no_grad;
  const std::size_t down = model.config().downsample();
  const std::size_t frames = corpus.length / down;

  struct Item {
    std::vector<double> onsets;
    std::size_t num_peaks;
  };
  std::vector<Item> items;
  AlignmentReport rep;
  double total = 0.0;
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    const Waveform &x = corpus.records[r];
    if (x.modality_id != 0 || corpus.truth[r].events.empty())
      continue;
    const EventEncoder &enc = model.encoder(0);
    const Tensor p = enc.predict_boundaries(enc.extract_local_features(x));
    const auto peaks = boundary_peaks(p.data());
    Item item;
    for (const auto &e : corpus.truth[r].events)
      item.onsets.push_back(e.tau * x.sample_rate / static_cast<double>(down));
    item.num_peaks = peaks.size();
    rep.without_peaks += peaks.empty();
    total += onset_distance(item.onsets, peaks, frames) * static_cast<double>(item.onsets.size());
    rep.onsets += item.onsets.size();
    items.push_back(std::move(item));
  }
  rep.recordings = items.size();
  if (rep.onsets == 0)
    return rep;
  rep.score = total / static_cast<double>(rep.onsets);

  std::vector<double> draws;
  std::vector<std::size_t> pool(frames), peaks;
  for (std::size_t d = 0; d < cfg.eval.baseline_draws; ++d) {
    Rng rng(cfg.eval.seed, {0x626173u, d});
    double acc = 0.0;
    for (const auto &item : items) {
      const std::size_t k = std::clamp<std::size_t>(item.num_peaks, 1, frames);
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t i = 0; i < k; ++i)
        std::swap(pool[i], pool[i + rng.index(frames - i)]);
      peaks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      acc += onset_distance(item.onsets, peaks, frames) * static_cast<double>(item.onsets.size());
    }
    draws.push_back(acc / static_cast<double>(rep.onsets));
  }
  std::tie(rep.baseline, rep.baseline_std) = mean_std(draws);
  return rep;
}

// --- uncertainty -------------------------------------------------------------

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    return 0.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const auto [ma, sa] = mean_std(ra);
  const auto [mb, sb] = mean_std(rb);
  if (sa == 0.0 || sb == 0.0)
    return 0.0;
  double cov = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i)
    cov += (ra[i] - ma) * (rb[i] - mb);
  cov /= static_cast<double>(ra.size() - 1);
  return cov / (sa * sb);
}

json UncertaintyReport::to_json() const {
  return {{"mean", mean},
          {"median", median},
          {"event_count_correlation", event_count_correlation},
          {"variance", variance}};
}

UncertaintyReport uncertainty_eval(const EmbeddingSet &set, const Dataset &corpus) {
  UncertaintyReport r;
  r.variance = set.variance;
  if (r.variance.empty())
    return r;
  r.mean = mean_std(r.variance).first;
  auto sorted = r.variance;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  if (corpus.has_labels()) {
    std::vector<double> counts;
    for (auto id : set.ids)
      counts.push_back(static_cast<double>(corpus.truth.at(id).events.size()));
    r.event_count_correlation = spearman(r.variance, counts);
  }
  return r;
}

// --- ablation ----------------------------------------------------------------

std::vector<AblationVariant> ablation_variants(const ExperimentConfig &base) {
  std::vector<AblationVariant> out;
  out.push_back({"full", base});
  out.push_back({"w/o seg", base});
  out.back().config.segmentation.mode = SegMode::FixedUniform;
  out.push_back({"w/o proj", base});
  out.back().config.projections = ProjectionFamily::none();
  out.push_back({"w/o interact", base});
  out.back().config.encoder.use_interaction = false;
  return out;
}

json AblationRow::to_json() const {
  json seeds = json::array();
  for (const auto &r : per_seed)
    seeds.push_back(r.to_json());
  return {{"variant", variant},
          {"auroc_mean", auroc_mean},
          {"auroc_std", auroc_std},
          {"accuracy_mean", accuracy_mean},
          {"accuracy_std", accuracy_std},
          {"f1_mean", f1_mean},
          {"f1_std", f1_std},
          {"seeds", seeds}};
}

ExperimentConfig ablation_run_config(const ExperimentConfig &variant, std::size_t k) {
  ExperimentConfig c = variant;
  c.trainer.seed = variant.trainer.seed + k;
  c.eval.seed = variant.eval.seed + k;
  return c;
}

std::vector<AblationRow> ablate(const Dataset &corpus, const Dataset &probe_corpus,
                                const ExperimentConfig &base,
                                const std::function<void(const AblationProgress &)> &progress) {
  ExperimentConfig cfg = base;
  if (cfg.eval.ablation_steps > 0) {
    cfg.trainer.total_steps = cfg.eval.ablation_steps;
    cfg.trainer.warmup_steps = std::min(cfg.trainer.warmup_steps, cfg.trainer.total_steps);
  }
  cfg.validate();
  std::vector<AblationRow> rows;
  for (const auto &variant : ablation_variants(cfg)) {
    AblationRow row;
    row.variant = variant.name;
    std::vector<double> au, ac, f1;
    for (std::size_t k = 0; k < cfg.eval.ablation_seeds; ++k) {
      const ExperimentConfig c = ablation_run_config(variant.config, k);
      const TrainState state = pretrain(corpus, c);
      const auto rep = probe_eval(embed_corpus(state.model, probe_corpus, c), c.eval).report;
      row.per_seed.push_back(rep);
      au.push_back(rep.auroc);
      ac.push_back(rep.accuracy);
      f1.push_back(rep.f1);
      if (progress)
        progress({variant.name, k, rep});
    }
    std::tie(row.auroc_mean, row.auroc_std) = mean_std(au);
    std::tie(row.accuracy_mean, row.accuracy_std) = mean_std(ac);
    std::tie(row.f1_mean, row.f1_std) = mean_std(f1);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow> &rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto &r : rows)
    body.push_back({r.variant, fmt(r.auroc_mean) + " ± " + fmt(r.auroc_std),
                    fmt(r.accuracy_mean) + " ± " + fmt(r.accuracy_std),
                    fmt(r.f1_mean) + " ± " + fmt(r.f1_std)});
  return format_table({"variant", "AUROC", "accuracy", "F1"}, body);
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty())
    return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2)
    return {m, 0.0};
  double ss = 0.0;
  for (double x : v)
    ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string format_table(const std::vector<std::string> &header,
                         const std::vector<std::vector<std::string>> &rows) {
  // Width in code points so that "±" counts as one column.
  auto width = [](const std::string &s) {
    std::size_t w = 0;
    for (unsigned char c : s)
      w += (c & 0xc0) != 0x80;
    return w;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c)
    w[c] = width(header[c]);
  for (const auto &r : rows)
    for (std::size_t c = 0; c < r.size() && c < w.size(); ++c)
      w[c] = std::max(w[c], width(r[c]));
  std::ostringstream out;
  auto line = [&](const std::vector<std::string> &cells) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      const std::string &s = c < cells.size() ? cells[c] : std::string();
      const std::string pad(w[c] - width(s), ' ');
      if (c)
        out << "  ";
      out << (c == 0 ? s + pad : pad + s);
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t c = 0; c < w.size(); ++c)
    total += w[c] + (c ? 2 : 0);
  out << std::string(total, '-') << '\n';
  for (const auto &r : rows)
    line(r);
  return out.str();
}

} // namespace evf
