// SPDX-License-Identifier: Apache-2.0
#include "evf/trainer.hpp"

#include "evf/errors.hpp"
#include "evf/ops.hpp"
#include "evf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

namespace evf {

using nlohmann::json;

namespace {

std::size_t view_threads() {
  if (const char *d = std::getenv("EVF_DETERMINISTIC"); d && std::string(d) != "0")
    return 1;
  return std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
}

void check_corpus(const ExperimentConfig &cfg, const Dataset &corpus) {
  if (corpus.records.empty())
    throw ConfigError("training corpus is empty");
  if (corpus.channels != cfg.encoder.in_channels)
    throw ConfigError("corpus has " + std::to_string(corpus.channels) +
                      " channels, encoder expects " + std::to_string(cfg.encoder.in_channels));
  if (corpus.length % cfg.encoder.downsample() != 0)
    throw ConfigError("corpus length " + std::to_string(corpus.length) +
                      " is not a multiple of the downsample factor " +
                      std::to_string(cfg.encoder.downsample()));
  cfg.segmentation.validate(corpus.length / cfg.encoder.downsample());
  if (cfg.trainer.multimodal && !corpus.multimodal)
    throw ConfigError("trainer.multimodal needs a corpus with paired modalities");
}

Tensor stack_rows(const std::vector<Tensor> &rows) {
  std::vector<Tensor> r;
  r.reserve(rows.size());
  for (const auto &z : rows)
    r.push_back(reshape(z, {1, z.numel()}));
  return concat(r, 0);
}

double value_or_zero(const Tensor &t) { return t.defined() ? t.item() : 0.0; }

} // namespace

std::size_t trained_modalities(const ExperimentConfig &cfg, const Dataset &corpus) {
  return cfg.trainer.multimodal ? corpus.num_modalities() : 1;
}

ExclusionMask subject_mask(const std::vector<std::uint32_t> &subjects) {
  const std::size_t b = subjects.size();
  ExclusionMask mask(b * b, 0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (i != j && subjects[i] == subjects[j])
        mask[i * b + j] = 1;
  return mask;
}

Batch build_batch(const Dataset &corpus, const ExperimentConfig &cfg, std::size_t step,
                  std::uint64_t seed) {
  const std::size_t b = cfg.trainer.batch_size;
  const std::size_t n = corpus.num_samples();
  if (b < 2)
    throw ConfigError("batch size must be at least 2 for the contrastive loss");
  if (n < b)
    throw ConfigError("corpus has " + std::to_string(n) + " samples, fewer than batch size " +
                      std::to_string(b));
  const std::size_t mods = trained_modalities(cfg, corpus);
  const std::size_t down = cfg.encoder.downsample();
  const std::size_t frames = corpus.length / down;

  // Partial Fisher-Yates: the first b slots are a uniform draw without replacement.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i)
    order[i] = i;
  Rng pick(seed, {step, 0});
  for (std::size_t i = 0; i < b; ++i)
    std::swap(order[i], order[i + pick.index(n - i)]);

  Batch batch;
  batch.step = step;
  batch.items.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    batch.items[i].sample = order[i];
    batch.items[i].subject = corpus.records[corpus.record_index(order[i], 0)].subject_id;
    batch.items[i].views.resize(mods);
  }

  auto make_view = [&](std::size_t i, std::size_t m) {
    const Waveform &x = corpus.records[corpus.record_index(batch.items[i].sample, m)];
    Rng rng(seed, {step, 1, i, m});
    ViewPair &v = batch.items[i].views[m];
    v.p1 = sample_projection(cfg.projections, x.sample_rate, rng);
    v.p2 = sample_projection(cfg.projections, x.sample_rate, rng);
    v.x1 = apply(v.p1, x);
    v.x2 = apply(v.p2, x);
    if (cfg.segmentation.mode == SegMode::EnergyBiased) {
      const auto e1 = frame_energy(v.x1, down);
      const auto e2 = frame_energy(v.x2, down);
      v.s1 = sample_segmentation(frames, cfg.segmentation, rng, std::span<const double>(e1));
      v.s2 = sample_segmentation(frames, cfg.segmentation, rng, std::span<const double>(e2));
    } else {
      v.s1 = sample_segmentation(frames, cfg.segmentation, rng);
      v.s2 = sample_segmentation(frames, cfg.segmentation, rng);
    }
  };

  const std::size_t jobs = b * mods;
  const std::size_t workers = std::min(view_threads(), jobs);
  if (workers <= 1) {
    for (std::size_t k = 0; k < jobs; ++k)
      make_view(k / mods, k % mods);
  } else {
    // Each job writes its own slot from its own stream, so the result does
    // not depend on scheduling.
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < jobs; k += workers)
            make_view(k / mods, k % mods);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto &t : pool)
      t.join();
    for (auto &e : errors)
      if (e)
        std::rethrow_exception(e);
  }

  if (!cfg.trainer.hard_negatives) {
    std::vector<std::uint32_t> subjects;
    for (const auto &item : batch.items)
      subjects.push_back(item.subject);
    batch.mask = subject_mask(subjects);
  }
  return batch;
}

double lr_at(std::size_t step, const TrainConfig &cfg) {
  if (step > cfg.total_steps)
    throw std::invalid_argument("step " + std::to_string(step) + " exceeds total steps " +
                                std::to_string(cfg.total_steps));
  if (step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const std::size_t decay = cfg.total_steps - cfg.warmup_steps;
  const double progress =
      decay == 0 ? 1.0 : static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay);
  return cfg.floor_lr +
         0.5 * (cfg.peak_lr - cfg.floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

ClipResult clip_gradients(const NamedTensors &params, double clip_norm) {
  double sq = 0.0;
  for (const auto &[name, t] : params) {
    if (!t.has_grad())
      continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + name + "'");
      sq += g * g;
    }
  }
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (clip_norm > 0.0 && r.norm > clip_norm) {
    r.scale = clip_norm / r.norm;
    for (const auto &[name, t] : params) {
      if (!t.has_grad())
        continue;
      Tensor handle = t;
      for (double &g : handle.mutable_grad())
        g *= r.scale;
    }
  }
  return r;
}

void adamw_step(const NamedTensors &params, AdamState &state, double lr, const AdamHyper &h) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (const auto &[name, tensor] : params) {
    Tensor p = tensor;
    auto theta = p.mutable_data();
    auto &m = state.m[name];
    auto &v = state.v[name];
    if (m.size() != theta.size()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    const bool has = p.has_grad();
    const auto grad = has ? p.grad() : std::span<const double>();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = has ? grad[i] : 0.0;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= lr * h.weight_decay * theta[i];
      theta[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

json LossReport::to_json() const {
  return {{"step", step},         {"lr", lr},
          {"total", total},       {"cons", cons},
          {"sparsity", sparsity}, {"smoothness", smoothness},
          {"agree", agree},       {"align", align},
          {"cons_mod", cons_mod}, {"grad_norm", grad_norm},
          {"clip_scale", clip_scale}};
}

LossReport LossReport::from_json(const json &j) {
  LossReport r;
  r.step = j.at("step").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.total = j.at("total").get<double>();
  r.cons = j.at("cons").get<double>();
  r.sparsity = j.at("sparsity").get<double>();
  r.smoothness = j.at("smoothness").get<double>();
  r.agree = j.at("agree").get<double>();
  r.align = j.at("align").get<double>();
  r.cons_mod = j.at("cons_mod").get<std::vector<double>>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.clip_scale = j.at("clip_scale").get<double>();
  return r;
}

LossParts batch_losses(const Model &model, const Batch &batch, const ExperimentConfig &cfg) {
  const LossWeights &w = cfg.losses;
  const std::size_t mods = model.num_modalities();
  const bool seg_terms = w.sparse > 0.0 || w.smooth > 0.0 || w.agree > 0.0;

  std::vector<Tensor> z1s, z2s;
  std::vector<Tensor> sparse, smooth, agree;
  for (std::size_t m = 0; m < mods; ++m) {
    const EventEncoder &enc = model.encoder(m);
    std::vector<Tensor> z1, z2;
    for (const auto &item : batch.items) {
      const ViewPair &v = item.views.at(m);
      const auto r1 = enc.encode(v.x1, v.s1);
      const auto r2 = enc.encode(v.x2, v.s2);
      z1.push_back(r1.z);
      z2.push_back(r2.z);
      if (!seg_terms)
        continue;
      for (const Tensor *p : {&r1.boundary, &r2.boundary}) {
        if (w.sparse > 0.0)
          sparse.push_back(sparsity_term(*p));
        if (w.smooth > 0.0)
          smooth.push_back(smoothness_term(*p));
      }
      if (w.agree > 0.0)
        agree.push_back(kl_agreement(r1.boundary, r2.boundary));
    }
    z1s.push_back(stack_rows(z1));
    z2s.push_back(stack_rows(z2));
  }

  auto average = [](const std::vector<Tensor> &terms) {
    if (terms.empty())
      return Tensor();
    return mean(concat(terms, 0));
  };

  LossParts parts;
  parts.sparsity = average(sparse);
  parts.smoothness = average(smooth);
  parts.agree = average(agree);
  if (mods == 1) {
    parts.cons = info_nce(z1s[0], z2s[0], w.temperature, batch.mask);
  } else {
    for (std::size_t m = 0; m < mods; ++m)
      parts.cons_mod.push_back(info_nce(z1s[m], z2s[m], w.temperature, batch.mask));
    if (w.align > 0.0)
      parts.align = 0.5 * (multimodal_align(z1s) + multimodal_align(z2s));
  }
  return parts;
}

LossReport train_step(Model &model, const Batch &batch, const ExperimentConfig &cfg,
                      AdamState &adam, std::size_t step) {
  const auto params = model.parameters();
  for (auto [name, t] : params)
    t.zero_grad();

  const LossParts parts = batch_losses(model, batch, cfg);
  const Tensor total = total_loss(parts, cfg.losses);
  total.backward();
  const ClipResult clip = clip_gradients(params, cfg.trainer.clip_norm);
  const double lr = lr_at(step, cfg.trainer);
  const TrainConfig &tc = cfg.trainer;
  adamw_step(params, adam, lr, AdamHyper{tc.beta1, tc.beta2, tc.eps, tc.weight_decay});

  LossReport r;
  r.step = step;
  r.lr = lr;
  r.total = total.item();
  r.sparsity = value_or_zero(parts.sparsity);
  r.smoothness = value_or_zero(parts.smoothness);
  r.agree = value_or_zero(parts.agree);
  r.align = value_or_zero(parts.align);
  if (parts.cons_mod.empty()) {
    r.cons = value_or_zero(parts.cons);
  } else {
    for (const auto &c : parts.cons_mod)
      r.cons_mod.push_back(c.item());
    r.cons = 0.0;
    for (double c : r.cons_mod)
      r.cons += c;
    r.cons /= static_cast<double>(r.cons_mod.size());
  }
  r.grad_norm = clip.norm;
  r.clip_scale = clip.scale;
  return r;
}

double heldout_consistency(const Model &model, const Dataset &corpus,
                           const ExperimentConfig &cfg, std::uint64_t seed,
                           std::size_t num_batches) {
  NoGradGuard no_grad;
  ExperimentConfig c = cfg;
  c.trainer.batch_size = std::min(cfg.trainer.batch_size, corpus.num_samples());
  c.losses.sparse = c.losses.smooth = c.losses.agree = c.losses.align = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < num_batches; ++k) {
    const Batch batch = build_batch(corpus, c, k, seed);
    const LossParts parts = batch_losses(model, batch, c);
    if (parts.cons_mod.empty()) {
      acc += parts.cons.item();
    } else {
      double s = 0.0;
      for (const auto &t : parts.cons_mod)
        s += t.item();
      acc += s / static_cast<double>(parts.cons_mod.size());
    }
  }
  return acc / static_cast<double>(num_batches);
}

TrainState init_train_state(const ExperimentConfig &cfg, const Dataset &corpus) {
  cfg.validate();
  check_corpus(cfg, corpus);
  TrainState s;
  s.model = Model::create(cfg.encoder, trained_modalities(cfg, corpus), cfg.trainer.seed);
  return s;
}

Checkpoint make_checkpoint(const TrainState &state, const ExperimentConfig &cfg,
                           const json &run) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.step = state.step;
  ckpt.seed = cfg.trainer.seed;
  ckpt.run = run;
  state.model.export_arrays(ckpt.tensors);
  for (const auto &[name, t] : state.model.parameters()) {
    const Shape shape = t.shape();
    auto moments = [&](const std::map<std::string, std::vector<double>> &src) {
      auto it = src.find(name);
      return it == src.end() ? std::vector<double>(t.numel(), 0.0) : it->second;
    };
    ckpt.tensors["adam.m." + name] = NamedArray{shape, moments(state.adam.m)};
    ckpt.tensors["adam.v." + name] = NamedArray{shape, moments(state.adam.v)};
  }
  return ckpt;
}

TrainState restore_train_state(const Checkpoint &ckpt, const Dataset &corpus) {
  ckpt.config.validate();
  check_corpus(ckpt.config, corpus);
  if (ckpt.step > ckpt.config.trainer.total_steps)
    throw CorruptDataError("checkpoint step " + std::to_string(ckpt.step) +
                           " exceeds total steps");
  TrainState s;
  s.model = Model::from_arrays(ckpt.config.encoder, trained_modalities(ckpt.config, corpus),
                               ckpt.tensors);
  for (const auto &[name, t] : s.model.parameters()) {
    for (const char *kind : {"m", "v"}) {
      const std::string key = std::string("adam.") + kind + "." + name;
      auto it = ckpt.tensors.find(key);
      if (it == ckpt.tensors.end() || it->second.shape != t.shape())
        throw CorruptDataError("checkpoint lacks optimizer state '" + key + "'");
      (kind[0] == 'm' ? s.adam.m : s.adam.v)[name] = it->second.values;
    }
  }
  s.adam.step = ckpt.step;
  s.step = ckpt.step;
  return s;
}

namespace {

json run_info(const PretrainOptions &opts) {
  return {{"data", opts.data_path.string()}, {"out_dir", opts.out_dir.string()}};
}

void save(const TrainState &state, const ExperimentConfig &cfg, const PretrainOptions &opts,
          const std::string &file) {
  write_checkpoint(opts.out_dir / file, make_checkpoint(state, cfg, run_info(opts)));
}

} // namespace

void run_training(TrainState &state, const Dataset &corpus, const ExperimentConfig &cfg,
                  const PretrainOptions &opts) {
  const TrainConfig &tc = cfg.trainer;
  const std::size_t end =
      opts.stop_after > 0 ? std::min(opts.stop_after, tc.total_steps) : tc.total_steps;
  const bool files = !opts.out_dir.empty();
  std::ofstream metrics;
  if (files) {
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec)
      throw IoError(opts.out_dir.string() + ": " + ec.message());
    const auto path = opts.out_dir / kMetricsFile;
    metrics.open(path, std::ios::app);
    if (!metrics)
      throw IoError(path.string() + ": cannot open for appending");
  }

  while (state.step < end) {
    const std::size_t step = state.step + 1;
    const Batch batch = build_batch(corpus, cfg, step, tc.seed);
    const LossReport r = train_step(state.model, batch, cfg, state.adam, step);
    state.step = step;
    if (step % tc.log_interval == 0 || step == end) {
      if (files) {
        metrics << r.to_json().dump() << '\n';
        metrics.flush();
        if (!metrics)
          throw IoError((opts.out_dir / kMetricsFile).string() + ": write failed");
      }
      if (opts.on_log)
        opts.on_log(r);
    }
    if (files && tc.checkpoint_interval > 0 && step % tc.checkpoint_interval == 0)
      save(state, cfg, opts, "checkpoint_" + std::to_string(step) + ".evck");
  }
  if (!files)
    return;
  if (state.step == tc.total_steps)
    save(state, cfg, opts, kFinalCheckpoint);
  else if (tc.checkpoint_interval == 0 || state.step % tc.checkpoint_interval != 0)
    save(state, cfg, opts, "checkpoint_" + std::to_string(state.step) + ".evck");
}

TrainState pretrain(const Dataset &corpus, const ExperimentConfig &cfg,
                    const PretrainOptions &opts) {
  TrainState state = init_train_state(cfg, corpus);
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    std::ofstream truncate(opts.out_dir / kMetricsFile, std::ios::trunc);
    if (!truncate)
      throw IoError((opts.out_dir / kMetricsFile).string() + ": cannot create");
  }
  run_training(state, corpus, cfg, opts);
  return state;
}

TrainState resume(const std::filesystem::path &checkpoint, const Dataset &corpus,
                  PretrainOptions opts) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  TrainState state = restore_train_state(ckpt, corpus);
  if (opts.out_dir.empty() && ckpt.run.contains("out_dir"))
    opts.out_dir = ckpt.run["out_dir"].get<std::string>();
  if (opts.data_path.empty() && ckpt.run.contains("data"))
    opts.data_path = ckpt.run["data"].get<std::string>();

  if (!opts.out_dir.empty()) {
    // Drop records written after the checkpoint by the interrupted run.
    const auto path = opts.out_dir / kMetricsFile;
    std::string kept;
    if (std::ifstream in(path); in) {
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty())
          continue;
        const auto rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("step"))
          throw CorruptDataError(path.string() + ": malformed metrics record");
        if (rec["step"].get<std::size_t>() <= ckpt.step)
          kept += line + '\n';
      }
    }
    std::filesystem::create_directories(opts.out_dir);
    atomic_write(path, kept);
  }
  run_training(state, corpus, ckpt.config, opts);
  return state;
}

} // namespace evf
