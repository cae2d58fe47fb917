// SPDX-License-Identifier: Apache-2.0
#include "evf/config.hpp"

#include "evf/dataset.hpp"
#include "evf/errors.hpp"

#include <set>

namespace evf {

using nlohmann::json;

namespace {

// Reads keys out of one JSON object and remembers which were consumed, so
// that leftovers can be reported as unknown.
class Section {
public:
  Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_ + ": expected an object");
  }

  template <class T> void get(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key))
      return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception &e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json *child(const char *key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto &[k, v] : j_.items())
      if (!seen_.count(k))
        throw ConfigError("unknown configuration key '" + path_ + "." + k + "'");
  }

  const std::string &path() const { return path_; }

private:
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

json classes_to_json(const std::vector<EventClassSpec> &classes) {
  json arr = json::array();
  for (const auto &c : classes)
    arr.push_back({{"freq_lo", c.freq_lo}, {"freq_hi", c.freq_hi}, {"dur_lo", c.dur_lo},
                   {"dur_hi", c.dur_hi},   {"amp_lo", c.amp_lo},   {"amp_hi", c.amp_hi}});
  return arr;
}

std::vector<EventClassSpec> classes_from_json(const json &arr, const std::string &path) {
  if (!arr.is_array())
    throw ConfigError(path + ": expected an array");
  std::vector<EventClassSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Section s(arr[i], path + "[" + std::to_string(i) + "]");
    EventClassSpec c;
    s.get("freq_lo", c.freq_lo);
    s.get("freq_hi", c.freq_hi);
    s.get("dur_lo", c.dur_lo);
    s.get("dur_hi", c.dur_hi);
    s.get("amp_lo", c.amp_lo);
    s.get("amp_hi", c.amp_hi);
    s.finish();
    out.push_back(c);
  }
  return out;
}

json generator_to_json(const SyntheticCorpusConfig &g) {
  json mods = json::array();
  for (auto m : g.modalities)
    mods.push_back(kernel_name(m));
  return {{"num_recordings", g.num_recordings},
          {"length", g.length},
          {"channels", g.channels},
          {"sample_rate", g.sample_rate},
          {"events_mean", g.events_mean},
          {"noise_sigma", g.noise_sigma},
          {"num_subjects", g.num_subjects},
          {"class_purity", g.class_purity},
          {"classes", classes_to_json(g.classes)},
          {"modalities", mods},
          {"seed", g.seed}};
}

SyntheticCorpusConfig generator_from_json(const json &j) {
  SyntheticCorpusConfig g;
  Section s(j, "generator");
  s.get("num_recordings", g.num_recordings);
  s.get("length", g.length);
  s.get("channels", g.channels);
  s.get("sample_rate", g.sample_rate);
  s.get("events_mean", g.events_mean);
  s.get("noise_sigma", g.noise_sigma);
  s.get("num_subjects", g.num_subjects);
  s.get("class_purity", g.class_purity);
  if (const json *c = s.child("classes"))
    g.classes = classes_from_json(*c, "generator.classes");
  if (j.contains("modalities")) {
    std::vector<std::string> mods;
    s.get("modalities", mods);
    g.modalities.clear();
    for (const auto &m : mods)
      g.modalities.push_back(kernel_from_name(m));
  }
  s.get("seed", g.seed);
  s.finish();
  return g;
}

json projections_to_json(const ProjectionFamily &f) {
  return {{"p_amplitude", f.p_amplitude},
          {"amplitude_lo", f.amplitude_lo},
          {"amplitude_hi", f.amplitude_hi},
          {"p_warp", f.p_warp},
          {"warp_knots", f.warp_knots},
          {"warp_disp_lo", f.warp_disp_lo},
          {"warp_disp_hi", f.warp_disp_hi},
          {"p_subband", f.p_subband},
          {"subband_lo_max", f.subband_lo_max},
          {"subband_hi_min", f.subband_hi_min},
          {"p_phase", f.p_phase},
          {"phase_sigma_lo", f.phase_sigma_lo},
          {"phase_sigma_hi", f.phase_sigma_hi},
          {"phase_smooth_len", f.phase_smooth_len},
          {"p_freq_dropout", f.p_freq_dropout},
          {"freq_bands_max", f.freq_bands_max},
          {"freq_band_len", f.freq_band_len},
          {"p_mask", f.p_mask},
          {"mask_spans_max", f.mask_spans_max},
          {"mask_span_lo", f.mask_span_lo},
          {"mask_span_hi", f.mask_span_hi},
          {"p_noise", f.p_noise},
          {"noise_lo", f.noise_lo},
          {"noise_hi", f.noise_hi}};
}

ProjectionFamily projections_from_json(const json &j) {
  ProjectionFamily f;
  Section s(j, "projections");
  s.get("p_amplitude", f.p_amplitude);
  s.get("amplitude_lo", f.amplitude_lo);
  s.get("amplitude_hi", f.amplitude_hi);
  s.get("p_warp", f.p_warp);
  s.get("warp_knots", f.warp_knots);
  s.get("warp_disp_lo", f.warp_disp_lo);
  s.get("warp_disp_hi", f.warp_disp_hi);
  s.get("p_subband", f.p_subband);
  s.get("subband_lo_max", f.subband_lo_max);
  s.get("subband_hi_min", f.subband_hi_min);
  s.get("p_phase", f.p_phase);
  s.get("phase_sigma_lo", f.phase_sigma_lo);
  s.get("phase_sigma_hi", f.phase_sigma_hi);
  s.get("phase_smooth_len", f.phase_smooth_len);
  s.get("p_freq_dropout", f.p_freq_dropout);
  s.get("freq_bands_max", f.freq_bands_max);
  s.get("freq_band_len", f.freq_band_len);
  s.get("p_mask", f.p_mask);
  s.get("mask_spans_max", f.mask_spans_max);
  s.get("mask_span_lo", f.mask_span_lo);
  s.get("mask_span_hi", f.mask_span_hi);
  s.get("p_noise", f.p_noise);
  s.get("noise_lo", f.noise_lo);
  s.get("noise_hi", f.noise_hi);
  s.finish();
  return f;
}

json segmentation_to_json(const SegSamplerConfig &c) {
  return {{"m_min", c.m_min},
          {"m_max", c.m_max},
          {"min_gap", c.min_gap},
          {"mode", seg_mode_name(c.mode)}};
}

SegSamplerConfig segmentation_from_json(const json &j) {
  SegSamplerConfig c;
  Section s(j, "segmentation");
  s.get("m_min", c.m_min);
  s.get("m_max", c.m_max);
  s.get("min_gap", c.min_gap);
  std::string mode = seg_mode_name(c.mode);
  s.get("mode", mode);
  c.mode = seg_mode_from_name(mode);
  s.finish();
  return c;
}

json losses_to_json(const LossWeights &w) {
  return {{"temperature", w.temperature},
          {"lambda_sparse", w.sparse},
          {"lambda_smooth", w.smooth},
          {"lambda_agree", w.agree},
          {"lambda_align", w.align}};
}

LossWeights losses_from_json(const json &j) {
  LossWeights w;
  Section s(j, "losses");
  s.get("temperature", w.temperature);
  s.get("lambda_sparse", w.sparse);
  s.get("lambda_smooth", w.smooth);
  s.get("lambda_agree", w.agree);
  s.get("lambda_align", w.align);
  s.finish();
  return w;
}

json trainer_to_json(const TrainConfig &t) {
  return {{"batch_size", t.batch_size},
          {"total_steps", t.total_steps},
          {"warmup_steps", t.warmup_steps},
          {"peak_lr", t.peak_lr},
          {"floor_lr", t.floor_lr},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"clip_norm", t.clip_norm},
          {"seed", t.seed},
          {"multimodal", t.multimodal},
          {"hard_negatives", t.hard_negatives},
          {"log_interval", t.log_interval},
          {"checkpoint_interval", t.checkpoint_interval}};
}

TrainConfig trainer_from_json(const json &j) {
  TrainConfig t;
  Section s(j, "trainer");
  s.get("batch_size", t.batch_size);
  s.get("total_steps", t.total_steps);
  s.get("warmup_steps", t.warmup_steps);
  s.get("peak_lr", t.peak_lr);
  s.get("floor_lr", t.floor_lr);
  s.get("weight_decay", t.weight_decay);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("eps", t.eps);
  s.get("clip_norm", t.clip_norm);
  s.get("seed", t.seed);
  s.get("multimodal", t.multimodal);
  s.get("hard_negatives", t.hard_negatives);
  s.get("log_interval", t.log_interval);
  s.get("checkpoint_interval", t.checkpoint_interval);
  s.finish();
  return t;
}

json eval_to_json(const EvalConfig &e) {
  return {{"seg_samples", e.seg_samples},
          {"test_fraction", e.test_fraction},
          {"probe_l2", e.probe_l2},
          {"probe_max_iters", e.probe_max_iters},
          {"probe_tol", e.probe_tol},
          {"probe_hidden", e.probe_hidden},
          {"noise_severities", e.noise_severities},
          {"warp_severities", e.warp_severities},
          {"freq_mask_severities", e.freq_mask_severities},
          {"ablation_seeds", e.ablation_seeds},
          {"ablation_steps", e.ablation_steps},
          {"baseline_draws", e.baseline_draws},
          {"seed", e.seed}};
}

EvalConfig eval_from_json(const json &j) {
  EvalConfig e;
  Section s(j, "eval");
  s.get("seg_samples", e.seg_samples);
  s.get("test_fraction", e.test_fraction);
  s.get("probe_l2", e.probe_l2);
  s.get("probe_max_iters", e.probe_max_iters);
  s.get("probe_tol", e.probe_tol);
  s.get("probe_hidden", e.probe_hidden);
  s.get("noise_severities", e.noise_severities);
  s.get("warp_severities", e.warp_severities);
  s.get("freq_mask_severities", e.freq_mask_severities);
  s.get("ablation_seeds", e.ablation_seeds);
  s.get("ablation_steps", e.ablation_steps);
  s.get("baseline_draws", e.baseline_draws);
  s.get("seed", e.seed);
  s.finish();
  return e;
}

} // namespace

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw ConfigError("trainer.batch_size must be at least 2");
  if (total_steps == 0)
    throw ConfigError("trainer.total_steps must be positive");
  if (warmup_steps > total_steps)
    throw ConfigError("trainer.warmup_steps must not exceed trainer.total_steps");
  if (!(peak_lr > 0.0 && floor_lr > 0.0 && floor_lr <= peak_lr))
    throw ConfigError("trainer learning rates must satisfy 0 < floor_lr <= peak_lr");
  if (!(weight_decay >= 0.0))
    throw ConfigError("trainer.weight_decay must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
    throw ConfigError("trainer AdamW betas must lie in [0, 1) and eps must be positive");
  if (!(clip_norm > 0.0))
    throw ConfigError("trainer.clip_norm must be positive");
  if (log_interval == 0)
    throw ConfigError("trainer.log_interval must be positive");
}

void EvalConfig::validate() const {
  if (seg_samples == 0)
    throw ConfigError("eval.seg_samples must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("eval.test_fraction must lie in (0, 1)");
  if (!(probe_l2 >= 0.0 && probe_tol > 0.0) || probe_max_iters == 0)
    throw ConfigError("eval probe settings out of range");
  for (const auto *list : {&noise_severities, &warp_severities, &freq_mask_severities})
    for (double v : *list)
      if (!(v >= 0.0))
        throw ConfigError("eval severities must be nonnegative");
  for (double v : warp_severities)
    if (v >= 1.0)
      throw ConfigError("eval.warp_severities must be below 1");
  if (ablation_seeds == 0 || baseline_draws == 0)
    throw ConfigError("eval.ablation_seeds and eval.baseline_draws must be positive");
}

std::size_t ExperimentConfig::num_frames() const {
  return generator.padded_length() / encoder.downsample();
}

void ExperimentConfig::validate() const {
  generator.validate();
  projections.validate();
  encoder.validate();
  losses.validate();
  trainer.validate();
  eval.validate();
  if (encoder.in_channels != generator.channels)
    throw ConfigError("encoder.in_channels (" + std::to_string(encoder.in_channels) +
                      ") must equal generator.channels (" + std::to_string(generator.channels) +
                      ")");
  if (generator.padded_length() % encoder.downsample() != 0)
    throw ConfigError("encoder downsample factor " + std::to_string(encoder.downsample()) +
                      " does not divide the padded length " +
                      std::to_string(generator.padded_length()));
  segmentation.validate(num_frames());
  if (trainer.multimodal && generator.modalities.size() < 2)
    throw ConfigError("trainer.multimodal needs at least two generator.modalities");
}

json to_json(const EncoderConfig &e) {
  json stem = json::array();
  for (const auto &l : e.stem)
    stem.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  return {{"in_channels", e.in_channels},
          {"stem", stem},
          {"width", e.width},
          {"key_dim", e.key_dim},
          {"num_buckets", e.num_buckets},
          {"pooling", pool_mode_name(e.pooling)},
          {"readout_hidden", e.readout_hidden},
          {"embed_dim", e.embed_dim},
          {"use_interaction", e.use_interaction},
          {"ln_eps", e.ln_eps}};
}

EncoderConfig encoder_config_from_json(const json &j) {
  EncoderConfig e;
  Section s(j, "encoder");
  s.get("in_channels", e.in_channels);
  if (const json *stem = s.child("stem")) {
    if (!stem->is_array())
      throw ConfigError("encoder.stem: expected an array");
    e.stem.clear();
    for (std::size_t i = 0; i < stem->size(); ++i) {
      Section l((*stem)[i], "encoder.stem[" + std::to_string(i) + "]");
      StemLayer layer;
      l.get("out_channels", layer.out_channels);
      l.get("kernel", layer.kernel);
      l.get("stride", layer.stride);
      l.finish();
      e.stem.push_back(layer);
    }
  }
  s.get("width", e.width);
  s.get("key_dim", e.key_dim);
  s.get("num_buckets", e.num_buckets);
  std::string pooling = pool_mode_name(e.pooling);
  s.get("pooling", pooling);
  e.pooling = pool_mode_from_name(pooling);
  s.get("readout_hidden", e.readout_hidden);
  s.get("embed_dim", e.embed_dim);
  s.get("use_interaction", e.use_interaction);
  s.get("ln_eps", e.ln_eps);
  s.finish();
  return e;
}

json to_json(const ExperimentConfig &cfg) {
  return {{"generator", generator_to_json(cfg.generator)},
          {"projections", projections_to_json(cfg.projections)},
          {"segmentation", segmentation_to_json(cfg.segmentation)},
          {"encoder", to_json(cfg.encoder)},
          {"losses", losses_to_json(cfg.losses)},
          {"trainer", trainer_to_json(cfg.trainer)},
          {"eval", eval_to_json(cfg.eval)}};
}

ExperimentConfig config_from_json(const json &j) {
  ExperimentConfig cfg;
  Section s(j, "config");
  if (const json *g = s.child("generator"))
    cfg.generator = generator_from_json(*g);
  if (const json *p = s.child("projections"))
    cfg.projections = projections_from_json(*p);
  if (const json *g = s.child("segmentation"))
    cfg.segmentation = segmentation_from_json(*g);
  if (const json *e = s.child("encoder"))
    cfg.encoder = encoder_config_from_json(*e);
  if (const json *l = s.child("losses"))
    cfg.losses = losses_from_json(*l);
  if (const json *t = s.child("trainer"))
    cfg.trainer = trainer_from_json(*t);
  if (const json *e = s.child("eval"))
    cfg.eval = eval_from_json(*e);
  s.finish();
  return cfg;
}

json normalize_config(const json &j) {
  auto cfg = config_from_json(j);
  cfg.validate();
  return to_json(cfg);
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  const auto text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

} // namespace evf
