// SPDX-License-Identifier: Apache-2.0
#include "evf/dataset.hpp"
#include "evf/errors.hpp"
#include "evf/ops.hpp"
#include "evf/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace evf;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.generator.num_recordings = 16;
  cfg.generator.length = 128;
  cfg.generator.num_subjects = 8;
  cfg.generator.events_mean = 3.0;
  cfg.encoder.stem = {{4, 5, 2}, {8, 3, 2}, {8, 3, 2}};
  cfg.encoder.width = 8;
  cfg.encoder.key_dim = 8;
  cfg.encoder.num_buckets = 4;
  cfg.encoder.readout_hidden = 8;
  cfg.encoder.embed_dim = 8;
  cfg.segmentation = {2, 4, 2, SegMode::UniformRandom};
  cfg.trainer.batch_size = 4;
  cfg.trainer.total_steps = 6;
  cfg.trainer.warmup_steps = 2;
  cfg.trainer.checkpoint_interval = 2;
  cfg.trainer.seed = 11;
  cfg.validate();
  return cfg;
}

fs::path scratch(const std::string &name) {
  auto p = fs::temp_directory_path() / ("evf_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double grad_norm(const NamedTensors &params) {
  double sq = 0.0;
  for (const auto &[name, t] : params)
    if (t.has_grad())
      for (double g : t.grad())
        sq += g * g;
  return std::sqrt(sq);
}

} // namespace

TEST(BuildBatch, BatchSizeOneRejected) {
  auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  cfg.trainer.batch_size = 1;
  EXPECT_THROW(build_batch(ds, cfg, 1, 0), ConfigError);
  EXPECT_THROW(cfg.trainer.validate(), ConfigError);
}

TEST(BuildBatch, CorpusSmallerThanBatchRejected) {
  auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  cfg.trainer.batch_size = 17;
  EXPECT_THROW(build_batch(ds, cfg, 1, 0), ConfigError);
}

TEST(BuildBatch, DeterministicUnderSeedAndStep) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto a = build_batch(ds, cfg, 3, 5);
  const auto b = build_batch(ds, cfg, 3, 5);
  const auto c = build_batch(ds, cfg, 4, 5);
  ASSERT_EQ(a.items.size(), b.items.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    const auto &va = a.items[i].views[0];
    const auto &vb = b.items[i].views[0];
    EXPECT_EQ(a.items[i].sample, b.items[i].sample);
    EXPECT_EQ(va.x1.data, vb.x1.data);
    EXPECT_EQ(va.x2.data, vb.x2.data);
    EXPECT_EQ(va.s1, vb.s1);
    EXPECT_EQ(va.s2, vb.s2);
    EXPECT_EQ(va.p1, vb.p1);
    EXPECT_EQ(va.p2, vb.p2);
    differs |= a.items[i].sample != c.items[i].sample || va.x1.data != c.items[i].views[0].x1.data;
  }
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_TRUE(differs);
}

TEST(BuildBatch, SamplesWithoutReplacement) {
  auto cfg = tiny_config();
  cfg.trainer.batch_size = 16;
  const auto ds = generate_corpus(cfg.generator);
  for (std::size_t step = 1; step <= 20; ++step) {
    const auto batch = build_batch(ds, cfg, step, 1);
    std::vector<bool> seen(16, false);
    for (const auto &item : batch.items) {
      ASSERT_FALSE(seen[item.sample]);
      seen[item.sample] = true;
    }
  }
}

TEST(BuildBatch, EnergyBiasedViewsSegmentProjectedSignal) {
  auto cfg = tiny_config();
  cfg.segmentation.mode = SegMode::EnergyBiased;
  const auto ds = generate_corpus(cfg.generator);
  const auto batch = build_batch(ds, cfg, 1, 2);
  for (const auto &item : batch.items) {
    const auto &v = item.views[0];
    EXPECT_EQ(v.s1.num_frames(), 16u);
    EXPECT_GE(v.s1.num_segments(), 2u);
    EXPECT_LE(v.s1.num_segments(), 4u);
    EXPECT_GE(v.s1.min_length(), 2u);
  }
}

TEST(BuildBatch, MaskExcludesExactlySameSubjectCrossPairs) {
  auto cfg = tiny_config();
  cfg.generator.num_recordings = 32;
  cfg.generator.num_subjects = 2;
  cfg.trainer.batch_size = 8;
  const auto ds = generate_corpus(cfg.generator);
  for (std::size_t step = 1; step <= 25; ++step) {
    const auto batch = build_batch(ds, cfg, step, 9);
    ASSERT_EQ(batch.mask.size(), 64u);
    std::size_t count[2] = {0, 0};
    for (const auto &item : batch.items)
      ++count[ds.records[item.sample].subject_id];
    std::size_t masked = 0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const bool same = ds.records[batch.items[i].sample].subject_id ==
                          ds.records[batch.items[j].sample].subject_id;
        EXPECT_EQ(batch.mask[i * 8 + j] != 0, i != j && same) << i << "," << j;
        masked += batch.mask[i * 8 + j];
      }
    EXPECT_EQ(masked, count[0] * (count[0] - 1) + count[1] * (count[1] - 1));
  }
  cfg.trainer.hard_negatives = true;
  EXPECT_TRUE(build_batch(ds, cfg, 1, 9).mask.empty());
}

TEST(LrSchedule, WarmupCosineValues) {
  TrainConfig tc;
  tc.total_steps = 1050;
  tc.warmup_steps = 50;
  tc.peak_lr = 1e-3;
  tc.floor_lr = 1e-5;
  EXPECT_EQ(lr_at(0, tc), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(25, tc), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(50, tc), 1e-3);
  EXPECT_NEAR(lr_at(550, tc), 5.05e-4, 1e-15);
  EXPECT_NEAR(lr_at(1050, tc), 1e-5, 1e-15);
  EXPECT_THROW(lr_at(1051, tc), std::invalid_argument);
  for (std::size_t s = 51; s <= 1050; ++s)
    EXPECT_LE(lr_at(s, tc), lr_at(s - 1, tc));
}

TEST(ClipGradients, BelowThresholdUnchanged) {
  Tensor a = Tensor::vector({0.0, 0.0}, true);
  a.mutable_grad()[0] = 0.3;
  a.mutable_grad()[1] = 0.4;
  const auto r = clip_gradients({{"a", a}}, 1.0);
  EXPECT_EQ(r.scale, 1.0);
  EXPECT_DOUBLE_EQ(r.norm, 0.5);
  EXPECT_EQ(a.grad()[0], 0.3);
  EXPECT_EQ(a.grad()[1], 0.4);
}

TEST(ClipGradients, DoubleNormHalves) {
  Tensor a = Tensor::vector({0.0, 0.0}, true);
  a.mutable_grad()[0] = 1.2;
  a.mutable_grad()[1] = 1.6;
  const auto r = clip_gradients({{"a", a}}, 1.0);
  EXPECT_EQ(r.scale, 0.5);
}

TEST(ClipGradients, PostClipNormIsMinOfNormAndClip) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    NamedTensors params;
    for (int k = 0; k < 3; ++k) {
      Tensor t = Tensor::zeros({5}, true);
      for (double &g : t.mutable_grad())
        g = nd(gen) * (trial % 5 + 0.1);
      params.emplace_back("p" + std::to_string(k), t);
    }
    const double before = grad_norm(params);
    const double clip = 1.5;
    const auto r = clip_gradients(params, clip);
    EXPECT_NEAR(r.norm, before, 1e-12);
    EXPECT_NEAR(grad_norm(params), std::min(before, clip), 1e-9);
  }
}

TEST(ClipGradients, NonFiniteNamesParameter) {
  Tensor a = Tensor::zeros({2}, true), b = Tensor::zeros({2}, true);
  a.mutable_grad();
  b.mutable_grad()[1] = std::nan("");
  try {
    clip_gradients({{"stem.0.weight", a}, {"readout.1.bias", b}}, 1.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError &e) {
    EXPECT_NE(std::string(e.what()).find("readout.1.bias"), std::string::npos);
  }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  p.mutable_grad();
  AdamState st;
  adamw_step({{"p", p}}, st, 0.1, AdamHyper{});
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, FirstStepScalar) {
  Tensor p = Tensor::scalar(0.0, true);
  p.mutable_grad()[0] = 1.0;
  AdamState st;
  AdamHyper h;
  adamw_step({{"p", p}}, st, 0.1, h);
  // Bias-corrected moments are exactly g and g^2.
  EXPECT_NEAR(p.item(), -0.1 / (1.0 + h.eps), 1e-15);
  EXPECT_NEAR(p.item(), -0.1, 1e-8);
}

TEST(AdamW, SecondStepClosedForm) {
  Tensor p = Tensor::scalar(0.5, true);
  AdamState st;
  AdamHyper h;
  h.weight_decay = 0.01;
  const double lr = 0.05, g1 = 2.0, g2 = -1.0;
  p.mutable_grad()[0] = g1;
  adamw_step({{"p", p}}, st, lr, h);
  p.mutable_grad()[0] = g2;
  adamw_step({{"p", p}}, st, lr, h);

  double theta = 0.5;
  theta -= lr * h.weight_decay * theta;
  theta -= lr * g1 / (std::abs(g1) + h.eps);
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2;
  const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  theta -= lr * h.weight_decay * theta;
  theta -= lr * mhat / (std::sqrt(vhat) + h.eps);
  EXPECT_NEAR(p.item(), theta, 1e-14);
}

TEST(AdamW, DecayOnlyShrinksByFactor) {
  Tensor p = Tensor::vector({3.0, -1.0}, true);
  p.mutable_grad();
  AdamState st;
  AdamHyper h;
  h.weight_decay = 0.2;
  adamw_step({{"p", p}}, st, 0.1, h);
  EXPECT_NEAR(p[0], 3.0 * (1 - 0.1 * 0.2), 1e-15);
  EXPECT_NEAR(p[1], -1.0 * (1 - 0.1 * 0.2), 1e-15);
}

TEST(TrainStep, ReportTotalIsWeightedSum) {
  auto cfg = tiny_config();
  cfg.losses.sparse = 0.3;
  cfg.losses.smooth = 0.2;
  cfg.losses.agree = 0.7;
  const auto ds = generate_corpus(cfg.generator);
  auto state = init_train_state(cfg, ds);
  for (std::size_t step = 1; step <= 3; ++step) {
    const auto r = train_step(state.model, build_batch(ds, cfg, step, 1), cfg, state.adam, step);
    const double sum = r.cons + 0.3 * r.sparsity + 0.2 * r.smoothness + 0.7 * r.agree;
    EXPECT_NEAR(r.total, sum, 1e-9);
    EXPECT_GT(r.sparsity, 0.0);
    EXPECT_GT(r.agree, 0.0);
    EXPECT_DOUBLE_EQ(r.lr, lr_at(step, cfg.trainer));
  }
}

TEST(TrainStep, ZeroWeightsReportZeroParts) {
  auto cfg = tiny_config();
  cfg.losses.sparse = cfg.losses.smooth = cfg.losses.agree = cfg.losses.align = 0.0;
  const auto ds = generate_corpus(cfg.generator);
  auto state = init_train_state(cfg, ds);
  const auto r = train_step(state.model, build_batch(ds, cfg, 1, 1), cfg, state.adam, 1);
  EXPECT_EQ(r.sparsity, 0.0);
  EXPECT_EQ(r.smoothness, 0.0);
  EXPECT_EQ(r.agree, 0.0);
  EXPECT_EQ(r.align, 0.0);
  EXPECT_EQ(r.total, r.cons);
}

TEST(TrainStep, IdenticalStateGivesIdenticalReports) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  auto a = init_train_state(cfg, ds);
  auto b = init_train_state(cfg, ds);
  const auto batch = build_batch(ds, cfg, 1, 3);
  const auto ra = train_step(a.model, batch, cfg, a.adam, 1);
  const auto rb = train_step(b.model, batch, cfg, b.adam, 1);
  EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
}

TEST(TrainStep, ClippingBoundHoldsAfterStep) {
  auto cfg = tiny_config();
  cfg.trainer.clip_norm = 0.05;
  const auto ds = generate_corpus(cfg.generator);
  auto state = init_train_state(cfg, ds);
  for (std::size_t step = 1; step <= 3; ++step) {
    const auto r = train_step(state.model, build_batch(ds, cfg, step, 1), cfg, state.adam, step);
    EXPECT_LE(grad_norm(state.model.parameters()), cfg.trainer.clip_norm + 1e-9);
    EXPECT_NEAR(r.grad_norm * r.clip_scale, std::min(r.grad_norm, 0.05), 1e-12);
  }
}

TEST(TrainStep, MultimodalReportsPerModalityTerms) {
  auto cfg = tiny_config();
  cfg.generator.modalities = {EmissionKernel::Gabor, EmissionKernel::DerivativeOfGaussian};
  cfg.trainer.multimodal = true;
  cfg.losses.align = 0.5;
  cfg.validate();
  const auto ds = generate_corpus(cfg.generator);
  auto state = init_train_state(cfg, ds);
  ASSERT_EQ(state.model.num_modalities(), 2u);
  const auto batch = build_batch(ds, cfg, 1, 1);
  ASSERT_EQ(batch.items[0].views.size(), 2u);
  const auto r = train_step(state.model, batch, cfg, state.adam, 1);
  ASSERT_EQ(r.cons_mod.size(), 2u);
  EXPECT_NEAR(r.cons, 0.5 * (r.cons_mod[0] + r.cons_mod[1]), 1e-12);
  EXPECT_GT(r.align, 0.0);
  const double sum = r.cons_mod[0] + r.cons_mod[1] + 0.5 * r.align +
                     cfg.losses.sparse * r.sparsity + cfg.losses.smooth * r.smoothness +
                     cfg.losses.agree * r.agree;
  EXPECT_NEAR(r.total, sum, 1e-9);
}

TEST(Pretrain, ResumeReproducesUninterruptedMetrics) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto full_dir = scratch("full");
  const auto part_dir = scratch("part");

  pretrain(ds, cfg, {full_dir, "corpus.evd", 0, {}});
  PretrainOptions stop{part_dir, "corpus.evd", 3, {}};
  pretrain(ds, cfg, stop);
  ASSERT_TRUE(fs::exists(part_dir / "checkpoint_3.evck"));
  ASSERT_FALSE(fs::exists(part_dir / kFinalCheckpoint));

  // A stale record past the checkpoint must be discarded on resume.
  {
    std::ofstream out(part_dir / kMetricsFile, std::ios::app);
    out << R"({"step": 4, "bogus": true})" << '\n';
  }
  resume(part_dir / "checkpoint_3.evck", ds, {});

  EXPECT_EQ(slurp(full_dir / kMetricsFile), slurp(part_dir / kMetricsFile));
  EXPECT_EQ(checkpoint_payload(slurp(full_dir / kFinalCheckpoint)),
            checkpoint_payload(slurp(part_dir / kFinalCheckpoint)));
  EXPECT_TRUE(fs::exists(full_dir / "checkpoint_2.evck"));
  EXPECT_TRUE(fs::exists(full_dir / "checkpoint_4.evck"));

  std::size_t lines = 0;
  std::ifstream in(full_dir / kMetricsFile);
  for (std::string line; std::getline(in, line); ++lines) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_EQ(rec["step"].get<std::size_t>(), lines + 1);
    for (const char *key : {"lr", "cons", "sparsity", "smoothness", "agree", "grad_norm"})
      EXPECT_TRUE(rec.contains(key)) << key;
  }
  EXPECT_EQ(lines, cfg.trainer.total_steps);
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST(Pretrain, IdenticalRunsIdenticalLogs) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  std::vector<std::string> a, b;
  PretrainOptions oa, ob;
  oa.on_log = [&](const LossReport &r) { a.push_back(r.to_json().dump()); };
  ob.on_log = [&](const LossReport &r) { b.push_back(r.to_json().dump()); };
  pretrain(ds, cfg, oa);
  pretrain(ds, cfg, ob);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), cfg.trainer.total_steps);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  auto state = init_train_state(cfg, ds);
  train_step(state.model, build_batch(ds, cfg, 1, 1), cfg, state.adam, 1);
  state.step = 1;
  const auto bytes = serialize_checkpoint(make_checkpoint(state, cfg, {{"data", "x.evd"}}));
  const auto parsed = parse_checkpoint(bytes, "mem");
  EXPECT_EQ(parsed.config, cfg);
  EXPECT_EQ(parsed.step, 1u);
  EXPECT_EQ(parsed.run["data"], "x.evd");
  const auto restored = restore_train_state(parsed, ds);
  EXPECT_EQ(serialize_checkpoint(make_checkpoint(restored, cfg, parsed.run)), bytes);
  EXPECT_EQ(restored.adam.step, 1u);
}

TEST(Checkpoint, FlippedPayloadBitRejected) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto state = init_train_state(cfg, ds);
  auto bytes = serialize_checkpoint(make_checkpoint(state, cfg));
  const auto payload = checkpoint_payload(bytes);
  const auto at = static_cast<std::size_t>(payload.data() - bytes.data()) + payload.size() / 2;
  bytes[at] = static_cast<char>(bytes[at] ^ 0x10);
  EXPECT_THROW(parse_checkpoint(bytes, "mem"), CorruptDataError);
}

TEST(Checkpoint, TruncatedAndGarbageRejected) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto bytes = serialize_checkpoint(make_checkpoint(init_train_state(cfg, ds), cfg));
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 9), "mem"), CorruptDataError);
  EXPECT_THROW(parse_checkpoint("EVCK 1\n12\n{}", "mem"), CorruptDataError);
  EXPECT_THROW(parse_checkpoint("not a checkpoint", "mem"), CorruptDataError);
}

TEST(Checkpoint, MissingParameterRejected) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  auto ckpt = make_checkpoint(init_train_state(cfg, ds), cfg);
  ckpt.tensors.erase("readout.0.weight");
  EXPECT_THROW(restore_train_state(ckpt, ds), CorruptDataError);
  ckpt = make_checkpoint(init_train_state(cfg, ds), cfg);
  ckpt.tensors.erase("adam.v.readout.0.weight");
  EXPECT_THROW(restore_train_state(ckpt, ds), CorruptDataError);
}

TEST(Checkpoint, HeaderIsReadableJson) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto bytes = serialize_checkpoint(make_checkpoint(init_train_state(cfg, ds), cfg));
  const auto first = bytes.find('\n'), second = bytes.find('\n', first + 1);
  const auto len = std::stoul(bytes.substr(first + 1, second - first - 1));
  const auto header = nlohmann::json::parse(bytes.substr(second + 1, len));
  EXPECT_EQ(header["format"], "evfield-checkpoint");
  EXPECT_EQ(header["rng"]["seed"], cfg.trainer.seed);
  EXPECT_FALSE(header["tensors"].empty());
  EXPECT_EQ(header["tensors"][0]["dtype"], "f64");
}

TEST(HeldoutConsistency, DeterministicAndNoGradient) {
  const auto cfg = tiny_config();
  const auto ds = generate_corpus(cfg.generator);
  const auto state = init_train_state(cfg, ds);
  const double a = heldout_consistency(state.model, ds, cfg, 77, 2);
  const double b = heldout_consistency(state.model, ds, cfg, 77, 2);
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.0);
  for (const auto &[name, t] : state.model.parameters())
    EXPECT_FALSE(t.has_grad()) << name;
}
