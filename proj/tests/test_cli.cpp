// SPDX-License-Identifier: Apache-2.0
// Drives the evfield executable end to end on a tiny corpus.
#include "evf/checkpoint.hpp"
#include "evf/config.hpp"
#include "evf/dataset.hpp"
#include "evf/trainer.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>

using namespace evf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string &args) {
  const std::string cmd = std::string("'") + EVF_CLI_PATH + "' " + args + " 2>/dev/null";
  Run r;
  FILE *pipe = popen(cmd.c_str(), "r");
  if (!pipe)
    return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe))
    r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<json> read_lines(const fs::path &p) {
  std::istringstream in(read_file(p));
  std::vector<json> out;
  for (std::string line; std::getline(in, line);)
    out.push_back(json::parse(line));
  return out;
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("evf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ExperimentConfig cfg;
    cfg.generator.num_recordings = 16;
    cfg.generator.length = 128;
    cfg.generator.num_subjects = 8;
    cfg.encoder.stem = {{4, 5, 2}, {8, 3, 2}, {8, 3, 2}};
    cfg.encoder.width = 8;
    cfg.encoder.key_dim = 8;
    cfg.encoder.num_buckets = 4;
    cfg.encoder.readout_hidden = 8;
    cfg.encoder.embed_dim = 8;
    cfg.segmentation = {2, 4, 2, SegMode::UniformRandom};
    cfg.trainer.batch_size = 4;
    cfg.trainer.total_steps = 10;
    cfg.trainer.warmup_steps = 2;
    cfg.trainer.checkpoint_interval = 5;
    cfg.eval.seg_samples = 2;
    cfg.eval.test_fraction = 0.5;
    cfg.eval.ablation_seeds = 1;
    cfg.eval.ablation_steps = 2;
    cfg.eval.baseline_draws = 50;
    cfg.validate();
    atomic_write(config(), to_json(cfg).dump(2));
  }
  fs::path config() const { return dir_ / "config.json"; }
  fs::path data() const { return dir_ / "corpus.evd"; }
  std::string q(const fs::path &p) const { return "'" + p.string() + "'"; }

  void make_data() { ASSERT_EQ(cli("gen-data --config " + q(config()) + " --out " + q(data())).code, 0); }
  void make_checkpoint() {
    make_data();
    ASSERT_EQ(cli("pretrain --config " + q(config()) + " --data " + q(data()) + " --out " +
                  q(dir_ / "run") + " --print-every 0")
                  .code,
              0);
  }
  fs::path final_checkpoint() const { return dir_ / "run" / kFinalCheckpoint; }

  fs::path dir_;
};

} // namespace

TEST_F(Cli, GenDataWritesParseableContainer) {
  const auto r = cli("gen-data --config " + q(config()) + " --out " + q(data()));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("recordings"), std::string::npos);
  const Dataset ds = read_dataset(data());
  EXPECT_EQ(ds.records.size(), 16u);
  EXPECT_EQ(ds.length, 128u);
  EXPECT_TRUE(ds.has_labels());
}

TEST_F(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(cli("gen-data --config " + q(config()) + " --out " + q(dir_ / "a.evd")).code, 0);
  ASSERT_EQ(cli("gen-data --config " + q(config()) + " --out " + q(dir_ / "b.evd")).code, 0);
  EXPECT_EQ(read_file(dir_ / "a.evd"), read_file(dir_ / "b.evd"));
  EXPECT_EQ(read_file(sidecar_path(dir_ / "a.evd")), read_file(sidecar_path(dir_ / "b.evd")));
}

TEST_F(Cli, GenDataCountOverride) {
  ASSERT_EQ(cli("gen-data --config " + q(config()) + " --count 1000 --out " + q(data())).code, 0);
  const std::string bytes = read_file(data());
  std::uint32_t count = 0;
  // magic, version, channels, length, sample rate, then the count
  std::memcpy(&count, bytes.data() + 20, 4);
  EXPECT_EQ(count, 1000u);
}

TEST_F(Cli, PretrainSmokeWritesLoadableCheckpoint) {
  make_checkpoint();
  const Checkpoint ckpt = read_checkpoint(final_checkpoint());
  EXPECT_EQ(ckpt.step, 10u);
  EXPECT_EQ(read_lines(dir_ / "run" / kMetricsFile).size(), 10u);
}

TEST_F(Cli, ResumeReproducesTail) {
  make_data();
  const std::string base = "pretrain --config " + q(config()) + " --data " + q(data()) +
                           " --print-every 0 --out ";
  ASSERT_EQ(cli(base + q(dir_ / "full")).code, 0);
  ASSERT_EQ(cli(base + q(dir_ / "cut") + " --stop-after 5").code, 0);
  ASSERT_EQ(cli("resume --print-every 0 --checkpoint " + q(dir_ / "cut" / "checkpoint_5.evck")).code, 0);
  EXPECT_EQ(read_file(dir_ / "full" / kMetricsFile), read_file(dir_ / "cut" / kMetricsFile));
}

TEST_F(Cli, ProbeEmitsAurocAndF1) {
  make_checkpoint();
  const auto r = cli("probe --checkpoint " + q(final_checkpoint()) + " --data " + q(data()) +
                     " --out " + q(dir_ / "probe.jsonl"));
  ASSERT_EQ(r.code, 0);
  const auto lines = read_lines(dir_ / "probe.jsonl");
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_TRUE(lines[0].contains("auroc"));
  EXPECT_TRUE(lines[0].contains("f1"));
  EXPECT_NE(r.out.find("AUROC"), std::string::npos);
}

TEST_F(Cli, EncodeEmitsEmbeddingsAndVariance) {
  make_checkpoint();
  ASSERT_EQ(cli("encode --seg-samples 8 --checkpoint " + q(final_checkpoint()) + " --data " +
                q(data()) + " --out " + q(dir_ / "z.jsonl"))
                .code,
            0);
  const auto lines = read_lines(dir_ / "z.jsonl");
  ASSERT_EQ(lines.size(), 16u);
  for (const auto &l : lines) {
    EXPECT_EQ(l["z"].size(), 8u);
    EXPECT_GE(l["variance"].get<double>(), 0.0);
  }
}

TEST_F(Cli, EvalCommandsProduceReports) {
  make_checkpoint();
  for (const std::string cmd : {"retrieve", "robustness", "uncertainty", "align"}) {
    const auto out = dir_ / (cmd + ".jsonl");
    const auto r = cli(cmd + " --checkpoint " + q(final_checkpoint()) + " --data " + q(data()) +
                       " --out " + q(out));
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_FALSE(read_lines(out).empty()) << cmd;
  }
  // clean, then three severities (zero included) for each of three perturbations
  EXPECT_EQ(read_lines(dir_ / "robustness.jsonl").size(), 10u);
}

TEST_F(Cli, AblateEmitsFourRows) {
  make_data();
  const auto r = cli("ablate --config " + q(config()) + " --data " + q(data()) + " --out " +
                     q(dir_ / "ablate.jsonl"));
  ASSERT_EQ(r.code, 0);
  const auto lines = read_lines(dir_ / "ablate.jsonl");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0]["variant"], "full");
  EXPECT_EQ(lines[1]["variant"], "w/o seg");
  EXPECT_EQ(lines[2]["variant"], "w/o proj");
  EXPECT_EQ(lines[3]["variant"], "w/o interact");
  for (const char *name : {"full", "w/o seg", "w/o proj", "w/o interact"})
    EXPECT_NE(r.out.find(name), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  make_checkpoint();
  EXPECT_EQ(cli("pretrain --data " + q(data())).code, 2); // missing --out
  EXPECT_EQ(cli("frobnicate").code, 2);

  json bad = json::parse(read_file(config()));
  bad["trainer"]["bach_size"] = 3;
  atomic_write(dir_ / "bad.json", bad.dump());
  EXPECT_EQ(cli("gen-data --config " + q(dir_ / "bad.json") + " --out " + q(dir_ / "x.evd")).code, 2);

  std::string ckpt = read_file(final_checkpoint());
  const auto payload = checkpoint_payload(ckpt);
  const std::size_t at = static_cast<std::size_t>(payload.data() - ckpt.data());
  ckpt[at] = static_cast<char>(ckpt[at] ^ 0x10);
  atomic_write(dir_ / "flipped.evck", ckpt);
  EXPECT_EQ(cli("probe --checkpoint " + q(dir_ / "flipped.evck") + " --data " + q(data()) +
                " --out " + q(dir_ / "p.jsonl"))
                .code,
            3);
}

TEST_F(Cli, ShapeMismatchIsExplicit) {
  make_checkpoint();
  json other = json::parse(read_file(config()));
  other["generator"]["channels"] = 2;
  other["encoder"]["in_channels"] = 2;
  atomic_write(dir_ / "two.json", other.dump());
  ASSERT_EQ(cli("gen-data --config " + q(dir_ / "two.json") + " --out " + q(dir_ / "two.evd")).code, 0);
  EXPECT_EQ(cli("encode --checkpoint " + q(final_checkpoint()) + " --data " + q(dir_ / "two.evd") +
                " --out " + q(dir_ / "z.jsonl"))
                .code,
            2);
}

TEST_F(Cli, HelpDocumentsDeterministicToggle) {
  const auto r = cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("EVF_DETERMINISTIC"), std::string::npos);
}
