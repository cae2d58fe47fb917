// SPDX-License-Identifier: Apache-2.0
// evfield: generate corpora, pretrain, and evaluate event-field encoders.

#include "evf/checkpoint.hpp"
#include "evf/dataset.hpp"
#include "evf/errors.hpp"
#include "evf/eval.hpp"
#include "evf/synthgen.hpp"
#include "evf/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

using namespace evf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitCorrupt = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 1;

const char *kEnvironmentHelp =
    "Environment:\n"
    "  EVF_DETERMINISTIC=1  compute the two views of each batch item on one\n"
    "                       thread. Results are bit-identical either way; this\n"
    "                       only rules out scheduling effects when profiling.\n"
    "\n"
    "Exit codes: 0 success, 2 usage or configuration error, 3 corrupt data or\n"
    "checkpoint, 4 non-finite loss, 1 other I/O failure.\n";

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ExperimentConfig config_or_default(const std::string &path) {
  if (path.empty()) {
    ExperimentConfig cfg;
    cfg.validate();
    return cfg;
  }
  return load_config(path);
}

void write_lines(const fs::path &out, const std::vector<json> &records) {
  std::string text;
  for (const auto &r : records)
    text += r.dump() + '\n';
  if (out.has_parent_path())
    fs::create_directories(out.parent_path());
  atomic_write(out, text);
}

struct Loaded {
  Checkpoint ckpt;
  Dataset corpus;
  Model model;
};

// Reading the model through the trainer checks C, T and the segmentation
// range against the dataset before anything is embedded.
Loaded load_for_eval(const std::string &checkpoint, const std::string &data) {
  Loaded l;
  l.ckpt = read_checkpoint(checkpoint);
  l.corpus = read_dataset(data);
  if (!l.corpus.has_labels())
    throw ConfigError(data + ": evaluation needs the sidecar with labels");
  l.model = restore_train_state(l.ckpt, l.corpus).model;
  return l;
}

// --- commands ------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint32_t> count;
  std::optional<std::uint64_t> seed;
};

void cmd_gen_data(const GenArgs &a) {
  ExperimentConfig cfg = config_or_default(a.config);
  if (a.count)
    cfg.generator.num_recordings = *a.count;
  if (a.seed)
    cfg.generator.seed = *a.seed;
  cfg.validate();
  const Dataset ds = generate_corpus(cfg.generator);
  write_dataset(a.out, ds);
  std::set<int> classes;
  for (const auto &t : ds.truth)
    classes.insert(t.label);
  std::cout << format_table({"field", "value"},
                            {{"recordings", std::to_string(ds.records.size())},
                             {"modalities", std::to_string(ds.num_modalities())},
                             {"classes", std::to_string(classes.size())},
                             {"channels", std::to_string(ds.channels)},
                             {"length", std::to_string(ds.length)},
                             {"bytes", std::to_string(fs::file_size(a.out))},
                             {"sidecar", sidecar_path(a.out).string()}});
}

void print_log(const LossReport &r, std::size_t total) {
  std::cerr << "step " << r.step << "/" << total << "  lr " << fixed(r.lr, 6) << "  loss "
            << fixed(r.total) << "  cons " << fixed(r.cons) << "  grad " << fixed(r.grad_norm, 3)
            << '\n';
}

void summarize(const TrainState &state, std::size_t total, const fs::path &out) {
  const std::string ckpt = state.step == total
                               ? std::string(kFinalCheckpoint)
                               : "checkpoint_" + std::to_string(state.step) + ".evck";
  std::cout << format_table({"field", "value"},
                            {{"step", std::to_string(state.step)},
                             {"metrics", (out / kMetricsFile).string()},
                             {"checkpoint", (out / ckpt).string()}});
}

struct PretrainArgs {
  std::string config, data, out;
  std::size_t stop_after = 0;
  std::size_t print_every = 25;
};

void cmd_pretrain(const PretrainArgs &a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  const Dataset corpus = read_dataset(a.data);
  PretrainOptions opts{a.out, fs::absolute(a.data), a.stop_after, {}};
  opts.on_log = [&](const LossReport &r) {
    if (a.print_every && (r.step % a.print_every == 0 || r.step == cfg.trainer.total_steps))
      print_log(r, cfg.trainer.total_steps);
  };
  const TrainState state = pretrain(corpus, cfg, opts);
  summarize(state, cfg.trainer.total_steps, a.out);
}

struct ResumeArgs {
  std::string checkpoint, data, out;
  std::size_t stop_after = 0;
  std::size_t print_every = 25;
};

void cmd_resume(const ResumeArgs &a) {
  // Peek at the run record for the dataset path unless one is given.
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  std::string data = a.data;
  if (data.empty()) {
    if (!ckpt.run.contains("data"))
      throw ConfigError(a.checkpoint + ": no dataset recorded; pass --data");
    data = ckpt.run["data"].get<std::string>();
  }
  const Dataset corpus = read_dataset(data);
  PretrainOptions opts{a.out, data, a.stop_after, {}};
  const std::size_t total = ckpt.config.trainer.total_steps;
  opts.on_log = [&](const LossReport &r) {
    if (a.print_every && (r.step % a.print_every == 0 || r.step == total))
      print_log(r, total);
  };
  const TrainState state = resume(a.checkpoint, corpus, opts);
  fs::path out = a.out;
  if (out.empty() && ckpt.run.contains("out_dir"))
    out = ckpt.run["out_dir"].get<std::string>();
  summarize(state, total, out);
}

struct EvalArgs {
  std::string checkpoint, data, out;
  std::optional<std::size_t> seg_samples;
  std::optional<std::uint64_t> seed;
  std::size_t modality = 0;
  bool shared = false;

  std::size_t embedding() const { return shared ? kSharedEmbedding : modality; }
};

ExperimentConfig eval_config(const Loaded &l, const EvalArgs &a) {
  ExperimentConfig cfg = l.ckpt.config;
  if (a.seg_samples)
    cfg.eval.seg_samples = *a.seg_samples;
  if (a.seed)
    cfg.eval.seed = *a.seed;
  cfg.validate();
  return cfg;
}

void cmd_encode(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const EmbeddingSet set = embed_corpus(l.model, l.corpus, cfg, a.embedding());
  std::vector<json> lines;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = set.row(i);
    lines.push_back({{"id", set.ids[i]},
                     {"subject", set.subjects[i]},
                     {"label", set.labels[i]},
                     {"variance", set.variance[i]},
                     {"z", std::vector<double>(row.begin(), row.end())}});
  }
  write_lines(a.out, lines);
  const auto [mv, sv] = mean_std(set.variance);
  std::cout << format_table({"field", "value"},
                            {{"records", std::to_string(set.size())},
                             {"dim", std::to_string(set.dim)},
                             {"seg samples", std::to_string(cfg.eval.seg_samples)},
                             {"mean variance", fixed(mv, 6)},
                             {"output", a.out}});
}

std::vector<std::string> report_row(const std::string &name, const ClassificationReport &r) {
  return {name, fixed(r.auroc), fixed(r.f1), fixed(r.accuracy), fixed(r.balanced_accuracy),
          std::to_string(r.n)};
}

const std::vector<std::string> kReportHeader = {"set", "AUROC", "F1", "accuracy", "balanced",
                                                "n"};

void cmd_probe(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const EmbeddingSet set = embed_corpus(l.model, l.corpus, cfg, a.embedding());
  const ProbeResult res = probe_eval(set, cfg.eval);
  json rec = res.report.to_json();
  rec["train_rows"] = res.split.train.size();
  rec["test_rows"] = res.split.test.size();
  rec["probe_iterations"] = res.probe.iterations;
  write_lines(a.out, {rec});
  std::cout << format_table(kReportHeader, {report_row("held-out subjects", res.report)});
}

void cmd_retrieve(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const EmbeddingSet set = embed_corpus(l.model, l.corpus, cfg, a.embedding());
  const RetrievalReport rep = retrieval_eval(set, set);
  const Baseline base = random_map_baseline(set.labels, cfg.eval.baseline_draws, cfg.eval.seed);
  json rec = rep.to_json();
  rec["random_map_mean"] = base.mean;
  rec["random_map_std"] = base.stddev;
  write_lines(a.out, {rec});
  std::cout << format_table({"ranking", "MAP", "NDCG", "queries"},
                            {{"cosine", fixed(rep.map), fixed(rep.ndcg), std::to_string(rep.queries)},
                             {"random", fixed(base.mean) + " ± " + fixed(base.stddev), "",
                              std::to_string(rep.queries)}});
}

void cmd_robustness(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const EmbeddingSet set = embed_corpus(l.model, l.corpus, cfg, a.embedding());
  const ProbeResult res = probe_eval(set, cfg.eval);
  std::vector<std::size_t> test_records;
  for (std::size_t row : res.split.test)
    test_records.push_back(set.ids[row]);
  const auto records = robustness_eval(l.model, res.probe, l.corpus, test_records, cfg);
  std::vector<json> lines;
  for (const auto &r : records)
    lines.push_back(r.to_json());
  write_lines(a.out, lines);
  std::cout << robustness_table(records);
}

void cmd_uncertainty(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const EmbeddingSet set = embed_corpus(l.model, l.corpus, cfg, a.embedding());
  const UncertaintyReport rep = uncertainty_eval(set, l.corpus);
  write_lines(a.out, {rep.to_json()});
  std::cout << format_table({"statistic", "value"},
                            {{"mean variance", fixed(rep.mean, 6)},
                             {"median variance", fixed(rep.median, 6)},
                             {"Spearman vs event count", fixed(rep.event_count_correlation)}});
}

void cmd_align(const EvalArgs &a) {
  const Loaded l = load_for_eval(a.checkpoint, a.data);
  const ExperimentConfig cfg = eval_config(l, a);
  const AlignmentReport rep = boundary_alignment(l.model, l.corpus, cfg);
  write_lines(a.out, {rep.to_json()});
  std::cout << format_table({"boundaries", "onset distance (frames)"},
                            {{"predicted peaks", fixed(rep.score, 3)},
                             {"random", fixed(rep.baseline, 3) + " ± " + fixed(rep.baseline_std, 3)}});
}

struct AblateArgs {
  std::string config, data, probe_data, out;
  std::optional<std::size_t> seeds, steps;
};

void cmd_ablate(const AblateArgs &a) {
  ExperimentConfig cfg = config_or_default(a.config);
  if (a.seeds)
    cfg.eval.ablation_seeds = *a.seeds;
  if (a.steps)
    cfg.eval.ablation_steps = *a.steps;
  cfg.validate();
  const Dataset corpus = read_dataset(a.data);
  const Dataset probe_corpus = a.probe_data.empty() ? corpus : read_dataset(a.probe_data);
  if (!probe_corpus.has_labels())
    throw ConfigError("ablation probing needs a labeled corpus (sidecar)");
  const auto rows = ablate(corpus, probe_corpus, cfg, [](const AblationProgress &p) {
    std::cerr << p.variant << " seed " << p.seed_index << ": AUROC " << fixed(p.report.auroc)
              << " accuracy " << fixed(p.report.accuracy) << '\n';
  });
  std::vector<json> lines;
  for (const auto &r : rows)
    lines.push_back(r.to_json());
  write_lines(a.out, lines);
  std::cout << ablation_table(rows);
}

void add_eval_command(CLI::App &app, const std::string &name, const std::string &help,
                      EvalArgs &args, std::function<void(const EvalArgs &)> run,
                      std::function<void()> &selected) {
  auto *cmd = app.add_subcommand(name, help);
  cmd->add_option("--checkpoint", args.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", args.data, "dataset container (sidecar alongside)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out, "JSON-lines report")->required();
  cmd->add_option("--seg-samples", args.seg_samples, "segmentations averaged per embedding");
  cmd->add_option("--seed", args.seed, "evaluation seed");
  cmd->add_option("--modality", args.modality, "modality to embed in paired corpora");
  cmd->add_flag("--shared", args.shared, "embed paired recordings by the mean over modalities");
  cmd->callback([&selected, &args, run] { selected = [&args, run] { run(args); }; });
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Event-field representation learning for physiological time series"};
  app.footer(kEnvironmentHelp);
  app.require_subcommand(1);
  std::function<void()> selected;

  GenArgs gen;
  auto *g = app.add_subcommand("gen-data", "generate a synthetic corpus and its sidecar");
  g->add_option("--config", gen.config, "experiment config (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "container path")->required();
  g->add_option("--count", gen.count, "override generator.num_recordings");
  g->add_option("--seed", gen.seed, "override generator.seed");
  g->callback([&] { selected = [&] { cmd_gen_data(gen); }; });

  PretrainArgs pre;
  auto *p = app.add_subcommand("pretrain", "self-supervised pretraining");
  p->add_option("--config", pre.config, "experiment config (defaults when omitted)")->check(CLI::ExistingFile);
  p->add_option("--data", pre.data, "dataset container")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--stop-after", pre.stop_after, "stop and checkpoint after this step");
  p->add_option("--print-every", pre.print_every, "progress interval on stderr (0: quiet)");
  p->callback([&] { selected = [&] { cmd_pretrain(pre); }; });

  ResumeArgs res;
  auto *r = app.add_subcommand("resume", "continue pretraining from a checkpoint");
  r->add_option("--checkpoint", res.checkpoint, "checkpoint to resume")->required()->check(CLI::ExistingFile);
  r->add_option("--data", res.data, "dataset container (default: recorded path)");
  r->add_option("--out", res.out, "output directory (default: recorded path)");
  r->add_option("--stop-after", res.stop_after, "stop and checkpoint after this step");
  r->add_option("--print-every", res.print_every, "progress interval on stderr (0: quiet)");
  r->callback([&] { selected = [&] { cmd_resume(res); }; });

  EvalArgs enc, prb, ret, rob, unc, aln;
  add_eval_command(app, "encode", "embed every record", enc, cmd_encode, selected);
  add_eval_command(app, "probe", "linear probe on a subject-disjoint split", prb, cmd_probe, selected);
  add_eval_command(app, "retrieve", "same-class retrieval (MAP, NDCG)", ret, cmd_retrieve, selected);
  add_eval_command(app, "robustness", "probe under noise, time warp and frequency masking", rob,
                   cmd_robustness, selected);
  add_eval_command(app, "uncertainty", "segmentation variance per record", unc, cmd_uncertainty,
                   selected);
  add_eval_command(app, "align", "boundary peaks against true event onsets", aln, cmd_align, selected);

  AblateArgs abl;
  auto *ab = app.add_subcommand("ablate", "pretrain and probe the four ablation variants");
  ab->add_option("--config", abl.config, "experiment config (defaults when omitted)")->check(CLI::ExistingFile);
  ab->add_option("--data", abl.data, "pretraining corpus")->required()->check(CLI::ExistingFile);
  ab->add_option("--probe-data", abl.probe_data, "labeled corpus to probe (default: --data)")
      ->check(CLI::ExistingFile);
  ab->add_option("--out", abl.out, "JSON-lines report")->required();
  ab->add_option("--seeds", abl.seeds, "seeds per variant");
  ab->add_option("--steps", abl.steps, "pretraining steps per run");
  ab->callback([&] { selected = [&] { cmd_ablate(abl); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    selected();
    return 0;
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CorruptDataError &e) {
    std::cerr << "corrupt data: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const NumericError &e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
}
