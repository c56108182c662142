// Command-line surface for the pipeline: dataset generation, training,
// evaluation, and attention visualization. Exit codes: 0 success, 2 for
// usage/config errors, 1 for runtime failures.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "asap/auxtext.hpp"
#include "asap/checkpoint.hpp"
#include "asap/config.hpp"
#include "asap/data.hpp"
#include "asap/metrics.hpp"
#include "asap/train.hpp"
#include "asap/viz.hpp"

namespace fs = std::filesystem;
using namespace asap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GenArgs {
  std::string out;
  int n = 1000;
  uint64_t seed = 0;
  std::string mix;
  bool use_llm = false;
};

int run_gen_data(const GenArgs& args) {
  GenConfig cfg;
  cfg.n = args.n;
  cfg.seed = args.seed;
  if (!args.mix.empty()) cfg.mix = MixConfig::parse(args.mix);
  cfg.mix.validate();

  auto ds = generate_dataset(cfg);

  if (args.use_llm) {
    AuxTextConfig aux_cfg = AuxTextConfig::from_env();
    aux_cfg.cache_dir = (fs::path(args.out) / "auxtext_cache").string();
    AuxTextClient client(aux_cfg);
    if (!client.enabled())
      std::cerr << "[asap] ASAP_LLM_ENDPOINT not set; using stub texts\n";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      MediaSample& s = ds.samples[i];
      s.caption = client.generate(AuxKind::caption, caption_instruction(),
                                  &s.image, s.caption);
      s.explanation =
          client.generate(AuxKind::explanation,
                          explanation_instruction(s.text), nullptr,
                          s.explanation);
      s.caption_ids = tokenize(s.caption);
      s.explanation_ids = tokenize(s.explanation);
      ds.manifest[i].caption = s.caption;
      ds.manifest[i].explanation = s.explanation;
    }
  }

  save_dataset(ds, args.out);
  std::cout << "wrote " << ds.samples.size() << " samples to " << args.out
            << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string val_data;
  std::string out;
  std::string ablate;
  int epochs = -1;
  int batch_size = -1;
  int64_t seed = -1;
  double lr_peak = -1;
  int warmup_steps = -1;
};

int run_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty()) cfg = load_train_config(args.config_path);
  if (args.epochs > 0) cfg.epochs = args.epochs;
  if (args.batch_size > 0) cfg.batch_size = args.batch_size;
  if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
  if (args.lr_peak > 0) cfg.lr_peak = args.lr_peak;
  if (args.warmup_steps >= 0) cfg.warmup_steps = args.warmup_steps;
  if (!args.ablate.empty()) {
    std::stringstream ss(args.ablate);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty()) cfg.ablations.insert(parse_ablation(name));
  }
  cfg.validate();

  if (!fs::exists(fs::path(args.data) / "manifest.jsonl"))
    throw ConfigError("no manifest.jsonl under --data " + args.data);
  auto train_ds = load_dataset(args.data, cfg.model.max_text_len);
  std::unique_ptr<Dataset> val_ds;
  if (!args.val_data.empty()) {
    if (!fs::exists(fs::path(args.val_data) / "manifest.jsonl"))
      throw ConfigError("no manifest.jsonl under --val-data " + args.val_data);
    val_ds = std::make_unique<Dataset>(
        load_dataset(args.val_data, cfg.model.max_text_len));
  }

  fs::create_directories(args.out);
  {
    std::ofstream echo((fs::path(args.out) / "config.json").string());
    echo << train_config_json(cfg) << "\n";
  }

  Trainer<float> trainer(cfg, train_ds.samples.size());
  auto result = fit(trainer, train_ds.samples,
                    val_ds ? &val_ds->samples : nullptr, args.out, &std::cerr);

  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.step = trainer.step();
  meta.note = "final";
  save_model_checkpoint((fs::path(args.out) / "ckpt_final.bin").string(),
                        trainer.model(), &trainer.teacher(), meta);
  if (result.has_metrics) {
    std::ofstream mj((fs::path(args.out) / "val_metrics.json").string());
    mj << metric_table_json(result.final_metrics) << "\n";
    std::cout << metric_table_json(result.final_metrics) << "\n";
  }
  std::cout << "trained " << trainer.step() << " steps; artifacts in "
            << args.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, out;
};

int run_eval(const EvalArgs& args) {
  auto loaded = load_model_checkpoint<float>(args.ckpt);
  auto ds = load_dataset(args.data, loaded.config.max_text_len);
  auto ev = evaluate(*loaded.model, ds.samples);
  fs::create_directories(args.out);
  write_eval_records((fs::path(args.out) / "eval_records.jsonl").string(),
                     ev.records);
  {
    std::ofstream mj((fs::path(args.out) / "metrics.json").string());
    mj << metric_table_json(ev.metrics) << "\n";
  }
  std::cout << metric_table_json(ev.metrics) << "\n";
  return kExitOk;
}

struct VizArgs {
  std::string ckpt, data, sample, out;
  int word = -1;
};

int run_viz(const VizArgs& args) {
  auto loaded = load_model_checkpoint<float>(args.ckpt);
  auto ds = load_dataset(args.data, loaded.config.max_text_len);

  const MediaSample* sample = nullptr;
  for (const auto& s : ds.samples)
    if (s.id == args.sample) sample = &s;
  if (!sample) {
    try {
      const size_t idx = std::stoul(args.sample);
      if (idx < ds.samples.size()) sample = &ds.samples[idx];
    } catch (const std::exception&) {
    }
  }
  if (!sample)
    throw ConfigError("sample '" + args.sample + "' not found in " + args.data);

  auto viz = viz_attention(*loaded.model, *sample, args.word, args.out);
  std::cout << "word " << viz.word_index << " mass_in_bbox "
            << viz.word_mass_in_bbox << "\n"
            << viz.word_png << "\n"
            << viz.sentence_png << "\n"
            << viz.raw_json << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal manipulation detection pipeline"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd =
      app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--mix", gen.mix,
                      "Type mix, e.g. none=0.4,fs=0.2,ts=0.2,fa_ts=0.2");
  gen_cmd->add_flag("--use-llm", gen.use_llm,
                    "Generate captions/explanations via ASAP_LLM_ENDPOINT");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train.config_path, "JSON config file");
  train_cmd->add_option("--data", train.data, "Training dataset directory")
      ->required();
  train_cmd->add_option("--val-data", train.val_data,
                        "Validation dataset directory");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--ablate", train.ablate,
                        "Comma list of lma,mgca,pmm,hnp");
  train_cmd->add_option("--epochs", train.epochs, "Override epochs");
  train_cmd->add_option("--batch-size", train.batch_size,
                        "Override batch size");
  train_cmd->add_option("--seed", train.seed, "Override seed");
  train_cmd->add_option("--lr-peak", train.lr_peak, "Override peak LR");
  train_cmd->add_option("--warmup-steps", train.warmup_steps,
                        "Override warmup steps");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")
      ->required();
  eval_cmd->add_option("--out", eval_args.out, "Output directory")->required();

  VizArgs viz;
  auto* viz_cmd =
      app.add_subcommand("viz-attn", "Render cross-attention heatmaps");
  viz_cmd->add_option("--ckpt", viz.ckpt, "Checkpoint file")->required();
  viz_cmd->add_option("--data", viz.data, "Dataset directory")->required();
  viz_cmd->add_option("--sample", viz.sample, "Sample id or index")
      ->required();
  viz_cmd->add_option("--word", viz.word,
                      "Word index (default: first manipulated token)");
  viz_cmd->add_option("--out", viz.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (viz_cmd->parsed()) return run_viz(viz);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
