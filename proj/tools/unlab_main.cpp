// unlab: desk-scale unlearning lab driver.
//
// Subcommands:
//   gen-corpus   write corpus.jsonl and split.json for a config
//   finetune     train the original and gold models, snapshot the reference
//   unlearn      full pipeline (generate -> finetune -> unlearn -> evaluate)
//   evaluate     score one checkpoint against the config's corpus/split
//   sweep        cartesian grid of config overrides, one run per cell
//   plot-data    columnar plot files from a finished run/sweep directory
//
// Exit codes: 0 success, 2 validation error, 3 runtime error.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "unlab/harness.hpp"

namespace fs = std::filesystem;
using namespace unlab;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const GlobalArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig{}
                             : ExperimentConfig::from_file(args.config_path);
  if (args.seed) cfg.corpus_seed = *args.seed;
  cfg.validate();
  return cfg;
}

int run_gen_corpus(const GlobalArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  fs::create_directories(args.out_dir);
  const Corpus corpus = generate_corpus(cfg.corpus_seed, cfg.profiles,
                                        cfg.qa_per_profile, cfg.vocab_size,
                                        cfg.perturbations);
  save_corpus(corpus, fs::path(args.out_dir) / "corpus.jsonl");
  const SplitAssignment split =
      split_corpus(corpus, cfg.forget_fraction, cfg.holdout_fraction, cfg.split_seed,
                   cfg.aux_fraction);
  save_split(split, fs::path(args.out_dir) / "split.json");
  std::cout << "wrote " << corpus.pairs.size() << " pairs (forget "
            << split.forget.size() << ", retain " << split.retain.size()
            << ", holdout " << split.holdout.size() << ") to " << args.out_dir << "\n";
  return 0;
}

int run_finetune(const GlobalArgs& args) {
  ExperimentConfig cfg = load_config(args);
  cfg.unlearn_epochs = 0;  // stop after the finetune/gold/reference stages
  const RunRecord record = run_experiment(cfg, args.out_dir);
  std::cout << "original NLL-trained on " << record.original_trained_pairs.size()
            << " pairs, gold on " << record.gold_trained_pairs.size()
            << "; checkpoints under " << args.out_dir << "\n";
  return 0;
}

int run_unlearn(const GlobalArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const RunRecord record = run_experiment(cfg, args.out_dir);
  std::cout << "run " << record.config_hash << ": " << record.epochs.size()
            << " epoch reports under " << args.out_dir << "\n";
  return 0;
}

int run_evaluate(const GlobalArgs& args, const std::string& checkpoint) {
  const ExperimentConfig cfg = load_config(args);
  const Corpus corpus = generate_corpus(cfg.corpus_seed, cfg.profiles,
                                        cfg.qa_per_profile, cfg.vocab_size,
                                        cfg.perturbations);
  const SplitAssignment split =
      split_corpus(corpus, cfg.forget_fraction, cfg.holdout_fraction, cfg.split_seed,
                   cfg.aux_fraction);
  const ModelConfig mcfg{cfg.vocab_size, cfg.context_window, cfg.embed_dim,
                         cfg.hidden_dim};
  ToyModel gold(mcfg);
  const fs::path gold_path = fs::path(args.out_dir) / "model_gold.bin";
  if (fs::exists(gold_path)) {
    gold = load_checkpoint(gold_path);
  } else {
    gold = ToyModel::random(mcfg, cfg.init_seed, cfg.init_scale);
    std::vector<int> gold_ids = split.retain;
    gold_ids.insert(gold_ids.end(), split.aux_real.begin(), split.aux_real.end());
    gold_ids.insert(gold_ids.end(), split.aux_world.begin(), split.aux_world.end());
    std::sort(gold_ids.begin(), gold_ids.end());
    finetune(gold, corpus, gold_ids, cfg.finetune);
  }
  std::vector<double> gold_trs;
  if (cfg.metrics_fq) {
    for (int id : split.forget) {
      gold_trs.push_back(truth_ratio(gold, corpus.pairs[static_cast<std::size_t>(id)]));
    }
  }
  const ToyModel model = load_checkpoint(checkpoint);
  const MetricReport report =
      evaluate_checkpoint(cfg, model, corpus, split, gold, gold_trs);
  std::cout << report.to_json() << "\n";
  return 0;
}

int run_sweep(const GlobalArgs& args, const std::string& grid_path) {
  const ExperimentConfig cfg = load_config(args);
  const SweepGrid grid =
      grid_path.empty() ? SweepGrid{} : SweepGrid::from_file(grid_path);
  const SweepResult result = sweep(cfg, grid, args.out_dir);
  int failed = 0;
  for (const SweepCell& cell : result.cells) {
    if (!cell.error.empty()) ++failed;
  }
  std::cout << result.cells.size() << " cells (" << failed << " failed), table at "
            << (fs::path(args.out_dir) / "sweep.csv").string() << "\n";
  return 0;
}

int run_plot_data(const std::string& run_dir, const std::string& kind,
                  const std::string& out_dir) {
  const fs::path dst = emit_plot_data(run_dir, plot_kind_from_name(kind),
                                      out_dir.empty() ? run_dir : out_dir);
  std::cout << dst.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale unlearning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs args;
  app.add_option("--config", args.config_path, "config file (key = value lines)");
  app.add_option("--out", args.out_dir, "output directory");
  app.add_option("--seed", args.seed, "override corpus.seed");

  auto* gen = app.add_subcommand("gen-corpus", "generate corpus and split files");
  auto* fin = app.add_subcommand("finetune", "train original and gold models");
  auto* unl = app.add_subcommand("unlearn", "full unlearning experiment");
  auto* eva = app.add_subcommand("evaluate", "evaluate one checkpoint");
  std::string checkpoint;
  eva->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
  auto* swp = app.add_subcommand("sweep", "grid of runs");
  std::string grid_path;
  swp->add_option("--grid", grid_path, "grid file (key = v1, v2, ... lines)");
  auto* plt = app.add_subcommand("plot-data", "emit plot-ready columnar files");
  std::string run_dir, kind, plot_out;
  plt->add_option("--run", run_dir, "run (or sweep) directory")->required();
  plt->add_option("--kind", kind,
                  "weight_vs_loss | ktl_histogram | beta_curves | telemetry")
      ->required();
  plt->add_option("--plot-out", plot_out, "destination directory (default: run dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_corpus(args);
    if (fin->parsed()) return run_finetune(args);
    if (unl->parsed()) return run_unlearn(args);
    if (eva->parsed()) return run_evaluate(args, checkpoint);
    if (swp->parsed()) return run_sweep(args, grid_path);
    if (plt->parsed()) return run_plot_data(run_dir, kind, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const SplitError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
