#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unlab/metrics.hpp"
#include "unlab/objectives.hpp"

namespace unlab {

// Flat dotted-key config ("key = value" lines, '#' comments). Unknown keys
// are errors so sweeps cannot silently miss. All randomness is seeded here.
struct ExperimentConfig {
  // corpus
  std::uint64_t corpus_seed = 1;
  int profiles = 10;
  int qa_per_profile = 4;
  int vocab_size = 64;
  int perturbations = 3;
  // split
  std::uint64_t split_seed = 2;
  double forget_fraction = 0.05;
  double holdout_fraction = 0.1;
  double aux_fraction = 0.1;
  // model
  int context_window = 4;
  int embed_dim = 12;
  int hidden_dim = 32;
  std::uint64_t init_seed = 3;
  double init_scale = 0.1;
  // finetune (original and gold models)
  TrainSchedule finetune{/*epochs=*/40, /*batch_size=*/16, /*base_lr=*/0.02,
                         /*warmup_fraction=*/0.1, OptimizerKind::adam,
                         /*shuffle_seed=*/4};
  // unlearning
  int unlearn_epochs = 4;
  int unlearn_batch = 8;
  double unlearn_lr = 0.005;
  double unlearn_warmup_fraction = 0.2;
  OptimizerKind unlearn_optimizer = OptimizerKind::adam;
  std::uint64_t unlearn_shuffle_seed = 5;
  bool snapshot_reference = true;
  // optional early stop: end unlearning once the gradient norm jumps by
  // more than this factor between consecutive steps; 0 disables
  double early_stop_grad_jump = 0.0;
  ObjectiveSpec objective;
  // metrics
  double min_k_percent = 0.2;
  int prefix_k = 4;
  bool metrics_es = true;
  bool metrics_es_perturb = true;
  bool metrics_fq = true;
  bool metrics_mu = true;
  bool metrics_mem = true;  // verbmem/knowmem/utilpres/privleak
  bool metrics_mc = true;
  std::uint64_t mc_seed = 6;
  // diagnostics
  bool trace_loss_weight = false;
  bool trace_ktl = false;

  static ExperimentConfig from_file(const std::filesystem::path& path);
  static ExperimentConfig from_string(const std::string& text);
  void set_key(const std::string& key, const std::string& value);
  std::string canonical() const;     // every key, sorted, one per line
  std::string hash_hex() const;      // fnv1a64 of canonical()
  void validate() const;
};

struct EpochResult {
  int epoch = 0;  // 0 = pre-unlearning baseline
  std::string checkpoint;  // path relative to the run directory
  MetricReport report;
};

struct RunRecord {
  std::string config_hash;
  std::string config_text;  // canonical form
  std::vector<EpochResult> epochs;
  std::string telemetry_file = "telemetry.csv";
  std::string corpus_file = "corpus.jsonl";
  std::string split_file = "split.json";
  std::vector<int> original_trained_pairs;
  std::vector<int> gold_trained_pairs;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RunRecord load(const std::filesystem::path& path);
};

// generate -> split -> finetune original -> finetune gold (retain-side
// only) -> snapshot reference -> unlearn loop with per-epoch checkpoint and
// metric report. Everything lands under out_dir; identical configs produce
// byte-identical artifacts.
RunRecord run_experiment(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir);

// Evaluate one checkpoint against the corpus/split that the config defines.
MetricReport evaluate_checkpoint(const ExperimentConfig& config, const ToyModel& model,
                                 const Corpus& corpus, const SplitAssignment& split,
                                 const ToyModel& gold,
                                 const std::vector<double>& gold_trs);

struct SweepGrid {
  // (config key, values); cells are the cartesian product in file order
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;

  static SweepGrid from_file(const std::filesystem::path& path);
  static SweepGrid from_string(const std::string& text);
};

struct SweepCell {
  int index = 0;
  std::map<std::string, std::string> overrides;
  std::string run_dir;   // relative to the sweep directory
  std::string error;     // nonempty when the cell failed
  RunRecord record;      // valid when error is empty
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

SweepResult sweep(const ExperimentConfig& base, const SweepGrid& grid,
                  const std::filesystem::path& out_dir);

// Goal-constrained checkpoint selection: among epochs whose forget-side ES is
// at most max_forget_es, return the one with the highest retain-side ES.
// Falls back to the epoch with the lowest forget ES when none qualifies;
// -1 when no epoch carries ES values.
int select_epoch_by_es_tradeoff(const RunRecord& record, double max_forget_es);

// report.csv column order (fixed):
//   run_id,epoch,objective,criterion,beta,beta1,beta2,lambda,es_retain,
//   es_unlearn,forget_quality,model_utility,verbmem,knowmem,privleak,
//   utilpres,accuracy
std::string report_csv_header();
std::string report_csv_rows(const ExperimentConfig& config, const RunRecord& record);

enum class ReportFormat { json, csv };
void emit_report(const ExperimentConfig& config, const RunRecord& record,
                 ReportFormat format, const std::filesystem::path& out_file);
void emit_sweep_report(const ExperimentConfig& base, const SweepResult& result,
                       ReportFormat format, const std::filesystem::path& out_file);

enum class PlotKind { weight_vs_loss, ktl_histogram, beta_curves, telemetry };

PlotKind plot_kind_from_name(const std::string& name);

// Columnar plot files derived from a finished run directory (beta_curves
// wants a sweep directory instead). Returns the emitted file path.
std::filesystem::path emit_plot_data(const std::filesystem::path& run_dir,
                                     PlotKind kind,
                                     const std::filesystem::path& out_dir);

}  // namespace unlab
