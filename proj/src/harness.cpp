#include "unlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace unlab {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("trailing characters in number '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

long parse_long(const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw ConfigError("trailing characters in integer '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw ConfigError("trailing characters in integer '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
}

OptimizerKind optimizer_from_name(const std::string& v) {
  if (v == "sgd") return OptimizerKind::sgd;
  if (v == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + v + "'");
}

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }

std::string csv_opt(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

void ExperimentConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "corpus.seed") corpus_seed = parse_u64(value);
  else if (key == "corpus.profiles") profiles = static_cast<int>(parse_long(value));
  else if (key == "corpus.qa_per_profile") qa_per_profile = static_cast<int>(parse_long(value));
  else if (key == "corpus.vocab_size") vocab_size = static_cast<int>(parse_long(value));
  else if (key == "corpus.perturbations") perturbations = static_cast<int>(parse_long(value));
  else if (key == "split.seed") split_seed = parse_u64(value);
  else if (key == "split.forget_fraction") forget_fraction = parse_double(value);
  else if (key == "split.holdout_fraction") holdout_fraction = parse_double(value);
  else if (key == "split.aux_fraction") aux_fraction = parse_double(value);
  else if (key == "model.context_window") context_window = static_cast<int>(parse_long(value));
  else if (key == "model.embed_dim") embed_dim = static_cast<int>(parse_long(value));
  else if (key == "model.hidden_dim") hidden_dim = static_cast<int>(parse_long(value));
  else if (key == "model.init_seed") init_seed = parse_u64(value);
  else if (key == "model.init_scale") init_scale = parse_double(value);
  else if (key == "finetune.epochs") finetune.epochs = static_cast<int>(parse_long(value));
  else if (key == "finetune.batch") finetune.batch_size = static_cast<int>(parse_long(value));
  else if (key == "finetune.lr") finetune.base_lr = parse_double(value);
  else if (key == "finetune.warmup_fraction") finetune.warmup_fraction = parse_double(value);
  else if (key == "finetune.optimizer") finetune.optimizer = optimizer_from_name(value);
  else if (key == "finetune.shuffle_seed") finetune.shuffle_seed = parse_u64(value);
  else if (key == "unlearn.epochs") unlearn_epochs = static_cast<int>(parse_long(value));
  else if (key == "unlearn.batch") unlearn_batch = static_cast<int>(parse_long(value));
  else if (key == "unlearn.lr") unlearn_lr = parse_double(value);
  else if (key == "unlearn.warmup_fraction") unlearn_warmup_fraction = parse_double(value);
  else if (key == "unlearn.optimizer") unlearn_optimizer = optimizer_from_name(value);
  else if (key == "unlearn.shuffle_seed") unlearn_shuffle_seed = parse_u64(value);
  else if (key == "unlearn.snapshot_reference") snapshot_reference = parse_bool(value);
  else if (key == "unlearn.early_stop_grad_jump") early_stop_grad_jump = parse_double(value);
  else if (key == "objective.family") objective.family = family_from_name(value);
  else if (key == "objective.criterion") {
    if (value == "none") {
      objective.criterion.reset();
    } else {
      if (!objective.criterion) objective.criterion.emplace();
      objective.criterion->kind = criterion_from_name(value);
    }
  } else if (key == "objective.criterion.p") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->p = parse_double(value);
  } else if (key == "objective.criterion.tau") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->tau = parse_double(value);
  } else if (key == "objective.criterion.beta") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->beta = parse_double(value);
  } else if (key == "objective.criterion.beta1") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->beta1 = parse_double(value);
  } else if (key == "objective.criterion.beta2") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->beta2 = parse_double(value);
  } else if (key == "objective.criterion.gamma") {
    if (!objective.criterion) objective.criterion.emplace();
    objective.criterion->gamma = parse_double(value);
  }
  else if (key == "objective.beta") objective.beta = parse_double(value);
  else if (key == "objective.gamma") objective.gamma = parse_double(value);
  else if (key == "objective.lambda") objective.retain_lambda = parse_double(value);
  else if (key == "objective.rmu_beta") objective.rmu_beta = parse_double(value);
  else if (key == "objective.rmu_seed") objective.rmu_seed = parse_u64(value);
  else if (key == "objective.sampling") {
    if (value == "none") {
      objective.sampling.reset();
    } else {
      if (!objective.sampling) objective.sampling.emplace();
      objective.sampling->strategy = sampling_from_name(value);
    }
  } else if (key == "objective.sampling.beta") {
    if (!objective.sampling) objective.sampling.emplace();
    objective.sampling->beta = parse_double(value);
  } else if (key == "objective.sampling.seed") {
    if (!objective.sampling) objective.sampling.emplace();
    objective.sampling->seed = parse_u64(value);
  }
  else if (key == "objective.granularity") objective.granularity = granularity_from_name(value);
  else if (key == "objective.group_count") objective.group_count = static_cast<int>(parse_long(value));
  else if (key == "metrics.min_k_percent") min_k_percent = parse_double(value);
  else if (key == "metrics.prefix_k") prefix_k = static_cast<int>(parse_long(value));
  else if (key == "metrics.es") metrics_es = parse_bool(value);
  else if (key == "metrics.es_perturb") metrics_es_perturb = parse_bool(value);
  else if (key == "metrics.fq") metrics_fq = parse_bool(value);
  else if (key == "metrics.mu") metrics_mu = parse_bool(value);
  else if (key == "metrics.mem") metrics_mem = parse_bool(value);
  else if (key == "metrics.mc") metrics_mc = parse_bool(value);
  else if (key == "metrics.mc_seed") mc_seed = parse_u64(value);
  else if (key == "trace.loss_weight") trace_loss_weight = parse_bool(value);
  else if (key == "trace.ktl") trace_ktl = parse_bool(value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string ExperimentConfig::canonical() const {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("corpus.seed", fmt_u64(corpus_seed));
  kv.emplace_back("corpus.profiles", std::to_string(profiles));
  kv.emplace_back("corpus.qa_per_profile", std::to_string(qa_per_profile));
  kv.emplace_back("corpus.vocab_size", std::to_string(vocab_size));
  kv.emplace_back("corpus.perturbations", std::to_string(perturbations));
  kv.emplace_back("split.seed", fmt_u64(split_seed));
  kv.emplace_back("split.forget_fraction", format_double(forget_fraction));
  kv.emplace_back("split.holdout_fraction", format_double(holdout_fraction));
  kv.emplace_back("split.aux_fraction", format_double(aux_fraction));
  kv.emplace_back("model.context_window", std::to_string(context_window));
  kv.emplace_back("model.embed_dim", std::to_string(embed_dim));
  kv.emplace_back("model.hidden_dim", std::to_string(hidden_dim));
  kv.emplace_back("model.init_seed", fmt_u64(init_seed));
  kv.emplace_back("model.init_scale", format_double(init_scale));
  kv.emplace_back("finetune.epochs", std::to_string(finetune.epochs));
  kv.emplace_back("finetune.batch", std::to_string(finetune.batch_size));
  kv.emplace_back("finetune.lr", format_double(finetune.base_lr));
  kv.emplace_back("finetune.warmup_fraction", format_double(finetune.warmup_fraction));
  kv.emplace_back("finetune.optimizer", optimizer_name(finetune.optimizer));
  kv.emplace_back("finetune.shuffle_seed", fmt_u64(finetune.shuffle_seed));
  kv.emplace_back("unlearn.epochs", std::to_string(unlearn_epochs));
  kv.emplace_back("unlearn.batch", std::to_string(unlearn_batch));
  kv.emplace_back("unlearn.lr", format_double(unlearn_lr));
  kv.emplace_back("unlearn.warmup_fraction", format_double(unlearn_warmup_fraction));
  kv.emplace_back("unlearn.optimizer", optimizer_name(unlearn_optimizer));
  kv.emplace_back("unlearn.shuffle_seed", fmt_u64(unlearn_shuffle_seed));
  kv.emplace_back("unlearn.snapshot_reference", snapshot_reference ? "true" : "false");
  kv.emplace_back("unlearn.early_stop_grad_jump", format_double(early_stop_grad_jump));
  kv.emplace_back("objective.family", family_name(objective.family));
  kv.emplace_back("objective.criterion",
                  objective.criterion ? criterion_name(objective.criterion->kind) : "none");
  if (objective.criterion) {
    kv.emplace_back("objective.criterion.p", format_double(objective.criterion->p));
    kv.emplace_back("objective.criterion.tau", format_double(objective.criterion->tau));
    if (objective.criterion->beta) {
      kv.emplace_back("objective.criterion.beta",
                      format_double(*objective.criterion->beta));
    }
    kv.emplace_back("objective.criterion.beta1", format_double(objective.criterion->beta1));
    kv.emplace_back("objective.criterion.beta2", format_double(objective.criterion->beta2));
    kv.emplace_back("objective.criterion.gamma", format_double(objective.criterion->gamma));
  }
  if (objective.beta) {
    kv.emplace_back("objective.beta", format_double(*objective.beta));
  }
  kv.emplace_back("objective.gamma", format_double(objective.gamma));
  kv.emplace_back("objective.lambda", format_double(objective.retain_lambda));
  kv.emplace_back("objective.rmu_beta", format_double(objective.rmu_beta));
  kv.emplace_back("objective.rmu_seed", fmt_u64(objective.rmu_seed));
  kv.emplace_back("objective.sampling",
                  objective.sampling ? sampling_name(objective.sampling->strategy) : "none");
  if (objective.sampling) {
    kv.emplace_back("objective.sampling.beta", format_double(objective.sampling->beta));
    kv.emplace_back("objective.sampling.seed", fmt_u64(objective.sampling->seed));
  }
  kv.emplace_back("objective.granularity", granularity_name(objective.granularity));
  kv.emplace_back("objective.group_count", std::to_string(objective.group_count));
  kv.emplace_back("metrics.min_k_percent", format_double(min_k_percent));
  kv.emplace_back("metrics.prefix_k", std::to_string(prefix_k));
  kv.emplace_back("metrics.es", metrics_es ? "true" : "false");
  kv.emplace_back("metrics.es_perturb", metrics_es_perturb ? "true" : "false");
  kv.emplace_back("metrics.fq", metrics_fq ? "true" : "false");
  kv.emplace_back("metrics.mu", metrics_mu ? "true" : "false");
  kv.emplace_back("metrics.mem", metrics_mem ? "true" : "false");
  kv.emplace_back("metrics.mc", metrics_mc ? "true" : "false");
  kv.emplace_back("metrics.mc_seed", fmt_u64(mc_seed));
  kv.emplace_back("trace.loss_weight", trace_loss_weight ? "true" : "false");
  kv.emplace_back("trace.ktl", trace_ktl ? "true" : "false");
  std::sort(kv.begin(), kv.end());
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  return out.str();
}

std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

void ExperimentConfig::validate() const {
  if (profiles < 2 || qa_per_profile < 1 || vocab_size < 16 || perturbations < 1) {
    throw ConfigError("config: invalid corpus parameters");
  }
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0) ||
      !(holdout_fraction > 0.0 && holdout_fraction < 1.0) ||
      aux_fraction < 0.0 || aux_fraction >= 0.5) {
    throw ConfigError("config: invalid split fractions");
  }
  ModelConfig mcfg{vocab_size, context_window, embed_dim, hidden_dim};
  mcfg.validate();
  if (finetune.epochs < 0 || finetune.batch_size < 1 || finetune.base_lr <= 0.0) {
    throw ConfigError("config: invalid finetune schedule");
  }
  if (unlearn_epochs < 0 || unlearn_batch < 1 || unlearn_lr <= 0.0) {
    throw ConfigError("config: invalid unlearn schedule");
  }
  if (early_stop_grad_jump < 0.0) {
    throw ConfigError("config: unlearn.early_stop_grad_jump must be >= 0");
  }
  objective.validate();
  const bool needs_ref =
      objective.needs_reference() ||
      (objective.criterion && objective.criterion->needs_reference());
  if (needs_ref && !snapshot_reference) {
    throw ConfigError("config: objective needs a reference snapshot; "
                      "set unlearn.snapshot_reference = true");
  }
  if (!(min_k_percent > 0.0 && min_k_percent <= 1.0)) {
    throw ConfigError("config: metrics.min_k_percent must lie in (0,1]");
  }
  if (prefix_k < 1) throw ConfigError("config: metrics.prefix_k must be >= 1");
}

std::string RunRecord::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["config_text"] = config_text;
  json eps = json::array();
  for (const EpochResult& e : epochs) {
    json je;
    je["epoch"] = e.epoch;
    je["checkpoint"] = e.checkpoint;
    je["metrics"] = json::parse(e.report.to_json());
    eps.push_back(je);
  }
  j["epochs"] = eps;
  j["telemetry_file"] = telemetry_file;
  j["corpus_file"] = corpus_file;
  j["split_file"] = split_file;
  j["original_trained_pairs"] = original_trained_pairs;
  j["gold_trained_pairs"] = gold_trained_pairs;
  return j.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.config_text = j.at("config_text").get<std::string>();
  for (const json& je : j.at("epochs")) {
    EpochResult e;
    e.epoch = je.at("epoch").get<int>();
    e.checkpoint = je.at("checkpoint").get<std::string>();
    e.report = MetricReport::from_json(je.at("metrics").dump());
    r.epochs.push_back(std::move(e));
  }
  r.telemetry_file = j.at("telemetry_file").get<std::string>();
  r.corpus_file = j.at("corpus_file").get<std::string>();
  r.split_file = j.at("split_file").get<std::string>();
  r.original_trained_pairs = j.at("original_trained_pairs").get<std::vector<int>>();
  r.gold_trained_pairs = j.at("gold_trained_pairs").get<std::vector<int>>();
  return r;
}

void RunRecord::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("RunRecord: cannot open " + path.string());
  out << to_json() << '\n';
}

RunRecord RunRecord::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("RunRecord: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

namespace {

std::vector<int> merged_sorted(std::initializer_list<const std::vector<int>*> sets) {
  std::vector<int> out;
  for (const auto* s : sets) out.insert(out.end(), s->begin(), s->end());
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<double> mu_nine_values(const ToyModel& model, const Corpus& corpus,
                                     const SplitAssignment& split) {
  const std::vector<const std::vector<int>*> subsets = {&split.retain, &split.aux_real,
                                                        &split.aux_world};
  for (const auto* s : subsets) {
    if (s->empty()) return std::nullopt;
  }
  std::vector<double> nine;
  for (const auto* s : subsets) {
    double prob = 0.0, trs = 0.0;
    for (int id : *s) {
      const QAPair& pair = corpus.pairs[static_cast<std::size_t>(id)];
      prob += answer_probability(model, pair);
      trs += std::max(0.0, 1.0 - truth_ratio(model, pair));
    }
    nine.push_back(prob / static_cast<double>(s->size()));
    nine.push_back(trs / static_cast<double>(s->size()));
    nine.push_back(knowmem(model, corpus, *s));
  }
  return model_utility(nine);
}

}  // namespace

MetricReport evaluate_checkpoint(const ExperimentConfig& config, const ToyModel& model,
                                 const Corpus& corpus, const SplitAssignment& split,
                                 const ToyModel& gold,
                                 const std::vector<double>& gold_trs) {
  MetricReport r;
  if (config.metrics_es) {
    r.es_retain = mean_es(model, corpus, split.retain, EsVariant::exact);
    r.es_unlearn = mean_es(model, corpus, split.forget, EsVariant::exact);
    if (config.metrics_es_perturb) {
      r.es_retain_perturb = mean_es(model, corpus, split.retain, EsVariant::perturb);
      r.es_unlearn_perturb = mean_es(model, corpus, split.forget, EsVariant::perturb);
    }
  }
  if (config.metrics_fq && !gold_trs.empty()) {
    std::vector<double> trs;
    trs.reserve(split.forget.size());
    for (int id : split.forget) {
      trs.push_back(truth_ratio(model, corpus.pairs[static_cast<std::size_t>(id)]));
    }
    r.forget_quality = forget_quality(trs, gold_trs);
  }
  if (config.metrics_mu) {
    r.model_utility = mu_nine_values(model, corpus, split);
  }
  if (config.metrics_mem) {
    r.verbmem = verbmem(model, corpus, split.forget, config.prefix_k);
    r.knowmem = knowmem(model, corpus, split.forget);
    r.utilpres = utilpres(model, corpus, split.retain);
    if (!split.holdout.empty()) {
      try {
        r.privleak = privleak(model, gold, corpus, split.forget, split.holdout,
                              config.min_k_percent);
      } catch (const MetricError&) {
        // tiny splits can hand the gold model a degenerate AUC of exactly 0;
        // the metric is undefined there and stays absent from the report
      }
    }
  }
  if (config.metrics_mc) {
    const std::vector<int>& pool = !split.aux_world.empty() ? split.aux_world
                                                            : split.holdout;
    if (!pool.empty()) {
      const std::vector<McItem> items = make_mc_items(corpus, pool, config.mc_seed);
      if (!items.empty()) r.accuracy = mc_accuracy(model, items);
    }
  }
  return r;
}

RunRecord run_experiment(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  auto fail = [&](const std::string& stage, const std::exception& e) -> Error {
    std::ofstream flag(out_dir / "FAILED");
    flag << stage << ": " << e.what() << '\n';
    return Error("stage " + stage + ": " + e.what());
  };
  std::filesystem::remove(out_dir / "FAILED");

  RunRecord record;
  record.config_hash = config.hash_hex();
  record.config_text = config.canonical();

  Corpus corpus;
  SplitAssignment split;
  try {
    corpus = generate_corpus(config.corpus_seed, config.profiles, config.qa_per_profile,
                             config.vocab_size, config.perturbations);
    save_corpus(corpus, out_dir / record.corpus_file);
    split = split_corpus(corpus, config.forget_fraction, config.holdout_fraction,
                         config.split_seed, config.aux_fraction);
    save_split(split, out_dir / record.split_file);
  } catch (const std::exception& e) {
    throw fail("generate", e);
  }

  const ModelConfig mcfg{config.vocab_size, config.context_window, config.embed_dim,
                         config.hidden_dim};
  ToyModel original(mcfg);
  ToyModel gold(mcfg);
  try {
    original = ToyModel::random(mcfg, config.init_seed, config.init_scale);
    const std::vector<int> train_ids = merged_sorted(
        {&split.forget, &split.retain, &split.aux_real, &split.aux_world});
    record.original_trained_pairs = finetune(original, corpus, train_ids,
                                             config.finetune).pair_ids_seen;
    save_checkpoint(original, out_dir / "model_original.bin");
  } catch (const std::exception& e) {
    throw fail("finetune-original", e);
  }
  try {
    gold = ToyModel::random(mcfg, config.init_seed, config.init_scale);
    const std::vector<int> gold_ids =
        merged_sorted({&split.retain, &split.aux_real, &split.aux_world});
    record.gold_trained_pairs = finetune(gold, corpus, gold_ids,
                                         config.finetune).pair_ids_seen;
    // gold isolation: the retain-only model must never have seen a forget
    // or holdout pair
    std::set<int> excluded(split.forget.begin(), split.forget.end());
    excluded.insert(split.holdout.begin(), split.holdout.end());
    for (int id : record.gold_trained_pairs) {
      if (excluded.count(id)) {
        throw TrainingError("gold model trained on an excluded pair");
      }
    }
    save_checkpoint(gold, out_dir / "model_gold.bin");
  } catch (const std::exception& e) {
    throw fail("finetune-gold", e);
  }

  ModelSnapshot reference;
  if (config.snapshot_reference) {
    reference = make_snapshot(original, "reference");
    save_checkpoint(original, out_dir / "model_ref.bin");
  }

  std::vector<double> gold_trs;
  if (config.metrics_fq) {
    for (int id : split.forget) {
      gold_trs.push_back(truth_ratio(gold, corpus.pairs[static_cast<std::size_t>(id)]));
    }
  }

  UnlearnContext ctx;
  if (config.snapshot_reference) ctx.reference = &reference;
  if (config.objective.family == ObjectiveFamily::rmu) {
    ctx.rmu_u = rmu_direction(mcfg.hidden_dim, config.objective.rmu_seed);
  }
  LossWeightTrace lw_trace;
  std::vector<double> ktl_values;
  if (config.trace_loss_weight) ctx.loss_weight_trace = &lw_trace;
  if (config.trace_ktl) ctx.ktl_values = &ktl_values;

  ToyModel model = original;
  try {
    EpochResult base;
    base.epoch = 0;
    base.checkpoint = "model_original.bin";
    base.report = evaluate_checkpoint(config, model, corpus, split, gold, gold_trs);
    record.epochs.push_back(std::move(base));

    std::ofstream tele(out_dir / record.telemetry_file, std::ios::binary);
    tele << telemetry_csv_header() << '\n';

    TrainSchedule usched;
    usched.epochs = config.unlearn_epochs;
    usched.batch_size = config.unlearn_batch;
    usched.base_lr = config.unlearn_lr;
    usched.warmup_fraction = config.unlearn_warmup_fraction;
    usched.optimizer = config.unlearn_optimizer;
    usched.shuffle_seed = config.unlearn_shuffle_seed;

    OptimizerState opt = OptimizerState::make(config.unlearn_optimizer, mcfg);
    Rng forget_rng(config.unlearn_shuffle_seed);
    Rng retain_rng(Rng::mix(config.unlearn_shuffle_seed, 0x72657461696eull));
    std::vector<int> forder = split.forget;
    std::vector<int> rorder = split.retain;
    retain_rng.shuffle(rorder);
    std::size_t rpos = 0;
    auto next_retain_batch = [&](std::size_t count) {
      std::vector<int> out;
      if (rorder.empty()) return out;
      count = std::min(count, rorder.size());
      for (std::size_t c = 0; c < count; ++c) {
        if (rpos == rorder.size()) {
          retain_rng.shuffle(rorder);
          rpos = 0;
        }
        out.push_back(rorder[rpos++]);
      }
      return out;
    };

    const long steps_per_epoch =
        (static_cast<long>(forder.size()) + config.unlearn_batch - 1) / config.unlearn_batch;
    const long total_steps = steps_per_epoch * config.unlearn_epochs;
    long step = 0;
    double prev_grad_norm = -1.0;
    bool stop = false;
    for (int epoch = 1; epoch <= config.unlearn_epochs && !stop; ++epoch) {
      forget_rng.shuffle(forder);
      for (std::size_t at = 0; at < forder.size();
           at += static_cast<std::size_t>(config.unlearn_batch)) {
        const std::size_t end =
            std::min(forder.size(), at + static_cast<std::size_t>(config.unlearn_batch));
        const std::span<const int> fb(forder.data() + at, end - at);
        const std::vector<int> rb = next_retain_batch(fb.size());
        const double lr = scheduled_lr(usched, step, total_steps);
        const StepTelemetry t =
            unlearn_step(model, corpus, fb, rb, config.objective, opt, lr, step, ctx);
        tele << telemetry_csv_row(t) << '\n';
        ++step;
        if (config.early_stop_grad_jump > 0.0 && prev_grad_norm > 0.0 &&
            t.grad_norm > config.early_stop_grad_jump * prev_grad_norm) {
          stop = true;  // grad-norm jump: end the run after this epoch record
          break;
        }
        prev_grad_norm = t.grad_norm;
      }
      EpochResult er;
      er.epoch = epoch;
      er.checkpoint = "model_epoch_" + std::to_string(epoch) + ".bin";
      save_checkpoint(model, out_dir / er.checkpoint);
      er.report = evaluate_checkpoint(config, model, corpus, split, gold, gold_trs);
      record.epochs.push_back(std::move(er));
    }
  } catch (const std::exception& e) {
    throw fail("unlearn", e);
  }

  if (config.trace_loss_weight) lw_trace.save_csv(out_dir / "loss_weight_trace.csv");
  if (config.trace_ktl) {
    std::ofstream out(out_dir / "ktl.csv", std::ios::binary);
    out << "ktl\n";
    for (double v : ktl_values) out << format_double(v) << '\n';
  }
  record.save(out_dir / "run.json");
  emit_report(config, record, ReportFormat::csv, out_dir / "report.csv");
  return record;
}

SweepGrid SweepGrid::from_string(const std::string& text) {
  SweepGrid grid;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("grid: expected 'key = v1, v2, ...'");
    const std::string key = trim(line.substr(0, eq));
    std::vector<std::string> values;
    std::istringstream vs(line.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) {
      v = trim(v);
      if (!v.empty()) values.push_back(v);
    }
    if (values.empty()) throw ConfigError("grid: no values for key '" + key + "'");
    grid.axes.emplace_back(key, values);
  }
  return grid;
}

SweepGrid SweepGrid::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("grid: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

SweepResult sweep(const ExperimentConfig& base, const SweepGrid& grid,
                  const std::filesystem::path& out_dir) {
  // grid keys must exist in the config schema
  for (const auto& [key, values] : grid.axes) {
    ExperimentConfig probe = base;
    probe.set_key(key, values.front());
  }
  std::filesystem::create_directories(out_dir);

  long cell_count = 1;
  for (const auto& axis : grid.axes) {
    cell_count *= static_cast<long>(axis.second.size());
  }

  SweepResult result;
  for (long index = 0; index < cell_count; ++index) {
    SweepCell cell;
    cell.index = static_cast<int>(index);
    long rest = index;
    // last axis varies fastest
    for (long a = static_cast<long>(grid.axes.size()) - 1; a >= 0; --a) {
      const auto& [key, values] = grid.axes[static_cast<std::size_t>(a)];
      cell.overrides[key] = values[static_cast<std::size_t>(rest % static_cast<long>(values.size()))];
      rest /= static_cast<long>(values.size());
    }
    char name[32];
    std::snprintf(name, sizeof(name), "cell_%03ld", index);
    cell.run_dir = name;
    ExperimentConfig cfg = base;
    for (const auto& [key, value] : cell.overrides) cfg.set_key(key, value);
    try {
      cell.record = run_experiment(cfg, out_dir / cell.run_dir);
    } catch (const std::exception& e) {
      cell.error = e.what();  // per-cell failures recorded, sweep continues
    }
    result.cells.push_back(std::move(cell));
  }

  // sweep.csv: rows sorted by (cell index, epoch)
  std::ofstream csv(out_dir / "sweep.csv", std::ios::binary);
  csv << report_csv_header() << '\n';
  json cells_json = json::array();
  for (const SweepCell& cell : result.cells) {
    ExperimentConfig cfg = base;
    for (const auto& [key, value] : cell.overrides) cfg.set_key(key, value);
    if (cell.error.empty()) csv << report_csv_rows(cfg, cell.record);
    json jc;
    jc["index"] = cell.index;
    jc["overrides"] = cell.overrides;
    jc["run_dir"] = cell.run_dir;
    jc["error"] = cell.error;
    cells_json.push_back(jc);
  }
  std::ofstream js(out_dir / "sweep.json", std::ios::binary);
  js << json{{"cells", cells_json}}.dump(2) << '\n';
  return result;
}

int select_epoch_by_es_tradeoff(const RunRecord& record, double max_forget_es) {
  int best = -1, fallback = -1;
  double best_retain = -1.0, lowest_forget = 2.0;
  for (const EpochResult& e : record.epochs) {
    if (!e.report.es_unlearn || !e.report.es_retain) continue;
    if (*e.report.es_unlearn < lowest_forget) {
      lowest_forget = *e.report.es_unlearn;
      fallback = e.epoch;
    }
    if (*e.report.es_unlearn <= max_forget_es && *e.report.es_retain > best_retain) {
      best_retain = *e.report.es_retain;
      best = e.epoch;
    }
  }
  return best >= 0 ? best : fallback;
}

std::string report_csv_header() {
  return "run_id,epoch,objective,criterion,beta,beta1,beta2,lambda,es_retain,"
         "es_unlearn,forget_quality,model_utility,verbmem,knowmem,privleak,"
         "utilpres,accuracy";
}

std::string report_csv_rows(const ExperimentConfig& config, const RunRecord& record) {
  const ObjectiveSpec& o = config.objective;
  std::string criterion = o.criterion ? criterion_name(o.criterion->kind) : "-";
  std::string beta;
  if (o.criterion && (o.criterion->kind == CriterionKind::wga ||
                      o.criterion->kind == CriterionKind::simsat ||
                      o.criterion->kind == CriterionKind::simimp ||
                      o.criterion->kind == CriterionKind::npo ||
                      o.criterion->kind == CriterionKind::simnpo)) {
    beta = format_double(o.criterion->effective_beta());
  } else if (o.family == ObjectiveFamily::dpo || o.family == ObjectiveFamily::npo ||
             o.family == ObjectiveFamily::simnpo) {
    beta = format_double(o.effective_beta());
  }
  std::string beta1, beta2;
  if (o.criterion && o.criterion->kind == CriterionKind::satimp) {
    beta1 = format_double(o.criterion->beta1);
    beta2 = format_double(o.criterion->beta2);
  }
  std::ostringstream out;
  for (const EpochResult& e : record.epochs) {
    const MetricReport& m = e.report;
    out << record.config_hash << ',' << e.epoch << ',' << family_name(o.family) << ','
        << criterion << ',' << beta << ',' << beta1 << ',' << beta2 << ','
        << format_double(o.retain_lambda) << ',' << csv_opt(m.es_retain) << ','
        << csv_opt(m.es_unlearn) << ',' << csv_opt(m.forget_quality) << ','
        << csv_opt(m.model_utility) << ',' << csv_opt(m.verbmem) << ','
        << csv_opt(m.knowmem) << ',' << csv_opt(m.privleak) << ','
        << csv_opt(m.utilpres) << ',' << csv_opt(m.accuracy) << '\n';
  }
  return out.str();
}

void emit_report(const ExperimentConfig& config, const RunRecord& record,
                 ReportFormat format, const std::filesystem::path& out_file) {
  std::ofstream out(out_file, std::ios::binary);
  if (!out) throw IoError("emit_report: cannot open " + out_file.string());
  if (format == ReportFormat::json) {
    out << record.to_json() << '\n';
  } else {
    out << report_csv_header() << '\n' << report_csv_rows(config, record);
  }
}

void emit_sweep_report(const ExperimentConfig& base, const SweepResult& result,
                       ReportFormat format, const std::filesystem::path& out_file) {
  std::ofstream out(out_file, std::ios::binary);
  if (!out) throw IoError("emit_sweep_report: cannot open " + out_file.string());
  if (format == ReportFormat::json) {
    json cells = json::array();
    for (const SweepCell& cell : result.cells) {
      json jc;
      jc["index"] = cell.index;
      jc["overrides"] = cell.overrides;
      jc["run_dir"] = cell.run_dir;
      jc["error"] = cell.error;
      if (cell.error.empty()) jc["record"] = json::parse(cell.record.to_json());
      cells.push_back(jc);
    }
    out << json{{"cells", cells}}.dump(2) << '\n';
    return;
  }
  out << report_csv_header() << '\n';
  for (const SweepCell& cell : result.cells) {
    if (!cell.error.empty()) continue;
    ExperimentConfig cfg = base;
    for (const auto& [key, value] : cell.overrides) cfg.set_key(key, value);
    out << report_csv_rows(cfg, cell.record);
  }
}

PlotKind plot_kind_from_name(const std::string& name) {
  if (name == "weight_vs_loss") return PlotKind::weight_vs_loss;
  if (name == "ktl_histogram") return PlotKind::ktl_histogram;
  if (name == "beta_curves") return PlotKind::beta_curves;
  if (name == "telemetry") return PlotKind::telemetry;
  throw ConfigError("unknown plot kind '" + name + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

std::filesystem::path emit_plot_data(const std::filesystem::path& run_dir,
                                     PlotKind kind,
                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  switch (kind) {
    case PlotKind::weight_vs_loss: {
      const auto src = run_dir / "loss_weight_trace.csv";
      if (!std::filesystem::exists(src)) {
        throw MetricError("weight_vs_loss: missing loss_weight_trace.csv "
                          "(enable trace.loss_weight)");
      }
      const LossWeightTrace trace = LossWeightTrace::load_csv(src);
      const auto dst = out_dir / "weight_vs_loss.csv";
      std::ofstream out(dst, std::ios::binary);
      out << "nll,weight\n";
      for (const TraceRow& r : trace.rows()) {
        out << format_double(r.nll) << ',' << format_double(r.weight) << '\n';
      }
      return dst;
    }
    case PlotKind::ktl_histogram: {
      const auto src = run_dir / "ktl.csv";
      if (!std::filesystem::exists(src)) {
        throw MetricError("ktl_histogram: missing ktl.csv (enable trace.ktl)");
      }
      std::ifstream in(src, std::ios::binary);
      std::string line;
      std::getline(in, line);  // header
      std::vector<long> bins(10, 0);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const double v = std::stod(line);
        int b = static_cast<int>(std::ceil(v * 10.0)) - 1;
        bins[static_cast<std::size_t>(std::clamp(b, 0, 9))] += 1;
      }
      const auto dst = out_dir / "ktl_histogram.csv";
      std::ofstream out(dst, std::ios::binary);
      out << "bin_low,bin_high,count\n";
      for (int b = 0; b < 10; ++b) {
        out << format_double(b / 10.0) << ',' << format_double((b + 1) / 10.0) << ','
            << bins[static_cast<std::size_t>(b)] << '\n';
      }
      return dst;
    }
    case PlotKind::telemetry: {
      const auto src = run_dir / "telemetry.csv";
      if (!std::filesystem::exists(src)) {
        throw MetricError("telemetry: missing telemetry.csv");
      }
      std::ifstream in(src, std::ios::binary);
      const auto dst = out_dir / "telemetry_plot.csv";
      std::ofstream out(dst, std::ios::binary);
      out << "step,forget_loss,retain_loss,grad_norm\n";
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        out << f[0] << ',' << f[1] << ',' << f[2] << ',' << f[3] << '\n';
      }
      return dst;
    }
    case PlotKind::beta_curves: {
      const auto src = run_dir / "sweep.csv";
      if (!std::filesystem::exists(src)) {
        throw MetricError("beta_curves: needs a sweep directory with sweep.csv");
      }
      std::ifstream in(src, std::ios::binary);
      const auto dst = out_dir / "beta_curves.csv";
      std::ofstream out(dst, std::ios::binary);
      out << "beta,epoch,es_retain,es_unlearn\n";
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() < 10 || f[4].empty()) continue;
        out << f[4] << ',' << f[1] << ',' << f[8] << ',' << f[9] << '\n';
      }
      return dst;
    }
  }
  throw ConfigError("emit_plot_data: unknown kind");
}

}  // namespace unlab
