#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/seq.hpp"

namespace unlab {

struct MetricReport {
  std::optional<double> es_retain;
  std::optional<double> es_unlearn;
  std::optional<double> es_retain_perturb;
  std::optional<double> es_unlearn_perturb;
  std::optional<double> forget_quality;
  std::optional<double> model_utility;
  std::optional<double> verbmem;
  std::optional<double> knowmem;
  std::optional<double> utilpres;
  std::optional<double> privleak;  // signed percentage
  std::optional<double> accuracy;

  std::string to_json() const;  // flat object, absent fields omitted
  static MetricReport from_json(const std::string& text);
  bool operator==(const MetricReport&) const = default;
};

enum class EsVariant { exact, perturb };

// Extraction strength: 1 - k*/|y| with k* the smallest prefix length in
// [0, |y|-1] whose greedy continuation reproduces the suffix; 0 when no
// prefix restores it.
double es_score(const ToyModel& model, const QAPair& pair, EsVariant variant);
int es_prefix_search(const ToyModel& model, std::span<const TokenId> question,
                     std::span<const TokenId> target);  // k*, or -1
double es_from_prefix(int kstar, int target_len);
double mean_es(const ToyModel& model, const Corpus& corpus, std::span<const int> ids,
               EsVariant variant);

// Length-normalized perturbed-over-paraphrase probability ratio.
double truth_ratio(const ToyModel& model, const QAPair& pair);

// P(answer | question) ^ (1/|answer|)
double answer_probability(const ToyModel& model, const QAPair& pair);

struct KsResult {
  double d = 0.0;
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov. The p-value is exact (lattice-path
// distribution over interleavings) while n*m stays small, and falls back
// to the asymptotic Kolmogorov series with effective size nm/(n+m).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

double forget_quality(std::span<const double> unlearned_trs,
                      std::span<const double> gold_trs);

// Harmonic mean of exactly nine scores; 0 if any score is 0.
double model_utility(std::span<const double> nine_values);

// LCS(candidate, reference) / |reference|
double rouge_l_recall(std::span<const TokenId> candidate,
                      std::span<const TokenId> reference);

double verbmem(const ToyModel& model, const Corpus& corpus,
               std::span<const int> forget_ids, int prefix_k);
double knowmem(const ToyModel& model, const Corpus& corpus, std::span<const int> ids);
double utilpres(const ToyModel& model, const Corpus& corpus,
                std::span<const int> retain_ids);

// Mean of the lowest ceil(k*n) token log-probabilities.
double min_k_prob(std::span<const double> token_log_probs, double k_percent);

// Mann-Whitney AUC via midranks; ties count one half.
double auc_roc(std::span<const double> member_scores,
               std::span<const double> nonmember_scores);

double privleak_from_aucs(double auc_unlearned, double auc_gold);
double privleak(const ToyModel& unlearned, const ToyModel& gold, const Corpus& corpus,
                std::span<const int> forget_ids, std::span<const int> holdout_ids,
                double k_percent);

struct McItem {
  TokenSequence question;
  std::vector<TokenSequence> options;
  int correct_index = 0;
};

// Predicted option = argmax of length-normalized option probability.
double mc_accuracy(const ToyModel& model, std::span<const McItem> items);

// Multiple-choice items: the true answer shuffled among that pair's perturbed
// answers, deterministic in seed.
std::vector<McItem> make_mc_items(const Corpus& corpus, std::span<const int> ids,
                                  std::uint64_t seed);

double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace unlab
